/** Browser bootstrap: wires the review session to the page.
 *
 * Everything interesting lives in the importable modules (session state,
 * overlay compositing, seam-aware viewport, brush geometry); this file is
 * the glue that renders them to a canvas and routes pointer and form
 * events back in.  It is served as a static asset by the review service
 * and talks to it over the same-origin REST API only.
 */

import { ReviewApi } from "./api.js";
import { SeamViewport } from "./canvas.js";
import { GridDims } from "./mask.js";
import { buildOverlay, renderOverlayRGBA, issueHighlight, OverlayModel } from "./overlay.js";
import { EditNotAllowedError, PendingEditsError, ReviewSession } from "./state.js";

interface RasterImage {
  readonly width: number;
  readonly height: number;
  readonly rgba: Uint8ClampedArray<ArrayBuffer>;
}

/** Decode a binary-RGB portable pixmap (the service's frame format). */
export function ppmToRgba(bytes: Uint8Array): RasterImage {
  const text = new TextDecoder("latin1").decode(bytes.subarray(0, 64));
  const match = /^P6\s+(\d+)\s+(\d+)\s+(\d+)\s/.exec(text);
  if (!match) throw new Error("not a binary portable pixmap");
  const width = Number(match[1]);
  const height = Number(match[2]);
  const offset = match[0].length;
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    rgba[i * 4] = bytes[offset + i * 3] ?? 0;
    rgba[i * 4 + 1] = bytes[offset + i * 3 + 1] ?? 0;
    rgba[i * 4 + 2] = bytes[offset + i * 3 + 2] ?? 0;
    rgba[i * 4 + 3] = 255;
  }
  return { width, height, rgba };
}

function base64Bytes(b64: string): Uint8Array {
  return Uint8Array.from(atob(b64), (c) => c.charCodeAt(0));
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

const VIEW_WIDTH = 960;
const VIEW_HEIGHT = 480;

export class App {
  private readonly session: ReviewSession;
  private viewport: SeamViewport | null = null;
  private raster: RasterImage | null = null;
  private overlay: OverlayModel | null = null;

  private readonly canvas = el("canvas");
  private readonly banner = el("div", "banner");
  private readonly promptBar = el("div", "prompt");
  private readonly legendBox = el("div", "legend");
  private readonly issueBox = el("div", "issues");
  private readonly statusBar = el("div", "status");
  private readonly videoSelect = el("select");
  private readonly frameInput = el("input");
  private readonly opacityInput = el("input");
  private readonly toolSelect = el("select");
  private readonly labelInput = el("input");
  private readonly labelList = el("datalist");
  private readonly leaseButton = el("button", "", "acquire lease");
  private readonly jumpButton = el("button", "", "next issue");

  private rasterCanvas: HTMLCanvasElement | null = null;
  private overlayCanvas: HTMLCanvasElement | null = null;
  private stroking = false;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ReviewApi,
    private readonly reviewer: string,
  ) {
    this.session = new ReviewSession(api);
    this.buildShell();
  }

  private buildShell(): void {
    this.canvas.width = VIEW_WIDTH;
    this.canvas.height = VIEW_HEIGHT;
    this.frameInput.type = "number";
    this.frameInput.min = "0";
    this.frameInput.value = "0";
    this.opacityInput.type = "range";
    this.opacityInput.min = "0";
    this.opacityInput.max = "1";
    this.opacityInput.step = "0.05";
    this.opacityInput.value = String(this.session.overlayOpacity);
    for (const [value, text] of [
      ["pan", "pan / select"],
      ["brush-add", "brush: add"],
      ["brush-erase", "brush: erase"],
    ] as const) {
      const option = el("option", "", text);
      option.value = value;
      this.toolSelect.append(option);
    }
    this.labelList.id = "taxonomy";
    this.labelInput.setAttribute("list", "taxonomy");
    this.labelInput.placeholder = "relabel selected…";

    const toolbar = el("div", "toolbar");
    const relabelButton = el("button", "", "relabel");
    const deleteButton = el("button", "", "delete");
    const resolveButton = el("button", "", "resolve issue");
    const retryButton = el("button", "", "retry");
    retryButton.addEventListener("click", () => {
      void this.run(() => this.session.retry());
    });
    this.banner.append(retryButton);
    toolbar.append(
      this.videoSelect,
      this.frameInput,
      this.opacityInput,
      this.toolSelect,
      this.leaseButton,
      this.labelInput,
      this.labelList,
      relabelButton,
      deleteButton,
      this.jumpButton,
      resolveButton,
    );
    this.root.append(
      this.banner,
      this.promptBar,
      toolbar,
      this.canvas,
      this.legendBox,
      this.issueBox,
      this.statusBar,
    );

    this.videoSelect.addEventListener("change", () => {
      void this.run(() => this.session.browse(this.videoSelect.value, 0));
    });
    this.frameInput.addEventListener("change", () => {
      const video = this.session.videoId;
      if (video) {
        void this.run(() => this.session.browse(video, Number(this.frameInput.value)));
      }
    });
    this.opacityInput.addEventListener("input", () => {
      this.session.overlayOpacity = Number(this.opacityInput.value);
      this.compose();
      this.draw();
    });
    this.leaseButton.addEventListener("click", () => {
      void this.run(async () => {
        if (this.session.lease.kind === "held") await this.session.releaseLease();
        else await this.session.acquireLease(this.reviewer);
      });
    });
    relabelButton.addEventListener("click", () => {
      const id = this.session.selectedInstance;
      const label = this.labelInput.value.trim();
      if (id !== null && label) {
        void this.run(() => this.session.relabel(id, label));
      }
    });
    deleteButton.addEventListener("click", () => {
      const id = this.session.selectedInstance;
      if (id !== null) void this.run(() => this.session.deleteInstance(id));
    });
    this.jumpButton.addEventListener("click", () => {
      void this.run(() => this.jumpNext());
    });
    resolveButton.addEventListener("click", () => {
      const cursor = this.session.issueCursor;
      if (cursor !== null) void this.run(() => this.session.resolveIssue(cursor));
    });
    this.wirePointer();
    this.wireWheel();
  }

  // -- event plumbing -------------------------------------------------------

  private async run(action: () => Promise<unknown>): Promise<void> {
    try {
      await action();
    } catch (err) {
      if (err instanceof PendingEditsError || err instanceof EditNotAllowedError) {
        this.session.prompt = err.message;
      } else {
        this.session.banner = err instanceof Error ? err.message : String(err);
      }
    }
    this.refresh();
  }

  private async jumpNext(): Promise<void> {
    const issues = this.session.issuePanel();
    if (!issues.length) return;
    const from = this.session.issueCursor ?? -1;
    for (let step = 1; step <= issues.length; step++) {
      const cursor = (from + step) % issues.length;
      if (!issues[cursor]?.struck) {
        await this.session.jumpToIssue(cursor);
        return;
      }
    }
    await this.session.jumpToIssue((from + 1) % issues.length);
  }

  private wirePointer(): void {
    this.canvas.addEventListener("pointerdown", (ev) => {
      const view = this.viewport;
      if (!view) return;
      const tool = this.toolSelect.value;
      if (tool === "pan") {
        this.selectAt(ev.offsetX, ev.offsetY);
        this.canvas.setPointerCapture(ev.pointerId);
        return;
      }
      const id = this.session.selectedInstance;
      if (id === null) return;
      try {
        this.session.beginStroke(id, tool === "brush-add" ? "add" : "erase");
        this.stroking = true;
        this.session.extendStroke(this.strokePoint(view, ev.offsetX, ev.offsetY));
        this.canvas.setPointerCapture(ev.pointerId);
      } catch (err) {
        this.session.prompt = err instanceof Error ? err.message : String(err);
        this.refresh();
      }
    });
    this.canvas.addEventListener("pointermove", (ev) => {
      const view = this.viewport;
      if (!view) return;
      if (this.stroking) {
        this.session.extendStroke(this.strokePoint(view, ev.offsetX, ev.offsetY));
      } else if (ev.buttons === 1 && this.toolSelect.value === "pan") {
        view.panBy(-ev.movementX, -ev.movementY);
        this.draw();
      }
    });
    this.canvas.addEventListener("pointerup", () => {
      if (!this.stroking) return;
      this.stroking = false;
      void this.run(() => this.session.commitStroke(3));
    });
  }

  private wireWheel(): void {
    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const view = this.viewport;
      if (!view) return;
      if (ev.ctrlKey) {
        const factor = ev.deltaY < 0 ? 1.25 : 0.8;
        view.setZoom(view.zoom * factor, ev.offsetX, ev.offsetY);
      } else {
        view.panBy(ev.deltaX, ev.deltaY);
      }
      this.draw();
    });
  }

  private strokePoint(view: SeamViewport, x: number, y: number) {
    return { col: view.scrollX + x / view.zoom, row: view.scrollY + y / view.zoom };
  }

  private selectAt(x: number, y: number): void {
    const view = this.viewport;
    const overlay = this.overlay;
    if (!view || !overlay) return;
    const col = view.worldColAt(x);
    const row = view.worldRowAt(y);
    if (col === null || row === null) {
      this.session.selectedInstance = null;
    } else {
      let hit: number | null = null;
      for (const layer of overlay.layers) {
        for (const run of layer.mask.runs) {
          if (run.row === row && col >= run.start && col < run.start + run.length) {
            hit = layer.instanceId;
          }
        }
      }
      this.session.selectedInstance = hit;
    }
    this.compose();
    this.draw();
    this.renderLegend();
  }

  // -- startup and data flow ------------------------------------------------

  async start(): Promise<void> {
    const { videos } = await this.api.listVideos();
    this.videoSelect.replaceChildren(
      ...videos.map((v) => {
        const option = el("option", "", `${v.video_id} (${v.status})`);
        option.value = v.video_id;
        return option;
      }),
    );
    const first = videos[0];
    if (first) await this.run(() => this.session.browse(first.video_id, 0));
  }

  private refresh(): void {
    const dims = this.session.dims;
    if (dims && (!this.viewport || !sameWorld(this.viewport.world, dims))) {
      this.viewport = new SeamViewport(dims, VIEW_WIDTH, VIEW_HEIGHT, 2);
    }
    this.raster = this.session.imageBase64
      ? ppmToRgba(base64Bytes(this.session.imageBase64))
      : null;
    this.overlay = buildOverlay(this.session.entries);
    this.compose();
    this.draw();
    this.renderLegend();
    this.renderIssues();
    this.renderChrome();
  }

  /** Rebuild the world-sized raster and overlay canvases. */
  private compose(): void {
    const dims = this.session.dims;
    if (!dims || !this.overlay) return;
    this.rasterCanvas = worldCanvas(dims);
    if (this.raster) {
      const ctx = must(this.rasterCanvas.getContext("2d"));
      ctx.putImageData(
        new ImageData(this.raster.rgba, this.raster.width, this.raster.height),
        0,
        0,
      );
    }
    this.overlayCanvas = worldCanvas(dims);
    const rgba = renderOverlayRGBA(this.overlay, dims, {
      opacity: this.session.overlayOpacity,
      selectedInstance: this.session.selectedInstance,
    });
    const issue = this.session.currentIssue();
    if (issue && issue.frame_index === this.session.frameIndex) {
      const highlight = issueHighlight(issue, this.session.entries, dims);
      for (const run of highlight.outline.runs) {
        for (let c = run.start; c < run.start + run.length; c++) {
          const at = (run.row * dims.width + c) * 4;
          rgba[at] = 255;
          rgba[at + 1] = 255;
          rgba[at + 2] = 255;
          rgba[at + 3] = 255;
        }
      }
    }
    const ctx = must(this.overlayCanvas.getContext("2d"));
    ctx.putImageData(new ImageData(rgba, dims.width, dims.height), 0, 0);
  }

  /** Blit the composed world through the seam-aware viewport. */
  private draw(): void {
    const view = this.viewport;
    const ctx = must(this.canvas.getContext("2d"));
    ctx.imageSmoothingEnabled = false;
    ctx.fillStyle = "#181818";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    if (!view) return;
    const height = view.world.height;
    const viewY = -view.scrollY * view.zoom;
    for (const span of view.columnSpans()) {
      for (const source of [this.rasterCanvas, this.overlayCanvas]) {
        if (!source) continue;
        ctx.drawImage(
          source,
          span.startCol,
          0,
          span.columns,
          height,
          span.viewX,
          viewY,
          span.columns * view.zoom,
          height * view.zoom,
        );
      }
    }
  }

  private renderLegend(): void {
    const overlay = this.overlay;
    this.legendBox.replaceChildren();
    if (!overlay) return;
    const head = el("div", "legend-head", `${overlay.count} instances`);
    this.legendBox.append(head);
    for (const entry of overlay.legend) {
      const row = el("div", "legend-row");
      const swatch = el("span", "swatch");
      swatch.style.backgroundColor = `rgb(${entry.color.join(",")})`;
      const text = entry.seamSpanning
        ? `${entry.instanceId} ${entry.label} (crosses the seam)`
        : `${entry.instanceId} ${entry.label}`;
      row.append(swatch, el("span", "", text));
      if (entry.instanceId === this.session.selectedInstance) {
        row.classList.add("selected");
      }
      row.addEventListener("click", () => {
        this.session.selectedInstance = entry.instanceId;
        this.compose();
        this.draw();
        this.renderLegend();
      });
      this.legendBox.append(row);
    }
  }

  private renderIssues(): void {
    this.issueBox.replaceChildren();
    const rows = this.session.issuePanel();
    this.jumpButton.disabled = !this.session.canJumpToIssue;
    if (!rows.length) {
      this.issueBox.append(el("div", "", "no issues reported"));
      return;
    }
    rows.forEach((issue, cursor) => {
      const row = el(
        "div",
        issue.struck ? "issue struck" : "issue",
        `frame ${issue.frame_index} · instance ${issue.instance_id} · ` +
          `${issue.kind}: ${issue.comment}`,
      );
      if (cursor === this.session.issueCursor) row.classList.add("current");
      row.addEventListener("click", () => {
        void this.run(() => this.session.jumpToIssue(cursor));
      });
      this.issueBox.append(row);
    });
  }

  private renderChrome(): void {
    this.banner.style.display = this.session.banner ? "block" : "none";
    this.banner.childNodes[0]?.remove();
    this.banner.prepend(document.createTextNode(this.session.banner ?? ""));

    const pending = this.session.pendingEdit;
    if (this.session.prompt || pending) {
      this.promptBar.style.display = "block";
      this.promptBar.replaceChildren(
        el("span", "", this.session.prompt ?? "a buffered edit is waiting"),
      );
      if (pending) {
        const retry = el("button", "", "reacquire and retry");
        retry.addEventListener("click", () => {
          void this.run(async () => {
            await this.session.acquireLease(this.reviewer);
            await this.session.retryPending();
          });
        });
        const discard = el("button", "", "discard edit");
        discard.addEventListener("click", () => {
          this.session.discardPending();
          this.refresh();
        });
        this.promptBar.append(retry, discard);
      }
    } else {
      this.promptBar.style.display = "none";
    }

    const lease = this.session.lease;
    this.leaseButton.textContent =
      lease.kind === "held" ? `release lease (${lease.reviewer})` : "acquire lease";
    const labels = new Set(this.session.labels.values());
    this.labelList.replaceChildren(
      ...[...labels].sort().map((label) => {
        const option = el("option");
        option.value = label;
        return option;
      }),
    );

    const bits = [
      this.session.videoId ?? "no video",
      this.session.frameIndex !== null ? `frame ${this.session.frameIndex}` : "",
      `revisions ${this.session.revisionCount}`,
    ];
    if (lease.kind === "held") bits.push(`editing as ${lease.reviewer}`);
    if (lease.kind === "read-only") bits.push(`read-only (leased to ${lease.holder})`);
    if (lease.kind === "lost") bits.push("lease lost");
    this.statusBar.textContent = bits.filter(Boolean).join(" · ");
    if (this.session.videoId) this.videoSelect.value = this.session.videoId;
    if (this.session.frameIndex !== null) {
      this.frameInput.value = String(this.session.frameIndex);
    }
  }
}

function sameWorld(a: GridDims, b: GridDims): boolean {
  return a.width === b.width && a.height === b.height && a.wrap === b.wrap;
}

function worldCanvas(dims: GridDims): HTMLCanvasElement {
  const canvas = document.createElement("canvas");
  canvas.width = dims.width;
  canvas.height = dims.height;
  return canvas;
}

function must<T>(value: T | null): T {
  if (value === null) throw new Error("canvas 2d context unavailable");
  return value;
}

export function bootstrap(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const reviewer =
    new URLSearchParams(window.location.search).get("reviewer") ?? "reviewer";
  const api = new ReviewApi(window.location.origin);
  const app = new App(root, api, reviewer);
  void app.start();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  bootstrap();
}
