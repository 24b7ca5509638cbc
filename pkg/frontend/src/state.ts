/** The review session: view state, navigation, lease lifecycle, and edits.
 *
 * One instance of `ReviewSession` is one tab's cockpit.  It owns the
 * ViewState (current video/frame, overlay opacity, selected instance,
 * issue cursor, pending edit buffer, lease status) and enforces its
 * invariants:
 *
 * - pending edits never survive navigation without explicit save-or-discard;
 * - the issue cursor always indexes a valid issue of the loaded report;
 * - every persisted change leaves as a store revision record — the session
 *   holds no state the revision log cannot reconstruct.
 *
 * Edits apply optimistically: the local frame model changes immediately,
 * the record is posted, and a conflict rolls the local change back.  A
 * lease lost mid-edit buffers the edit and prompts the user instead of
 * dropping it.
 */

import { FrameEntry, parseFrameAnnotation } from "./annotation.js";
import {
  ApiError,
  NetworkError,
  ReportIssue,
  ReportPayload,
  ReviewApi,
  RevisionOutcome,
  VideoSummary,
} from "./api.js";
import { MaskDelta, applyDelta, strokeDelta, strokeMask, StrokePoint } from "./brush.js";
import { GridDims, Mask, isEmpty, union } from "./mask.js";
import { Revision, serializeRevision } from "./revision.js";

export type LeaseStatus =
  | { kind: "none" }
  | { kind: "held"; token: string; reviewer: string }
  | { kind: "read-only"; holder: string }
  | { kind: "lost"; reviewer: string };

export interface PendingEdit {
  readonly revision: Revision;
  readonly reason: "lease-lost";
}

export interface PendingStroke {
  readonly instanceId: number;
  readonly mode: "add" | "erase";
  readonly points: StrokePoint[];
}

export interface IssuePanelRow extends ReportIssue {
  /** Resolved issues render struck through. */
  readonly struck: boolean;
}

export class PendingEditsError extends Error {}
export class EditNotAllowedError extends Error {}

interface LocalFrame {
  entries: FrameEntry[];
  labels: Map<number, string>;
}

function cloneFrame(entries: readonly FrameEntry[], labels: Map<number, string>): LocalFrame {
  return {
    entries: entries.map((e) => ({ ...e })),
    labels: new Map(labels),
  };
}

export class ReviewSession {
  // -- ViewState ------------------------------------------------------------
  videoId: string | null = null;
  frameIndex: number | null = null;
  overlayOpacity = 0.5;
  selectedInstance: number | null = null;
  issueCursor: number | null = null;
  pendingEdit: PendingEdit | null = null;
  pendingStroke: PendingStroke | null = null;
  lease: LeaseStatus = { kind: "none" };

  /** User-facing prompt (lease lost, conflict) awaiting a decision. */
  prompt: string | null = null;
  /** Network-failure banner; `retry()` re-runs the failed navigation. */
  banner: string | null = null;

  // -- loaded data ----------------------------------------------------------
  summary: VideoSummary | null = null;
  report: ReportPayload | null = null;
  entries: FrameEntry[] = [];
  labels = new Map<number, string>();
  imageBase64: string | null = null;
  revisionCount = 0;

  private lastNavigation: (() => Promise<boolean>) | null = null;

  constructor(private readonly api: ReviewApi) {}

  get dims(): GridDims | null {
    if (!this.summary) return null;
    return { width: this.summary.width, height: this.summary.height, wrap: true };
  }

  private get hasPending(): boolean {
    return this.pendingEdit !== null || this.pendingStroke !== null;
  }

  private guardNavigation(discard: boolean): void {
    if (!this.hasPending) return;
    if (!discard) {
      throw new PendingEditsError(
        "a pending edit exists — save it, retry it, or navigate with discard",
      );
    }
    this.pendingEdit = null;
    this.pendingStroke = null;
    this.prompt = null;
  }

  // -- navigation -----------------------------------------------------------

  /** Load a frame along with the video's summary and report.
   *
   * Navigation is atomic: the view only changes once every fetch has
   * succeeded, so a network failure leaves it exactly where it was,
   * raises the banner, and arms `retry()`.  Returns true when the view
   * moved.
   */
  async browse(
    videoId: string,
    frameIndex: number,
    options: { discard?: boolean } = {},
  ): Promise<boolean> {
    this.guardNavigation(options.discard ?? false);
    this.lastNavigation = () => this.browse(videoId, frameIndex, options);
    try {
      const changedVideo = videoId !== this.videoId;
      const summary = await this.api.video(videoId);
      let report: ReportPayload | null;
      try {
        report = await this.api.report(videoId);
      } catch (err) {
        if (err instanceof ApiError && err.status === 404) report = null;
        else throw err;
      }
      const frame = await this.api.frame(videoId, frameIndex);
      this.summary = summary;
      this.report = report;
      this.videoId = videoId;
      this.frameIndex = frameIndex;
      this.imageBase64 = frame.image_base64;
      this.entries = frame.annotation
        ? [...parseFrameAnnotation(frame.annotation).entries]
        : [];
      this.labels = new Map(
        Object.entries(summary.instances).map(([id, label]) => [
          Number(id),
          label,
        ]),
      );
      this.revisionCount = summary.revisions;
      if (changedVideo) {
        this.issueCursor = null;
        this.selectedInstance = null;
        this.lease = { kind: "none" };
      } else if (
        this.issueCursor !== null &&
        this.issueCursor >= (report?.issues.length ?? 0)
      ) {
        this.issueCursor = null;
      }
      this.banner = null;
      return true;
    } catch (err) {
      if (err instanceof NetworkError) {
        this.banner = `cannot reach the review service: ${err.message}`;
        return false;
      }
      throw err;
    }
  }

  /** Re-run the navigation that raised the banner. */
  async retry(): Promise<boolean> {
    if (!this.lastNavigation) return false;
    return this.lastNavigation();
  }

  // -- issues ---------------------------------------------------------------

  get canJumpToIssue(): boolean {
    return (this.report?.issues.length ?? 0) > 0;
  }

  /** The issue panel model; resolved issues are struck through. */
  issuePanel(): IssuePanelRow[] {
    return (this.report?.issues ?? []).map((issue) => ({
      ...issue,
      struck: issue.status === "resolved",
    }));
  }

  /** Jump the view to an issue: its frame is shown, the implicated
   * instance selected (a `missing` issue selects nothing — the blank
   * region is what gets outlined). */
  async jumpToIssue(
    cursor: number,
    options: { discard?: boolean } = {},
  ): Promise<boolean> {
    const issues = this.report?.issues ?? [];
    if (!Number.isInteger(cursor) || cursor < 0 || cursor >= issues.length) {
      throw new RangeError(`issue cursor ${cursor} indexes no issue`);
    }
    const issue = issues[cursor] as ReportIssue;
    if (!this.videoId) throw new Error("no video loaded");
    const moved = await this.browse(this.videoId, issue.frame_index, options);
    if (!moved) return false;
    this.issueCursor = cursor;
    this.selectedInstance = issue.kind === "missing" ? null : issue.instance_id;
    return true;
  }

  /** The issue the cursor points at, if any. */
  currentIssue(): ReportIssue | null {
    if (this.issueCursor === null) return null;
    return this.report?.issues[this.issueCursor] ?? null;
  }

  // -- lease ----------------------------------------------------------------

  get canEdit(): boolean {
    return this.lease.kind === "held";
  }

  /** Try to take (or refresh) the edit lease.
   *
   * A conflict — someone else holds it, including a second tab of the
   * same reviewer — puts this session in read-only mode.
   */
  async acquireLease(reviewer: string): Promise<boolean> {
    if (!this.videoId) throw new Error("no video loaded");
    const token = this.lease.kind === "held" ? this.lease.token : undefined;
    try {
      const grant = await this.api.acquireLease(this.videoId, reviewer, token);
      this.lease = { kind: "held", token: grant.token, reviewer: grant.reviewer };
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        const holder = /leased to (.+)$/.exec(err.detail)?.[1] ?? "another reviewer";
        this.lease = { kind: "read-only", holder };
        return false;
      }
      throw err;
    }
  }

  async releaseLease(): Promise<void> {
    if (!this.videoId || this.lease.kind !== "held") return;
    await this.api.releaseLease(this.videoId, this.lease.token);
    this.lease = { kind: "none" };
  }

  // -- edits ----------------------------------------------------------------

  private leaseToken(): string {
    if (this.lease.kind !== "held") {
      throw new EditNotAllowedError(
        this.lease.kind === "read-only"
          ? `read-only: the video is leased to ${this.lease.holder}`
          : "editing needs the lease — acquire it first",
      );
    }
    return this.lease.token;
  }

  private applyLocal(revision: Revision): void {
    const entries = this.entries;
    const byId = (id: number) => entries.findIndex((e) => e.instanceId === id);
    switch (revision.op) {
      case "relabel": {
        this.labels.set(revision.instanceId, revision.label);
        const at = byId(revision.instanceId);
        if (at >= 0) {
          entries[at] = { ...(entries[at] as FrameEntry), label: revision.label };
        }
        break;
      }
      case "delete_instance": {
        this.labels.delete(revision.instanceId);
        const at = byId(revision.instanceId);
        if (at >= 0) entries.splice(at, 1);
        if (this.selectedInstance === revision.instanceId) {
          this.selectedInstance = null;
        }
        break;
      }
      case "merge_instances": {
        const keepAt = byId(revision.keepId);
        const dropAt = byId(revision.dropId);
        if (dropAt >= 0) {
          const drop = entries[dropAt] as FrameEntry;
          if (keepAt >= 0) {
            const keep = entries[keepAt] as FrameEntry;
            entries[keepAt] = { ...keep, mask: union(keep.mask, drop.mask) };
            entries.splice(dropAt, 1);
          } else {
            entries[dropAt] = {
              ...drop,
              instanceId: revision.keepId,
              label: this.labels.get(revision.keepId) ?? drop.label,
            };
            entries.sort((a, b) => a.instanceId - b.instanceId);
          }
        }
        this.labels.delete(revision.dropId);
        if (this.selectedInstance === revision.dropId) {
          this.selectedInstance = revision.keepId;
        }
        break;
      }
      case "replace_mask": {
        if (revision.frameIndex !== this.frameIndex) break;
        const at = byId(revision.instanceId);
        if (at < 0) break;
        if (isEmpty(revision.mask)) {
          entries.splice(at, 1);
        } else {
          entries[at] = {
            ...(entries[at] as FrameEntry),
            provenance: "revised",
            mask: revision.mask,
          };
        }
        break;
      }
      case "edit_mask": {
        if (revision.frameIndex !== this.frameIndex) break;
        const at = byId(revision.instanceId);
        if (at < 0) break;
        const entry = entries[at] as FrameEntry;
        const delta: MaskDelta = { add: revision.add, remove: revision.remove };
        const next = applyDelta(entry.mask, delta);
        if (isEmpty(next)) entries.splice(at, 1);
        else entries[at] = { ...entry, provenance: "revised", mask: next };
        break;
      }
      case "add_instance": {
        this.labels.set(revision.instanceId, revision.label);
        if (revision.frameIndex !== this.frameIndex) break;
        entries.push({
          instanceId: revision.instanceId,
          label: revision.label,
          provenance: revision.provenance,
          mask: revision.mask,
        });
        entries.sort((a, b) => a.instanceId - b.instanceId);
        break;
      }
    }
  }

  /** Post an edit with optimistic local apply and rollback on failure. */
  private async postEdit(
    make: (seq: number) => Revision,
  ): Promise<RevisionOutcome | null> {
    const token = this.leaseToken();
    if (!this.videoId) throw new Error("no video loaded");
    const seq = this.revisionCount + 1;
    const revision = make(seq);
    const record = serializeRevision(revision);
    const snapshot = cloneFrame(this.entries, this.labels);
    this.applyLocal(revision);
    try {
      const outcome = await this.api.postRevision(this.videoId, seq, record, token);
      this.revisionCount = seq;
      this.prompt = null;
      return outcome;
    } catch (err) {
      this.entries = snapshot.entries;
      this.labels = snapshot.labels;
      if (err instanceof ApiError && err.status === 409) {
        if (/lease/i.test(err.detail) || /leased/i.test(err.detail)) {
          const reviewer = this.lease.kind === "held" ? this.lease.reviewer : "";
          this.lease = { kind: "lost", reviewer };
          this.pendingEdit = { revision, reason: "lease-lost" };
          this.prompt =
            "the edit lease was lost mid-edit; the edit is buffered — " +
            "reacquire the lease and retry, or discard it";
          return null;
        }
        await this.resync();
        this.prompt = `the edit conflicted with the log and was rolled back (${err.detail})`;
        return null;
      }
      if (err instanceof NetworkError) {
        this.banner = `edit not saved: ${err.message}`;
        return null;
      }
      throw err;
    }
  }

  /** Refresh the revision counter after a sequence conflict. */
  private async resync(): Promise<void> {
    if (!this.videoId) return;
    try {
      const log = await this.api.revisions(this.videoId);
      this.revisionCount = log.count;
    } catch {
      // keep the stale counter; the next conflict will resync again
    }
  }

  async relabel(instanceId: number, label: string): Promise<RevisionOutcome | null> {
    return this.postEdit((seq) => ({ op: "relabel", seq, instanceId, label }));
  }

  async deleteInstance(instanceId: number): Promise<RevisionOutcome | null> {
    return this.postEdit((seq) => ({ op: "delete_instance", seq, instanceId }));
  }

  async mergeInstances(
    keepId: number,
    dropId: number,
  ): Promise<RevisionOutcome | null> {
    return this.postEdit((seq) => ({ op: "merge_instances", seq, keepId, dropId }));
  }

  async replaceMask(instanceId: number, mask: Mask): Promise<RevisionOutcome | null> {
    const frameIndex = this.frameIndex;
    if (frameIndex === null) throw new Error("no frame loaded");
    return this.postEdit((seq) => ({
      op: "replace_mask",
      seq,
      frameIndex,
      instanceId,
      mask,
    }));
  }

  async addInstance(
    label: string,
    mask: Mask,
    provenance = "revised",
  ): Promise<RevisionOutcome | null> {
    const frameIndex = this.frameIndex;
    if (frameIndex === null) throw new Error("no frame loaded");
    const instanceId = Math.max(0, ...this.labels.keys()) + 1;
    return this.postEdit((seq) => ({
      op: "add_instance",
      seq,
      frameIndex,
      instanceId,
      provenance,
      label,
      mask,
    }));
  }

  // -- brush strokes --------------------------------------------------------

  /** Start composing a brush stroke on an instance (the pending buffer). */
  beginStroke(instanceId: number, mode: "add" | "erase"): void {
    this.leaseToken();
    if (!this.entries.some((e) => e.instanceId === instanceId)) {
      throw new EditNotAllowedError(
        `instance ${instanceId} has no entry in this frame`,
      );
    }
    this.pendingStroke = { instanceId, mode, points: [] };
  }

  extendStroke(point: StrokePoint): void {
    if (!this.pendingStroke) throw new Error("no stroke in progress");
    this.pendingStroke.points.push(point);
  }

  discardStroke(): void {
    this.pendingStroke = null;
  }

  /** Close the stroke and post it as a run-length delta edit.
   *
   * A stroke that changes zero pixels posts nothing and returns null.
   */
  async commitStroke(radius: number): Promise<RevisionOutcome | null> {
    const stroke = this.pendingStroke;
    if (!stroke) throw new Error("no stroke in progress");
    const dims = this.dims;
    if (!dims) throw new Error("no video loaded");
    this.pendingStroke = null;
    const entry = this.entries.find((e) => e.instanceId === stroke.instanceId);
    if (!entry) return null;
    const painted = strokeMask(dims, stroke.points, radius);
    const delta = strokeDelta(entry.mask, painted, stroke.mode);
    if (isEmpty(delta.add) && isEmpty(delta.remove)) return null;
    const frameIndex = this.frameIndex;
    if (frameIndex === null) throw new Error("no frame loaded");
    return this.postEdit((seq) => ({
      op: "edit_mask",
      seq,
      frameIndex,
      instanceId: stroke.instanceId,
      add: delta.add,
      remove: delta.remove,
    }));
  }

  // -- buffered edit (lease lost) -------------------------------------------

  /** Retry the buffered edit after the lease is back. */
  async retryPending(): Promise<RevisionOutcome | null> {
    const pending = this.pendingEdit;
    if (!pending) return null;
    this.pendingEdit = null;
    this.prompt = null;
    const revision = pending.revision;
    return this.postEdit((seq) => ({ ...revision, seq }) as Revision);
  }

  discardPending(): void {
    this.pendingEdit = null;
    this.prompt = null;
  }

  // -- review actions beyond revisions --------------------------------------

  async resolveIssue(issueIndex: number): Promise<void> {
    const token = this.leaseToken();
    if (!this.videoId) throw new Error("no video loaded");
    this.report = await this.api.resolveIssue(this.videoId, issueIndex, token);
  }

  async finalize(override = false): Promise<string> {
    const token = this.leaseToken();
    if (!this.videoId) throw new Error("no video loaded");
    const outcome = await this.api.finalize(this.videoId, override, token);
    if (this.summary) this.summary = { ...this.summary, status: outcome.status };
    return outcome.status;
  }
}
