/** Overlay model: what gets drawn on top of a frame, and the legend.
 *
 * One layer and one legend row per instance — an object that crosses the
 * panorama seam is still a single instance (one id, one color, one legend
 * entry) even though it renders as two visual pieces on the flat canvas.
 */

import { FrameEntry } from "./annotation.js";
import { ReportIssue } from "./api.js";
import {
  GridDims,
  Mask,
  decode,
  emptyMask,
  fromBitmap,
  outline,
  pieceCount,
} from "./mask.js";

export type Rgb = readonly [number, number, number];

export interface OverlayLayer {
  readonly instanceId: number;
  readonly label: string;
  readonly provenance: string;
  readonly color: Rgb;
  readonly mask: Mask;
  /** Visual pieces on the flat canvas (a seam-spanning object has 2+). */
  readonly flatPieces: number;
  /** True when the pieces join only through the seam. */
  readonly seamSpanning: boolean;
}

export interface LegendEntry {
  readonly instanceId: number;
  readonly label: string;
  readonly color: Rgb;
  readonly seamSpanning: boolean;
}

export interface OverlayModel {
  readonly layers: readonly OverlayLayer[];
  readonly legend: readonly LegendEntry[];
  /** Instance count — exactly the store's entry count for the frame. */
  readonly count: number;
}

/** Deterministic, well-separated color for an instance id (golden-angle hue). */
export function instanceColor(instanceId: number): Rgb {
  const hue = (instanceId * 137.50776405003785) % 360;
  const saturation = 0.72;
  const value = 0.95;
  const c = value * saturation;
  const x = c * (1 - Math.abs(((hue / 60) % 2) - 1));
  const m = value - c;
  let rgb: [number, number, number];
  if (hue < 60) rgb = [c, x, 0];
  else if (hue < 120) rgb = [x, c, 0];
  else if (hue < 180) rgb = [0, c, x];
  else if (hue < 240) rgb = [0, x, c];
  else if (hue < 300) rgb = [x, 0, c];
  else rgb = [c, 0, x];
  return [
    Math.round((rgb[0] + m) * 255),
    Math.round((rgb[1] + m) * 255),
    Math.round((rgb[2] + m) * 255),
  ];
}

export function buildOverlay(entries: readonly FrameEntry[]): OverlayModel {
  const layers = entries.map((entry): OverlayLayer => {
    const flat = pieceCount(entry.mask, false);
    const wrapped = pieceCount(entry.mask, true);
    return {
      instanceId: entry.instanceId,
      label: entry.label,
      provenance: entry.provenance,
      color: instanceColor(entry.instanceId),
      mask: entry.mask,
      flatPieces: flat,
      seamSpanning: wrapped < flat,
    };
  });
  const legend = layers.map(
    (layer): LegendEntry => ({
      instanceId: layer.instanceId,
      label: layer.label,
      color: layer.color,
      seamSpanning: layer.seamSpanning,
    }),
  );
  return { layers, legend, count: layers.length };
}

/** Composite the overlay into a width*height RGBA buffer.
 *
 * Pixel-aligned by construction: a pixel is tinted iff some layer's mask
 * covers it (alpha 0 elsewhere, so the raster shows through untouched —
 * a frame with zero instances renders the raster only).  Later entries
 * win where masks overlap; the selected instance is drawn opaque.
 */
export function renderOverlayRGBA(
  model: OverlayModel,
  dims: GridDims,
  options: { opacity?: number; selectedInstance?: number | null } = {},
): Uint8ClampedArray<ArrayBuffer> {
  const opacity = options.opacity ?? 0.5;
  const selected = options.selectedInstance ?? null;
  const out = new Uint8ClampedArray(dims.width * dims.height * 4);
  for (const layer of model.layers) {
    const [r, g, b] = layer.color;
    const alpha = Math.round(
      255 * (layer.instanceId === selected ? 1.0 : opacity),
    );
    for (const run of layer.mask.runs) {
      let at = (run.row * dims.width + run.start) * 4;
      for (let i = 0; i < run.length; i++) {
        out[at] = r;
        out[at + 1] = g;
        out[at + 2] = b;
        out[at + 3] = alpha;
        at += 4;
      }
    }
  }
  return out;
}

/** All unannotated pixels of the frame — the blank region. */
export function blankRegion(
  entries: readonly FrameEntry[],
  dims: GridDims,
): Mask {
  const covered = new Uint8Array(dims.width * dims.height);
  for (const entry of entries) {
    for (const run of entry.mask.runs) {
      covered.fill(
        1,
        run.row * dims.width + run.start,
        run.row * dims.width + run.start + run.length,
      );
    }
  }
  for (let i = 0; i < covered.length; i++) covered[i] = covered[i] ? 0 : 1;
  return fromBitmap(dims, covered);
}

export interface IssueHighlight {
  /** "instance": outline the implicated instance; "region": outline blank space. */
  readonly kind: "instance" | "region";
  readonly instanceId: number | null;
  readonly outline: Mask;
}

/** What to outline when jumping to an issue.
 *
 * A `missing` issue points at something the annotation does not cover, so
 * the blank region is outlined; every other kind outlines the implicated
 * instance (nothing, if that instance is absent from the frame).
 */
export function issueHighlight(
  issue: ReportIssue,
  entries: readonly FrameEntry[],
  dims: GridDims,
): IssueHighlight {
  if (issue.kind === "missing") {
    return {
      kind: "region",
      instanceId: null,
      outline: outline(blankRegion(entries, dims)),
    };
  }
  const entry = entries.find((e) => e.instanceId === issue.instance_id);
  return {
    kind: "instance",
    instanceId: issue.instance_id,
    outline: entry ? outline(entry.mask) : emptyMask(dims),
  };
}

/** True when the mask covers the pixel — rendering self-check helper. */
export function maskCovers(mask: Mask, row: number, col: number): boolean {
  const pixels = decode(mask);
  return pixels[row * mask.dims.width + col] === 1;
}
