/** Brush strokes and their conversion to run-length deltas.
 *
 * A stroke paints circular stamps along its points; columns wrap on
 * panoramic grids, so a brush dragged across the seam paints one
 * contiguous region.  The stroke never leaves the UI as pixels — it is
 * reduced to the minimal add/remove delta against the instance's current
 * mask, and a stroke that changes nothing produces no edit at all.
 */

import {
  GridDims,
  Mask,
  decode,
  difference,
  emptyMask,
  fromBitmap,
  intersection,
} from "./mask.js";

export interface StrokePoint {
  /** World column (may be any integer; wrapped onto the grid). */
  readonly col: number;
  /** World row. */
  readonly row: number;
}

function stamp(
  painted: Uint8Array,
  dims: GridDims,
  center: StrokePoint,
  radius: number,
): void {
  const r = Math.max(0, radius);
  const rsq = r * r;
  const loRow = Math.max(0, Math.ceil(center.row - r));
  const hiRow = Math.min(dims.height - 1, Math.floor(center.row + r));
  for (let row = loRow; row <= hiRow; row++) {
    const span = Math.sqrt(Math.max(0, rsq - (row - center.row) ** 2));
    const loCol = Math.ceil(center.col - span);
    const hiCol = Math.floor(center.col + span);
    for (let col = loCol; col <= hiCol; col++) {
      let c = col;
      if (dims.wrap) {
        c = ((c % dims.width) + dims.width) % dims.width;
      } else if (c < 0 || c >= dims.width) {
        continue;
      }
      painted[row * dims.width + c] = 1;
    }
  }
}

/** The set of pixels a stroke covers, as a mask.
 *
 * Consecutive points are joined by interpolated stamps so fast drags do
 * not leave gaps.
 */
export function strokeMask(
  dims: GridDims,
  points: readonly StrokePoint[],
  radius: number,
): Mask {
  const painted = new Uint8Array(dims.width * dims.height);
  let previous: StrokePoint | null = null;
  for (const point of points) {
    if (previous !== null) {
      const dc = point.col - previous.col;
      const dr = point.row - previous.row;
      const steps = Math.max(1, Math.ceil(Math.hypot(dc, dr)));
      for (let i = 1; i <= steps; i++) {
        stamp(
          painted,
          dims,
          {
            col: previous.col + (dc * i) / steps,
            row: previous.row + (dr * i) / steps,
          },
          radius,
        );
      }
    } else {
      stamp(painted, dims, point, radius);
    }
    previous = point;
  }
  return fromBitmap(dims, painted);
}

export interface MaskDelta {
  /** Pixels the edit turns on. */
  readonly add: Mask;
  /** Pixels the edit turns off. */
  readonly remove: Mask;
}

/** Reduce a stroke to the delta it actually causes on `current`.
 *
 * Brushing in "add" mode only adds what is not yet covered; "erase" only
 * removes what is.  Either half (or both — a no-op stroke) may be empty.
 */
export function strokeDelta(
  current: Mask,
  stroke: Mask,
  mode: "add" | "erase",
): MaskDelta {
  if (mode === "add") {
    return { add: difference(stroke, current), remove: emptyMask(current.dims) };
  }
  return { add: emptyMask(current.dims), remove: intersection(stroke, current) };
}

/** Apply a delta locally — the optimistic mirror of the server's edit. */
export function applyDelta(current: Mask, delta: MaskDelta): Mask {
  const base = decode(current);
  for (const run of delta.add.runs) {
    base.fill(
      1,
      run.row * current.dims.width + run.start,
      run.row * current.dims.width + run.start + run.length,
    );
  }
  for (const run of delta.remove.runs) {
    base.fill(
      0,
      run.row * current.dims.width + run.start,
      run.row * current.dims.width + run.start + run.length,
    );
  }
  return fromBitmap(current.dims, base);
}
