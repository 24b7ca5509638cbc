/** Seam-aware run-length binary masks, matching the engine's text form.
 *
 * A mask lives on a grid that may wrap horizontally (column `width` is
 * column 0 — an equirectangular panorama).  Runs are canonical: sorted by
 * (row, start), non-overlapping, separated by at least one empty column,
 * and never crossing the last column; a region that spans the seam is
 * stored as two runs.  Canonical form makes serialization byte-stable:
 * parse then serialize reproduces the input exactly.
 */

export interface GridDims {
  readonly width: number;
  readonly height: number;
  readonly wrap: boolean;
}

export interface Run {
  readonly row: number;
  readonly start: number;
  readonly length: number;
}

export interface Mask {
  readonly dims: GridDims;
  readonly runs: readonly Run[];
}

export class MaskFormatError extends Error {}

export function sameDims(a: GridDims, b: GridDims): boolean {
  return a.width === b.width && a.height === b.height && a.wrap === b.wrap;
}

function checkDims(dims: GridDims): void {
  if (
    !Number.isInteger(dims.width) ||
    !Number.isInteger(dims.height) ||
    dims.width < 1 ||
    dims.height < 1
  ) {
    throw new MaskFormatError(`bad grid ${dims.width}x${dims.height}`);
  }
}

/** Validate canonical run form; throws on any violation. */
export function checkRuns(dims: GridDims, runs: readonly Run[]): void {
  checkDims(dims);
  let prevRow = -1;
  let prevEnd = -1;
  for (const run of runs) {
    if (
      !Number.isInteger(run.row) ||
      !Number.isInteger(run.start) ||
      !Number.isInteger(run.length)
    ) {
      throw new MaskFormatError("non-integer run");
    }
    if (run.row < 0 || run.row >= dims.height) {
      throw new MaskFormatError(`run row ${run.row} outside the grid`);
    }
    if (run.length < 1) {
      throw new MaskFormatError(`run length ${run.length} must be positive`);
    }
    if (run.start < 0 || run.start + run.length > dims.width) {
      throw new MaskFormatError(
        `run ${run.row} ${run.start} ${run.length} leaves the grid`,
      );
    }
    if (run.row < prevRow) {
      throw new MaskFormatError("runs out of row order");
    }
    if (run.row !== prevRow) {
      prevRow = run.row;
      prevEnd = -1;
    }
    if (run.start <= prevEnd) {
      throw new MaskFormatError("runs overlap, touch, or are unsorted");
    }
    prevEnd = run.start + run.length;
  }
}

export function makeMask(dims: GridDims, runs: readonly Run[]): Mask {
  checkRuns(dims, runs);
  return { dims, runs: runs.map((r) => ({ ...r })) };
}

export function emptyMask(dims: GridDims): Mask {
  checkDims(dims);
  return { dims, runs: [] };
}

export function isEmpty(mask: Mask): boolean {
  return mask.runs.length === 0;
}

export function area(mask: Mask): number {
  let total = 0;
  for (const run of mask.runs) total += run.length;
  return total;
}

// ---------------------------------------------------------------------------
// text form (the exact on-disk / wire grammar)

export function dimsText(dims: GridDims): string {
  return `${dims.width} ${dims.height} wrap${dims.wrap ? 1 : 0}`;
}

export function maskToText(mask: Mask): string {
  const lines = [
    `dims ${dimsText(mask.dims)}`,
    ...mask.runs.map((r) => `${r.row} ${r.start} ${r.length}`),
  ];
  return lines.join("\n") + "\n";
}

const INT_RE = /^(0|-?[1-9][0-9]*)$/;

function parseInt_(token: string, what: string): number {
  if (!INT_RE.test(token)) {
    throw new MaskFormatError(`bad ${what}: ${JSON.stringify(token)}`);
  }
  return Number(token);
}

export function maskFromText(text: string): Mask {
  const lines = text.split("\n");
  if (lines.length && lines[lines.length - 1] === "") lines.pop();
  if (!lines.length) throw new MaskFormatError("empty mask text");
  const head = (lines[0] ?? "").split(" ");
  if (head.length !== 4 || head[0] !== "dims" || !/^wrap[01]$/.test(head[3] ?? "")) {
    throw new MaskFormatError(`bad mask header: ${JSON.stringify(lines[0])}`);
  }
  const dims: GridDims = {
    width: parseInt_(head[1] ?? "", "width"),
    height: parseInt_(head[2] ?? "", "height"),
    wrap: head[3] === "wrap1",
  };
  const runs: Run[] = [];
  for (const line of lines.slice(1)) {
    const parts = line.split(" ");
    if (parts.length !== 3) {
      throw new MaskFormatError(`bad run line: ${JSON.stringify(line)}`);
    }
    runs.push({
      row: parseInt_(parts[0] ?? "", "run row"),
      start: parseInt_(parts[1] ?? "", "run start"),
      length: parseInt_(parts[2] ?? "", "run length"),
    });
  }
  return makeMask(dims, runs);
}

// ---------------------------------------------------------------------------
// bitmap conversions and boolean algebra

/** Row-major width*height bitmap, 1 where the mask covers the pixel. */
export function decode(mask: Mask): Uint8Array {
  const { width, height } = mask.dims;
  const out = new Uint8Array(width * height);
  for (const run of mask.runs) {
    out.fill(1, run.row * width + run.start, run.row * width + run.start + run.length);
  }
  return out;
}

export function fromBitmap(dims: GridDims, bitmap: ArrayLike<number>): Mask {
  checkDims(dims);
  if (bitmap.length !== dims.width * dims.height) {
    throw new MaskFormatError("bitmap size does not match the grid");
  }
  const runs: Run[] = [];
  for (let row = 0; row < dims.height; row++) {
    let col = 0;
    while (col < dims.width) {
      if (!bitmap[row * dims.width + col]) {
        col++;
        continue;
      }
      const start = col;
      while (col < dims.width && bitmap[row * dims.width + col]) col++;
      runs.push({ row, start, length: col - start });
    }
  }
  return { dims, runs };
}

function zipWith(
  a: Mask,
  b: Mask,
  combine: (x: number, y: number) => number,
): Mask {
  if (!sameDims(a.dims, b.dims)) {
    throw new MaskFormatError("masks live on different grids");
  }
  const pa = decode(a);
  const pb = decode(b);
  const out = new Uint8Array(pa.length);
  for (let i = 0; i < pa.length; i++) out[i] = combine(pa[i] ?? 0, pb[i] ?? 0);
  return fromBitmap(a.dims, out);
}

export function union(a: Mask, b: Mask): Mask {
  return zipWith(a, b, (x, y) => x | y);
}

export function intersection(a: Mask, b: Mask): Mask {
  return zipWith(a, b, (x, y) => x & y);
}

export function difference(a: Mask, b: Mask): Mask {
  return zipWith(a, b, (x, y) => x & (y ^ 1));
}

export function masksEqual(a: Mask, b: Mask): boolean {
  return sameDims(a.dims, b.dims) && maskToText(a) === maskToText(b);
}

// ---------------------------------------------------------------------------
// connected pieces (for rendering and seam diagnostics)

/** Number of 4-connected components.
 *
 * `wrapAware` decides whether columns 0 and width-1 count as neighbors on a
 * wrapped grid.  A seam-spanning object has wrap-aware count 1 but flat
 * count 2 — one instance drawn as two visual pieces.
 */
export function pieceCount(mask: Mask, wrapAware: boolean): number {
  const { width, height, wrap } = mask.dims;
  const pixels = decode(mask);
  const seen = new Uint8Array(pixels.length);
  const joinSeam = wrapAware && wrap && width > 1;
  let pieces = 0;
  const stack: number[] = [];
  for (let i = 0; i < pixels.length; i++) {
    if (!pixels[i] || seen[i]) continue;
    pieces++;
    seen[i] = 1;
    stack.push(i);
    while (stack.length) {
      const at = stack.pop() as number;
      const row = Math.floor(at / width);
      const col = at - row * width;
      const neighbors: number[] = [];
      if (row > 0) neighbors.push(at - width);
      if (row + 1 < height) neighbors.push(at + width);
      if (col > 0) neighbors.push(at - 1);
      else if (joinSeam) neighbors.push(at + width - 1);
      if (col + 1 < width) neighbors.push(at + 1);
      else if (joinSeam) neighbors.push(at - width + 1);
      for (const n of neighbors) {
        if (pixels[n] && !seen[n]) {
          seen[n] = 1;
          stack.push(n);
        }
      }
    }
  }
  return pieces;
}

/** Boundary pixels: mask pixels with a 4-neighbor outside the mask.
 * Rows beyond the grid count as outside; columns wrap on wrapped grids.
 */
export function outline(mask: Mask): Mask {
  const { width, height, wrap } = mask.dims;
  const pixels = decode(mask);
  const out = new Uint8Array(pixels.length);
  const covered = (row: number, col: number): boolean => {
    if (row < 0 || row >= height) return false;
    let c = col;
    if (c < 0) {
      if (!wrap) return false;
      c += width;
    } else if (c >= width) {
      if (!wrap) return false;
      c -= width;
    }
    return pixels[row * width + c] === 1;
  };
  for (let row = 0; row < height; row++) {
    for (let col = 0; col < width; col++) {
      if (!pixels[row * width + col]) continue;
      if (
        !covered(row - 1, col) ||
        !covered(row + 1, col) ||
        !covered(row, col - 1) ||
        !covered(row, col + 1)
      ) {
        out[row * width + col] = 1;
      }
    }
  }
  return fromBitmap(mask.dims, out);
}
