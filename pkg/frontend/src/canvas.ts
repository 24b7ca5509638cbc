/** Seam-aware viewport arithmetic for the editing canvas.
 *
 * On a wrapped panorama the viewport scrolls past column W-1 straight
 * into column 0 — horizontally the world is a cylinder, and an object
 * sitting on the seam is viewed and edited as one piece by simply
 * scrolling to it.  All mappings here are exact integer registration:
 * a world column occupies exactly `zoom` view pixels at integer zoom,
 * with no off-by-one at the seam columns.
 */

import { GridDims } from "./mask.js";

function floorMod(value: number, modulus: number): number {
  return ((value % modulus) + modulus) % modulus;
}

export interface ColumnSpan {
  /** First view x pixel of the span. */
  readonly viewX: number;
  /** First world column of the span. */
  readonly startCol: number;
  /** Number of world columns in the span. */
  readonly columns: number;
}

export class SeamViewport {
  /** Horizontal scroll position, in world columns; any real number. */
  private scrollXValue = 0;
  /** Vertical scroll position, in world rows; clamped to the grid. */
  private scrollYValue = 0;
  private zoomValue: number;

  constructor(
    readonly world: GridDims,
    readonly viewWidth: number,
    readonly viewHeight: number,
    zoom = 1,
  ) {
    if (viewWidth < 1 || viewHeight < 1) {
      throw new RangeError("viewport must have positive size");
    }
    if (!(zoom > 0)) throw new RangeError("zoom must be positive");
    this.zoomValue = zoom;
  }

  get zoom(): number {
    return this.zoomValue;
  }

  get scrollX(): number {
    return this.scrollXValue;
  }

  get scrollY(): number {
    return this.scrollYValue;
  }

  /** Columns visible across the view width at the current zoom. */
  get visibleColumns(): number {
    return this.viewWidth / this.zoomValue;
  }

  get visibleRows(): number {
    return this.viewHeight / this.zoomValue;
  }

  private normalize(): void {
    if (this.world.wrap) {
      this.scrollXValue = floorMod(this.scrollXValue, this.world.width);
    } else {
      this.scrollXValue = Math.min(
        Math.max(this.scrollXValue, 0),
        Math.max(0, this.world.width - this.visibleColumns),
      );
    }
    this.scrollYValue = Math.min(
      Math.max(this.scrollYValue, 0),
      Math.max(0, this.world.height - this.visibleRows),
    );
  }

  /** Pan by view pixels; wrapped grids scroll forever, flat ones clamp. */
  panBy(dxView: number, dyView: number): void {
    this.scrollXValue += dxView / this.zoomValue;
    this.scrollYValue += dyView / this.zoomValue;
    this.normalize();
  }

  scrollTo(worldCol: number, worldRow: number): void {
    this.scrollXValue = worldCol;
    this.scrollYValue = worldRow;
    this.normalize();
  }

  /** Center the viewport on a world pixel (e.g. an issue's instance). */
  centerOn(worldCol: number, worldRow: number): void {
    this.scrollTo(
      worldCol + 0.5 - this.visibleColumns / 2,
      worldRow + 0.5 - this.visibleRows / 2,
    );
  }

  /** Re-zoom, keeping the world point under `anchorViewX/Y` fixed. */
  setZoom(zoom: number, anchorViewX = 0, anchorViewY = 0): void {
    if (!(zoom > 0)) throw new RangeError("zoom must be positive");
    const worldX = this.scrollXValue + anchorViewX / this.zoomValue;
    const worldY = this.scrollYValue + anchorViewY / this.zoomValue;
    this.zoomValue = zoom;
    this.scrollXValue = worldX - anchorViewX / zoom;
    this.scrollYValue = worldY - anchorViewY / zoom;
    this.normalize();
  }

  /** World column under a view x pixel (wrapped into 0..W-1 on wrap grids). */
  worldColAt(viewX: number): number | null {
    const world = this.scrollXValue + viewX / this.zoomValue;
    if (this.world.wrap) {
      return floorMod(Math.floor(world), this.world.width);
    }
    const col = Math.floor(world);
    return col >= 0 && col < this.world.width ? col : null;
  }

  /** World row under a view y pixel, or null outside the grid. */
  worldRowAt(viewY: number): number | null {
    const row = Math.floor(this.scrollYValue + viewY / this.zoomValue);
    return row >= 0 && row < this.world.height ? row : null;
  }

  /** Every on-screen view x of a world column's left edge (0, 1, or — when
   * the seam is in view and the world is narrow enough — 2 positions). */
  viewXsOf(worldCol: number): number[] {
    const out: number[] = [];
    if (this.world.wrap) {
      const period = this.world.width;
      const firstK = Math.floor((this.scrollXValue - worldCol) / period) - 1;
      for (let k = firstK; ; k++) {
        const viewX = (worldCol + k * period - this.scrollXValue) * this.zoomValue;
        if (viewX >= this.viewWidth) break;
        if (viewX > -this.zoomValue) out.push(viewX);
      }
    } else {
      const viewX = (worldCol - this.scrollXValue) * this.zoomValue;
      if (viewX > -this.zoomValue && viewX < this.viewWidth) out.push(viewX);
    }
    return out;
  }

  /** The visible world columns as contiguous blit spans: the part up to
   * the seam, then — when the viewport hangs past W-1 — the part that
   * wrapped into column 0.  Two spans at working zooms; more only when
   * the view is wider than the world, which then repeats.  Blitting the
   * spans in order paints the viewport with perfect registration. */
  columnSpans(): ColumnSpan[] {
    const firstCol = Math.floor(this.scrollXValue);
    const needed = Math.ceil(this.scrollXValue + this.visibleColumns) - firstCol;
    if (!this.world.wrap) {
      const start = Math.max(0, firstCol);
      const end = Math.min(this.world.width, firstCol + needed);
      if (end <= start) return [];
      return [
        {
          viewX: (start - this.scrollXValue) * this.zoomValue,
          startCol: start,
          columns: end - start,
        },
      ];
    }
    const spans: ColumnSpan[] = [];
    let col = firstCol;
    let remaining = needed;
    while (remaining > 0) {
      const worldCol = floorMod(col, this.world.width);
      const chunk = Math.min(remaining, this.world.width - worldCol);
      spans.push({
        viewX: (col - this.scrollXValue) * this.zoomValue,
        startCol: worldCol,
        columns: chunk,
      });
      col += chunk;
      remaining -= chunk;
    }
    return spans;
  }
}
