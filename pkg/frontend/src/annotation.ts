/** Parsing of per-frame annotation text as served by the review API.
 *
 * The service returns each frame's annotation file verbatim; this module
 * turns it into entry objects the overlay and editor work on.  The parser
 * is strict — the format is fully specified, and silently tolerating a
 * malformed file would desynchronize the UI from the store.
 */

import {
  GridDims,
  Mask,
  MaskFormatError,
  maskFromText,
} from "./mask.js";

export class AnnotationFormatError extends Error {}

export interface FrameEntry {
  readonly instanceId: number;
  readonly label: string;
  readonly provenance: string;
  readonly mask: Mask;
}

export interface FrameAnnotation {
  readonly frameIndex: number;
  readonly dims: GridDims;
  readonly entries: readonly FrameEntry[];
}

/** Strict line cursor over newline-terminated text. */
export class Lines {
  private readonly lines: string[];
  private at = 0;

  constructor(text: string) {
    if (!text.endsWith("\n")) {
      throw new AnnotationFormatError("text does not end with a newline");
    }
    this.lines = text.split("\n");
    this.lines.pop();
  }

  take(): string {
    const line = this.lines[this.at];
    if (line === undefined) {
      throw new AnnotationFormatError("unexpected end of text");
    }
    this.at++;
    return line;
  }

  peek(): string | undefined {
    return this.lines[this.at];
  }

  expect(want: string): void {
    const got = this.take();
    if (got !== want) {
      throw new AnnotationFormatError(
        `expected ${JSON.stringify(want)}, got ${JSON.stringify(got)}`,
      );
    }
  }

  finish(): void {
    if (this.at !== this.lines.length) {
      throw new AnnotationFormatError(
        `trailing data: ${JSON.stringify(this.lines[this.at])}`,
      );
    }
  }
}

const INT_RE = /^(0|[1-9][0-9]*)$/;

function intField(cur: Lines, key: string): number {
  const line = cur.take();
  const prefix = `${key} `;
  if (!line.startsWith(prefix) || !INT_RE.test(line.slice(prefix.length))) {
    throw new AnnotationFormatError(`bad ${key} line: ${JSON.stringify(line)}`);
  }
  return Number(line.slice(prefix.length));
}

export function parseDimsLine(line: string, key = "dims"): GridDims {
  const parts = line.split(" ");
  if (
    parts.length !== 4 ||
    parts[0] !== key ||
    !INT_RE.test(parts[1] ?? "") ||
    !INT_RE.test(parts[2] ?? "") ||
    !/^wrap[01]$/.test(parts[3] ?? "")
  ) {
    throw new AnnotationFormatError(`bad ${key} line: ${JSON.stringify(line)}`);
  }
  return {
    width: Number(parts[1]),
    height: Number(parts[2]),
    wrap: parts[3] === "wrap1",
  };
}

function readMaskBlock(cur: Lines): Mask {
  const head = cur.take();
  const match = /^mask (0|[1-9][0-9]*)$/.exec(head);
  if (!match) {
    throw new AnnotationFormatError(
      `expected 'mask <nruns>', got ${JSON.stringify(head)}`,
    );
  }
  const nruns = Number(match[1]);
  const lines: string[] = [];
  for (let i = 0; i < nruns + 1; i++) lines.push(cur.take());
  let mask: Mask;
  try {
    mask = maskFromText(lines.join("\n") + "\n");
  } catch (err) {
    if (err instanceof MaskFormatError) {
      throw new AnnotationFormatError(`bad mask block: ${err.message}`);
    }
    throw err;
  }
  if (mask.runs.length !== nruns) {
    throw new AnnotationFormatError(
      `mask block announced ${nruns} runs, has ${mask.runs.length}`,
    );
  }
  return mask;
}

/** Parse one frame annotation file ("ann v1" text). */
export function parseFrameAnnotation(text: string): FrameAnnotation {
  const cur = new Lines(text);
  cur.expect("ann v1");
  const frameIndex = intField(cur, "frame");
  const dims = parseDimsLine(cur.take());
  const count = intField(cur, "entries");
  const entries: FrameEntry[] = [];
  let previousId = 0;
  for (let i = 0; i < count; i++) {
    const head = cur.take();
    const match = /^entry ([1-9][0-9]*) ([a-z-]+)$/.exec(head);
    if (!match) {
      throw new AnnotationFormatError(`bad entry line: ${JSON.stringify(head)}`);
    }
    const instanceId = Number(match[1]);
    if (instanceId <= previousId) {
      throw new AnnotationFormatError("entries out of instance order");
    }
    previousId = instanceId;
    const labelLine = cur.take();
    if (!labelLine.startsWith("label ")) {
      throw new AnnotationFormatError(
        `bad label line: ${JSON.stringify(labelLine)}`,
      );
    }
    const label = labelLine.slice("label ".length);
    const mask = readMaskBlock(cur);
    cur.expect("end entry");
    if (mask.dims.width !== dims.width || mask.dims.height !== dims.height) {
      throw new AnnotationFormatError("entry mask dims do not match the frame");
    }
    if (!mask.runs.length) {
      throw new AnnotationFormatError("frame entries never hold empty masks");
    }
    entries.push({
      instanceId,
      label,
      provenance: match[2] ?? "",
      mask,
    });
  }
  cur.expect("end");
  cur.finish();
  return { frameIndex, dims, entries };
}
