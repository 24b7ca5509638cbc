import { describe, expect, it } from "vitest";

import {
  GridDims,
  MaskFormatError,
  area,
  decode,
  difference,
  emptyMask,
  fromBitmap,
  intersection,
  isEmpty,
  makeMask,
  maskFromText,
  maskToText,
  masksEqual,
  outline,
  pieceCount,
  union,
} from "../src/mask.js";

const D8: GridDims = { width: 8, height: 4, wrap: true };
const FLAT: GridDims = { width: 8, height: 4, wrap: false };

describe("run-length text", () => {
  it("round-trips byte-stable", () => {
    const text = "dims 8 4 wrap1\n0 2 3\n1 0 8\n2 6 2\n";
    expect(maskToText(maskFromText(text))).toBe(text);
  });

  it("serializes the empty mask as the dims line alone", () => {
    expect(maskToText(emptyMask(D8))).toBe("dims 8 4 wrap1\n");
  });

  it("rejects runs out of canonical order", () => {
    expect(() => maskFromText("dims 8 4 wrap1\n1 0 2\n0 0 2\n")).toThrow(
      MaskFormatError,
    );
    expect(() => maskFromText("dims 8 4 wrap1\n0 4 2\n0 0 2\n")).toThrow(
      MaskFormatError,
    );
  });

  it("rejects overlapping and touching runs", () => {
    expect(() => maskFromText("dims 8 4 wrap1\n0 0 3\n0 2 2\n")).toThrow(
      MaskFormatError,
    );
    // touching runs must have been merged into one
    expect(() => maskFromText("dims 8 4 wrap1\n0 0 3\n0 3 2\n")).toThrow(
      MaskFormatError,
    );
  });

  it("rejects runs outside the grid", () => {
    expect(() => maskFromText("dims 8 4 wrap1\n0 6 3\n")).toThrow(MaskFormatError);
    expect(() => maskFromText("dims 8 4 wrap1\n4 0 1\n")).toThrow(MaskFormatError);
    expect(() => maskFromText("dims 8 4 wrap1\n0 -1 2\n")).toThrow(MaskFormatError);
  });

  it("rejects non-canonical integers and malformed lines", () => {
    expect(() => maskFromText("dims 8 4 wrap1\n0 01 2\n")).toThrow(MaskFormatError);
    expect(() => maskFromText("dims 8 4 wrap1\n0 0\n")).toThrow(MaskFormatError);
    expect(() => maskFromText("dims 8 4\n0 0 1\n")).toThrow(MaskFormatError);
  });

  it("rejects zero-length runs", () => {
    expect(() => makeMask(D8, [{ row: 0, start: 0, length: 0 }])).toThrow(
      MaskFormatError,
    );
  });
});

describe("bitmap round trip", () => {
  it("decode fills exactly the run pixels", () => {
    const mask = makeMask(D8, [
      { row: 0, start: 2, length: 3 },
      { row: 2, start: 7, length: 1 },
    ]);
    const pixels = decode(mask);
    const on: number[] = [];
    pixels.forEach((v, i) => {
      if (v) on.push(i);
    });
    expect(on).toEqual([2, 3, 4, 2 * 8 + 7]);
  });

  it("fromBitmap emits canonical merged runs", () => {
    const bitmap = new Uint8Array(8 * 4);
    for (const i of [1, 2, 3, 5, 8]) bitmap[i] = 1;
    const mask = fromBitmap(D8, bitmap);
    expect(mask.runs).toEqual([
      { row: 0, start: 1, length: 3 },
      { row: 0, start: 5, length: 1 },
      { row: 1, start: 0, length: 1 },
    ]);
    expect(decode(mask)).toEqual(bitmap);
  });
});

describe("set algebra", () => {
  const a = makeMask(D8, [{ row: 0, start: 0, length: 4 }]);
  const b = makeMask(D8, [{ row: 0, start: 2, length: 4 }]);

  it("union merges touching spans into one run", () => {
    expect(union(a, b).runs).toEqual([{ row: 0, start: 0, length: 6 }]);
  });

  it("intersection keeps the shared span", () => {
    expect(intersection(a, b).runs).toEqual([{ row: 0, start: 2, length: 2 }]);
  });

  it("difference removes the shared span", () => {
    expect(difference(a, b).runs).toEqual([{ row: 0, start: 0, length: 2 }]);
    expect(difference(b, a).runs).toEqual([{ row: 0, start: 4, length: 2 }]);
  });

  it("empty-mask identities hold", () => {
    const none = emptyMask(D8);
    expect(masksEqual(union(a, none), a)).toBe(true);
    expect(isEmpty(intersection(a, none))).toBe(true);
    expect(masksEqual(difference(a, none), a)).toBe(true);
    expect(area(a)).toBe(4);
  });

  it("refuses mismatched grids", () => {
    const other = makeMask(FLAT, [{ row: 0, start: 0, length: 4 }]);
    expect(() => union(a, other)).toThrow(MaskFormatError);
  });
});

describe("piece counting across the seam", () => {
  it("counts a seam-spanning object once only when wrap-aware", () => {
    // pixels at both horizontal extremes, touching through the seam
    const mask = makeMask(D8, [
      { row: 0, start: 0, length: 2 },
      { row: 0, start: 6, length: 2 },
    ]);
    expect(pieceCount(mask, false)).toBe(2);
    expect(pieceCount(mask, true)).toBe(1);
  });

  it("keeps genuinely separate pieces separate", () => {
    const mask = makeMask(D8, [
      { row: 0, start: 1, length: 2 },
      { row: 2, start: 5, length: 2 },
    ]);
    expect(pieceCount(mask, false)).toBe(2);
    expect(pieceCount(mask, true)).toBe(2);
  });

  it("ignores the seam on a flat grid", () => {
    const mask = makeMask(FLAT, [
      { row: 0, start: 0, length: 2 },
      { row: 0, start: 6, length: 2 },
    ]);
    expect(pieceCount(mask, true)).toBe(2);
  });

  it("joins vertically adjacent runs", () => {
    const mask = makeMask(D8, [
      { row: 0, start: 3, length: 1 },
      { row: 1, start: 3, length: 1 },
    ]);
    expect(pieceCount(mask, false)).toBe(1);
  });
});

describe("outline", () => {
  it("keeps only boundary pixels of a solid block", () => {
    // 3x3 block: the centre pixel has all four neighbours inside
    const runs = [0, 1, 2].map((r) => ({ row: r + 1, start: 2, length: 3 }));
    const border = outline(makeMask(D8, runs));
    expect(area(border)).toBe(8);
    expect(
      border.runs.some((run) => run.row === 2 && run.start <= 3 && run.start + run.length > 3),
    ).toBe(false);
  });

  it("treats the seam as interior when both sides are filled", () => {
    // a full-width band: columns wrap, so only the top/bottom rows matter
    const mask = makeMask(D8, [
      { row: 1, start: 0, length: 8 },
      { row: 2, start: 0, length: 8 },
    ]);
    expect(area(outline(mask))).toBe(16);
    const tall = makeMask(D8, [0, 1, 2, 3].map((r) => ({ row: r, start: 0, length: 8 })));
    // grid edges above row 0 and below the last row still count as outside
    expect(outline(tall).runs).toEqual([
      { row: 0, start: 0, length: 8 },
      { row: 3, start: 0, length: 8 },
    ]);
  });
});
