import { describe, expect, it } from "vitest";

import { GridDims, emptyMask, makeMask } from "../src/mask.js";
import {
  Revision,
  RevisionFormatError,
  editChangesNothing,
  serializeRevision,
} from "../src/revision.js";

const D: GridDims = { width: 8, height: 4, wrap: true };
const M1 = makeMask(D, [
  { row: 0, start: 2, length: 3 },
  { row: 1, start: 0, length: 8 },
]);
const M2 = makeMask(D, [{ row: 2, start: 6, length: 2 }]);

// Expected texts verified byte-for-byte against the service's own log
// records for identical operations.
const CASES: Array<[Revision, string]> = [
  [
    { op: "relabel", seq: 1, instanceId: 4, label: "deer, adult" },
    "rev 1 relabel instance=4 label=deer, adult\nend rev\n",
  ],
  [
    { op: "delete_instance", seq: 2, instanceId: 9 },
    "rev 2 delete_instance instance=9\nend rev\n",
  ],
  [
    { op: "merge_instances", seq: 3, keepId: 2, dropId: 5 },
    "rev 3 merge_instances keep=2 drop=5\nend rev\n",
  ],
  [
    { op: "replace_mask", seq: 4, frameIndex: 7, instanceId: 3, mask: M1 },
    "rev 4 replace_mask frame=7 instance=3\n" +
      "mask 2\ndims 8 4 wrap1\n0 2 3\n1 0 8\nend rev\n",
  ],
  [
    {
      op: "edit_mask",
      seq: 5,
      frameIndex: 0,
      instanceId: 1,
      add: M2,
      remove: emptyMask(D),
    },
    "rev 5 edit_mask frame=0 instance=1\n" +
      "mask 1\ndims 8 4 wrap1\n2 6 2\nmask 0\ndims 8 4 wrap1\nend rev\n",
  ],
  [
    {
      op: "add_instance",
      seq: 6,
      frameIndex: 2,
      instanceId: 11,
      provenance: "revised",
      label: "lamp post",
      mask: M2,
    },
    "rev 6 add_instance frame=2 instance=11 provenance=revised label=lamp post\n" +
      "mask 1\ndims 8 4 wrap1\n2 6 2\nend rev\n",
  ],
];

describe("revision serialization", () => {
  it.each(CASES.map(([rev, text]) => [rev.op, rev, text] as const))(
    "emits the exact %s record",
    (_op, rev, text) => {
      expect(serializeRevision(rev)).toBe(text);
    },
  );

  it("rejects a non-positive sequence", () => {
    expect(() =>
      serializeRevision({ op: "delete_instance", seq: 0, instanceId: 1 }),
    ).toThrow(RevisionFormatError);
  });

  it("rejects bad instance ids", () => {
    expect(() =>
      serializeRevision({ op: "delete_instance", seq: 1, instanceId: 0 }),
    ).toThrow(RevisionFormatError);
    expect(() =>
      serializeRevision({ op: "delete_instance", seq: 1, instanceId: 2.5 }),
    ).toThrow(RevisionFormatError);
  });

  it("rejects labels with surrounding space or non-printable bytes", () => {
    for (const label of [" wall", "wall ", "", "wa\tll", "wäll"]) {
      expect(() =>
        serializeRevision({ op: "relabel", seq: 1, instanceId: 1, label }),
      ).toThrow(RevisionFormatError);
    }
  });

  it("rejects an empty add_instance mask", () => {
    expect(() =>
      serializeRevision({
        op: "add_instance",
        seq: 1,
        frameIndex: 0,
        instanceId: 1,
        provenance: "revised",
        label: "wall",
        mask: emptyMask(D),
      }),
    ).toThrow(RevisionFormatError);
  });
});

describe("no-op detection", () => {
  it("flags the empty delta and only the empty delta", () => {
    expect(editChangesNothing(emptyMask(D), emptyMask(D))).toBe(true);
    expect(editChangesNothing(M2, emptyMask(D))).toBe(false);
    expect(editChangesNothing(emptyMask(D), M2)).toBe(false);
  });
});
