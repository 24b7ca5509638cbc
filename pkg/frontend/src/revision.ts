/** Edit operations, serialized exactly as the store's revision log records.
 *
 * Every UI edit — brush stroke, relabel, delete, add, merge — becomes one
 * of these records and is posted verbatim; the UI holds no state the
 * revision log cannot reconstruct.  Brush edits travel as run-length
 * deltas (`edit_mask` with pixels-to-add and pixels-to-remove), never as
 * full masks, keeping the log small and legible.
 */

import { Mask, isEmpty, maskToText } from "./mask.js";

export type Revision =
  | { op: "relabel"; seq: number; instanceId: number; label: string }
  | { op: "delete_instance"; seq: number; instanceId: number }
  | { op: "merge_instances"; seq: number; keepId: number; dropId: number }
  | {
      op: "replace_mask";
      seq: number;
      frameIndex: number;
      instanceId: number;
      mask: Mask;
    }
  | {
      op: "add_instance";
      seq: number;
      frameIndex: number;
      instanceId: number;
      provenance: string;
      label: string;
      mask: Mask;
    }
  | {
      op: "edit_mask";
      seq: number;
      frameIndex: number;
      instanceId: number;
      add: Mask;
      remove: Mask;
    };

export class RevisionFormatError extends Error {}

function maskBlock(out: string[], mask: Mask): void {
  out.push(`mask ${mask.runs.length}`);
  out.push(maskToText(mask).replace(/\n$/, ""));
}

const LABEL_RE = /^[\x20-\x7e]+$/;

function checkLabel(label: string): string {
  if (!LABEL_RE.test(label) || label !== label.trim()) {
    throw new RevisionFormatError(`bad label ${JSON.stringify(label)}`);
  }
  return label;
}

function checkId(value: number, what: string): number {
  if (!Number.isInteger(value) || value < 1) {
    throw new RevisionFormatError(`${what} ${value} must be a positive integer`);
  }
  return value;
}

/** The record text, byte-identical to what the store itself writes. */
export function serializeRevision(rev: Revision): string {
  if (!Number.isInteger(rev.seq) || rev.seq < 1) {
    throw new RevisionFormatError(`bad sequence ${rev.seq}`);
  }
  let head = `rev ${rev.seq} ${rev.op}`;
  const masks: Mask[] = [];
  switch (rev.op) {
    case "replace_mask":
      head += ` frame=${rev.frameIndex} instance=${checkId(rev.instanceId, "instance id")}`;
      masks.push(rev.mask);
      break;
    case "edit_mask":
      head += ` frame=${rev.frameIndex} instance=${checkId(rev.instanceId, "instance id")}`;
      masks.push(rev.add, rev.remove);
      break;
    case "relabel":
      head += ` instance=${checkId(rev.instanceId, "instance id")} label=${checkLabel(rev.label)}`;
      break;
    case "delete_instance":
      head += ` instance=${checkId(rev.instanceId, "instance id")}`;
      break;
    case "add_instance":
      if (isEmpty(rev.mask)) {
        throw new RevisionFormatError("add_instance needs a non-empty mask");
      }
      head +=
        ` frame=${rev.frameIndex} instance=${checkId(rev.instanceId, "instance id")}` +
        ` provenance=${rev.provenance} label=${checkLabel(rev.label)}`;
      masks.push(rev.mask);
      break;
    case "merge_instances":
      head += ` keep=${checkId(rev.keepId, "keep id")} drop=${checkId(rev.dropId, "drop id")}`;
      break;
  }
  const out = [head];
  for (const mask of masks) maskBlock(out, mask);
  out.push("end rev");
  return out.join("\n") + "\n";
}

/** A brush delta that changes nothing — nothing should be posted. */
export function editChangesNothing(add: Mask, remove: Mask): boolean {
  return isEmpty(add) && isEmpty(remove);
}
