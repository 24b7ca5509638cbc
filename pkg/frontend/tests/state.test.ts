import { beforeEach, describe, expect, it } from "vitest";

import { FetchLike, ReviewApi } from "../src/api.js";
import { GridDims, decode, emptyMask, makeMask } from "../src/mask.js";
import {
  EditNotAllowedError,
  PendingEditsError,
  ReviewSession,
} from "../src/state.js";

const D: GridDims = { width: 8, height: 4, wrap: true };
const PPM_B64 = Buffer.from(
  "P6\n8 4\n255\n" + "\x40".repeat(8 * 4 * 3),
  "latin1",
).toString("base64");

interface FakeIssue {
  frame_index: number;
  instance_id: number;
  kind: string;
  status: "open" | "resolved";
  comment: string;
}

/** In-memory stand-in for the review service, faithful to its lease and
 * sequence rules (the error wording matters — the session reads it). */
class FakeService {
  annByFrame: Record<number, string | null> = {};
  instances: Record<string, string> = {};
  issues: FakeIssue[] | null = [];
  revisions: string[] = [];
  lease: { token: string; reviewer: string } | null = null;
  failNetwork = false;
  posts = 0;
  private tokenCounter = 0;

  constructor() {
    this.annByFrame[0] =
      "ann v1\nframe 0\ndims 8 4 wrap1\nentries 2\n" +
      "entry 1 sdr\nlabel wall\nmask 1\ndims 8 4 wrap1\n0 0 8\nend entry\n" +
      "entry 4 tracked\nlabel deer\nmask 2\ndims 8 4 wrap1\n2 0 2\n2 6 2\nend entry\n" +
      "end\n";
    this.annByFrame[1] =
      "ann v1\nframe 1\ndims 8 4 wrap1\nentries 1\n" +
      "entry 1 sdr\nlabel wall\nmask 1\ndims 8 4 wrap1\n0 0 8\nend entry\nend\n";
    this.instances = { "1": "wall", "4": "deer" };
    this.issues = [
      {
        frame_index: 0,
        instance_id: 4,
        kind: "bad_boundary",
        status: "open",
        comment: "area jumped",
      },
      {
        frame_index: 1,
        instance_id: 9,
        kind: "missing",
        status: "open",
        comment: "uncovered region",
      },
    ];
  }

  readonly fetch: FetchLike = async (url, init) => {
    if (this.failNetwork) throw new TypeError("fetch failed");
    const method = init?.method ?? "GET";
    const path = url.replace(/^http:\/\/fake/, "");
    const headers = init?.headers ?? {};
    const body = init?.body ? (JSON.parse(init.body) as Record<string, unknown>) : {};
    const reply = (status: number, payload: unknown) => ({
      ok: status < 400,
      status,
      json: async () => payload,
    });
    const error = (status: number, detail: string) =>
      reply(status, { error: detail });

    const leaseGuard = () => {
      const token = headers["x-lease-token"];
      if (!this.lease) return "no active lease on video vid";
      if (this.lease.token !== token) {
        return `video vid is leased to ${this.lease.reviewer}`;
      }
      return null;
    };

    let m: RegExpExecArray | null;
    if (method === "GET" && path === "/api/videos/vid") {
      return reply(200, {
        video_id: "vid",
        status: "checked",
        frame_count: 2,
        fps: 5.0,
        width: D.width,
        height: D.height,
        image_format: "ppm",
        config_digest: "0".repeat(64),
        revisions: this.revisions.length,
        instances: this.instances,
        score: 9.0,
        open_issues: this.issues?.filter((i) => i.status === "open").length ?? null,
      });
    }
    if ((m = /^\/api\/videos\/vid\/frames\/(\d+)$/.exec(path)) && method === "GET") {
      const index = Number(m[1]);
      if (!(index in this.annByFrame)) return error(404, "unknown frame");
      return reply(200, {
        video_id: "vid",
        frame_index: index,
        image_format: "ppm",
        image_base64: PPM_B64,
        annotation: this.annByFrame[index],
      });
    }
    if (method === "GET" && path === "/api/videos/vid/report") {
      if (this.issues === null) return error(404, "no report for vid");
      return reply(200, {
        video_id: "vid",
        score: 9.0,
        issues: this.issues.map((issue, index) => ({ index, ...issue })),
      });
    }
    if (method === "GET" && path === "/api/videos/vid/revisions") {
      return reply(200, {
        video_id: "vid",
        count: this.revisions.length,
        revisions: this.revisions,
      });
    }
    if (method === "POST" && path === "/api/videos/vid/lease") {
      const token = headers["x-lease-token"];
      if (this.lease && this.lease.token !== token) {
        return error(409, `video vid is leased to ${this.lease.reviewer}`);
      }
      this.lease = {
        token: `tok-${++this.tokenCounter}`,
        reviewer: String(body["reviewer"]),
      };
      return reply(200, {
        video_id: "vid",
        reviewer: this.lease.reviewer,
        token: this.lease.token,
        expires_in: 900,
      });
    }
    if (method === "DELETE" && path === "/api/videos/vid/lease") {
      const held = this.lease?.token === headers["x-lease-token"];
      if (held) this.lease = null;
      return reply(200, { video_id: "vid", released: held });
    }
    if (method === "POST" && path === "/api/videos/vid/revisions") {
      this.posts += 1;
      const denied = leaseGuard();
      if (denied) return error(409, denied);
      const sequence = Number(body["sequence"]);
      const record = String(body["revision"]);
      const existing = this.revisions[sequence - 1];
      if (existing !== undefined) {
        if (existing === record) {
          return reply(200, { video_id: "vid", sequence, applied: false });
        }
        return error(409, `a different revision already holds sequence ${sequence}`);
      }
      if (sequence !== this.revisions.length + 1) {
        return error(
          409,
          `stale sequence ${sequence}: the log is at ${this.revisions.length}`,
        );
      }
      this.revisions.push(record);
      return reply(200, { video_id: "vid", sequence, applied: true });
    }
    if ((m = /^\/api\/videos\/vid\/issues\/(\d+)\/resolve$/.exec(path))) {
      const denied = leaseGuard();
      if (denied) return error(409, denied);
      const issue = this.issues?.[Number(m[1])];
      if (!issue) return error(404, "no issue");
      issue.status = "resolved";
      return reply(200, {
        video_id: "vid",
        score: 9.0,
        issues: (this.issues ?? []).map((i, index) => ({ index, ...i })),
      });
    }
    return error(404, `no route ${method} ${path}`);
  };
}

let fake: FakeService;
let session: ReviewSession;

beforeEach(async () => {
  fake = new FakeService();
  session = new ReviewSession(new ReviewApi("http://fake", { fetchImpl: fake.fetch }));
  await session.browse("vid", 0);
});

describe("browsing", () => {
  it("loads the frame, its entries, and the label registry", () => {
    expect(session.videoId).toBe("vid");
    expect(session.frameIndex).toBe(0);
    expect(session.entries.map((e) => e.instanceId)).toEqual([1, 4]);
    expect(session.labels.get(4)).toBe("deer");
    expect(session.imageBase64).toBe(PPM_B64);
    expect(session.banner).toBeNull();
  });

  it("keeps the view and raises the banner on a network failure, then retries", async () => {
    fake.failNetwork = true;
    const moved = await session.browse("vid", 1);
    expect(moved).toBe(false);
    expect(session.frameIndex).toBe(0); // unchanged
    expect(session.banner).toMatch(/cannot reach/);
    fake.failNetwork = false;
    expect(await session.retry()).toBe(true);
    expect(session.frameIndex).toBe(1);
    expect(session.banner).toBeNull();
  });

  it("treats a frame without annotations as zero instances", async () => {
    fake.annByFrame[1] = null;
    await session.browse("vid", 1);
    expect(session.entries).toEqual([]);
  });
});

describe("issues", () => {
  it("jumps to an issue's frame and selects the implicated instance", async () => {
    await session.jumpToIssue(0);
    expect(session.frameIndex).toBe(0);
    expect(session.issueCursor).toBe(0);
    expect(session.selectedInstance).toBe(4);
  });

  it("selects nothing for a missing-object issue", async () => {
    await session.jumpToIssue(1);
    expect(session.frameIndex).toBe(1);
    expect(session.selectedInstance).toBeNull();
  });

  it("rejects a cursor that indexes no issue", async () => {
    await expect(session.jumpToIssue(2)).rejects.toThrow(RangeError);
    await expect(session.jumpToIssue(-1)).rejects.toThrow(RangeError);
    expect(session.issueCursor).toBeNull();
  });

  it("disables jumping when the report is empty or absent", async () => {
    fake.issues = [];
    await session.browse("vid", 0);
    expect(session.canJumpToIssue).toBe(false);
    fake.issues = null;
    await session.browse("vid", 1);
    expect(session.report).toBeNull();
    expect(session.canJumpToIssue).toBe(false);
  });

  it("strikes through resolved issues in the panel", async () => {
    await session.acquireLease("ada");
    await session.resolveIssue(0);
    const rows = session.issuePanel();
    expect(rows[0]?.struck).toBe(true);
    expect(rows[1]?.struck).toBe(false);
  });
});

describe("lease lifecycle", () => {
  it("editing without the lease is refused locally", async () => {
    expect(session.canEdit).toBe(false);
    await expect(session.relabel(4, "elk")).rejects.toThrow(EditNotAllowedError);
    expect(() => session.beginStroke(4, "add")).toThrow(EditNotAllowedError);
    expect(fake.posts).toBe(0);
  });

  it("a second session is made read-only by the holder's lease", async () => {
    await session.acquireLease("ada");
    expect(session.canEdit).toBe(true);

    const second = new ReviewSession(
      new ReviewApi("http://fake", { fetchImpl: fake.fetch }),
    );
    await second.browse("vid", 0);
    expect(await second.acquireLease("ada")).toBe(false); // same name, no token
    expect(second.lease).toEqual({ kind: "read-only", holder: "ada" });
    expect(second.canEdit).toBe(false);
    await expect(second.relabel(4, "elk")).rejects.toThrow(EditNotAllowedError);
    expect(fake.revisions).toEqual([]);
  });

  it("releasing frees the video for others", async () => {
    await session.acquireLease("ada");
    await session.releaseLease();
    expect(session.lease).toEqual({ kind: "none" });
    const second = new ReviewSession(
      new ReviewApi("http://fake", { fetchImpl: fake.fetch }),
    );
    await second.browse("vid", 0);
    expect(await second.acquireLease("bob")).toBe(true);
  });
});

describe("optimistic edits", () => {
  beforeEach(async () => {
    await session.acquireLease("ada");
  });

  it("relabel applies locally and posts the exact record", async () => {
    const outcome = await session.relabel(4, "elk");
    expect(outcome?.applied).toBe(true);
    expect(fake.revisions).toEqual(["rev 1 relabel instance=4 label=elk\nend rev\n"]);
    const deer = session.entries.find((e) => e.instanceId === 4);
    expect(deer?.label).toBe("elk");
    expect(deer?.provenance).toBe("tracked"); // relabel does not touch provenance
    expect(session.labels.get(4)).toBe("elk");
    expect(session.revisionCount).toBe(1);
  });

  it("a sequence conflict rolls back, resyncs, and the retry lands", async () => {
    fake.revisions.push("rev 1 delete_instance instance=9\nend rev\n"); // someone else
    const outcome = await session.relabel(4, "elk");
    expect(outcome).toBeNull();
    const deer = session.entries.find((e) => e.instanceId === 4);
    expect(deer?.label).toBe("deer"); // rolled back
    expect(session.labels.get(4)).toBe("deer");
    expect(session.revisionCount).toBe(1); // resynced to the log
    expect(session.prompt).toMatch(/conflicted/);
    expect(session.lease.kind).toBe("held"); // the lease survived

    const second = await session.relabel(4, "elk");
    expect(second?.applied).toBe(true);
    expect(fake.revisions[1]).toBe("rev 2 relabel instance=4 label=elk\nend rev\n");
  });

  it("a lost lease buffers the edit, prompts, and the retry replays it", async () => {
    fake.lease = null; // expired behind our back
    const outcome = await session.relabel(4, "elk");
    expect(outcome).toBeNull();
    expect(session.lease).toEqual({ kind: "lost", reviewer: "ada" });
    expect(session.pendingEdit?.revision.op).toBe("relabel");
    expect(session.prompt).toMatch(/buffered/);
    expect(session.entries.find((e) => e.instanceId === 4)?.label).toBe("deer");
    expect(fake.revisions).toEqual([]);

    await session.acquireLease("ada");
    const retried = await session.retryPending();
    expect(retried?.applied).toBe(true);
    expect(session.pendingEdit).toBeNull();
    expect(session.prompt).toBeNull();
    expect(fake.revisions).toEqual(["rev 1 relabel instance=4 label=elk\nend rev\n"]);
    expect(session.entries.find((e) => e.instanceId === 4)?.label).toBe("elk");
  });

  it("a network failure mid-edit rolls back and raises the banner", async () => {
    const entriesBefore = session.entries.map((e) => e.label).join(",");
    fake.failNetwork = true;
    const outcome = await session.relabel(4, "elk");
    expect(outcome).toBeNull();
    expect(session.banner).toMatch(/edit not saved/);
    expect(session.entries.map((e) => e.label).join(",")).toBe(entriesBefore);
  });

  it("delete removes the entry and the registry row", async () => {
    session.selectedInstance = 4;
    await session.deleteInstance(4);
    expect(session.entries.map((e) => e.instanceId)).toEqual([1]);
    expect(session.labels.has(4)).toBe(false);
    expect(session.selectedInstance).toBeNull();
    expect(fake.revisions[0]).toBe("rev 1 delete_instance instance=4\nend rev\n");
  });

  it("merge unions the masks under the kept id", async () => {
    await session.mergeInstances(1, 4);
    expect(session.entries.map((e) => e.instanceId)).toEqual([1]);
    const merged = session.entries[0];
    const pixels = decode(merged!.mask);
    expect(pixels[0]).toBe(1); // wall row
    expect(pixels[2 * 8 + 0]).toBe(1); // deer pixels absorbed
    expect(session.labels.has(4)).toBe(false);
    expect(fake.revisions[0]).toBe("rev 1 merge_instances keep=1 drop=4\nend rev\n");
  });

  it("replacing with an empty mask drops the frame entry", async () => {
    await session.replaceMask(4, emptyMask(D));
    expect(session.entries.map((e) => e.instanceId)).toEqual([1]);
  });

  it("a mask replacement marks the entry as revised", async () => {
    const mask = makeMask(D, [{ row: 3, start: 0, length: 4 }]);
    await session.replaceMask(4, mask);
    const deer = session.entries.find((e) => e.instanceId === 4);
    expect(deer?.provenance).toBe("revised");
    expect(decode(deer!.mask)).toEqual(decode(mask));
  });
});

describe("brush strokes", () => {
  beforeEach(async () => {
    await session.acquireLease("ada");
  });

  it("a stroke that changes nothing posts no revision", async () => {
    session.beginStroke(1, "add");
    session.extendStroke({ col: 3, row: 0 }); // already inside the wall mask
    const posted = fake.posts;
    const outcome = await session.commitStroke(0);
    expect(outcome).toBeNull();
    expect(fake.posts).toBe(posted);
    expect(fake.revisions).toEqual([]);
    expect(session.pendingStroke).toBeNull();
  });

  it("an erase stroke posts a run-length delta and revises the entry", async () => {
    session.beginStroke(1, "erase");
    session.extendStroke({ col: 2, row: 0 });
    const outcome = await session.commitStroke(0);
    expect(outcome?.applied).toBe(true);
    expect(fake.revisions).toEqual([
      "rev 1 edit_mask frame=0 instance=1\n" +
        "mask 0\ndims 8 4 wrap1\n" +
        "mask 1\ndims 8 4 wrap1\n0 2 1\nend rev\n",
    ]);
    const wall = session.entries.find((e) => e.instanceId === 1);
    expect(wall?.provenance).toBe("revised");
    expect(decode(wall!.mask)[2]).toBe(0);
    expect(decode(wall!.mask)[1]).toBe(1);
  });

  it("pending strokes never survive navigation without explicit discard", async () => {
    session.beginStroke(1, "add");
    session.extendStroke({ col: 0, row: 3 });
    await expect(session.browse("vid", 1)).rejects.toThrow(PendingEditsError);
    expect(session.frameIndex).toBe(0);
    await session.browse("vid", 1, { discard: true });
    expect(session.frameIndex).toBe(1);
    expect(session.pendingStroke).toBeNull();
  });

  it("a buffered lease-lost edit also blocks navigation until handled", async () => {
    fake.lease = null;
    await session.relabel(4, "elk");
    expect(session.pendingEdit).not.toBeNull();
    await expect(session.jumpToIssue(1)).rejects.toThrow(PendingEditsError);
    session.discardPending();
    await session.jumpToIssue(1);
    expect(session.frameIndex).toBe(1);
  });
});
