import { describe, expect, it } from "vitest";

import {
  applyPose,
  decodeServerFrame,
  encodeClientFrame,
  OPEN_TIPS,
  Pose7,
  ProtocolError,
  quatFromAxisAngle,
  quatMultiply,
  quatNormalize,
  quatToMatrix,
  rotatePoint,
  Sequencer,
} from "../src/protocol.js";

import { stateUpdate } from "./helpers.js";

describe("server frame decoding", () => {
  it("accepts the documented hello ack verbatim", () => {
    const msg = decodeServerFrame(
      '{"type": "hello", "seq": 1, "payload": {"protocol": "dexpipe/1", "role": "corrector", "phase": "Idle"}}',
    );
    expect(msg).toEqual({
      type: "hello",
      seq: 1,
      payload: { protocol: "dexpipe/1", role: "corrector", phase: "Idle" },
    });
  });

  it("accepts the documented error frame verbatim", () => {
    const msg = decodeServerFrame(
      '{"type": "error", "seq": 6, "payload": {"error": "PhaseMismatch", "detail": "phase is Idle"}}',
    );
    expect(msg.type).toBe("error");
    if (msg.type === "error") {
      expect(msg.payload.error).toBe("PhaseMismatch");
      expect(msg.payload.detail).toBe("phase is Idle");
    }
  });

  it("accepts the documented save ack verbatim", () => {
    const msg = decodeServerFrame(
      '{"type": "save_d_prime", "seq": 40, "payload": {"path": "/data/run1_dprime.dxd", "steps": 200}}',
    );
    expect(msg.payload).toEqual({ path: "/data/run1_dprime.dxd", steps: 200 });
  });

  it("accepts the documented start ack verbatim", () => {
    const msg = decodeServerFrame(
      '{"type": "start_rollout", "seq": 2, "payload": {"ticks": 200, "policy": "replay", "lockstep": false}}',
    );
    expect(msg.payload).toEqual({ ticks: 200, policy: "replay", lockstep: false });
  });

  it("round-trips a full state_update", () => {
    const frame = stateUpdate(5, 4, { mode: "teleop", cloudRows: 7, query: true });
    const msg = decodeServerFrame(JSON.stringify(frame));
    expect(msg.type).toBe("state_update");
    if (msg.type === "state_update") {
      expect(msg.payload.tick).toBe(4);
      expect(msg.payload.mode).toBe("teleop");
      expect(msg.payload.query).toBe(true);
      expect(msg.payload.cloud).toHaveLength(7);
      expect(msg.payload.right.pose).toEqual(frame.payload.right.pose);
      expect(msg.payload.left.joints).toHaveLength(16);
    }
  });

  const bad: [string, string][] = [
    ["not JSON at all", "{nope"],
    ["non-object frame", "[1, 2]"],
    ["unknown type", '{"type": "telemetry", "seq": 1, "payload": {}}'],
    ["seq zero", '{"type": "pause", "seq": 0, "payload": {"phase": "Paused"}}'],
    ["missing seq", '{"type": "pause", "payload": {"phase": "Paused"}}'],
    ["null payload where fields required", '{"type": "hello", "seq": 1, "payload": null}'],
    ["bad role", '{"type": "hello", "seq": 1, "payload": {"protocol": "dexpipe/1", "role": "admin", "phase": "Idle"}}'],
  ];
  for (const [name, text] of bad) {
    it(`rejects ${name}`, () => {
      expect(() => decodeServerFrame(text)).toThrow(ProtocolError);
    });
  }

  it("rejects malformed state_update payloads", () => {
    const good = stateUpdate(3, 1);
    const mutations: ((f: ReturnType<typeof stateUpdate>) => void)[] = [
      (f) => (f.payload.tick = -1),
      (f) => ((f.payload as { mode: string }).mode = "manual"),
      (f) => f.payload.right.pose.pop(),
      (f) => f.payload.left.joints.pop(),
      (f) => f.payload.cloud[0]!.pop(),
      (f) => delete (f.payload as Partial<typeof f.payload>).left,
    ];
    for (const mutate of mutations) {
      const frame = JSON.parse(JSON.stringify(good)) as ReturnType<typeof stateUpdate>;
      mutate(frame);
      expect(() => decodeServerFrame(JSON.stringify(frame))).toThrow(ProtocolError);
    }
  });

  it("rejects clouds above the broadcast cap", () => {
    const frame = stateUpdate(3, 1, { cloudRows: 501 });
    expect(() => decodeServerFrame(JSON.stringify(frame))).toThrow(/cloud/);
  });
});

describe("client frame encoding", () => {
  it("omits tips on ack-only frames", () => {
    const text = encodeClientFrame({
      type: "correction_input",
      seq: 4,
      payload: { tick: 3, wrist: null },
    });
    const parsed = JSON.parse(text);
    expect(parsed).toEqual({
      type: "correction_input",
      seq: 4,
      payload: { tick: 3, wrist: null },
    });
    expect("tips" in parsed.payload).toBe(false);
  });

  it("carries full samples", () => {
    const wrist: Pose7 = [1, 0, 0, 0, 0.01, 0, 0];
    const text = encodeClientFrame({
      type: "correction_input",
      seq: 5,
      payload: { tick: 4, wrist, tips: OPEN_TIPS.slice() },
    });
    const parsed = JSON.parse(text);
    expect(parsed.payload.wrist).toEqual([1, 0, 0, 0, 0.01, 0, 0]);
    expect(parsed.payload.tips).toHaveLength(15);
  });
});

describe("sequencer", () => {
  it("numbers outgoing frames from 1", () => {
    const s = new Sequencer();
    expect([s.next(), s.next(), s.next()]).toEqual([1, 2, 3]);
  });

  it("allows skips but never regressions on inbound seq", () => {
    const s = new Sequencer();
    s.accept(1);
    s.accept(5); // frames may be dropped for slow clients
    expect(() => s.accept(5)).toThrow(ProtocolError);
    expect(() => s.accept(3)).toThrow(ProtocolError);
    expect(() => s.accept(6.5)).toThrow(ProtocolError);
    s.accept(6);
  });
});

describe("pose arithmetic", () => {
  it("identity quaternion gives the identity matrix", () => {
    expect(quatToMatrix([1, 0, 0, 0])).toEqual([1, 0, 0, 0, 1, 0, 0, 0, 1]);
  });

  it("rotates x toward y for a +90 degree yaw", () => {
    const q = quatFromAxisAngle([0, 0, 1], Math.PI / 2);
    const p = rotatePoint(q, [1, 0, 0]);
    expect(p[0]).toBeCloseTo(0, 12);
    expect(p[1]).toBeCloseTo(1, 12);
    expect(p[2]).toBeCloseTo(0, 12);
  });

  it("composes rotations by quaternion product", () => {
    const z90 = quatFromAxisAngle([0, 0, 1], Math.PI / 2);
    const z180 = quatMultiply(z90, z90);
    const p = rotatePoint(z180, [1, 0, 0]);
    expect(p[0]).toBeCloseTo(-1, 12);
    expect(p[1]).toBeCloseTo(0, 12);
  });

  it("normalizes to unit length with w >= 0", () => {
    expect(quatNormalize([-2, 0, 0, 0])).toEqual([1, -0, -0, -0]);
    const q = quatNormalize([0.5, 0.5, 0.5, 0.5]);
    expect(Math.hypot(...q)).toBeCloseTo(1, 15);
    expect(() => quatNormalize([0, 0, 0, 0])).toThrow(ProtocolError);
  });

  it("applies translation after rotation", () => {
    const pose: Pose7 = [1, 0, 0, 0, 1, 2, 3];
    expect(applyPose(pose, [0, 0, 0])).toEqual([1, 2, 3]);
    const yaw: Pose7 = [
      ...quatFromAxisAngle([0, 0, 1], Math.PI / 2),
      1, 0, 0,
    ] as Pose7;
    const p = applyPose(yaw, [1, 0, 0]);
    expect(p[0]).toBeCloseTo(1, 12);
    expect(p[1]).toBeCloseTo(1, 12);
  });
});
