/** Shared test doubles and payload builders. */

import { SocketLike } from "../src/app.js";
import { PROTOCOL } from "../src/protocol.js";

export class MockSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onopen: (() => void) | null = null;
  onmessage: ((ev: { data: string }) => void) | null = null;
  onclose: (() => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    if (this.closed) return;
    this.closed = true;
    this.onclose?.();
  }

  /** Simulates the server accepting the connection. */
  open(): void {
    this.onopen?.();
  }

  /** Pushes one server frame into the app. */
  deliver(frame: unknown): void {
    const data = typeof frame === "string" ? frame : JSON.stringify(frame);
    this.onmessage?.({ data });
  }

  sentFrames(): { type: string; seq: number; payload: Record<string, unknown> }[] {
    return this.sent.map((s) => JSON.parse(s));
  }
}

export function helloAck(seq = 1, phase = "Idle") {
  return {
    type: "hello",
    seq,
    payload: { protocol: PROTOCOL, role: "corrector", phase },
  };
}

export function startAck(
  seq: number,
  opts: { ticks?: number; policy?: string; lockstep?: boolean } = {},
) {
  return {
    type: "start_rollout",
    seq,
    payload: {
      ticks: opts.ticks ?? 100,
      policy: opts.policy ?? "constant",
      lockstep: opts.lockstep ?? false,
    },
  };
}

const JOINTS = Array.from({ length: 16 }, (_, i) => 0.05 * i);

export function stateUpdatePayload(
  tick: number,
  opts: { mode?: "residual" | "teleop"; cloudRows?: number; query?: boolean } = {},
) {
  const n = opts.cloudRows ?? 3;
  // points near the camera target so every row projects on screen
  const cloud = Array.from({ length: n }, (_, i) => [
    0.05 * i - 0.1, 0.04 * i - 0.08, 0.02 * i, 0.5, 0.3, 0.2,
  ]);
  return {
    tick,
    mode: opts.mode ?? "residual",
    query: opts.query ?? false,
    left: { pose: [1, 0, 0, 0, -0.25, 0.15, 0.05], joints: JOINTS.slice() },
    right: { pose: [1, 0, 0, 0, 0.25, 0.15, 0.05], joints: JOINTS.slice() },
    cloud,
  };
}

export function stateUpdate(
  seq: number,
  tick: number,
  opts: Parameters<typeof stateUpdatePayload>[1] = {},
) {
  return { type: "state_update", seq, payload: stateUpdatePayload(tick, opts) };
}

export function keyEvent(kind: "keydown" | "keyup", code: string, repeat = false) {
  return new KeyboardEvent(kind, { code, repeat });
}
