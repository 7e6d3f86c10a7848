/**
 * dexpipe/1 wire contract: envelope encoding, per-message payload
 * validation, and sequence-number bookkeeping.
 *
 * Everything the rest of the UI knows about the server goes through this
 * module. Frames are JSON text in both directions:
 *
 *   {"type": "<message type>", "seq": 3, "payload": {...}}
 *
 * `seq` is strictly increasing per direction. The server numbers its frames
 * per connection starting at 1; we do the same for ours.
 */

export const PROTOCOL = "dexpipe/1";

/** Display clouds are decimated server-side; we never see more rows. */
export const MAX_CLOUD_POINTS = 500;

export const JOINT_COUNT = 16;

export type Role = "viewer" | "corrector";

/** [qw, qx, qy, qz, tx, ty, tz] — unit quaternion (w first) + meters. */
export type Pose7 = [number, number, number, number, number, number, number];

/** Identity transform. */
export const POSE_IDENTITY: Pose7 = [1, 0, 0, 0, 0, 0, 0];

/**
 * Five wrist-frame fingertip positions, row-major, thumb..little.
 * A relaxed open hand; the correction controller only reacts to deltas
 * from the first sample, so the absolute layout just has to be sane.
 */
export const OPEN_TIPS: number[] = [
  0.09, 0.02, 0.01, 0.08, -0.01, 0.0, 0.07, -0.03, 0.0, 0.06, -0.05, 0.0,
  0.02, -0.06, 0.01,
];

export interface ArmState {
  pose: Pose7;
  joints: number[]; // 16 angles, radians
}

export interface StateUpdate {
  tick: number;
  mode: "residual" | "teleop";
  query: boolean;
  left: ArmState;
  right: ArmState;
  /** [x, y, z, r, g, b] rows, at most 500, rounded to 4 decimals. */
  cloud: number[][];
}

export interface HelloAck {
  protocol: string;
  role: Role;
  phase: string;
}

export interface StartAck {
  ticks: number;
  policy: string;
  lockstep: boolean;
}

export interface PhaseAck {
  phase: string;
}

export interface SaveAck {
  path: string;
  steps: number;
}

export interface ErrorPayload {
  error: string;
  detail: string;
}

export type ServerMessage =
  | { type: "hello"; seq: number; payload: HelloAck }
  | { type: "start_rollout"; seq: number; payload: StartAck }
  | { type: "state_update"; seq: number; payload: StateUpdate }
  | { type: "pause"; seq: number; payload: PhaseAck }
  | { type: "resume"; seq: number; payload: PhaseAck }
  | { type: "save_d_prime"; seq: number; payload: SaveAck }
  | { type: "error"; seq: number; payload: ErrorPayload };

export interface StartRequest {
  policy?: string;
  dataset?: string;
  demo?: number;
  ticks?: number;
  chunk?: number;
  lockstep?: boolean;
}

export interface CorrectionInput {
  tick: number;
  /** null = ack-only frame, no sample injected. */
  wrist: Pose7 | null;
  tips?: number[];
}

export type ClientMessage =
  | { type: "hello"; seq: number; payload: { protocol: string; role: Role } }
  | { type: "start_rollout"; seq: number; payload: StartRequest }
  | { type: "correction_input"; seq: number; payload: CorrectionInput }
  | { type: "pedal"; seq: number; payload: { tick: number } }
  | { type: "pause"; seq: number; payload: Record<string, never> }
  | { type: "resume"; seq: number; payload: Record<string, never> }
  | { type: "save_d_prime"; seq: number; payload: { path: string } };

export class ProtocolError extends Error {
  override name = "ProtocolError";
}

/**
 * Outgoing frame numbering plus inbound monotonicity enforcement. One
 * instance per connection; both directions restart on reconnect.
 */
export class Sequencer {
  private out = 0;
  private lastIn = 0;

  next(): number {
    this.out += 1;
    return this.out;
  }

  /** Validates a server seq: must strictly increase. Skips are legal (the
   * server drops frames for slow clients) but going backwards is not. */
  accept(seq: number): void {
    if (!Number.isInteger(seq) || seq <= this.lastIn) {
      throw new ProtocolError(
        `server seq must increase (last ${this.lastIn}, got ${seq})`,
      );
    }
    this.lastIn = seq;
  }
}

function fail(msg: string): never {
  throw new ProtocolError(msg);
}

function isRecord(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

function finiteNumbers(v: unknown, n: number, what: string): number[] {
  if (!Array.isArray(v) || v.length !== n) {
    fail(`${what} must be ${n} numbers`);
  }
  for (const x of v) {
    if (typeof x !== "number" || !Number.isFinite(x)) {
      fail(`${what} must be ${n} finite numbers`);
    }
  }
  return v as number[];
}

export function asPose7(v: unknown, what = "pose"): Pose7 {
  return finiteNumbers(v, 7, what) as Pose7;
}

function asArmState(v: unknown, what: string): ArmState {
  if (!isRecord(v)) fail(`${what} must be an object`);
  return {
    pose: asPose7(v.pose, `${what}.pose`),
    joints: finiteNumbers(v.joints, JOINT_COUNT, `${what}.joints`),
  };
}

function asCloud(v: unknown): number[][] {
  if (!Array.isArray(v)) fail("cloud must be a list");
  if (v.length > MAX_CLOUD_POINTS) fail(`cloud exceeds ${MAX_CLOUD_POINTS} rows`);
  return v.map((row, i) => finiteNumbers(row, 6, `cloud[${i}]`));
}

function asStateUpdate(p: Record<string, unknown>): StateUpdate {
  const tick = p.tick;
  if (!Number.isInteger(tick) || (tick as number) < 0) fail("state_update.tick must be an integer >= 0");
  const mode = p.mode;
  if (mode !== "residual" && mode !== "teleop") fail(`unknown mode ${String(mode)}`);
  return {
    tick: tick as number,
    mode,
    query: Boolean(p.query),
    left: asArmState(p.left, "left"),
    right: asArmState(p.right, "right"),
    cloud: asCloud(p.cloud),
  };
}

function asHelloAck(p: Record<string, unknown>): HelloAck {
  if (typeof p.protocol !== "string") fail("hello.protocol must be a string");
  if (p.role !== "viewer" && p.role !== "corrector") fail("hello.role must be viewer|corrector");
  if (typeof p.phase !== "string") fail("hello.phase must be a string");
  return { protocol: p.protocol, role: p.role, phase: p.phase };
}

function asStartAck(p: Record<string, unknown>): StartAck {
  if (!Number.isInteger(p.ticks)) fail("start_rollout.ticks must be an integer");
  if (typeof p.policy !== "string") fail("start_rollout.policy must be a string");
  return { ticks: p.ticks as number, policy: p.policy, lockstep: Boolean(p.lockstep) };
}

function asPhaseAck(p: Record<string, unknown>, what: string): PhaseAck {
  if (typeof p.phase !== "string") fail(`${what}.phase must be a string`);
  return { phase: p.phase };
}

function asSaveAck(p: Record<string, unknown>): SaveAck {
  if (typeof p.path !== "string") fail("save_d_prime.path must be a string");
  if (!Number.isInteger(p.steps)) fail("save_d_prime.steps must be an integer");
  return { path: p.path, steps: p.steps as number };
}

function asErrorPayload(p: Record<string, unknown>): ErrorPayload {
  if (typeof p.error !== "string") fail("error.error must be a string");
  return { error: p.error, detail: typeof p.detail === "string" ? p.detail : "" };
}

/**
 * Parses and validates one server frame. Throws ProtocolError on anything
 * that does not match the contract; the caller decides whether that is
 * fatal for the connection.
 */
export function decodeServerFrame(text: string): ServerMessage {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    fail("frame is not valid JSON");
  }
  if (!isRecord(raw)) fail("frame must be a JSON object");
  const seq = raw.seq;
  if (!Number.isInteger(seq) || (seq as number) < 1) fail("seq must be an integer >= 1");
  const payload = raw.payload == null ? {} : raw.payload;
  if (!isRecord(payload)) fail("payload must be an object");

  switch (raw.type) {
    case "hello":
      return { type: "hello", seq: seq as number, payload: asHelloAck(payload) };
    case "start_rollout":
      return { type: "start_rollout", seq: seq as number, payload: asStartAck(payload) };
    case "state_update":
      return { type: "state_update", seq: seq as number, payload: asStateUpdate(payload) };
    case "pause":
      return { type: "pause", seq: seq as number, payload: asPhaseAck(payload, "pause") };
    case "resume":
      return { type: "resume", seq: seq as number, payload: asPhaseAck(payload, "resume") };
    case "save_d_prime":
      return { type: "save_d_prime", seq: seq as number, payload: asSaveAck(payload) };
    case "error":
      return { type: "error", seq: seq as number, payload: asErrorPayload(payload) };
    default:
      fail(`unknown server message type ${String(raw.type)}`);
  }
}

export function encodeClientFrame(msg: ClientMessage): string {
  return JSON.stringify(msg);
}

// ---------------------------------------------------------------------------
// Pose arithmetic. Just enough SE(3) for the renderer and the wrist
// integrator; quaternions are [w, x, y, z] with w >= 0 canonical.

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number];

export function quatMultiply(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function quatNormalize(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  if (n === 0) throw new ProtocolError("zero quaternion");
  const s = q[0] < 0 ? -1 / n : 1 / n; // canonical w >= 0
  return [q[0] * s, q[1] * s, q[2] * s, q[3] * s];
}

export function quatFromAxisAngle(axis: Vec3, angle: number): Quat {
  const n = Math.hypot(axis[0], axis[1], axis[2]);
  const h = angle / 2;
  const s = Math.sin(h) / n;
  return [Math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s];
}

/** Row-major 3x3 rotation matrix for a unit quaternion. */
export function quatToMatrix(q: Quat): number[] {
  const [w, x, y, z] = q;
  return [
    1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
    2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
    2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
  ];
}

export function rotatePoint(q: Quat, p: Vec3): Vec3 {
  const m = quatToMatrix(q);
  return [
    m[0]! * p[0] + m[1]! * p[1] + m[2]! * p[2],
    m[3]! * p[0] + m[4]! * p[1] + m[5]! * p[2],
    m[6]! * p[0] + m[7]! * p[1] + m[8]! * p[2],
  ];
}

export function applyPose(pose: Pose7, p: Vec3): Vec3 {
  const r = rotatePoint([pose[0], pose[1], pose[2], pose[3]], p);
  return [r[0] + pose[4], r[1] + pose[5], r[2] + pose[6]];
}
