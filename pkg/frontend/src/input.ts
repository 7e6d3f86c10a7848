/**
 * Keyboard-driven correction input.
 *
 * Three layers:
 *
 *  - KeyTracker turns raw keydown/keyup events into a held-key set plus an
 *    edge-triggered pedal latch. Auto-repeat and re-presses while held are
 *    ignored, so one physical press is exactly one pedal frame.
 *
 *  - WristIntegrator accumulates a synthetic human wrist pose. Motion is
 *    quantized per tick: each tick a held translation key contributes
 *    `gain` meters, a held rotation key `rotGain` radians. Holding +x for
 *    one second therefore moves the wrist by rate * gain meters total.
 *
 *  - CorrectionDriver composes at most one outgoing frame per tick, with
 *    priority pedal > sample > ack. In lockstep every state_update must be
 *    answered or the worker stalls, so idle ticks send {"wrist": null}; in
 *    realtime idle ticks send nothing.
 */

import {
  CorrectionInput,
  OPEN_TIPS,
  Pose7,
  Quat,
  quatFromAxisAngle,
  quatMultiply,
  quatNormalize,
  Vec3,
} from "./protocol.js";

export interface KeyBindings {
  xPlus: string;
  xMinus: string;
  yPlus: string;
  yMinus: string;
  zPlus: string;
  zMinus: string;
  yawPlus: string;
  yawMinus: string;
  pitchPlus: string;
  pitchMinus: string;
  rollPlus: string;
  rollMinus: string;
  gripClose: string;
  gripOpen: string;
  pedal: string;
  /** Toggles pause/resume; handled by the session controller, not the
   * per-tick pumps. */
  pauseKey: string;
}

/** Values are KeyboardEvent.code, so layouts do not shift the bindings. */
export const DEFAULT_BINDINGS: KeyBindings = {
  xPlus: "KeyW",
  xMinus: "KeyS",
  yPlus: "KeyA",
  yMinus: "KeyD",
  zPlus: "KeyQ",
  zMinus: "KeyE",
  yawPlus: "ArrowLeft",
  yawMinus: "ArrowRight",
  pitchPlus: "ArrowUp",
  pitchMinus: "ArrowDown",
  rollPlus: "BracketLeft",
  rollMinus: "BracketRight",
  gripClose: "KeyF",
  gripOpen: "KeyG",
  pedal: "Space",
  pauseKey: "KeyP",
};

/** Binding names that feed the wrist/grip integrator each tick. */
const MOTION_KEYS: (keyof KeyBindings)[] = [
  "xPlus", "xMinus", "yPlus", "yMinus", "zPlus", "zMinus",
  "yawPlus", "yawMinus", "pitchPlus", "pitchMinus", "rollPlus", "rollMinus",
  "gripClose", "gripOpen",
];

export interface InputConfig {
  /** Meters of wrist travel per tick per held translation key. */
  gain: number;
  /** Radians per tick per held rotation key. */
  rotGain: number;
  /** Grip change per tick per held grip key, grip clamped to [0, 1]. */
  gripRate: number;
  bindings: KeyBindings;
}

export const DEFAULT_INPUT: InputConfig = {
  gain: 0.01,
  rotGain: 0.02,
  gripRate: 0.05,
  bindings: DEFAULT_BINDINGS,
};

export class KeyTracker {
  private held = new Set<string>();
  private pedalPending = 0;
  private readonly pedalCode: string;

  constructor(bindings: KeyBindings = DEFAULT_BINDINGS) {
    this.pedalCode = bindings.pedal;
  }

  /** Returns true when the event maps to a tracked state change. */
  keydown(code: string, repeat = false): boolean {
    if (repeat || this.held.has(code)) return false; // auto-repeat is not a press
    this.held.add(code);
    if (code === this.pedalCode) this.pedalPending += 1;
    return true;
  }

  keyup(code: string): void {
    this.held.delete(code);
  }

  /** Focus loss leaves keys stuck down otherwise. */
  releaseAll(): void {
    this.held.clear();
  }

  isHeld(code: string): boolean {
    return this.held.has(code);
  }

  anyMotionHeld(bindings: KeyBindings): boolean {
    return MOTION_KEYS.some((name) => this.held.has(bindings[name]));
  }

  /** Consumes one queued pedal press, if any. */
  takePedal(): boolean {
    if (this.pedalPending > 0) {
      this.pedalPending -= 1;
      return true;
    }
    return false;
  }
}

export class WristIntegrator {
  pos: Vec3 = [0, 0, 0];
  quat: Quat = [1, 0, 0, 0];
  grip = 0;

  /**
   * Advances one tick from the held keys. Translation updates are plain
   * additions so a scripted session replays bit-identically; rotation only
   * touches the quaternion when a rotation key is actually held.
   */
  step(tracker: KeyTracker, cfg: InputConfig): void {
    const b = cfg.bindings;
    const g = cfg.gain;
    if (tracker.isHeld(b.xPlus)) this.pos[0] += g;
    if (tracker.isHeld(b.xMinus)) this.pos[0] -= g;
    if (tracker.isHeld(b.yPlus)) this.pos[1] += g;
    if (tracker.isHeld(b.yMinus)) this.pos[1] -= g;
    if (tracker.isHeld(b.zPlus)) this.pos[2] += g;
    if (tracker.isHeld(b.zMinus)) this.pos[2] -= g;

    let dw = 0;
    let dp = 0;
    let dr = 0;
    if (tracker.isHeld(b.yawPlus)) dw += cfg.rotGain;
    if (tracker.isHeld(b.yawMinus)) dw -= cfg.rotGain;
    if (tracker.isHeld(b.pitchPlus)) dp += cfg.rotGain;
    if (tracker.isHeld(b.pitchMinus)) dp -= cfg.rotGain;
    if (tracker.isHeld(b.rollPlus)) dr += cfg.rotGain;
    if (tracker.isHeld(b.rollMinus)) dr -= cfg.rotGain;
    if (dw !== 0) this.quat = quatMultiply(this.quat, quatFromAxisAngle([0, 0, 1], dw));
    if (dp !== 0) this.quat = quatMultiply(this.quat, quatFromAxisAngle([0, 1, 0], dp));
    if (dr !== 0) this.quat = quatMultiply(this.quat, quatFromAxisAngle([1, 0, 0], dr));
    if (dw !== 0 || dp !== 0 || dr !== 0) this.quat = quatNormalize(this.quat);

    if (tracker.isHeld(b.gripClose)) this.grip = Math.min(1, this.grip + cfg.gripRate);
    if (tracker.isHeld(b.gripOpen)) this.grip = Math.max(0, this.grip - cfg.gripRate);
  }

  pose(): Pose7 {
    return [
      this.quat[0], this.quat[1], this.quat[2], this.quat[3],
      this.pos[0], this.pos[1], this.pos[2],
    ];
  }

  /** Open-hand layout curled toward the palm as grip approaches 1. */
  tips(): number[] {
    if (this.grip === 0) return OPEN_TIPS.slice();
    const s = 1 - 0.4 * this.grip;
    return OPEN_TIPS.map((v) => v * s);
  }

  reset(): void {
    this.pos = [0, 0, 0];
    this.quat = [1, 0, 0, 0];
    this.grip = 0;
  }
}

export type TickFrame =
  | { type: "pedal"; payload: { tick: number } }
  | { type: "correction_input"; payload: CorrectionInput };

export class CorrectionDriver {
  readonly tracker: KeyTracker;
  readonly wrist = new WristIntegrator();
  private cfg: InputConfig;
  private lastAnswered = -1;

  constructor(cfg: InputConfig = DEFAULT_INPUT) {
    this.cfg = cfg;
    this.tracker = new KeyTracker(cfg.bindings);
  }

  /**
   * One frame per tick, never more. A queued pedal press wins the slot
   * (the press still acks the tick); otherwise held motion keys produce a
   * sample; otherwise lockstep gets a bare ack and realtime stays quiet.
   */
  respond(tick: number, lockstep: boolean): TickFrame | null {
    if (tick <= this.lastAnswered) return null; // duplicate delivery
    this.lastAnswered = tick;

    if (this.tracker.takePedal()) {
      return { type: "pedal", payload: { tick } };
    }
    if (this.tracker.anyMotionHeld(this.cfg.bindings)) {
      this.wrist.step(this.tracker, this.cfg);
      return {
        type: "correction_input",
        payload: { tick, wrist: this.wrist.pose(), tips: this.wrist.tips() },
      };
    }
    if (lockstep) {
      return { type: "correction_input", payload: { tick, wrist: null } };
    }
    return null;
  }

  /**
   * Realtime sampling: called on the client's own clock rather than per
   * state_update, so the same tick may be pumped repeatedly while the
   * integrator keeps advancing. Quiet when nothing is held; realtime needs
   * no acks.
   */
  pump(tick: number): TickFrame | null {
    if (this.tracker.takePedal()) {
      return { type: "pedal", payload: { tick } };
    }
    if (this.tracker.anyMotionHeld(this.cfg.bindings)) {
      this.wrist.step(this.tracker, this.cfg);
      return {
        type: "correction_input",
        payload: { tick, wrist: this.wrist.pose(), tips: this.wrist.tips() },
      };
    }
    return null;
  }

  /** New rollout: integrator and tick bookkeeping start over. */
  reset(): void {
    this.wrist.reset();
    this.lastAnswered = -1;
  }
}
