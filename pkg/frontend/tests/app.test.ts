// @vitest-environment jsdom
import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { App } from "../src/app.js";
import { PROTOCOL } from "../src/protocol.js";
import {
  MockSocket,
  helloAck,
  keyEvent,
  startAck,
  stateUpdate,
} from "./helpers.js";

let root: HTMLDivElement;
let keys: EventTarget;

beforeEach(() => {
  vi.useFakeTimers();
  document.body.innerHTML = "";
  root = document.createElement("div");
  document.body.appendChild(root);
  keys = new EventTarget();
});

afterEach(() => {
  vi.useRealTimers();
});

function makeApp(opts: { sockets?: MockSocket[]; rate?: number } = {}) {
  const sockets = opts.sockets ?? [];
  const factory = vi.fn(() => {
    const s = new MockSocket();
    sockets.push(s);
    return s;
  });
  const app = new App(root, {
    url: "ws://test/ws",
    role: "corrector",
    rate: opts.rate ?? 20,
    socketFactory: factory,
    keySource: keys,
  });
  return { app, factory, sockets };
}

describe("handshake", () => {
  it("sends hello on open and reports the acked phase", () => {
    const { app, sockets } = makeApp();
    app.connect();
    const s = sockets[0]!;
    expect(root.querySelector<HTMLElement>(".hud")!.dataset.connection).toBe(
      "connecting",
    );
    s.open();
    expect(s.sentFrames()).toEqual([
      {
        type: "hello",
        seq: 1,
        payload: { protocol: PROTOCOL, role: "corrector" },
      },
    ]);
    expect(app.connected).toBe(false); // not until the ack lands
    s.deliver(helloAck(1, "Saved"));
    expect(app.connected).toBe(true);
    const hud = root.querySelector<HTMLElement>(".hud")!;
    expect(hud.dataset.connection).toBe("connected");
    expect(hud.dataset.phase).toBe("Saved");
  });

  it("shows an Idle badge over an empty scene on a fresh connect", () => {
    const { app, sockets } = makeApp();
    app.connect();
    sockets[0]!.open();
    sockets[0]!.deliver(helloAck(1, "Idle"));
    const hud = root.querySelector<HTMLElement>(".hud")!;
    expect(hud.dataset.phase).toBe("Idle");
    expect(hud.dataset.tick).toBe("");
    expect(app.renderer.cloudCount()).toBe(0);
    // stateless with respect to control: connecting sent only the hello
    expect(sockets[0]!.sentFrames().map((f) => f.type)).toEqual(["hello"]);
  });

  it("renumbers both directions on every connection", () => {
    const { app, sockets } = makeApp();
    app.connect();
    sockets[0]!.open();
    sockets[0]!.deliver(helloAck(1));
    sockets[0]!.close();
    vi.advanceTimersByTime(500);
    const s2 = sockets[1]!;
    s2.open();
    expect(s2.sentFrames()[0]!.seq).toBe(1);
    s2.deliver(helloAck(1)); // server seq restarts too; must not throw
    expect(app.connected).toBe(true);
  });
});

describe("version mismatch", () => {
  it("shows a sticky banner and stops reconnecting", () => {
    const { factory, app, sockets } = makeApp();
    app.connect();
    const s = sockets[0]!;
    s.open();
    s.deliver({
      type: "error",
      seq: 1,
      payload: { error: "VersionMismatch", detail: "server speaks dexpipe/1" },
    });
    const banner = root.querySelector<HTMLElement>(".banner")!;
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain("version mismatch");
    expect(s.closed).toBe(true);
    vi.advanceTimersByTime(120_000);
    expect(factory).toHaveBeenCalledTimes(1);
  });
});

describe("reconnect backoff", () => {
  it("doubles the delay up to the cap and resets after success", () => {
    const { app, factory, sockets } = makeApp();
    app.connect();
    expect(factory).toHaveBeenCalledTimes(1);
    sockets[0]!.open();
    sockets[0]!.deliver(helloAck(1));

    sockets[0]!.close(); // dropped: first retry after 500 ms
    vi.advanceTimersByTime(499);
    expect(factory).toHaveBeenCalledTimes(1);
    vi.advanceTimersByTime(1);
    expect(factory).toHaveBeenCalledTimes(2);

    sockets[1]!.close(); // still down: 1000 ms
    vi.advanceTimersByTime(999);
    expect(factory).toHaveBeenCalledTimes(2);
    vi.advanceTimersByTime(1);
    expect(factory).toHaveBeenCalledTimes(3);

    sockets[2]!.close(); // 2000 ms
    vi.advanceTimersByTime(1999);
    expect(factory).toHaveBeenCalledTimes(3);
    vi.advanceTimersByTime(1);
    expect(factory).toHaveBeenCalledTimes(4);

    sockets[3]!.open(); // back up: backoff resets
    sockets[3]!.deliver(helloAck(1));
    sockets[3]!.close();
    vi.advanceTimersByTime(500);
    expect(factory).toHaveBeenCalledTimes(5);
  });

  it("caps the delay at ten seconds", () => {
    const { app, factory, sockets } = makeApp();
    app.connect();
    for (let i = 0; i < 12; i++) {
      sockets[i]!.close();
      vi.advanceTimersByTime(10_000);
    }
    // every retry fits inside a 10 s window once the cap is reached
    expect(factory.mock.calls.length).toBeGreaterThanOrEqual(8);
  });
});

describe("session flow", () => {
  function connected() {
    const made = makeApp();
    made.app.connect();
    const s = made.sockets[0]!;
    s.open();
    s.deliver(helloAck(1));
    return { ...made, s };
  }

  it("runs a lockstep rollout, acks every tick, and returns to Idle", () => {
    const { app, s } = connected();
    app.startRollout({ policy: "constant", ticks: 2, lockstep: true });
    s.deliver(startAck(2, { ticks: 2, lockstep: true }));
    const hud = root.querySelector<HTMLElement>(".hud")!;
    expect(hud.dataset.phase).toBe("Running");

    s.deliver(stateUpdate(3, 0));
    s.deliver(stateUpdate(4, 1));
    expect(hud.dataset.phase).toBe("Idle");
    expect(hud.dataset.tick).toBe("1"); // final state stays visible

    expect(s.sentFrames().map((f) => f.type)).toEqual([
      "hello",
      "start_rollout",
      "correction_input",
      "correction_input",
    ]);
    const acks = s.sentFrames().slice(2);
    expect(acks[0]!.payload).toEqual({ tick: 0, wrist: null });
    expect(acks[1]!.payload).toEqual({ tick: 1, wrist: null });

    // the next rollout starts from a clean scene
    app.startRollout({ policy: "constant", ticks: 2, lockstep: true });
    s.deliver(startAck(5, { ticks: 2, lockstep: true }));
    expect(hud.dataset.tick).toBe("");
    expect(hud.dataset.phase).toBe("Running");
  });

  it("advances the tick counter with every update, skips included", () => {
    const { s } = connected();
    const hud = root.querySelector<HTMLElement>(".hud")!;
    s.deliver(startAck(2, { ticks: 100, lockstep: false }));
    s.deliver(stateUpdate(3, 0));
    expect(hud.dataset.tick).toBe("0");
    s.deliver(stateUpdate(4, 1));
    expect(hud.dataset.tick).toBe("1");
    s.deliver(stateUpdate(5, 5)); // slow client: frames may be dropped
    expect(hud.dataset.tick).toBe("5");
  });

  it("toggles pause and resume from the pause key", () => {
    const { s } = connected();
    s.deliver(startAck(2, { ticks: 100, lockstep: false }));
    keys.dispatchEvent(keyEvent("keydown", "KeyP"));
    keys.dispatchEvent(keyEvent("keydown", "KeyP", true)); // auto-repeat
    expect(s.sentFrames().filter((f) => f.type === "pause")).toHaveLength(1);
    s.deliver({ type: "pause", seq: 3, payload: { phase: "Paused" } });
    keys.dispatchEvent(keyEvent("keyup", "KeyP"));
    keys.dispatchEvent(keyEvent("keydown", "KeyP"));
    expect(s.sentFrames().filter((f) => f.type === "resume")).toHaveLength(1);
    s.deliver({ type: "resume", seq: 4, payload: { phase: "Running" } });
    expect(root.querySelector<HTMLElement>(".hud")!.dataset.phase).toBe("Running");
  });

  it("applies pause, resume and save acks to the phase", () => {
    const { app, s } = connected();
    const hud = root.querySelector<HTMLElement>(".hud")!;
    app.pause();
    s.deliver({ type: "pause", seq: 2, payload: { phase: "Paused" } });
    expect(hud.dataset.phase).toBe("Paused");
    app.resume();
    s.deliver({ type: "resume", seq: 3, payload: { phase: "Running" } });
    expect(hud.dataset.phase).toBe("Running");
    app.saveDPrime("/tmp/x.dxd");
    s.deliver({
      type: "save_d_prime",
      seq: 4,
      payload: { path: "/tmp/x.dxd", steps: 12 },
    });
    expect(hud.dataset.phase).toBe("Saved");
    expect(hud.dataset.status).toContain("12 steps");
  });

  it("surfaces non-fatal errors without dropping the link", () => {
    const { app, s } = connected();
    s.deliver({
      type: "error",
      seq: 2,
      payload: { error: "PhaseMismatch", detail: "phase is Idle" },
    });
    const hud = root.querySelector<HTMLElement>(".hud")!;
    expect(hud.dataset.status).toContain("PhaseMismatch");
    expect(app.connected).toBe(true);
  });

  it("flags server seq regressions as protocol errors and keeps going", () => {
    const { app, s } = connected();
    s.deliver(stateUpdate(1, 0)); // seq 1 already used by the hello ack
    const hud = root.querySelector<HTMLElement>(".hud")!;
    expect(hud.dataset.status).toContain("protocol error");
    expect(app.connected).toBe(true);
  });

  it("warns when keys are pressed while disconnected", () => {
    const { sockets, app } = makeApp();
    app.connect();
    expect(sockets[0]!.closed).toBe(false);
    keys.dispatchEvent(keyEvent("keydown", "KeyW"));
    const hud = root.querySelector<HTMLElement>(".hud")!;
    expect(hud.dataset.status).toBe("disconnected: input ignored");
  });
});

describe("realtime pump", () => {
  function running(rate = 20) {
    const made = makeApp({ rate });
    made.app.connect();
    const s = made.sockets[0]!;
    s.open();
    s.deliver(helloAck(1));
    made.app.startRollout({ policy: "constant", ticks: 1000, lockstep: false });
    s.deliver(startAck(2, { ticks: 1000, lockstep: false }));
    s.deliver(stateUpdate(3, 0));
    return { ...made, s };
  }

  it("holding +x for one second accumulates rate * gain meters", () => {
    const { s } = running(20);
    const before = s.sent.length;
    keys.dispatchEvent(keyEvent("keydown", "KeyW"));
    vi.advanceTimersByTime(1000);
    const frames = s.sentFrames().slice(before);
    const inputs = frames.filter((f) => f.type === "correction_input");
    expect(inputs).toHaveLength(20);
    const wrist = inputs[inputs.length - 1]!.payload.wrist as number[];
    const expected = 20 * 0.01; // rate * gain
    expect(Math.abs(wrist[4]! - expected)).toBeLessThanOrEqual(0.01 * expected);
  });

  it("stays silent with no keys held", () => {
    const { s } = running(20);
    const before = s.sent.length;
    vi.advanceTimersByTime(2000);
    expect(s.sent.length).toBe(before);
  });

  it("stops after release and emits one pedal per press", () => {
    const { s } = running(20);
    const before = s.sent.length;
    keys.dispatchEvent(keyEvent("keydown", "Space"));
    keys.dispatchEvent(keyEvent("keydown", "Space", true)); // auto-repeat
    vi.advanceTimersByTime(500);
    keys.dispatchEvent(keyEvent("keyup", "Space"));
    vi.advanceTimersByTime(500);
    const frames = s.sentFrames().slice(before);
    expect(frames.filter((f) => f.type === "pedal")).toHaveLength(1);
    expect(frames.filter((f) => f.type === "correction_input")).toHaveLength(0);
  });
});
