/**
 * Connection and session controller: owns the websocket, the handshake,
 * reconnect policy, and the wiring between server frames, the renderer,
 * and the correction input pumps.
 *
 * The socket is injected through a factory so tests can swap in a scripted
 * double; everything above the factory is the production code path.
 */

import {
  CorrectionDriver,
  DEFAULT_INPUT,
  InputConfig,
  KeyBindings,
  TickFrame,
} from "./input.js";
import {
  ClientMessage,
  decodeServerFrame,
  encodeClientFrame,
  PROTOCOL,
  ProtocolError,
  Role,
  Sequencer,
  ServerMessage,
  StartRequest,
} from "./protocol.js";
import { Renderer } from "./render.js";

/** The slice of WebSocket the app touches; test doubles implement this. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface AppOptions {
  url: string;
  role?: Role;
  /** Client-side pump rate for realtime sessions, Hz. */
  rate?: number;
  input?: InputConfig;
  socketFactory?: SocketFactory;
  /** Keyboard event source; defaults to window. */
  keySource?: EventTarget;
  setTimer?: typeof setTimeout;
  clearTimer?: typeof clearTimeout;
}

const BACKOFF_BASE_MS = 500;
const BACKOFF_CAP_MS = 10_000;

export class App {
  readonly renderer: Renderer;
  readonly driver: CorrectionDriver;
  readonly role: Role;

  private readonly url: string;
  private readonly rate: number;
  private readonly factory: SocketFactory;
  private readonly setTimer: typeof setTimeout;
  private readonly clearTimer: typeof clearTimeout;

  private socket: SocketLike | null = null;
  private seq = new Sequencer();
  private open = false;
  private greeted = false;
  private fatal = false;
  private attempts = 0;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private pumpTimer: ReturnType<typeof setInterval> | null = null;

  phase = "Idle";
  private lockstep = false;
  private ticksTotal = 0;
  private lastTick = -1;
  private rolloutLive = false;

  private readonly bindings: KeyBindings;

  constructor(root: HTMLElement, opts: AppOptions) {
    this.url = opts.url;
    this.role = opts.role ?? "corrector";
    this.rate = opts.rate ?? 20;
    this.factory =
      opts.socketFactory ?? ((url) => new WebSocket(url) as unknown as SocketLike);
    this.setTimer = opts.setTimer ?? setTimeout;
    this.clearTimer = opts.clearTimer ?? clearTimeout;
    this.renderer = new Renderer(root);
    const input = opts.input ?? DEFAULT_INPUT;
    this.bindings = input.bindings;
    this.driver = new CorrectionDriver(input);

    const source = opts.keySource ?? (typeof window !== "undefined" ? window : null);
    if (source) this.bindKeys(source);
  }

  // -- lifecycle --------------------------------------------------------------

  connect(): void {
    if (this.fatal) return;
    this.renderer.setConnection("connecting");
    this.open = false;
    this.greeted = false;
    this.seq = new Sequencer(); // both directions renumber per connection
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.open = true;
      this.sendFrame({
        type: "hello",
        seq: this.seq.next(),
        payload: { protocol: PROTOCOL, role: this.role },
      });
    };
    socket.onmessage = (ev) => this.onFrame(ev.data);
    socket.onclose = () => {
      this.open = false;
      this.greeted = false;
      this.stopPump();
      this.renderer.setConnection("disconnected");
      if (socket === this.socket) this.scheduleReconnect();
    };
  }

  close(): void {
    this.fatal = true; // suppresses reconnect
    if (this.reconnectTimer !== null) this.clearTimer(this.reconnectTimer);
    this.stopPump();
    this.socket?.close();
  }

  get connected(): boolean {
    return this.open && this.greeted;
  }

  private scheduleReconnect(): void {
    if (this.fatal || this.reconnectTimer !== null) return;
    const delay = Math.min(BACKOFF_CAP_MS, BACKOFF_BASE_MS * 2 ** this.attempts);
    this.attempts += 1;
    this.renderer.setStatus(`reconnecting in ${delay} ms`);
    this.reconnectTimer = this.setTimer(() => {
      this.reconnectTimer = null;
      this.connect();
    }, delay);
  }

  // -- outbound ----------------------------------------------------------------

  private sendFrame(msg: ClientMessage): void {
    this.socket?.send(encodeClientFrame(msg));
  }

  private sendTickFrame(frame: TickFrame): void {
    this.sendFrame({
      type: frame.type,
      seq: this.seq.next(),
      payload: frame.payload,
    } as ClientMessage);
  }

  startRollout(req: StartRequest): void {
    if (!this.connected) {
      this.renderer.setStatus("not connected");
      return;
    }
    this.sendFrame({ type: "start_rollout", seq: this.seq.next(), payload: req });
  }

  pause(): void {
    this.sendFrame({ type: "pause", seq: this.seq.next(), payload: {} });
  }

  resume(): void {
    this.sendFrame({ type: "resume", seq: this.seq.next(), payload: {} });
  }

  saveDPrime(path: string): void {
    this.sendFrame({ type: "save_d_prime", seq: this.seq.next(), payload: { path } });
  }

  // -- inbound -----------------------------------------------------------------

  private onFrame(text: string): void {
    let msg: ServerMessage;
    try {
      msg = decodeServerFrame(text);
      this.seq.accept(msg.seq);
    } catch (e) {
      if (e instanceof ProtocolError) {
        this.renderer.setStatus(`protocol error: ${e.message}`);
        return;
      }
      throw e;
    }

    switch (msg.type) {
      case "hello":
        this.greeted = true;
        this.attempts = 0;
        this.phase = msg.payload.phase;
        this.renderer.setConnection("connected");
        this.renderer.setPhase(this.phase);
        this.renderer.setStatus("");
        break;
      case "start_rollout":
        this.lockstep = msg.payload.lockstep;
        this.ticksTotal = msg.payload.ticks;
        this.lastTick = -1;
        this.rolloutLive = true;
        this.driver.reset();
        this.renderer.clearScene(); // fresh session; the last run stays up until here
        this.setPhase("Running");
        if (!this.lockstep && this.role === "corrector") this.startPump();
        break;
      case "state_update": {
        this.lastTick = msg.payload.tick;
        this.renderer.renderState(msg.payload);
        if (this.lockstep && this.role === "corrector" && this.rolloutLive) {
          const frame = this.driver.respond(msg.payload.tick, true);
          if (frame) this.sendTickFrame(frame);
        }
        if (this.ticksTotal > 0 && msg.payload.tick >= this.ticksTotal - 1) {
          this.rolloutLive = false;
          this.stopPump();
          this.setPhase("Idle");
        }
        break;
      }
      case "pause":
        this.setPhase(msg.payload.phase);
        break;
      case "resume":
        this.setPhase(msg.payload.phase);
        break;
      case "save_d_prime":
        this.rolloutLive = false;
        this.stopPump();
        this.setPhase("Saved");
        this.renderer.setStatus(
          `saved ${msg.payload.steps} steps to ${msg.payload.path}`,
        );
        break;
      case "error":
        if (msg.payload.error === "VersionMismatch") {
          this.fatal = true;
          this.renderer.showBanner(
            `protocol version mismatch: ${msg.payload.detail}`,
          );
          this.socket?.close();
          return;
        }
        if (msg.payload.error === "RolloutFailed") {
          this.rolloutLive = false;
          this.stopPump();
          this.setPhase("Idle");
        }
        this.renderer.setStatus(`${msg.payload.error}: ${msg.payload.detail}`);
        break;
    }
  }

  /** The scene deliberately keeps the last rendered tick after a rollout
   * ends, so the operator can inspect the final state before saving. */
  private setPhase(phase: string): void {
    this.phase = phase;
    this.renderer.setPhase(phase);
  }

  // -- input -------------------------------------------------------------------

  private bindKeys(source: EventTarget): void {
    source.addEventListener("keydown", (ev) => {
      const e = ev as KeyboardEvent;
      const changed = this.driver.tracker.keydown(e.code, e.repeat);
      if (changed && !this.connected) {
        this.renderer.setStatus("disconnected: input ignored");
        return;
      }
      if (changed && e.code === this.bindings.pauseKey) {
        if (this.phase === "Running") this.pause();
        else if (this.phase === "Paused") this.resume();
      }
    });
    source.addEventListener("keyup", (ev) => {
      this.driver.tracker.keyup((ev as KeyboardEvent).code);
    });
    source.addEventListener("blur", () => this.driver.tracker.releaseAll());
  }

  /** Realtime sessions sample the keyboard on our own clock. */
  private startPump(): void {
    this.stopPump();
    this.pumpTimer = setInterval(() => {
      if (!this.connected || !this.rolloutLive || this.phase !== "Running") return;
      const frame = this.driver.pump(Math.max(0, this.lastTick));
      if (frame) this.sendTickFrame(frame);
    }, 1000 / this.rate);
  }

  private stopPump(): void {
    if (this.pumpTimer !== null) {
      clearInterval(this.pumpTimer);
      this.pumpTimer = null;
    }
  }
}
