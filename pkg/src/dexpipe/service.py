"""WebSocket host for live rollouts with human corrections.

One process owns the plant: the control loop runs on a worker thread, network
clients on the asyncio loop, and the two sides exchange data only through
queues — corrections in (QueueCorrectionSource), broadcast frames out
(per-client asyncio queues). Slow clients lose frames; they never stall the
control loop.

Protocol "dexpipe/1": JSON text frames {type, seq, payload} with seq strictly
increasing per direction. See protocol.md for the full schema and examples.
"""

from __future__ import annotations

import asyncio
import json
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .control import (
    ControllerParams,
    ObservationSynth,
    PlantState,
    RolloutTick,
    StopRollout,
    rollout,
)
from .dataset import Dataset, EmptyOriginalDataset, export_dataset, import_dataset
from .geometry import PointCloud, Pose
from .hitl import (
    CorrectionController,
    CorrectionEvent,
    CorrectionGains,
    HumanSample,
    QueueCorrectionSource,
)
from .kinematics import HandModel, IkParams, default_hand_model
from .perception import DEFAULT_SCENE_POINTS, HAND_POINTS, default_link_geometry
from .policy import ConstantPolicy, Policy, ReplayPolicy
from . import synth

PROTOCOL = "dexpipe/1"
MAX_CLOUD_POINTS = 500
QUEUE_DEPTH = 256

MESSAGE_TYPES = frozenset(
    {
        "hello",
        "start_rollout",
        "state_update",
        "correction_input",
        "pedal",
        "pause",
        "resume",
        "save_d_prime",
        "error",
    }
)

PHASE_IDLE = "Idle"
PHASE_RUNNING = "Running"
PHASE_PAUSED = "Paused"
PHASE_SAVED = "Saved"


@dataclass
class ServiceConfig:
    dataset: str | None = None
    policy: str = "replay"
    arm: str = "right"
    seed: int = 0
    k_scene: int = DEFAULT_SCENE_POINTS
    k_hand: int = HAND_POINTS
    ticks: int = 100
    realtime: bool = True
    params: ControllerParams = field(default_factory=ControllerParams)
    ik: IkParams = field(default_factory=IkParams)
    gains: CorrectionGains = field(default_factory=CorrectionGains)


class _Client:
    def __init__(self, ws: WebSocket, client_id: int):
        self.ws = ws
        self.id = client_id
        self.queue: asyncio.Queue = asyncio.Queue(QUEUE_DEPTH)
        self.out_seq = 0
        self.in_seq = 0
        self.role = "viewer"
        self.dropped = 0


def _pose7(p: Pose) -> list[float]:
    return p.to_list()


def _decimate(obs, limit: int = MAX_CLOUD_POINTS):
    stride = max(1, -(-len(obs) // limit))
    return [[round(float(v), 4) for v in row] for row in obs[::stride]]


class DexpipeService:
    """Session state machine plus the bridge between the rollout thread and
    websocket clients."""

    def __init__(
        self,
        config: ServiceConfig | None = None,
        model: HandModel | None = None,
        scene: PointCloud | None = None,
    ):
        self.config = config or ServiceConfig()
        self.model = model or default_hand_model()
        self.scene = scene if scene is not None else synth.scene_cloud()
        self.loop: asyncio.AbstractEventLoop | None = None

        self.phase = PHASE_IDLE
        self.clients: dict[int, _Client] = {}
        self._next_client_id = 0
        self.corrector_id: int | None = None

        self._thread: threading.Thread | None = None
        self._stop = threading.Event()
        self._paused = threading.Event()
        self._lockstep = False
        self._acked = -1
        self._ack_cv = threading.Condition()
        self._next_deadline = 0.0
        self.source: QueueCorrectionSource | None = None
        self.last_log = None
        self.last_error: str | None = None

    # ------------------------------------------------------------------
    # client bookkeeping (loop thread only)

    def register(self, ws: WebSocket) -> _Client:
        self._next_client_id += 1
        client = _Client(ws, self._next_client_id)
        self.clients[client.id] = client
        return client

    def unregister(self, client: _Client) -> None:
        self.clients.pop(client.id, None)
        if self.corrector_id == client.id:
            self.corrector_id = None

    def send(self, client: _Client, type_: str, payload: dict) -> None:
        client.out_seq += 1
        msg = {"type": type_, "seq": client.out_seq, "payload": payload}
        try:
            client.queue.put_nowait(msg)
        except asyncio.QueueFull:
            client.dropped += 1

    def send_error(self, client: _Client, code: str, detail: str) -> None:
        self.send(client, "error", {"error": code, "detail": detail})

    def _fanout(self, type_: str, payload: dict) -> None:
        for client in list(self.clients.values()):
            self.send(client, type_, payload)

    # ------------------------------------------------------------------
    # rollout worker (worker thread)

    def _gate(self, tick: int) -> None:
        if self._stop.is_set():
            raise StopRollout
        while self._paused.is_set():
            if self._stop.is_set():
                raise StopRollout
            time.sleep(0.002)
        if self._lockstep:
            if tick > 0:
                with self._ack_cv:
                    while self._acked < tick - 1:
                        if self._stop.is_set():
                            raise StopRollout
                        self._ack_cv.wait(0.05)
        elif self.config.realtime:
            now = time.monotonic()
            if now < self._next_deadline:
                time.sleep(self._next_deadline - now)
            self._next_deadline = max(self._next_deadline, now) + 1.0 / self.config.params.rate

    def _on_tick(self, entry: RolloutTick) -> None:
        payload = {
            "tick": entry.tick,
            "mode": entry.mode,
            "query": entry.query,
            "left": {
                "pose": _pose7(entry.state.left.p),
                "joints": entry.state.left.joints.tolist(),
            },
            "right": {
                "pose": _pose7(entry.state.right.p),
                "joints": entry.state.right.joints.tolist(),
            },
            "cloud": _decimate(entry.obs),
        }
        loop = self.loop
        if loop is not None:
            loop.call_soon_threadsafe(self._fanout, "state_update", payload)

    def _run(self, policy: Policy, initial: PlantState, ticks: int, corrector) -> None:
        observe = ObservationSynth(
            self.scene,
            self.model,
            default_link_geometry(self.model, self.config.k_hand // 2),
            k_scene=self.config.k_scene,
            seed=self.config.seed,
        )
        try:
            log = rollout(
                policy,
                initial,
                ticks,
                params=self.config.params,
                observe=observe,
                corrector=corrector,
                record_correction=True,
                gate=self._gate,
                on_tick=self._on_tick,
            )
            self.last_log = log
        except Exception as e:  # surfaced to clients, never kills the process
            self.last_error = f"{type(e).__name__}: {e}"
            loop = self.loop
            if loop is not None:
                loop.call_soon_threadsafe(
                    self._fanout, "error", {"error": "RolloutFailed", "detail": self.last_error}
                )
        finally:
            if self.phase in (PHASE_RUNNING, PHASE_PAUSED):
                self.phase = PHASE_IDLE

    # ------------------------------------------------------------------
    # message handlers (loop thread only)

    def handle_hello(self, client: _Client, payload: dict) -> bool:
        if payload.get("protocol") != PROTOCOL:
            self.send_error(
                client,
                "VersionMismatch",
                f"server speaks {PROTOCOL}, client offered {payload.get('protocol')!r}",
            )
            return False
        role = payload.get("role", "viewer")
        if role not in ("viewer", "corrector"):
            self.send_error(client, "BadRole", f"unknown role {role!r}")
            return False
        if role == "corrector":
            if self.corrector_id is not None:
                self.send_error(
                    client, "NotCorrectionClient", "another correction client is registered"
                )
                return False
            self.corrector_id = client.id
        client.role = role
        self.send(
            client,
            "hello",
            {"protocol": PROTOCOL, "role": role, "phase": self.phase},
        )
        return True

    def handle_start_rollout(self, client: _Client, payload: dict) -> None:
        if self.phase in (PHASE_RUNNING, PHASE_PAUSED):
            self.send_error(client, "PhaseMismatch", "a rollout is already running")
            return

        policy_name = payload.get("policy", self.config.policy)
        dataset_path = payload.get("dataset", self.config.dataset)
        ticks = int(payload.get("ticks", self.config.ticks))
        demo_index = payload.get("demo")
        lockstep = bool(payload.get("lockstep", False))
        if ticks < 1:
            self.send_error(client, "BadConfig", "ticks must be >= 1")
            return

        initial_state = synth.default_plant_state(self.model)
        if policy_name == "replay":
            if dataset_path is None:
                self.send_error(client, "BadConfig", "replay policy requires a dataset")
                return
            try:
                dataset = import_dataset(dataset_path)
                policy = ReplayPolicy(dataset, d=int(payload.get("chunk", 8)))
            except (OSError, ValueError, EmptyOriginalDataset) as e:
                self.send_error(client, "BadConfig", f"cannot load dataset: {e}")
                return
            if demo_index is not None:
                try:
                    initial_state = dataset.demos[int(demo_index)].steps[0].state
                except IndexError:
                    self.send_error(client, "BadConfig", f"no demo {demo_index}")
                    return
        elif policy_name == "constant":
            policy = ConstantPolicy(initial_state)
        else:
            self.send_error(client, "BadConfig", f"unknown policy {policy_name!r}")
            return

        corrector = None
        self.source = None
        if self.corrector_id is not None:
            self.source = QueueCorrectionSource()
            corrector = CorrectionController(
                self.source,
                self.model,
                gains=self.config.gains,
                ik_params=self.config.ik,
                arm=self.config.arm,
            )

        self._stop.clear()
        self._paused.clear()
        self._lockstep = lockstep
        self._acked = -1
        self._next_deadline = time.monotonic()
        self.last_error = None
        self.phase = PHASE_RUNNING
        self._thread = threading.Thread(
            target=self._run,
            args=(policy, PlantState(state=initial_state), ticks, corrector),
            daemon=True,
        )
        self._thread.start()
        self.send(
            client,
            "start_rollout",
            {"ticks": ticks, "policy": policy_name, "lockstep": lockstep},
        )

    def _record_ack(self, tick: int) -> None:
        with self._ack_cv:
            if tick > self._acked:
                self._acked = tick
            self._ack_cv.notify_all()

    def _stale_input(self, payload: dict) -> bool:
        """An input acking a tick of a rollout that just finished. The final
        tick's ack always races the worker's exit, so stragglers are dropped
        rather than treated as protocol errors."""
        log = self.last_log
        tick = payload.get("tick")
        return (
            log is not None
            and bool(log.ticks)
            and isinstance(tick, int)
            and 0 <= tick <= log.ticks[-1].tick
        )

    def handle_correction_input(self, client: _Client, payload: dict) -> None:
        if client.id != self.corrector_id:
            self.send_error(client, "NotCorrectionClient", "not the correction client")
            return
        if self.phase not in (PHASE_RUNNING, PHASE_PAUSED):
            if not self._stale_input(payload):
                self.send_error(client, "PhaseMismatch", f"phase is {self.phase}")
            return
        tick = int(payload["tick"])
        if payload.get("wrist") is not None:
            try:
                sample = HumanSample(
                    wrist=Pose.from_list(payload["wrist"]),
                    tips=_tips_from_payload(payload["tips"]),
                )
            except (KeyError, TypeError, ValueError) as e:
                self.send_error(client, "BadMessage", f"bad correction payload: {e}")
                return
            if self.source is not None:
                self.source.push(CorrectionEvent(tick=tick + 1, sample=sample))
        self._record_ack(tick)

    def handle_pedal(self, client: _Client, payload: dict) -> None:
        if client.id != self.corrector_id:
            self.send_error(client, "NotCorrectionClient", "not the correction client")
            return
        if self.phase not in (PHASE_RUNNING, PHASE_PAUSED):
            if not self._stale_input(payload):
                self.send_error(client, "PhaseMismatch", f"phase is {self.phase}")
            return
        tick = int(payload["tick"])
        if self.source is not None:
            self.source.push(CorrectionEvent(tick=tick + 1, pedal=True))
        self._record_ack(tick)

    def handle_pause(self, client: _Client, payload: dict) -> None:
        if self.phase != PHASE_RUNNING:
            self.send_error(client, "PhaseMismatch", f"phase is {self.phase}")
            return
        self._paused.set()
        self.phase = PHASE_PAUSED
        self.send(client, "pause", {"phase": self.phase})

    def handle_resume(self, client: _Client, payload: dict) -> None:
        if self.phase != PHASE_PAUSED:
            self.send_error(client, "PhaseMismatch", f"phase is {self.phase}")
            return
        self._paused.clear()
        self.phase = PHASE_RUNNING
        self.send(client, "resume", {"phase": self.phase})

    async def handle_save_d_prime(self, client: _Client, payload: dict) -> None:
        path = payload.get("path")
        if not path:
            self.send_error(client, "BadConfig", "save_d_prime requires a path")
            return
        thread = self._thread
        if thread is not None and thread.is_alive():
            self._stop.set()
            with self._ack_cv:
                self._ack_cv.notify_all()
            await asyncio.to_thread(thread.join)
        log = self.last_log
        if log is None or log.correction_demo is None:
            self.send_error(client, "PhaseMismatch", "no recorded rollout to save")
            return
        dataset = Dataset(demos=(log.correction_demo,), kind="correction")
        export_dataset(dataset, path)
        self.phase = PHASE_SAVED
        self.send(
            client,
            "save_d_prime",
            {"path": str(path), "steps": len(log.correction_demo.steps)},
        )

    async def handle(self, client: _Client, msg: dict) -> None:
        mtype = msg.get("type")
        if mtype not in MESSAGE_TYPES:
            self.send_error(client, "BadMessage", f"unknown message type {mtype!r}")
            return
        seq = msg.get("seq")
        if not isinstance(seq, int) or seq <= client.in_seq:
            self.send_error(
                client, "BadMessage", f"seq must increase (last {client.in_seq}, got {seq!r})"
            )
            return
        client.in_seq = seq
        payload = msg.get("payload") or {}

        if mtype == "hello":
            self.send_error(client, "BadMessage", "duplicate hello")
        elif mtype == "start_rollout":
            self.handle_start_rollout(client, payload)
        elif mtype == "correction_input":
            self.handle_correction_input(client, payload)
        elif mtype == "pedal":
            self.handle_pedal(client, payload)
        elif mtype == "pause":
            self.handle_pause(client, payload)
        elif mtype == "resume":
            self.handle_resume(client, payload)
        elif mtype == "save_d_prime":
            await self.handle_save_d_prime(client, payload)
        else:
            self.send_error(client, "BadMessage", f"clients may not send {mtype}")

    def shutdown(self) -> None:
        self._stop.set()
        with self._ack_cv:
            self._ack_cv.notify_all()
        thread = self._thread
        if thread is not None and thread.is_alive():
            thread.join(timeout=5.0)


def _tips_from_payload(tips) -> np.ndarray:
    return np.asarray(tips, dtype=np.float64).reshape(5, 3)


async def _writer(client: _Client) -> None:
    while True:
        msg = await client.queue.get()
        await client.ws.send_text(json.dumps(msg, separators=(",", ":")))


def create_app(
    config: ServiceConfig | None = None,
    model: HandModel | None = None,
    scene: PointCloud | None = None,
) -> FastAPI:
    service = DexpipeService(config, model=model, scene=scene)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        service.shutdown()

    app = FastAPI(lifespan=lifespan)
    app.state.service = service

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        service.loop = asyncio.get_running_loop()
        client = service.register(ws)
        writer = asyncio.create_task(_writer(client))
        try:
            first = json.loads(await ws.receive_text())
            seq = first.get("seq")
            if first.get("type") != "hello":
                service.send_error(client, "BadMessage", "first message must be hello")
                await _drain(client)
                return
            if not isinstance(seq, int) or seq < 1:
                service.send_error(client, "BadMessage", "seq must be a positive integer")
                await _drain(client)
                return
            if not service.handle_hello(client, first.get("payload") or {}):
                await _drain(client)
                return
            client.in_seq = seq
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError as e:
                    service.send_error(client, "BadMessage", f"invalid JSON: {e}")
                    continue
                await service.handle(client, msg)
        except WebSocketDisconnect:
            pass
        finally:
            writer.cancel()
            service.unregister(client)

    return app


async def _drain(client: _Client) -> None:
    # flush queued replies before closing on a failed handshake
    while not client.queue.empty():
        msg = client.queue.get_nowait()
        await client.ws.send_text(json.dumps(msg, separators=(",", ":")))


def serve(
    config: ServiceConfig | None = None,
    host: str = "127.0.0.1",
    port: int = 8765,
    log_level: str = "info",
) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=port, log_level=log_level)
