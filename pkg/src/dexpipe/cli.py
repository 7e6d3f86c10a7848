"""Operator command line: capture session in, robot dataset out, plus the
simulated rollout and live-service entry points.

Every subcommand is deterministic for a fixed argument list and seed. Errors
leave a single machine-readable JSON object on stderr and a nonzero exit.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import synth
from .calibration import load_rig
from .control import ControllerParams, ObservationSynth, PlantState, rollout
from .dataset import (
    Dataset,
    PipelineSettings,
    WorkspaceBounds,
    augment,
    export_dataset,
    import_dataset,
    read_dataset_header,
    retarget_session,
)
from .hitl import CorrectionController, CorrectionGains, ScriptedCorrectionSource
from .ingest import load_session, resample, segment_demos
from .kinematics import IkParams, default_hand_model, load_hand_model
from .perception import (
    DEFAULT_SCENE_POINTS,
    HAND_POINTS,
    STORAGE_POINTS,
    WorkspaceAlignment,
    default_link_geometry,
    observation_seed,
)
from .policy import ConstantPolicy, ReplayPolicy

log = logging.getLogger("dexpipe")


def _parse_align(text: str, z_table: float) -> WorkspaceAlignment:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise ValueError("--align expects dx,dy,yaw")
    return WorkspaceAlignment(dx=parts[0], dy=parts[1], yaw=parts[2], z_table=z_table)


def _load_params(path: str | None) -> dict:
    if path is None:
        return {}
    raw = json.loads(Path(path).read_text())
    out = {}
    if "controller" in raw:
        out["controller"] = ControllerParams(**raw["controller"])
    if "ik" in raw:
        out["ik"] = IkParams(**raw["ik"])
    if "gains" in raw:
        out["gains"] = CorrectionGains(**raw["gains"])
    return out


def _hand_model(path: str | None):
    return load_hand_model(path) if path else default_hand_model()


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    session = load_session(args.session)
    slices = segment_demos(session.frames, session.annotations)
    ordered = sorted(session.annotations, key=lambda a: a.start_frame)
    report = []
    for annotation, frames in zip(ordered, slices):
        resampled = resample(frames, session.meta.capture_hz, args.target_hz)
        report.append(
            {
                "label": annotation.label,
                "start_frame": annotation.start_frame,
                "end_frame": annotation.end_frame,
                "raw_frames": len(frames),
                "resampled_frames": len(resampled),
            }
        )
    _emit(
        {
            "session": str(args.session),
            "capture_hz": session.meta.capture_hz,
            "target_hz": args.target_hz,
            "frames": session.meta.frame_count,
            "demos": report,
        }
    )
    return 0


def cmd_retarget(args) -> int:
    session = load_session(args.session)
    model = _hand_model(args.hand_model)
    params = _load_params(args.params)
    settings = PipelineSettings(
        alignment=_parse_align(args.align, args.z_table),
        target_hz=args.target_hz,
        k_scene=args.k_scene,
        k_hand=args.k_hand,
        gamma=args.gamma,
        seed=args.seed,
        ik=params.get("ik", IkParams()),
    )
    dataset = retarget_session(session, model, settings)
    export_dataset(dataset, args.out)
    _emit(
        {
            "out": str(args.out),
            "demos": len(dataset.demos),
            "steps": dataset.step_count,
            "mean_ik_residual": float(
                np.mean([d.meta["mean_ik_residual"] for d in dataset.demos])
            ),
            "max_ik_residual": max(d.meta["max_ik_residual"] for d in dataset.demos),
        }
    )
    return 0


def cmd_augment(args) -> int:
    dataset = import_dataset(args.dataset)
    bounds = WorkspaceBounds()
    shifted = []
    for di, demo in enumerate(dataset.demos):
        shifted.append(
            augment(
                demo,
                max_dx=args.max_shift,
                max_dy=args.max_shift,
                seed=observation_seed(args.seed, di),
                bounds=bounds,
            )
        )
    out = Dataset(demos=tuple(shifted), kind=dataset.kind)
    export_dataset(out, args.out)
    _emit(
        {
            "out": str(args.out),
            "demos": len(out.demos),
            "steps": out.step_count,
            "shifts": [d.meta["augment"] for d in out.demos],
        }
    )
    return 0


def cmd_rollout(args) -> int:
    model = _hand_model(args.hand_model)
    params = _load_params(args.params)
    controller = params.get("controller", ControllerParams())

    dataset = None
    if args.dataset:
        dataset = import_dataset(args.dataset)

    if args.init_from_demo is not None:
        if dataset is None:
            raise ValueError("--init-from-demo requires --dataset")
        demo = dataset.demos[args.init_from_demo]
        initial = demo.steps[0].state
        default_ticks = len(demo.steps)
    else:
        initial = synth.default_plant_state(model)
        default_ticks = 100
    ticks = args.ticks if args.ticks is not None else default_ticks

    if args.policy == "replay":
        if dataset is None:
            raise ValueError("replay policy requires --dataset")
        policy = ReplayPolicy(dataset, d=args.chunk)
    else:
        policy = ConstantPolicy(initial)

    observe = ObservationSynth(
        synth.scene_cloud(),
        model,
        default_link_geometry(model, args.k_hand // 2),
        k_scene=args.k_scene,
        seed=args.seed,
    )
    corrector = None
    if args.corrections:
        corrector = CorrectionController(
            ScriptedCorrectionSource.from_file(args.corrections),
            model,
            gains=params.get("gains", CorrectionGains()),
            ik_params=params.get("ik", IkParams()),
            arm=args.arm,
        )
    record = corrector is not None or args.d_prime is not None

    log_out = rollout(
        policy,
        PlantState(state=initial),
        ticks,
        params=controller,
        observe=observe,
        corrector=corrector,
        record_correction=record,
    )
    if args.out:
        log_out.save(args.out)
    if args.d_prime:
        if log_out.correction_demo is None:
            raise ValueError("no correction steps were recorded")
        export_dataset(
            Dataset(demos=(log_out.correction_demo,), kind="correction"), args.d_prime
        )
    _emit(
        {
            "ticks": len(log_out.ticks),
            "policy_queries": log_out.policy_queries,
            "log": str(args.out) if args.out else None,
            "d_prime": str(args.d_prime) if args.d_prime else None,
        }
    )
    return 0


def cmd_serve(args) -> int:
    from .service import ServiceConfig, serve

    params = _load_params(args.params)
    config = ServiceConfig(
        dataset=args.dataset,
        policy=args.policy,
        arm=args.arm,
        seed=args.seed,
        k_scene=args.k_scene,
        k_hand=args.k_hand,
        params=params.get("controller", ControllerParams()),
        ik=params.get("ik", IkParams()),
        gains=params.get("gains", CorrectionGains()),
    )
    serve(config, host=args.host, port=args.port)
    return 0


def cmd_validate(args) -> int:
    checked = []
    if args.session:
        session = load_session(args.session)
        for frame in session.frames:
            session.load_depth(frame)
            session.load_rgb(frame)
        segment_demos(session.frames, session.annotations)
        checked.append({"session": str(args.session), "frames": len(session.frames)})
    if args.dataset:
        dataset = import_dataset(args.dataset)
        checked.append(
            {
                "dataset": str(args.dataset),
                "kind": dataset.kind,
                "demos": len(dataset.demos),
                "steps": dataset.step_count,
            }
        )
    if args.rig:
        load_rig(args.rig)
        checked.append({"rig": str(args.rig)})
    if args.hand_model:
        load_hand_model(args.hand_model)
        checked.append({"hand_model": str(args.hand_model)})
    if not checked:
        raise ValueError("nothing to validate: pass --session, --dataset, --rig, or --hand-model")
    _emit({"ok": True, "checked": checked})
    return 0


def cmd_gen_fixture(args) -> int:
    session = synth.generate_session(args.out, n_frames=args.frames)
    _emit(
        {
            "out": str(args.out),
            "frames": len(session.frames),
            "demos": [
                {"label": a.label, "start_frame": a.start_frame, "end_frame": a.end_frame}
                for a in session.annotations
            ],
        }
    )
    return 0


def cmd_dxd_inspect(args) -> int:
    header = read_dataset_header(args.dataset)
    _emit(header)
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", default=None, help="JSON file with controller/ik/gains blocks")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dexpipe")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="report demo segmentation and resampling for a session")
    p.add_argument("--session", required=True)
    p.add_argument("--target-hz", type=float, default=20.0)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("retarget", help="turn a session into a robot dataset (.dxd)")
    p.add_argument("--session", required=True)
    p.add_argument("--hand-model", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--align", default="0,0,0", help="dx,dy,yaw")
    p.add_argument("--z-table", type=float, default=synth.CROP_Z)
    p.add_argument("--target-hz", type=float, default=20.0)
    # stored datasets default to the full storage budget; the policy-side
    # 1000-point split belongs to rollout/serve observation synthesis
    p.add_argument("--k-scene", type=int, default=STORAGE_POINTS - HAND_POINTS)
    p.add_argument("--k-hand", type=int, default=HAND_POINTS)
    p.add_argument("--gamma", type=float, default=1.0)
    _add_common(p)
    p.set_defaults(fn=cmd_retarget)

    p = sub.add_parser("augment", help="seeded 2D translation augmentation of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-shift", type=float, default=0.1)
    _add_common(p)
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("rollout", help="simulated rollout of a policy, optionally corrected")
    p.add_argument("--dataset", default=None)
    p.add_argument("--policy", choices=("replay", "constant"), default="replay")
    p.add_argument("--init-from-demo", type=int, default=None)
    p.add_argument("--ticks", type=int, default=None)
    p.add_argument("--chunk", type=int, default=8)
    p.add_argument("--hand-model", default=None)
    p.add_argument("--k-scene", type=int, default=DEFAULT_SCENE_POINTS)
    p.add_argument("--k-hand", type=int, default=HAND_POINTS)
    p.add_argument("--arm", choices=("left", "right"), default="right")
    p.add_argument("--corrections", default=None, help="scripted correction JSONL")
    p.add_argument("--out", default=None, help="rollout log JSONL path")
    p.add_argument("--d-prime", default=None, help="write recorded correction dataset here")
    _add_common(p)
    p.set_defaults(fn=cmd_rollout)

    p = sub.add_parser("serve", help="host the live correction service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--dataset", default=None)
    p.add_argument("--policy", choices=("replay", "constant"), default="replay")
    p.add_argument("--arm", choices=("left", "right"), default="right")
    p.add_argument("--k-scene", type=int, default=DEFAULT_SCENE_POINTS)
    p.add_argument("--k-hand", type=int, default=HAND_POINTS)
    _add_common(p)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("validate", help="format and invariant checks; exit 0 iff clean")
    p.add_argument("--session", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--rig", default=None)
    p.add_argument("--hand-model", default=None)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("gen-fixture", help="write a synthetic session with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=120)
    p.set_defaults(fn=cmd_gen_fixture)

    p = sub.add_parser("dxd-inspect", help="print a dataset file's header")
    p.add_argument("--dataset", required=True)
    p.set_defaults(fn=cmd_dxd_inspect)

    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DEXPIPE_LOG", "WARNING").upper())
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:
        print(
            json.dumps({"error": type(e).__name__, "detail": str(e)}),
            file=sys.stderr,
        )
        log.debug("command failed", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
