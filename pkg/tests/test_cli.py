"""Command line tests: every subcommand drives the library end to end,
prints one JSON object on stdout, and reports failures as JSON on stderr."""

import json

import numpy as np
import pytest

from dexpipe import cli
from dexpipe.calibration import default_rig, save_rig
from dexpipe.control import load_rollout_log
from dexpipe.dataset import export_dataset, import_dataset
from dexpipe.hitl import CorrectionEvent, HumanSample, write_correction_script
from dexpipe.geometry import Pose
from dexpipe.kinematics import default_hand_model, fk, save_hand_model


def run(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    out = json.loads(captured.out) if captured.out.strip() else None
    err = json.loads(captured.err) if captured.err.strip() else None
    return code, out, err


# ---------------------------------------------------------------------------
# happy paths


def test_gen_fixture_then_validate(tmp_path, capsys):
    out = tmp_path / "session"
    code, report, err = run(capsys, "gen-fixture", "--out", str(out))
    assert code == 0 and err is None
    assert report["frames"] == 120
    assert [(d["start_frame"], d["end_frame"]) for d in report["demos"]] == [(6, 63), (66, 117)]

    code, report, err = run(capsys, "validate", "--session", str(out))
    assert code == 0 and err is None
    assert report["ok"] is True
    assert report["checked"] == [{"session": str(out), "frames": 120}]


def test_ingest_report(session_dir, capsys):
    code, report, err = run(capsys, "ingest", "--session", str(session_dir))
    assert code == 0 and err is None
    assert report["capture_hz"] == 60.0
    assert report["target_hz"] == 20.0
    assert report["frames"] == 120
    demos = report["demos"]
    assert [d["raw_frames"] for d in demos] == [58, 52]
    assert [d["resampled_frames"] for d in demos] == [20, 18]
    assert [d["start_frame"] for d in demos] == [6, 66]


def test_retarget_then_inspect(session_dir, tmp_path, capsys):
    out = tmp_path / "demos.dxd"
    code, report, err = run(
        capsys,
        "retarget",
        "--session", str(session_dir),
        "--out", str(out),
        "--k-scene", "300",
        "--k-hand", "40",
    )
    assert code == 0 and err is None
    assert report["demos"] == 2
    assert report["steps"] == 36
    assert report["mean_ik_residual"] <= 1e-3
    assert report["max_ik_residual"] <= 1e-3

    code, header, err = run(capsys, "dxd-inspect", "--dataset", str(out))
    assert code == 0 and err is None
    assert header["kind"] == "original"
    assert header["k"] == 340
    assert [d["steps"] for d in header["demos"]] == [19, 17]

    code, report, err = run(capsys, "validate", "--dataset", str(out))
    assert code == 0
    assert report["checked"][0]["demos"] == 2


def test_augment_cli(small_dataset, tmp_path, capsys):
    src = tmp_path / "in.dxd"
    dst = tmp_path / "out.dxd"
    export_dataset(small_dataset, src)
    code, report, err = run(
        capsys,
        "augment",
        "--dataset", str(src),
        "--out", str(dst),
        "--max-shift", "0.05",
        "--seed", "7",
    )
    assert code == 0 and err is None
    assert report["demos"] == 2
    assert report["steps"] == small_dataset.step_count
    shifts = report["shifts"]
    assert len(shifts) == 2
    for dx, dy in shifts:
        assert abs(dx) <= 0.05 and abs(dy) <= 0.05

    loaded = import_dataset(dst)
    assert [d.meta["augment"] for d in loaded.demos] == shifts


def test_rollout_replay_reproduces_demo(small_dataset, tmp_path, capsys):
    src = tmp_path / "demos.dxd"
    log_path = tmp_path / "log.jsonl"
    export_dataset(small_dataset, src)
    demo = small_dataset.demos[0]

    code, report, err = run(
        capsys,
        "rollout",
        "--dataset", str(src),
        "--policy", "replay",
        "--init-from-demo", "0",
        "--k-scene", "120",
        "--k-hand", "40",
        "--out", str(log_path),
    )
    assert code == 0 and err is None
    assert report["ticks"] == len(demo.steps)
    assert report["policy_queries"] == 3
    assert report["log"] == str(log_path)

    records = load_rollout_log(log_path)
    assert len(records) == len(demo.steps)
    worst = 0.0
    for rec, step in zip(records, demo.steps):
        diff = np.max(np.abs(np.asarray(rec["corrected_action"]) - step.action.to_flat()))
        worst = max(worst, float(diff))
    assert worst <= 1e-6


def test_rollout_with_scripted_corrections(tmp_path, capsys):
    model = default_hand_model()
    tips5 = np.vstack([fk(model, np.zeros(16)).tips, [[0.02, -0.06, 0.01]]])
    script = tmp_path / "corrections.jsonl"
    write_correction_script(
        script,
        [
            CorrectionEvent(tick=0, sample=HumanSample(wrist=Pose.identity(), tips=tips5)),
            CorrectionEvent(tick=2, pedal=True),
        ],
    )
    d_prime = tmp_path / "dprime.dxd"
    code, report, err = run(
        capsys,
        "rollout",
        "--policy", "constant",
        "--ticks", "6",
        "--k-scene", "80",
        "--k-hand", "40",
        "--corrections", str(script),
        "--d-prime", str(d_prime),
    )
    assert code == 0 and err is None
    assert report["ticks"] == 6
    assert report["d_prime"] == str(d_prime)

    saved = import_dataset(d_prime)
    assert saved.kind == "correction"
    assert len(saved.demos[0].steps) == 6
    assert saved.demos[0].meta["modes"] == "rrtttt"


def test_validate_rig_and_hand_model(tmp_path, capsys):
    rig_path = tmp_path / "rig.json"
    model_path = tmp_path / "hand.json"
    save_rig(default_rig(), rig_path)
    save_hand_model(default_hand_model(), model_path)
    code, report, err = run(
        capsys, "validate", "--rig", str(rig_path), "--hand-model", str(model_path)
    )
    assert code == 0 and err is None
    assert report["checked"] == [{"rig": str(rig_path)}, {"hand_model": str(model_path)}]


# ---------------------------------------------------------------------------
# error contract: nonzero exit, one JSON object on stderr


def test_missing_session_is_json_error(capsys):
    code, out, err = run(capsys, "ingest", "--session", "/no/such/session")
    assert code == 1
    assert out is None
    assert err["error"] == "MissingFile"
    assert "/no/such/session" in err["detail"]


def test_validate_nothing_is_error(capsys):
    code, out, err = run(capsys, "validate")
    assert code == 1
    assert err["error"] == "ValueError"
    assert "nothing to validate" in err["detail"]


def test_corrupt_dataset_fails_validate(small_dataset, tmp_path, capsys):
    path = tmp_path / "demos.dxd"
    export_dataset(small_dataset, path)
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    code, out, err = run(capsys, "validate", "--dataset", str(path))
    assert code == 1
    assert err["error"] == "FormatVersionMismatch"


def test_rollout_init_from_demo_requires_dataset(capsys):
    code, out, err = run(capsys, "rollout", "--policy", "constant", "--init-from-demo", "0")
    assert code == 1
    assert err["error"] == "ValueError"
    assert "--dataset" in err["detail"]


def test_bad_align_argument(session_dir, tmp_path, capsys):
    code, out, err = run(
        capsys,
        "retarget",
        "--session", str(session_dir),
        "--out", str(tmp_path / "x.dxd"),
        "--align", "1,2",
    )
    assert code == 1
    assert err["error"] == "ValueError"
    assert "dx,dy,yaw" in err["detail"]


def test_unknown_subcommand_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["transmogrify"])
    assert exc.value.code == 2
    capsys.readouterr()
