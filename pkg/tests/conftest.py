import json

import pytest

from dexpipe import synth
from dexpipe.dataset import PipelineSettings, retarget_session
from dexpipe.ingest import load_session
from dexpipe.kinematics import default_hand_model
from dexpipe.perception import WorkspaceAlignment


@pytest.fixture(scope="session")
def model():
    return default_hand_model()


@pytest.fixture(scope="session")
def session_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture") / "session"
    synth.generate_session(out)
    return out


@pytest.fixture(scope="session")
def session(session_dir):
    return load_session(session_dir)


@pytest.fixture(scope="session")
def truth(session_dir):
    return json.loads((session_dir / "truth.json").read_text())


@pytest.fixture(scope="session")
def small_settings():
    # reduced point budgets keep the per-test pipeline fast; geometry and
    # determinism do not depend on the budgets
    return PipelineSettings(
        alignment=WorkspaceAlignment(z_table=synth.CROP_Z), k_scene=300, k_hand=40
    )


@pytest.fixture(scope="session")
def small_dataset(session, model, small_settings):
    return retarget_session(session, model, small_settings)
