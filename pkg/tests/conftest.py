import numpy as np
import pytest

from app.core import tensor as T
from app.core.gradcheck import GRADIENT_CHECKS, CheckCase, GradientCheck
from app.models.config import RunConfig, preset, update
from app.util.synth import generate_dataset

TINY_NET = {
    "n_points": 64,
    "level_points": (32, 16, 8, 4),
    "level_channels": (4, 4, 8, 8),
    "pyramid_k": 4,
    "cost_k1": 3,
    "cost_k2": 3,
    "cost_hidden": 8,
    "embedding_channels": 8,
    "upconv_k": 2,
    "mask_hidden": 8,
    "fc_hidden": (8, 8),
    "fps_random_start": False,
}


@pytest.fixture(autouse=True)
def quiet_environment(monkeypatch, tmp_path):
    # keep pytest's log capture handler and write run outputs under tmp
    monkeypatch.setattr("app.main.LOG_CONFIG", None)
    monkeypatch.setattr("app.api.deps.OUTPUT_ROOT", str(tmp_path / "runs"))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_run() -> RunConfig:
    return update(preset("desk"), {
        "net": TINY_NET,
        "train": {"batch_size": 2, "steps": 3, "checkpoint_every": 2, "seed": 3},
    })


@pytest.fixture
def tiny_pairs():
    return generate_dataset(6, seed=1, n_points=64, max_rot_deg=5.0, max_trans=0.3)


@pytest.fixture
def broken_check(monkeypatch) -> str:
    """Registers a check whose operation reports half its true gradient."""

    def doubled(x):
        return T._emit("double", 2.0 * x.data, (x,), lambda g: (g,))

    def case(rng):
        return CheckCase({"x": rng.normal(size=(3, 2))}, lambda v: doubled(v["x"]))

    monkeypatch.setitem(GRADIENT_CHECKS, "broken", GradientCheck("broken", case, seeds=(0,)))
    return "broken"
