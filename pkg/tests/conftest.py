"""Shared fixtures: model parameters, lattices of three sizes, run configs."""

import json

import numpy as np
import pytest

from src.boost import build_boost_generator
from src.evolution import default_t_grid
from src.logbook import LOGBOOK
from src.operators import LeeModel
from src.schemas import ModelParams


REFERENCE_MODEL = {"m_a": 1.0, "m_b": 0.4, "m_c": 0.3, "g": 0.05, "lambda_ff": 2.0}


@pytest.fixture(autouse=True)
def quiet_logbook():
    LOGBOOK.verbose = False
    yield
    LOGBOOK.verbose = True


@pytest.fixture(scope="session")
def params() -> ModelParams:
    return ModelParams(**REFERENCE_MODEL)


@pytest.fixture(scope="session")
def free_params(params) -> ModelParams:
    return params.model_copy(update={"g": 0.0})


@pytest.fixture(scope="session")
def small_model(params) -> LeeModel:
    # 9 modes: 90 states
    return LeeModel.from_grid(9, 0.25, params)


@pytest.fixture(scope="session")
def small_free_model(free_params) -> LeeModel:
    return LeeModel.from_grid(9, 0.25, free_params)


@pytest.fixture(scope="session")
def small_boost(small_model):
    return build_boost_generator(small_model)


@pytest.fixture(scope="session")
def reference_model(params) -> LeeModel:
    return LeeModel.from_grid(41, 0.25, params)


@pytest.fixture(scope="session")
def decay_model() -> LeeModel:
    params = ModelParams(**{**REFERENCE_MODEL, "lambda_ff": 8.0})
    return LeeModel.from_grid(1601, 0.002, params)


@pytest.fixture(scope="session")
def decay_t_grid(decay_model) -> np.ndarray:
    return default_t_grid(decay_model, samples=400)


@pytest.fixture
def small_config(tmp_path):
    """Write a small, fast run config and return its path."""
    config = {
        "model": dict(REFERENCE_MODEL),
        "grid": {"n_modes": 9, "dk": 0.25},
        "t_grid": {"t_max": 5.0, "samples": 50},
        "appendix": {"bch_beta": 0.01},
        "output_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "small.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path
