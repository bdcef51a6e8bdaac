import os
import sys

import numpy as np
import pytest

# Add repository root to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from snn.encoding import EncoderLayout, save_calibration
from snn.pingpong import EPISODE_DTYPE, record_episode
from snn.plasticity import PlasticityParams


def make_plasticity(n_silent: int = 2, tau: float = 1.0, L: int = 100, r_s: float = 0.487,
                    d_h_bar: float = 0.049, w_min: float = -0.019, w_max: float = 0.45) -> PlasticityParams:
    return PlasticityParams.from_hyperparameters(w_min=w_min, w_max=w_max, d_h_bar=d_h_bar, r_s=r_s,
                                                 tau=tau, interval_ms=L, n_silent=n_silent)


def constant_record(steps: int, ball_x=0.0, ball_y=0.0, vx=12.0, vy=3.0, racket_y=0.0) -> np.ndarray:
    record = np.zeros(steps, dtype=EPISODE_DTYPE)
    record['ball_x'], record['ball_y'] = ball_x, ball_y
    record['vx'], record['vy'] = vx, vy
    record['racket_y'] = racket_y
    return record


@pytest.fixture
def optimum_plasticity():
    return make_plasticity(n_silent=118)


@pytest.fixture
def layout():
    return EncoderLayout(np.linspace(-24.0, 24.0, 8), np.linspace(-20.0, 20.0, 8))


@pytest.fixture
def calibration_file(tmp_path, layout):
    path = tmp_path / 'calibration.json'
    save_calibration(layout, str(path))
    return str(path)


@pytest.fixture(scope='session')
def short_episode():
    return record_episode(seed=3, steps=5000)
