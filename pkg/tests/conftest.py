"""Shared fixtures: small trained models reused across test modules.

Training even tiny models costs a few seconds, so anything trained is
session-scoped and parameterized tightly.  Fixtures are deterministic: every
stochastic step threads an explicit seed.
"""

import sys

import numpy as np
import pytest


def pytest_terminal_summary(terminalreporter):
    """Reprint the acceptance verdict lines in one block at session end."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None) if mod else None
    if lines:
        terminalreporter.write_sep("=", "acceptance verdicts")
        for line in lines:
            terminalreporter.write_line(line)

from trace_conformal import genmodels as gm
from trace_conformal import network as nn

POINT_MASS_C = np.array([0.5, -0.3])
POINT_MASS_X = np.array([0.7])


def _pointmass_data(n=256):
    X = np.tile(POINT_MASS_X, (n, 1))
    Y = np.tile(POINT_MASS_C, (n, 1))
    return X, Y


@pytest.fixture(scope="session")
def pointmass_schedule():
    return gm.make_schedule(200, 1e-4, 0.1)


@pytest.fixture(scope="session")
def pointmass_diffusion(pointmass_schedule):
    X, Y = _pointmass_data()
    cfg = gm.TrainConfig(epochs=600, batch_size=64, lr=2e-3, seed=0, ema_decay=0.995)
    return gm.train_diffusion((X, Y), cfg, nn.NetworkArch(hidden=48, blocks=2), pointmass_schedule)


@pytest.fixture(scope="session")
def pointmass_fm():
    X, Y = _pointmass_data()
    cfg = gm.TrainConfig(epochs=600, batch_size=64, lr=2e-3, seed=0, ema_decay=0.995)
    return gm.train_fm((X, Y), cfg, nn.NetworkArch(hidden=48, blocks=2))


def make_wedge_data(n, seed):
    """1-d conditional toy problem: y = (x, -x) + anisotropic noise.

    Cheap to fit and genuinely conditional, which the point-mass sets are
    not; used wherever a test needs scores that react to x.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 1))
    noise = rng.standard_normal((n, 2)) * np.array([0.3, 0.1])
    y = np.concatenate([x, -x], axis=1) + noise
    return x, y


@pytest.fixture(scope="session")
def wedge_data():
    return make_wedge_data(600, seed=42)


@pytest.fixture(scope="session")
def wedge_schedule():
    return gm.make_schedule(200, 1e-4, 0.1)


@pytest.fixture(scope="session")
def wedge_diffusion(wedge_data, wedge_schedule):
    cfg = gm.TrainConfig(epochs=300, batch_size=64, lr=2e-3, seed=7, ema_decay=0.995)
    return gm.train_diffusion(wedge_data, cfg, nn.NetworkArch(hidden=48, blocks=2), wedge_schedule)


@pytest.fixture(scope="session")
def wedge_fm(wedge_data):
    cfg = gm.TrainConfig(epochs=300, batch_size=64, lr=2e-3, seed=8, ema_decay=0.995)
    return gm.train_fm(wedge_data, cfg, nn.NetworkArch(hidden=48, blocks=2))


@pytest.fixture(scope="session")
def spiral_dataset():
    from trace_conformal import data as dt

    return dt.gen_synthetic(dt.SyntheticConfig("spiral", "L", 600, seed=31))


@pytest.fixture(scope="session")
def spiral_fm(spiral_dataset):
    cfg = gm.TrainConfig(epochs=300, batch_size=64, lr=2e-3, seed=12, ema_decay=0.995)
    return gm.train_fm((spiral_dataset.x, spiral_dataset.y), cfg, nn.NetworkArch(hidden=48, blocks=2))
