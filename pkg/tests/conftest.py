"""Shared fixtures for the mongelab test suite"""

import numpy as np
import pytest

from mongelab import config
from mongelab import grid as gr
from mongelab import mongeampere as ma
from mongelab import synthetic


@pytest.fixture(autouse=True)
def restore_config():
    """getConfiguration() writes module-level values; undo that after each test"""
    saved = {name: value for name, value in vars(config).items() if not name.startswith('__')}
    yield
    for name, value in saved.items():
        setattr(config, name, value)


@pytest.fixture(autouse=True)
def isolated_home(tmp_path, monkeypatch):
    """Keep user configuration and output directory settings out of the tests"""
    monkeypatch.setenv('HOME', str(tmp_path / 'home'))
    monkeypatch.delenv('MONGELAB_CONFIG', raising=False)
    monkeypatch.delenv('MONGELAB_OUTDIR', raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def smooth_random_field(grid, rng, modes=2, amplitude=1.0):
    """Random trigonometric polynomial with wavenumbers up to modes"""
    x1, x2 = grid.coordinates()
    values = np.zeros((grid.n, grid.n))
    for k1 in range(modes + 1):
        for k2 in range(modes + 1):
            a, b = rng.normal(size=2) / (1.0 + k1 + k2)
            values += a * np.cos(2 * np.pi * (k1 * x1 + k2 * x2)) \
                + b * np.sin(2 * np.pi * (k1 * x1 - k2 * x2))
    values -= values.mean()
    return gr.ScalarField(grid, amplitude * values / np.max(np.abs(values)))


@pytest.fixture
def smooth_field():
    return smooth_random_field


@pytest.fixture
def family():
    return synthetic.TrigFamily()


def linearization_coefficients(n, amplitude=0.01):
    """Coefficients of the linearised operator at a small smooth potential"""
    grid = gr.PeriodicGrid(n)
    fam = synthetic.TrigFamily()
    u = grid.from_function(lambda x1, x2: amplitude * np.sin(2 * np.pi * x1) * np.cos(4 * np.pi * x2))
    return ma.build_linearization(u, fam.target())


@pytest.fixture
def linearized_coefficients():
    return linearization_coefficients


def generic_coefficients(grid):
    """Smooth elliptic variable coefficients with first order terms"""
    return ma.LinearizedCoefficients(
        a11=grid.from_function(lambda x1, x2: 1.0 + 0.2 * np.sin(2 * np.pi * x1)),
        a12=grid.from_function(lambda x1, x2: 0.1 * np.cos(2 * np.pi * (x1 + x2))),
        a22=grid.from_function(lambda x1, x2: 1.2 + 0.1 * np.cos(2 * np.pi * x2)),
        b1=grid.from_function(lambda x1, x2: 0.3 * np.cos(2 * np.pi * x2)),
        b2=grid.from_function(lambda x1, x2: -0.2 * np.sin(2 * np.pi * x1)))


@pytest.fixture
def generic():
    return generic_coefficients
