import os
import textwrap

import numpy as np
import pytest

from controllability.cli import RunConfig, build_problem
from controllability.config_manager import ConfigManager
from controllability.evolution import CoefficientSpec, EvolutionOperator, StepPropagators, TimeGrid
from controllability.spectral_state import SpatialGrid
from controllability.steering import ControlOperator

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs')
SHIPPED_IMPULSIVE = os.path.join(CONFIG_DIR, 'impulsive.toml')

STEER_VARIABLES = ('STEER_LOG_LEVEL', 'STEER_SEED', 'STEER_WORKERS', 'STEER_STEPS', 'STEER_MODES', 'STEER_POINTS')

PSI_33 = -np.expm1(-18.0) / 18.0
LINEAR_LAMBDAS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
LINEAR_ERRORS = (0.6428571, 0.1525424, 0.0176817, 0.0017969, 0.0001800)

LINEAR_TOML = """
schema = "impulsive-steering/1"

[grid]
horizon = 1.0
steps = 50
points = 33
modes = 8
p = 2.0

[history]
kind = "zero"
nu = 1.0
delay = 0.5

[inclusion]
envelope = "zero"

[target]
kind = "modes"

[target.modes]
3 = 1.0

[control]
lambdas = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
samples = 32

[run]
workers = 2
"""

IMPULSIVE_TOML = """
schema = "impulsive-steering/1"

[grid]
horizon = 1.0
steps = 40
points = 33
modes = 6
p = 2.0

[history]
kind = "mode"
mode = 1
amplitude = 0.5
decay = 1.0
nu = 2.0
delay = 0.5
spacing = 0.1

[inclusion]
envelope = "tanh"
epsilon = 0.05
weight = 0.2

[selection]
policy = "midpoint"

[[impulses]]
time = 0.5
scale = 0.1
source = "sine"
response = "constant"

[target]
kind = "modes"

[target.modes]
2 = 0.5

[control]
lambdas = [1e-1, 1e-2, 1e-3]
samples = 24
"""


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """Keep STEER_* variables of the calling shell out of the tests."""
    for name in STEER_VARIABLES:
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid():
    return SpatialGrid(65, 2.0)


@pytest.fixture
def unit_coefficient():
    return CoefficientSpec('constant', base=1.0)


@pytest.fixture
def write_config(tmp_path):
    def write(text, name='run.toml'):
        path = tmp_path / name
        path.write_text(textwrap.dedent(text).lstrip(), encoding='utf-8')
        return str(path)
    return write


@pytest.fixture
def linear_config_path(write_config):
    return write_config(LINEAR_TOML, 'linear.toml')


@pytest.fixture
def impulsive_config_path(write_config):
    return write_config(IMPULSIVE_TOML, 'impulsive.toml')


def load_run_config(path, **overrides):
    manager = ConfigManager()
    manager.load_config_file(path)
    for key, value in overrides.items():
        manager.set(key.replace('__', '.'), value)
    return RunConfig.from_manager(manager)


@pytest.fixture
def linear_problem(linear_config_path):
    return build_problem(load_run_config(linear_config_path))


@pytest.fixture
def impulsive_problem(impulsive_config_path):
    return build_problem(load_run_config(impulsive_config_path))


@pytest.fixture
def unit_propagators(unit_coefficient):
    evolution = EvolutionOperator(unit_coefficient, 1.0, 8)
    control = ControlOperator(8)
    return StepPropagators(evolution, TimeGrid(1.0, 50), control.input_gram)


def output_files(directory):
    return sorted(os.listdir(directory))
