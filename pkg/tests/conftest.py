import numpy as np
import pytest

from trrom.fields import CAVITY, PERIODIC, Grid, VectorField
from trrom.fom import LID_CAVITY, FomConfig, run_fom
from trrom.pod import compute_pod


def random_field(grid: Grid, rng: np.random.Generator) -> VectorField:
    return VectorField.from_flat(rng.standard_normal(grid.n_dof), grid)


@pytest.fixture(params=[PERIODIC, CAVITY])
def small_grid(request):
    return Grid(8, 6, 1.0, 1.5, request.param)


@pytest.fixture(scope="session")
def cavity_cfg():
    return FomConfig(case=LID_CAVITY, nx=16, ny=16, nu=0.01, dt=0.005,
                     t_start=0.5, t_end=2.5, dt_sample=0.05)


@pytest.fixture(scope="session")
def cavity_snaps(cavity_cfg):
    return run_fom(cavity_cfg)


@pytest.fixture(scope="session")
def cavity_basis(cavity_snaps):
    return compute_pod(cavity_snaps)


@pytest.fixture(scope="session")
def tg_cfg():
    return FomConfig(nx=32, ny=32, nu=0.01, dt=0.01, t_end=2.0, dt_sample=0.1, perturbation=0.3)


@pytest.fixture(scope="session")
def tg_snaps(tg_cfg):
    return run_fom(tg_cfg)


@pytest.fixture(scope="session")
def tg_basis(tg_snaps):
    return compute_pod(tg_snaps)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
