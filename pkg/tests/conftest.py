import numpy as np
import pytest

from swerom.fom import Physics, SolverOptions, TimeSpec, integrate
from swerom.grid_ops import GridSpec, build_diff_ops, paper_initial_condition


def random_state(grid, rng, h_min=0.5):
    """Random velocities and a strictly positive depth."""
    N = grid.N
    return np.concatenate([
        rng.standard_normal(N),
        rng.standard_normal(N),
        h_min + rng.random(N),
    ])


def trajectory(grid, scheme, dt, n_steps, phys=Physics(), opts=SolverOptions()):
    """Paper initial condition integrated ``n_steps``; rows are t_0..t_n."""
    ops = build_diff_ops(grid)
    z0 = paper_initial_condition(grid)
    out = [z0]
    integrate(z0, scheme, TimeSpec(dt, n_steps), ops, phys, opts,
              sink=lambda k, t, z: out.append(z.copy()))
    return np.array(out)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
