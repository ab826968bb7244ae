import numpy as np
import pytest

from selfassembly.core import Geometry, energy, force, reference_geometry
from selfassembly.roa import Pattern, enumerate_roas
from selfassembly.steady import NoiseParams

REFERENCE_PATTERN = "0111001100100101"


@pytest.fixture
def unit_geometry():
    """Two electrodes at 0 and 1, two cells, one particle."""
    return Geometry.from_gaps([2], 0.5, 1)


@pytest.fixture
def reference():
    return reference_geometry(), Pattern.from_string(REFERENCE_PATTERN), NoiseParams(0.45)


def random_state(rng, g, lo=None, hi=None, margin=1e-3):
    """Sorted uniform state inside ``(lo, hi)`` with pairwise gaps above ``margin``."""
    lo = g.q[0] if lo is None else lo
    hi = g.q[-1] if hi is None else hi
    while True:
        x = np.sort(rng.uniform(lo, hi, g.n_particles))
        gaps = np.diff(np.concatenate([[lo], x, [hi]]))
        if gaps.min() > margin and not np.any(np.isin(x, g.q)):
            return x


def random_instance(rng):
    """Random geometry, active set, region and positive charges with n <= 4."""
    c = int(rng.integers(1, 4))
    gaps = rng.integers(2, 5, c)
    g = Geometry.from_gaps(gaps, 0.25, int(rng.integers(1, min(5, gaps.sum()))))
    interior = [k for k in range(1, c) if rng.random() < 0.6]
    active = (0, *interior, c)
    u = np.zeros(c + 1)
    u[list(active)] = rng.uniform(0.2, 5.0, len(active))
    roas = enumerate_roas(g.n_particles, active, n_electrodes=c + 1)
    return g, u, roas[int(rng.integers(len(roas)))]


def fd_gradient(x, u, g, h=1e-6):
    grad = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        grad[k] = (energy(x + e, u, g) - energy(x - e, u, g)) / (2 * h)
    return grad


def fd_jacobian(x, u, g, h=1e-6):
    jac = np.zeros((x.size, x.size))
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        jac[:, k] = (force(x + e, u, g) - force(x - e, u, g)) / (2 * h)
    return jac


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE_LINES.append(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
