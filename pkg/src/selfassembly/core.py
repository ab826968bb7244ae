"""Electrode geometry and the Coulomb energy landscape of particles on a segment.

All quantities are in normalized units: lengths in the units of the electrode
layout, charges relative to one particle, energies relative to the Coulomb
constant and time relative to the drag/Coulomb ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_FLOOR = 1e-12


class SingularConfigurationError(ValueError):
    """A particle sits (numerically) on another particle or a charged electrode."""


@dataclass(frozen=True)
class Geometry:
    """Electrode layout on the segment ``[q[0], q[-1]]`` split into ``n_cells`` cells.

    Parameters
    ----------
    q : array_like
        Electrode positions, strictly increasing, with ``q[0] == 0``.
    n_cells : int
        Number of grid cells ``N`` of equal width.
    n_particles : int
        Number of particles, smaller than ``n_cells``.
    """

    q: np.ndarray
    n_cells: int
    n_particles: int

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "q", q)
        q.setflags(write=False)
        if q.ndim != 1 or q.size < 2:
            raise ValueError("need at least two electrodes")
        if q[0] != 0.0:
            raise ValueError("first electrode must sit at 0")
        if np.any(np.diff(q) <= 0):
            raise ValueError("electrode positions must be strictly increasing")
        if not 0 < self.n_particles < self.n_cells:
            raise ValueError("need 0 < n_particles < n_cells")
        ratio = np.diff(q) / self.d0
        if np.any(np.abs(ratio - np.round(ratio)) > 1e-9) or np.any(np.round(ratio) < 1):
            raise ValueError("electrode gaps must be positive multiples of the cell width")

    @classmethod
    def from_gaps(cls, gaps, d0: float, n_particles: int) -> "Geometry":
        """Build a layout from integer cell counts between consecutive electrodes."""
        gaps = [int(g) for g in gaps]
        if any(g < 1 for g in gaps):
            raise ValueError("gaps must be positive integers")
        q = d0 * np.concatenate([[0], np.cumsum(gaps)])
        return cls(q=q, n_cells=sum(gaps), n_particles=n_particles)

    @property
    def c(self) -> int:
        """Index of the last electrode (there are ``c + 1`` electrodes)."""
        return self.q.size - 1

    @property
    def length(self) -> float:
        return float(self.q[-1])

    @property
    def d0(self) -> float:
        return float(self.q[-1]) / self.n_cells

    @property
    def gaps(self) -> tuple[int, ...]:
        return tuple(int(g) for g in np.round(np.diff(self.q) / self.d0))

    @property
    def cell_edges(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n_cells + 1)

    @property
    def cell_midpoints(self) -> np.ndarray:
        edges = self.cell_edges
        return 0.5 * (edges[:-1] + edges[1:])

    def electrode_cell_index(self, k: int) -> int:
        """Number of cells to the left of electrode ``k``."""
        return int(round(self.q[k] / self.d0))

    def to_dict(self) -> dict:
        return {"gaps": list(self.gaps), "d0": self.d0, "n": self.n_particles}


def reference_geometry() -> Geometry:
    """Five unit-spaced electrodes, 16 cells and 8 particles."""
    return Geometry.from_gaps([4, 4, 4, 4], d0=0.25, n_particles=8)


def active_set(u, tol: float = 0.0) -> tuple[int, ...]:
    """Indices of electrodes carrying strictly positive charge."""
    return tuple(int(j) for j in np.flatnonzero(np.asarray(u, dtype=float) > tol))


def in_static_set(u) -> bool:
    """Positive end charges and nonnegative interior charges."""
    u = np.asarray(u, dtype=float)
    return bool(u[0] > 0 and u[-1] > 0 and np.all(u[1:-1] >= 0))


def in_stage_set(u, active) -> bool:
    """True if ``u`` is positive exactly on ``active`` (endpoints included) and zero elsewhere."""
    u = np.asarray(u, dtype=float)
    mask = np.zeros(u.size, dtype=bool)
    mask[list(active)] = True
    return bool(mask[0] and mask[-1] and np.all(u[mask] > 0) and np.all(u[~mask] == 0))


def _check(x, u, g: Geometry, floor: float):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.shape != g.q.shape:
        raise ValueError(f"control has {u.size} entries, geometry has {g.q.size} electrodes")
    if x.ndim != 1:
        raise ValueError("state must be one-dimensional")
    if x.size > 1 and np.min(np.abs(np.diff(x))) < floor:
        raise SingularConfigurationError("two particles coincide")
    if x.size > 1 and np.any(np.diff(x) <= 0):
        raise ValueError("particle positions must be in ascending order")
    charged = u != 0
    if np.any(charged):
        dq = np.abs(x[:, None] - g.q[None, charged])
        if dq.size and dq.min() < floor:
            raise SingularConfigurationError("a particle sits on a charged electrode")
    return x, u


def energy(x, u, g: Geometry, floor: float = DEFAULT_FLOOR) -> float:
    """Normalized Coulomb energy of particles at ``x`` under electrode charges ``u``."""
    x, u = _check(x, u, g, floor)
    iu = np.triu_indices(x.size, 1)
    pair = np.sum(1.0 / np.abs(x[:, None] - x[None, :])[iu])
    charged = u != 0
    ext = np.sum(u[charged][None, :] / np.abs(x[:, None] - g.q[None, charged]))
    return float(pair + ext)


def force(x, u, g: Geometry, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Negative energy gradient: the net Coulomb force on each particle."""
    x, u = _check(x, u, g, floor)
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, np.inf)
    f = np.sum(np.sign(d) / d**2, axis=1)
    charged = u != 0
    dq = x[:, None] - g.q[None, charged]
    f += np.sum(u[charged] * np.sign(dq) / dq**2, axis=1)
    return f


def hessian(x, u, g: Geometry, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Second derivative matrix of the energy with respect to particle positions."""
    x, u = _check(x, u, g, floor)
    d = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(d, np.inf)
    off = 2.0 / d**3
    charged = u != 0
    dq = np.abs(x[:, None] - g.q[None, charged])
    h = -off
    h[np.diag_indices_from(h)] = off.sum(axis=1) + np.sum(2.0 * u[charged] / dq**3, axis=1)
    return h


def gershgorin_lower_bound(h: np.ndarray) -> float:
    """Smallest left end of the Gershgorin discs of a symmetric matrix."""
    h = np.asarray(h)
    radius = np.sum(np.abs(h), axis=1) - np.abs(np.diag(h))
    return float(np.min(np.diag(h) - radius))


def energy_many(xs, u, g: Geometry) -> np.ndarray:
    """Energy of every row of ``xs``; no ordering or singularity checks.

    Intended for sample clouds already filtered to a region of attraction.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    u = np.asarray(u, dtype=float)
    n = xs.shape[1]
    out = np.zeros(xs.shape[0])
    for i in range(n - 1):
        out += np.sum(1.0 / np.abs(xs[:, i + 1:] - xs[:, i:i + 1]), axis=1)
    charged = u != 0
    for qj, uj in zip(g.q[charged], u[charged]):
        out += uj * np.sum(1.0 / np.abs(xs - qj), axis=1)
    return out


def force_many(xs, u, g: Geometry) -> np.ndarray:
    """Force on every row of ``xs``; no ordering or singularity checks."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    u = np.asarray(u, dtype=float)
    d = xs[:, :, None] - xs[:, None, :]
    n = xs.shape[1]
    d[:, np.arange(n), np.arange(n)] = np.inf
    f = np.sum(np.sign(d) / d**2, axis=2)
    charged = u != 0
    dq = xs[:, :, None] - g.q[None, None, charged]
    f += np.sum(u[charged] * np.sign(dq) / dq**2, axis=2)
    return f
