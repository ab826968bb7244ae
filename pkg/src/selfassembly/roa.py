"""Regions of attraction, patterns and the boxes that represent them.

With positive charges on a set of *active* electrodes, particles can neither
cross an active electrode nor each other, so the number of particles in every
active interval is conserved. Each admissible count vector (a weak composition
of the particle count) labels one region of attraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Iterator, Sequence

import numpy as np

from .core import Geometry


class InvalidActiveSetError(ValueError):
    pass


class BoundaryAmbiguityError(ValueError):
    """A particle sits exactly on an active electrode."""


def weak_compositions(n: int, parts: int) -> Iterator[tuple[int, ...]]:
    """Yield every tuple of ``parts`` nonnegative integers summing to ``n``.

    Tuples are produced in reverse-lexicographic order, so the leftmost part
    is largest first.
    """
    if parts < 1:
        raise ValueError("parts must be positive")
    if parts == 1:
        yield (n,)
        return
    for head in range(n, -1, -1):
        for tail in weak_compositions(n - head, parts - 1):
            yield (head,) + tail


def count_weak_compositions(n: int, parts: int) -> int:
    return comb(n + parts - 1, parts - 1)


def bounded_compositions(total: int, parts: int, minimum: int) -> list[tuple[int, ...]]:
    """Compositions of ``total`` into ``parts`` integers, each at least ``minimum``."""
    slack = total - parts * minimum
    if slack < 0:
        return []
    return [tuple(p + minimum for p in w) for w in weak_compositions(slack, parts)]


def _normalize_active(active, n_electrodes: int) -> tuple[int, ...]:
    act = tuple(sorted(set(int(a) for a in active)))
    if len(act) < 2 or act[0] != 0 or act[-1] != n_electrodes - 1:
        raise InvalidActiveSetError("both end electrodes must be active")
    if any(a < 0 or a >= n_electrodes for a in act):
        raise InvalidActiveSetError("electrode index out of range")
    return act


@dataclass(frozen=True)
class Pattern:
    """A binary occupancy word over the grid cells."""

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError("pattern entries must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_string(cls, s: str) -> "Pattern":
        s = s.strip()
        if not s or set(s) - {"0", "1"}:
            raise ValueError(f"pattern string must contain only '0' and '1': {s!r}")
        return cls(tuple(int(ch) for ch in s))

    def __str__(self) -> str:
        return "".join(map(str, self.bits))

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def n_ones(self) -> int:
        return sum(self.bits)

    @property
    def indices(self) -> np.ndarray:
        """Zero-based cell indices of the occupied cells, ascending."""
        return np.flatnonzero(np.array(self.bits))

    def check(self, g: Geometry) -> "Pattern":
        if len(self) != g.n_cells:
            raise ValueError(f"pattern has length {len(self)}, geometry has {g.n_cells} cells")
        if self.n_ones != g.n_particles:
            raise ValueError(f"pattern has {self.n_ones} ones, geometry has {g.n_particles} particles")
        return self


@dataclass(frozen=True)
class Composition:
    """Particle counts per active-electrode interval.

    ``nu[k]`` particles lie between electrodes ``active[k]`` and ``active[k+1]``.
    """

    nu: tuple[int, ...]
    active: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "nu", tuple(int(v) for v in self.nu))
        object.__setattr__(self, "active", tuple(int(a) for a in self.active))
        if len(self.nu) != len(self.active) - 1:
            raise ValueError("composition length must be one less than the active count")
        if any(v < 0 for v in self.nu):
            raise ValueError("particle counts must be nonnegative")

    @property
    def n(self) -> int:
        return sum(self.nu)

    def bounds(self, g: Geometry) -> tuple[np.ndarray, np.ndarray]:
        """Per-particle open interval ``(lo, hi)`` enforced by the active electrodes."""
        lo = np.repeat(g.q[list(self.active[:-1])], self.nu)
        hi = np.repeat(g.q[list(self.active[1:])], self.nu)
        return lo, hi

    def refines(self, coarse: "Composition") -> bool:
        """True if merging intervals of ``self`` reproduces ``coarse``."""
        if not set(coarse.active) <= set(self.active):
            return False
        for k in range(len(coarse.nu)):
            a, b = coarse.active[k], coarse.active[k + 1]
            total = sum(v for v, lo in zip(self.nu, self.active) if a <= lo < b)
            if total != coarse.nu[k]:
                return False
        return True

    def to_dict(self) -> dict:
        return {"nu": list(self.nu), "active": list(self.active)}


def enumerate_roas(n: int, active: Sequence[int], n_electrodes: int | None = None) -> list[Composition]:
    """All regions of attraction for ``n`` particles under the given active electrodes."""
    if n_electrodes is None:
        n_electrodes = max(active) + 1
    act = _normalize_active(active, n_electrodes)
    return [Composition(nu, act) for nu in weak_compositions(n, len(act) - 1)]


def roa_of_pattern(p: Pattern, g: Geometry, active: Sequence[int]) -> Composition:
    """Region of attraction that contains the box of pattern ``p``."""
    p.check(g)
    act = _normalize_active(active, g.q.size)
    bits = np.array(p.bits)
    cuts = [g.electrode_cell_index(a) for a in act]
    nu = tuple(int(bits[cuts[k]:cuts[k + 1]].sum()) for k in range(len(act) - 1))
    return Composition(nu, act)


def composition_of_state(x, g: Geometry, active: Sequence[int]) -> Composition:
    """Region of attraction containing the ordered state ``x``."""
    x = np.asarray(x, dtype=float)
    act = _normalize_active(active, g.q.size)
    qa = g.q[list(act)]
    if np.any(np.isin(x, qa)):
        raise BoundaryAmbiguityError("a particle sits on an active electrode")
    counts = np.histogram(x, bins=qa)[0]
    return Composition(tuple(int(c) for c in counts), act)


def contains(comp: Composition, x, g: Geometry) -> bool:
    """Membership of a single ordered state in the region labelled by ``comp``."""
    x = np.asarray(x, dtype=float)
    if np.any(np.isin(x, g.q[list(comp.active)])):
        raise BoundaryAmbiguityError("a particle sits on an active electrode")
    return bool(contains_many(comp, x[None, :], g)[0])


def contains_many(comp: Composition, xs, g: Geometry) -> np.ndarray:
    """Vectorized membership for rows of ``xs``; unordered rows are outside."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    lo, hi = comp.bounds(g)
    inside = np.all((xs > lo) & (xs < hi), axis=1)
    if xs.shape[1] > 1:
        inside &= np.all(np.diff(xs, axis=1) > 0, axis=1)
    return inside


@dataclass(frozen=True)
class PatternBox:
    lo: np.ndarray
    hi: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains_many(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        return np.all((xs > self.lo) & (xs < self.hi), axis=1)


def pattern_box(p: Pattern, g: Geometry) -> PatternBox:
    """Hyperrectangle of states in which particle ``k`` occupies the ``k``-th marked cell."""
    p.check(g)
    edges = g.cell_edges
    idx = p.indices
    return PatternBox(lo=edges[idx], hi=edges[idx + 1])
