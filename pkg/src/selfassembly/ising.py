"""Discrete lattice model: particles hop between grid cells.

Each state places the ``n`` particles at the midpoints of ``n`` distinct
cells. A particle hops to an adjacent empty cell at an Arrhenius rate set by a
symmetric barrier, so the chain is reversible with respect to the Gibbs
weights ``exp(-2 V / sigma**2)``. Hops across an active electrode are
forbidden, which splits the generator into one block per region of attraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, expm_multiply, spsolve
from scipy.special import logsumexp

from .core import Geometry, SingularConfigurationError, active_set, energy_many
from .roa import Composition, Pattern
from .steady import NoiseParams

MAX_CELLS = 20
DENSE_BLOCK_LIMIT = 4000
GTH_BLOCK_LIMIT = 2000


class StateSpaceTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteStateSpace:
    """All placements of ``n`` particles in the cells of a geometry.

    ``cells[k]`` lists the occupied cells of state ``k`` in ascending order;
    states are in lexicographic order of these lists.
    """

    geometry: Geometry
    cells: np.ndarray
    codes: np.ndarray

    @property
    def size(self) -> int:
        return self.cells.shape[0]

    @property
    def positions(self) -> np.ndarray:
        """Particle coordinates (cell midpoints), one row per state."""
        return self.geometry.cell_midpoints[self.cells]

    def index_of(self, cells) -> np.ndarray:
        """State indices of rows of occupied-cell lists."""
        cells = np.atleast_2d(np.asarray(cells, dtype=np.int64))
        code = np.sum(np.int64(1) << cells, axis=1)
        order = np.argsort(self.codes)
        pos = np.searchsorted(self.codes, code, sorter=order)
        pos = np.minimum(pos, self.size - 1)
        idx = order[pos]
        if np.any(self.codes[idx] != code):
            raise KeyError("cell list is not a state of this space")
        return idx

    def pattern_index(self, p: Pattern) -> int:
        p.check(self.geometry)
        return int(self.index_of(p.indices[None, :])[0])

    def compositions(self, active) -> np.ndarray:
        """Particle count per active interval for every state, shape ``(S, len(active) - 1)``."""
        cuts = np.array([self.geometry.electrode_cell_index(a) for a in sorted(active)])
        interval = np.searchsorted(cuts, self.cells, side="right") - 1
        out = np.zeros((self.size, cuts.size - 1), dtype=int)
        for k in range(cuts.size - 1):
            out[:, k] = np.sum(interval == k, axis=1)
        return out

    def block(self, comp: Composition) -> np.ndarray:
        """Indices of the states lying in region ``comp``."""
        return np.flatnonzero(np.all(self.compositions(comp.active) == np.array(comp.nu), axis=1))


def enumerate_states(n: int, n_cells: int, g: Geometry, max_cells: int = MAX_CELLS) -> DiscreteStateSpace:
    """Every placement of ``n`` particles in ``n_cells`` cells.

    Raises
    ------
    StateSpaceTooLargeError
        If ``n_cells`` exceeds ``max_cells``.
    """
    if n_cells > max_cells:
        raise StateSpaceTooLargeError(f"{n_cells} cells exceed the enumeration cap of {max_cells}")
    if not 0 < n < n_cells:
        raise ValueError("need 0 < n < n_cells")
    if g.n_cells != n_cells or g.n_particles != n:
        raise ValueError("geometry does not match the requested state space")
    cells = np.array(list(combinations(range(n_cells), n)), dtype=np.int64).reshape(comb(n_cells, n), n)
    codes = np.sum(np.int64(1) << cells, axis=1)
    return DiscreteStateSpace(g, cells, codes)


@dataclass(frozen=True)
class Generator:
    """Sparse rate matrix ``L`` of the master equation ``dpi/dt = L pi``.

    ``L[i, j]`` is the rate of jumping from state ``j`` to state ``i``; the
    diagonal holds minus the column sums.
    """

    matrix: sp.csc_matrix
    energies: np.ndarray
    beta: float
    active: tuple[int, ...]

    def triplets(self) -> np.ndarray:
        coo = self.matrix.tocoo()
        return np.column_stack([coo.row, coo.col, coo.data])

    def export_triplets(self, path) -> None:
        """Write ``row col rate`` lines (zero-based indices)."""
        coo = self.matrix.tocoo()
        with open(path, "w") as fh:
            fh.write("# row col rate\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {v:.17g}\n")


def state_energies(ss: DiscreteStateSpace, u, g: Geometry) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    charged = u != 0
    if np.any(np.isclose(g.cell_midpoints[:, None], g.q[None, charged], rtol=0, atol=1e-12)):
        raise SingularConfigurationError("a cell midpoint coincides with a charged electrode")
    return energy_many(ss.positions, u, g)


def build_generator(
    ss: DiscreteStateSpace, u, g: Geometry, noise: NoiseParams, attempt_rate: float = 1.0
) -> Generator:
    """Rate matrix for nearest-cell hops with symmetric barriers.

    The barrier of a hop is the largest of the two endpoint energies and the
    energy with the hopping particle on the shared cell edge. The rate out of
    state ``j`` is ``attempt_rate * exp(-beta * (barrier - V_j))``. Hops
    across an active electrode have infinite barrier.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != g.q.shape or np.any(u < 0):
        raise ValueError("control must be nonnegative with one entry per electrode")
    beta = noise.beta
    v = state_energies(ss, u, g)
    edges = g.cell_edges
    act = active_set(u)
    blocked_edges = {g.electrode_cell_index(a) for a in act}
    occupied = np.zeros((ss.size, g.n_cells + 2), dtype=bool)  # padded by one cell on each side
    np.put_along_axis(occupied, ss.cells + 1, True, axis=1)
    rows, cols, vals = [], [], []
    pos = ss.positions
    for k in range(ss.cells.shape[1]):
        for step in (-1, 1):
            src_cell = ss.cells[:, k]
            dst_cell = src_cell + step
            edge = np.maximum(src_cell, dst_cell)
            ok = (dst_cell >= 0) & (dst_cell < g.n_cells)
            ok &= ~occupied[np.arange(ss.size), dst_cell + 1]
            ok &= ~np.isin(edge, list(blocked_edges))
            j = np.flatnonzero(ok)
            if j.size == 0:
                continue
            new_cells = ss.cells[j].copy()
            new_cells[:, k] = dst_cell[j]
            i = ss.index_of(new_cells)
            mid = pos[j].copy()
            mid[:, k] = edges[edge[j]]
            barrier = np.maximum(np.maximum(v[i], v[j]), energy_many(mid, u, g))
            rows.append(i)
            cols.append(j)
            vals.append(attempt_rate * np.exp(-beta * (barrier - v[j])))
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=int)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=int)
    vals = np.concatenate(vals) if vals else np.empty(0)
    off = sp.csc_matrix((vals, (rows, cols)), shape=(ss.size, ss.size))
    out = np.asarray(off.sum(axis=0)).ravel()
    mat = (off - sp.diags(out)).tocsc()
    return Generator(mat, v, beta, act)


def integrate_master(pi0, gen: Generator, t: float) -> np.ndarray:
    """Probability vector at time ``t`` from ``pi0`` via the action of the matrix exponential."""
    pi0 = np.asarray(pi0, dtype=float)
    if pi0.shape != (gen.matrix.shape[0],):
        raise ValueError("probability vector does not match the generator")
    if np.any(pi0 < 0) or abs(pi0.sum() - 1.0) > 1e-10:
        raise ValueError("initial distribution must be nonnegative and sum to one")
    if t == 0:
        return pi0.copy()
    pi = expm_multiply(gen.matrix * float(t), pi0)
    return np.maximum(pi, 0.0)


def _as_index(ss_size: int, subset) -> np.ndarray:
    subset = np.asarray(subset)
    if subset.dtype == bool:
        return np.flatnonzero(subset)
    return subset.astype(int).ravel()


def gibbs_conditional(ss: DiscreteStateSpace, u, g: Geometry, noise: NoiseParams, region, within) -> float:
    """Gibbs mass of ``region`` relative to ``within`` (index arrays or boolean masks)."""
    within = _as_index(ss.size, within)
    region = _as_index(ss.size, region)
    if within.size == 0:
        raise ValueError("conditioning set is empty")
    if not np.all(np.isin(region, within)):
        raise ValueError("region must be a subset of the conditioning set")
    logw = -noise.beta * state_energies(ss, u, g)
    if region.size == 0:
        return 0.0
    return float(np.exp(logsumexp(logw[region]) - logsumexp(logw[within])))


def gibbs_block(gen: Generator, block) -> np.ndarray:
    """Normalized Gibbs weights over the states of ``block``."""
    block = np.asarray(block)
    logw = -gen.beta * gen.energies[block]
    return np.exp(logw - logsumexp(logw))


class DiscreteSettling(NamedTuple):
    time: float
    degenerate: bool


def block_spectrum_gap(gen: Generator, block) -> float:
    """Magnitude of the smallest nonzero eigenvalue of the generator restricted to ``block``."""
    block = np.asarray(block)
    a = gen.matrix[block][:, block].tocoo()
    # reversibility makes the similar matrix with entries sqrt(L_ij L_ji) symmetric;
    # forming it this way avoids the tiny Gibbs weights themselves
    lt = sp.csr_matrix((a.data, (a.col, a.row)), shape=a.shape)
    sym = sp.csr_matrix(a).multiply(lt).sqrt()
    sym = sym - sp.diags(sym.diagonal()) + sp.diags(a.tocsr().diagonal())
    if block.size <= DENSE_BLOCK_LIMIT:
        lam = scipy.linalg.eigvalsh(sym.toarray())
        return float(-lam[-2])
    lam = eigsh(-sym.tocsc(), k=2, sigma=-1.0, which="LM", return_eigenvectors=False)
    return float(np.sort(lam)[1])


def discrete_settling(gen: Generator, ss: DiscreteStateSpace, roa: Composition) -> DiscreteSettling:
    """Five over the slowest relaxation rate of the region's block.

    A single-state block has no relaxation mode; the result is then zero with
    ``degenerate`` set.
    """
    block = ss.block(roa)
    if block.size == 0:
        raise ValueError(f"no states in region {roa.nu}")
    if block.size == 1:
        return DiscreteSettling(0.0, True)
    return DiscreteSettling(5.0 / block_spectrum_gap(gen, block), False)


def _gth(rates: np.ndarray) -> np.ndarray:
    """Stationary vector by Grassmann-Taksar-Heyman elimination.

    ``rates[i, j]`` is the rate from ``i`` to ``j``; the diagonal is ignored.
    Only additions, multiplications and divisions of nonnegative numbers
    occur, so small stationary masses keep their relative accuracy even when
    the chain is nearly decomposable.
    """
    r = np.array(rates, dtype=float)
    np.fill_diagonal(r, 0.0)
    n = r.shape[0]
    buf = np.empty_like(r)
    for k in range(n - 1, 0, -1):
        s = r[k, :k].sum()
        if not s > 0:
            raise np.linalg.LinAlgError(
                "block is reducible in floating point; transition rates underflowed at this noise level"
            )
        col = r[:k, k]
        col /= s
        np.multiply.outer(col, r[k, :k], out=buf[:k, :k])
        r[:k, :k] += buf[:k, :k]
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ r[:k, k]
    return pi / pi.sum()


def stationary_block(gen: Generator, block) -> np.ndarray:
    """Stationary distribution of the generator restricted to ``block``.

    Blocks up to :data:`GTH_BLOCK_LIMIT` states use GTH elimination, which
    stays accurate for the metastable traps of small noise. Larger blocks use
    a sparse direct solve with one balance equation replaced by the
    normalization condition.
    """
    block = np.asarray(block)
    a = gen.matrix[block][:, block]
    if block.size <= GTH_BLOCK_LIMIT:
        return _gth(a.T.toarray())
    a = a.tolil()
    a[-1, :] = 1.0
    rhs = np.zeros(block.size)
    rhs[-1] = 1.0
    return spsolve(a.tocsc(), rhs)
