"""Synthesis of piecewise-constant electrode schedules.

A schedule switches electrodes on in blocks. During dynamic stage ``i`` only
the electrodes activated so far carry charge; the stage charges are chosen to
maximize the stationary probability that the particles sit in the region of
attraction that the *next* stage's active set assigns to the target pattern.
The final static control holds the pattern itself. Stage success
probabilities multiply, and each stage lasts its settling time.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .core import Geometry
from .equilibrium import initial_state, solve_fixed_point
from .roa import (
    Composition,
    Pattern,
    bounded_compositions,
    contains_many,
    pattern_box,
    roa_of_pattern,
)
from .steady import (
    NoiseParams,
    ProbEstimate,
    gaussian_ratio,
    settling_time,
    standard_normals,
    steady_covariance,
)

logger = logging.getLogger(__name__)


class InfeasiblePatternError(ValueError):
    pass


class InconsistentRefinementError(ValueError):
    pass


class TooManySequencesError(ValueError):
    pass


def derive_seed(seed: int, *labels) -> int:
    """Child seed for a named purpose.

    Labels are mapped to integers (strings through CRC-32) and used as the
    spawn key of ``numpy.random.SeedSequence(seed)``; the first 32-bit word of
    the resulting state is the child seed.
    """
    key = tuple(zlib.crc32(str(lab).encode()) if not isinstance(lab, int) else lab for lab in labels)
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


@dataclass
class DesignOptions:
    """Optimizer settings shared by every stage design.

    Charges of active electrodes are searched in log space between ``u_min``
    and ``u_max``. The objective uses ``samples`` Gaussian draws with a fixed
    seed (common random numbers); reported probabilities are re-estimated with
    ``final_samples`` fresh draws and Gibbs reweighting.
    """

    u_max: float = 50.0
    u_min: float = 1e-3
    restarts: int = 8
    restart_spread: float = 0.5
    samples: int = 20_000
    final_samples: int = 200_000
    maxfev: int = 2000
    xatol: float = 1e-4
    fatol: float = 1e-6
    surrogate: str = "mean-square"
    seed: int = 0
    max_sequences: int = 75

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StagePlan:
    """One constant piece of the schedule.

    ``target_nu`` is the region the next stage needs; it is ``None`` for the
    static stage, whose target is the pattern box.
    """

    active: tuple[int, ...]
    u: np.ndarray
    within: Composition
    target_nu: Composition | None
    x_ss: np.ndarray
    p_stage: ProbEstimate
    duration: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "active": list(self.active),
            "u": [float(v) for v in self.u],
            "within": self.within.to_dict(),
            "target_nu": None if self.target_nu is None else self.target_nu.to_dict(),
            "x_ss": [float(v) for v in self.x_ss],
            "p_stage": self.p_stage.to_dict(),
            "duration": self.duration,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StagePlan":
        tn = d.get("target_nu")
        return cls(
            active=tuple(d["active"]),
            u=np.array(d["u"], dtype=float),
            within=Composition(tuple(d["within"]["nu"]), tuple(d["within"]["active"])),
            target_nu=None if tn is None else Composition(tuple(tn["nu"]), tuple(tn["active"])),
            x_ss=np.array(d["x_ss"], dtype=float),
            p_stage=ProbEstimate(**d["p_stage"]),
            duration=float(d["duration"]),
            diagnostics=d.get("diagnostics", {}),
        )


@dataclass
class Schedule:
    geometry: Geometry
    pattern: Pattern
    sigma: float
    sequence: tuple[tuple[int, ...], ...]
    stages: list[StagePlan]
    static: StagePlan
    seed: int = 0

    @property
    def static_u(self) -> np.ndarray:
        return self.static.u

    @property
    def static_x_ss(self) -> np.ndarray:
        return self.static.x_ss

    @property
    def switch_times(self) -> np.ndarray:
        """Cumulative stage durations, ending with the final time."""
        return np.cumsum([s.duration for s in self.stages] + [self.static.duration])

    @property
    def t_final(self) -> float:
        return float(self.switch_times[-1])

    @property
    def p_total(self) -> float:
        return float(np.prod([s.p_stage.value for s in self.stages]) * self.static.p_stage.value)

    @property
    def pieces(self) -> list[StagePlan]:
        return self.stages + [self.static]

    def piece_index(self, t: float) -> int:
        """Index of the piece in force at time ``t``; the static piece persists past the end."""
        starts = np.concatenate([[0.0], self.switch_times[:-1]])
        return int(np.searchsorted(starts, t, side="right") - 1)

    def control_at(self, t: float) -> np.ndarray:
        return self.pieces[self.piece_index(t)].u

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry.to_dict(),
            "pattern": str(self.pattern),
            "sigma": self.sigma,
            "sequence": [list(b) for b in self.sequence],
            "stages": [s.to_dict() for s in self.stages],
            "static": self.static.to_dict(),
            "switch_times": [float(t) for t in self.switch_times],
            "p_total": self.p_total,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        gd = d["geometry"]
        g = Geometry.from_gaps(gd["gaps"], gd["d0"], gd["n"])
        return cls(
            geometry=g,
            pattern=Pattern.from_string(d["pattern"]),
            sigma=float(d["sigma"]),
            sequence=tuple(tuple(b) for b in d["sequence"]),
            stages=[StagePlan.from_dict(s) for s in d["stages"]],
            static=StagePlan.from_dict(d["static"]),
            seed=int(d.get("seed", 0)),
        )


# ---------------------------------------------------------------------------
# generic search over the charges of one active set


def _full_control(v, active, size):
    u = np.zeros(size)
    u[list(active)] = np.exp(v)
    return u


class _EquilibriumCache:
    """Warm-started equilibrium solves for one region, as used inside an objective."""

    def __init__(self, comp: Composition, g: Geometry):
        self.comp, self.g, self.x = comp, g, None

    def __call__(self, u):
        r = solve_fixed_point(self.comp, u, self.g, tol=1e-9, x0=self.x)
        self.x = r.x_ss
        return r.x_ss


def _nelder_mead(fun: Callable, v0, lo, hi, opts: DesignOptions):
    k = len(v0)
    v0 = np.clip(v0, lo, hi)
    simplex = [v0]
    for i in range(k):
        v = v0.copy()
        v[i] = v[i] + 0.25 if v[i] + 0.25 <= hi else v[i] - 0.25
        simplex.append(v)
    return minimize(
        fun, v0, method="Nelder-Mead",
        bounds=[(lo, hi)] * k,
        options=dict(maxfev=opts.maxfev, xatol=opts.xatol, fatol=opts.fatol,
                     initial_simplex=np.array(simplex)),
    )


def _surrogate_search(within, active, xi, g, noise, opts, variant):
    """Charges that put the equilibrium of ``within`` close to the point ``xi``."""
    lo, hi = np.log(opts.u_min), np.log(opts.u_max)
    eq = _EquilibriumCache(within, g)

    def fun(v):
        u = _full_control(v, active, g.q.size)
        try:
            x = eq(u)
        except (RuntimeError, ValueError):
            return np.inf
        if variant == "inf-norm":
            return float(np.max(np.abs(x - xi)))
        if variant == "mean-square":
            return float(np.sum((x - xi) ** 2) + np.trace(steady_covariance(x, u, g, noise)))
        raise ValueError(f"unknown surrogate variant {variant!r}")

    res = _nelder_mead(fun, np.zeros(len(active)), lo, hi, opts)
    return res.x, float(res.fun)


def _maximize_probability(within, active, prob_of, extra_starts, g, opts, label):
    """Multi-start simplex maximization of ``prob_of(x_ss, u)`` over active charges.

    The first ``opts.restarts`` runs start from unit charges and random
    log-normal perturbations of them; every point in ``extra_starts`` (log
    charges) adds one more run. Ties go to the earliest run.
    """
    lo, hi = np.log(opts.u_min), np.log(opts.u_max)
    rng = np.random.default_rng(derive_seed(opts.seed, *label, "restarts"))
    starts = [np.zeros(len(active))]
    while len(starts) < opts.restarts:
        starts.append(opts.restart_spread * rng.standard_normal(len(active)))
    starts += [np.asarray(s, dtype=float) for s in extra_starts]
    runs = []
    for start in starts:
        eq = _EquilibriumCache(within, g)

        def fun(v):
            u = _full_control(v, active, g.q.size)
            try:
                x = eq(u)
            except (RuntimeError, ValueError):
                return 1.0
            return -prob_of(x, u)

        runs.append(_nelder_mead(fun, start, lo, hi, opts))
    best = min(range(len(runs)), key=lambda i: (runs[i].fun, i))
    res = runs[best]
    diag = {
        "objective": float(-res.fun),
        "restart": best,
        "nfev": int(sum(r.nfev for r in runs)),
        "stalled": bool(res.fun >= 0.0 or not res.success),
        "restart_objectives": [float(-r.fun) for r in runs],
    }
    if diag["stalled"]:
        logger.warning("%s: optimizer stalled (objective %.4g)", label, -res.fun)
    return res.x, diag


def _finalize(within, target_nu, active, v, g, noise, opts, label, estimate):
    u = _full_control(v, active, g.q.size)
    x = solve_fixed_point(within, u, g).x_ss
    seed = derive_seed(opts.seed, label, "final")
    prob = estimate(x, u, seed)
    return StagePlan(
        active=tuple(active), u=u, within=within, target_nu=target_nu, x_ss=x,
        p_stage=prob, duration=settling_time(x, u, g),
    )


# ---------------------------------------------------------------------------
# public design operations


def check_pattern(p: Pattern, g: Geometry) -> Composition:
    p.check(g)
    comp = roa_of_pattern(p, g, range(g.q.size))
    for k, m in enumerate(comp.nu):
        if m > g.gaps[k]:
            raise InfeasiblePatternError(f"interval {k} holds {m} particles but only {g.gaps[k]} cells")
    return comp


def surrogate_static(p: Pattern, g: Geometry, noise: NoiseParams, variant: str = "inf-norm",
                     opts: DesignOptions | None = None) -> np.ndarray:
    """Static charges placing the equilibrium near the pattern's cell midpoints.

    ``variant`` is ``"inf-norm"`` (largest coordinate deviation) or
    ``"mean-square"`` (squared deviation plus the trace of the linearized
    stationary covariance).
    """
    opts = opts or DesignOptions()
    comp = check_pattern(p, g)
    xi = pattern_box(p, g).center
    v, _ = _surrogate_search(comp, comp.active, xi, g, noise, opts, variant)
    return _full_control(v, comp.active, g.q.size)


def optimize_static(p: Pattern, g: Geometry, noise: NoiseParams,
                    opts: DesignOptions | None = None, warm_start: bool = True) -> StagePlan:
    """Static charges maximizing the stationary probability of pattern ``p``.

    The equilibrium is eliminated by solving it inside the objective. Simplex
    runs start from unit charges and their perturbations; ``warm_start`` adds
    one run from the surrogate design, so it can only improve the objective.
    The returned plan carries the certified
    equilibrium, the settling time and a fresh importance-sampled probability.
    """
    opts = opts or DesignOptions()
    comp = check_pattern(p, g)
    box = pattern_box(p, g)
    active = comp.active
    label = ("static", str(p), g.gaps)
    z = standard_normals(g.n_particles, opts.samples, derive_seed(opts.seed, *label, "objective"))

    def within(xs):
        return contains_many(comp, xs, g)

    def prob_of(x, u):
        return gaussian_ratio(x, u, g, noise, box.contains_many, within, z).value

    extra = []
    if warm_start:
        extra.append(_surrogate_search(comp, active, box.center, g, noise, opts, opts.surrogate)[0])
    v, diag = _maximize_probability(comp, active, prob_of, extra, g, opts, label)

    def estimate(x, u, seed):
        zf = standard_normals(g.n_particles, opts.final_samples, seed)
        return gaussian_ratio(x, u, g, noise, box.contains_many, within, zf, reweight=True)

    plan = _finalize(comp, None, active, v, g, noise, opts, label, estimate)
    plan.diagnostics = diag
    return plan


def optimize_stage(from_nu: Composition, to_nu: Composition, active, g: Geometry,
                   noise: NoiseParams, opts: DesignOptions | None = None, xi=None) -> StagePlan:
    """Stage charges on ``from_nu.active`` maximizing the mass of ``to_nu`` inside ``from_nu``.

    ``xi`` is the point the warm-start surrogate aims the equilibrium at; by
    default the evenly spaced configuration of ``to_nu``.
    """
    opts = opts or DesignOptions()
    if not to_nu.refines(from_nu):
        raise InconsistentRefinementError(f"{to_nu} does not refine {from_nu}")
    active = tuple(sorted(active))
    if active != from_nu.active:
        raise InconsistentRefinementError(f"stage active set {active} differs from that of {from_nu}")
    label = ("stage", from_nu.nu, from_nu.active, to_nu.nu, to_nu.active)
    if xi is None:
        xi = initial_state(to_nu, g)
    xi = np.asarray(xi, dtype=float)

    def target(xs):
        return contains_many(to_nu, xs, g)

    def within(xs):
        return contains_many(from_nu, xs, g)

    if set(to_nu.active) == set(from_nu.active):
        # nothing to steer: every admissible control keeps the state in place
        v0, _ = _surrogate_search(from_nu, active, xi, g, noise, opts, opts.surrogate)
        u = _full_control(v0, active, g.q.size)
        x = solve_fixed_point(from_nu, u, g).x_ss
        return StagePlan(tuple(active), u, from_nu, to_nu, x, ProbEstimate(1.0, 0.0, "exact"),
                         settling_time(x, u, g), {"degenerate": True})

    z = standard_normals(g.n_particles, opts.samples, derive_seed(opts.seed, *label, "objective"))

    def prob_of(x, u):
        return gaussian_ratio(x, u, g, noise, target, within, z).value

    v0, _ = _surrogate_search(from_nu, active, xi, g, noise, opts, opts.surrogate)
    v, diag = _maximize_probability(from_nu, active, prob_of, [v0], g, opts, label)

    def estimate(x, u, seed):
        zf = standard_normals(g.n_particles, opts.final_samples, seed)
        return gaussian_ratio(x, u, g, noise, target, within, zf, reweight=True)

    plan = _finalize(from_nu, to_nu, active, v, g, noise, opts, label, estimate)
    plan.diagnostics = diag
    return plan


def stage_active_sets(sequence, c: int) -> list[tuple[int, ...]]:
    """Active electrode sets of the dynamic stages followed by the static one."""
    interior = sorted(e for block in sequence for e in block)
    if interior != list(range(1, c)):
        raise ValueError(f"sequence must cover interior electrodes 1..{c - 1} exactly once")
    sets, current = [], {0, c}
    for block in sequence:
        sets.append(tuple(sorted(current)))
        current |= set(block)
    sets.append(tuple(sorted(current)))
    return sets


def plan_schedule(p: Pattern, g: Geometry, noise: NoiseParams, sequence: Sequence[Sequence[int]],
                  opts: DesignOptions | None = None, _stage_cache: dict | None = None) -> Schedule:
    """Design every stage for one activation sequence.

    ``sequence`` lists blocks of interior electrodes; block ``i`` switches on
    at the start of stage ``i + 1`` and the last block at the static stage, so
    there are ``len(sequence)`` dynamic stages.
    """
    opts = opts or DesignOptions()
    check_pattern(p, g)
    sequence = tuple(tuple(sorted(b)) for b in sequence)
    sets = stage_active_sets(sequence, g.c) if sequence else [tuple(range(g.c + 1))]
    xi = pattern_box(p, g).center
    cache = {} if _stage_cache is None else _stage_cache
    stages = []
    within = Composition((g.n_particles,), (0, g.c))
    for i in range(len(sets) - 1):
        target = roa_of_pattern(p, g, sets[i + 1])
        key = (within, target)
        if key not in cache:
            cache[key] = optimize_stage(within, target, sets[i], g, noise, opts, xi=xi)
        stages.append(cache[key])
        within = target
    key = ("static", str(p))
    if key not in cache:
        cache[key] = optimize_static(p, g, noise, opts)
    return Schedule(g, p, noise.sigma, sequence, stages, cache[key], seed=opts.seed)


def ordered_set_partitions(items: Sequence[int]) -> list[tuple[tuple[int, ...], ...]]:
    """Every ordered partition of ``items`` into nonempty blocks."""
    items = tuple(sorted(items))
    if not items:
        return [()]
    out = []
    for size in range(1, len(items) + 1):
        for first in combinations(items, size):
            rest = tuple(i for i in items if i not in first)
            for tail in ordered_set_partitions(rest):
                out.append((first,) + tail)
    return out


@lru_cache(maxsize=None)
def fubini(m: int) -> int:
    """Number of ordered set partitions of an ``m``-element set."""
    from math import comb

    if m == 0:
        return 1
    return sum(comb(m, k) * fubini(m - k) for k in range(1, m + 1))


def search_activation_sequences(p: Pattern, g: Geometry, noise: NoiseParams,
                                opts: DesignOptions | None = None):
    """Plan every activation sequence and return the best with the full table.

    Ties in total probability go to fewer stages, then to the
    lexicographically smaller sequence.
    """
    opts = opts or DesignOptions()
    interior = list(range(1, g.c))
    count = fubini(len(interior))
    if count > opts.max_sequences:
        raise TooManySequencesError(f"{count} sequences exceed the cap of {opts.max_sequences}")
    cache: dict = {}
    table = []
    for seq in ordered_set_partitions(interior):
        sched = plan_schedule(p, g, noise, seq, opts, _stage_cache=cache)
        table.append((seq, sched.p_total, sched))
    table.sort(key=lambda row: (-row[1], len(row[0]), row[0]))
    return table[0][2], [(seq, p_tot) for seq, p_tot, _ in table]


def optimize_electrodes(p: Pattern, base: Geometry, n_min: int, noise: NoiseParams,
                        opts: DesignOptions | None = None):
    """Search integer electrode gaps (each at least ``n_min`` cells) with the static design.

    Returns ``(gaps, plan, table)`` where ``table`` lists every candidate with
    its probability, or ``None`` for candidates on which the pattern is infeasible.
    """
    opts = opts or DesignOptions()
    c = base.c
    if c * n_min > base.n_cells:
        raise InfeasiblePatternError(f"{c} gaps of at least {n_min} cells exceed {base.n_cells} cells")
    table, best = [], None
    for gaps in bounded_compositions(base.n_cells, c, n_min):
        g = Geometry.from_gaps(gaps, base.d0, base.n_particles)
        try:
            plan = optimize_static(p, g, noise, opts)
        except InfeasiblePatternError:
            table.append((gaps, None))
            continue
        table.append((gaps, plan.p_stage.value))
        if best is None or plan.p_stage.value > best[1].p_stage.value:
            best = (gaps, plan)
    if best is None:
        raise InfeasiblePatternError("no candidate geometry admits the pattern")
    return best[0], best[1], table
