"""Forward simulation of designed schedules.

Continuous trials integrate the overdamped Langevin equation
``dx = f(x, u(t)) dt + sigma dW`` by Euler-Maruyama. A step that would
reorder particles or push one across an active electrode is split in two
with a Brownian-bridge midpoint and retried, down to 1/1024 of the nominal
step; so is a step whose drift alone would cover more than half the distance
to a neighbour or active electrode. Discrete trials run the Gillespie algorithm on the hopping chain.

Trials are grouped into fixed blocks of :data:`BLOCK_SIZE`; block ``b`` draws
from its own Philox stream keyed by ``(seed, b)``, so results do not depend on
how blocks are scheduled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import Geometry, active_set, force_many
from .design import Schedule
from .ising import DiscreteStateSpace, Generator, build_generator, discrete_settling, enumerate_states
from .roa import Pattern, pattern_box
from .steady import NoiseParams, ProbEstimate

BLOCK_SIZE = 100
MAX_SAMPLES = 10_000
FLOOR_DIVISOR = 1024
DRIFT_FRACTION = 0.5


class StepFloorError(RuntimeError):
    """Step halving reached the floor without finding an admissible step."""

    def __init__(self, message, t, x):
        super().__init__(f"{message} at t={t:.6g}, x={np.array2string(np.asarray(x), precision=6)}")
        self.t = t
        self.x = np.asarray(x)


@dataclass
class Trajectory:
    """Sampled path with the schedule piece in force at each sample."""

    times: np.ndarray
    states: np.ndarray
    stages: np.ndarray
    events: np.ndarray
    indices: np.ndarray | None = field(default=None, repr=False)

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{k + 1}" for k in range(n)] + ["stage"])
            for t, x, s in zip(self.times, self.states, self.stages):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [int(s)])


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _pieces(sched: Schedule, durations=None, t_end: float | None = None):
    """``(start, stop, u, index)`` for every piece, the last one extended to ``t_end``."""
    if durations is None:
        durations = [p.duration for p in sched.pieces]
    stops = np.cumsum(durations)
    starts = np.concatenate([[0.0], stops[:-1]])
    if t_end is not None:
        stops = stops.copy()
        stops[-1] = max(stops[-1], t_end)
    return [(float(a), float(b), p.u, k) for k, (a, b, p) in enumerate(zip(starts, stops, sched.pieces))]


def _interval_bounds(xs, g: Geometry, u):
    """Per-particle bounds set by the active electrodes around the current positions."""
    qa = g.q[list(active_set(u))]
    idx = np.searchsorted(qa, xs) - 1
    if np.any(idx < 0) or np.any(idx >= qa.size - 1) or np.any(np.isin(xs, qa)):
        raise ValueError("state lies outside the segment or on an active electrode")
    return qa[idx], qa[idx + 1]


def _admissible(xs, lo, hi):
    ok = np.all((xs > lo) & (xs < hi), axis=-1)
    if xs.shape[-1] > 1:
        ok &= np.all(np.diff(xs, axis=-1) > 0, axis=-1)
    return ok


def _clearance(xs, lo, hi):
    """Distance from each particle to its nearest neighbour or active electrode."""
    c = np.minimum(xs - lo, hi - xs)
    if xs.shape[-1] > 1:
        gaps = np.diff(xs, axis=-1)
        c[..., 1:] = np.minimum(c[..., 1:], gaps)
        c[..., :-1] = np.minimum(c[..., :-1], gaps)
    return c


def _accept(xs, drift, prop, lo, hi):
    """Proposal is admissible and no drift displacement exceeds half the clearance."""
    return _admissible(prop, lo, hi) & np.all(np.abs(drift) <= DRIFT_FRACTION * _clearance(xs, lo, hi), axis=-1)


def _bridge_step(x, dw, h, u, g, sigma, lo, hi, h_floor, rng, t):
    """Euler-Maruyama step with Brownian-bridge refinement on rejection."""
    drift = h * force_many(x, u, g)[0]
    prop = x + drift + sigma * dw
    if _accept(x, drift, prop, lo, hi):
        return prop
    half = 0.5 * h
    if half < h_floor:
        # at the floor only admissibility is enforced
        if _admissible(prop, lo, hi):
            return prop
        raise StepFloorError("no admissible step", t, x)
    w1 = 0.5 * dw + np.sqrt(half / 2.0) * rng.standard_normal(x.size)
    mid = _bridge_step(x, w1, half, u, g, sigma, lo, hi, h_floor, rng, t)
    return _bridge_step(mid, dw - w1, half, u, g, sigma, lo, hi, h_floor, rng, t + half)


def _integrate(xs, pieces, g: Geometry, sigma: float, dt: float, rng, record_every: int = 0):
    """Advance the rows of ``xs`` through every piece; optionally record row 0."""
    xs = np.array(xs, dtype=float)
    h_floor = dt / FLOOR_DIVISOR
    rec_t, rec_x, rec_s = [], [], []
    for start, stop, u, k in pieces:
        lo, hi = _interval_bounds(xs, g, u)
        n_steps = int(np.ceil((stop - start) / dt - 1e-9))
        if record_every:
            rec_t.append(start)
            rec_x.append(xs[0].copy())
            rec_s.append(k)
        for s in range(n_steps):
            t = start + s * dt
            h = min(dt, stop - t)
            dw = np.sqrt(h) * rng.standard_normal(xs.shape)
            drift = h * force_many(xs, u, g)
            prop = xs + drift + sigma * dw
            bad = np.flatnonzero(~_accept(xs, drift, prop, lo, hi))
            for r in bad:
                prop[r] = _bridge_step(xs[r], dw[r], h, u, g, sigma, lo[r], hi[r], h_floor, rng, t)
            xs = prop
            if record_every and ((s + 1) % record_every == 0 or s == n_steps - 1):
                rec_t.append(t + h)
                rec_x.append(xs[0].copy())
                rec_s.append(k)
    return xs, (np.array(rec_t), np.array(rec_x), np.array(rec_s, dtype=int))


def simulate_sde(
    x0, sched: Schedule, noise: NoiseParams | float, dt: float = 1e-4, seed: int = 0,
    t_end: float | None = None, max_samples: int = MAX_SAMPLES,
) -> Trajectory:
    """One Euler-Maruyama path under the schedule.

    Parameters
    ----------
    x0 : array_like
        Ordered initial positions strictly inside the segment.
    noise : NoiseParams or float
        Noise level; a bare float may be zero, giving the deterministic motion.
    dt : float
        Nominal step; steps are shortened to land on switch instants.
    t_end : float, optional
        Stop time; defaults to the schedule's final time. The static piece
        continues past it.
    max_samples : int
        Output is decimated to about this many samples.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    sigma = noise.sigma if isinstance(noise, NoiseParams) else float(noise)
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    g = sched.geometry
    pieces = _pieces(sched, t_end=t_end)
    if t_end is not None and t_end < pieces[-1][1]:
        pieces = [(a, min(b, t_end), u, k) for a, b, u, k in pieces if a < t_end]
    total = sum(int(np.ceil((b - a) / dt - 1e-9)) for a, b, _, _ in pieces)
    every = max(1, int(np.ceil(total / max_samples)))
    rng = block_rng(seed, 0)
    _, (t, x, s) = _integrate(np.asarray(x0, dtype=float)[None, :], pieces, g, sigma, dt, rng, every)
    return Trajectory(t, x, s, np.array([p[0] for p in pieces[1:]]))


def uniform_initial_states(g: Geometry, m: int, rng, margin: float | None = None) -> np.ndarray:
    """Sorted uniform draws on the segment.

    Draws with two particles, or a particle and an electrode, closer than
    ``margin`` (default 5% of a cell) are redrawn; such near-collisions need
    steps far below the integration floor to resolve.
    """
    if margin is None:
        margin = 0.05 * g.d0

    def bad_rows(xs):
        gaps = np.diff(xs, axis=1) if xs.shape[1] > 1 else np.full((xs.shape[0], 1), np.inf)
        near_q = np.min(np.abs(xs[:, :, None] - g.q[None, None, :]), axis=(1, 2))
        return (np.min(gaps, axis=1) < margin) | (near_q < margin)

    xs = np.sort(rng.uniform(0.0, g.length, (m, g.n_particles)), axis=1)
    while True:
        bad = bad_rows(xs)
        if not bad.any():
            return xs
        xs[bad] = np.sort(rng.uniform(0.0, g.length, (int(bad.sum()), g.n_particles)), axis=1)


def _block_sizes(trials: int) -> list[int]:
    sizes = [BLOCK_SIZE] * (trials // BLOCK_SIZE)
    if trials % BLOCK_SIZE:
        sizes.append(trials % BLOCK_SIZE)
    return sizes


def simulate_ssa(
    z0: int, sched: Schedule, ss: DiscreteStateSpace, noise: NoiseParams, seed: int = 0,
    durations=None, generators: list[Generator] | None = None, rng=None,
) -> Trajectory:
    """Gillespie path of the hopping chain under the schedule.

    Rates are rebuilt at each switch. ``durations`` replaces the schedule's
    piece durations (for example with discrete settling times).
    """
    if not 0 <= z0 < ss.size:
        raise ValueError("initial state index out of range")
    g = sched.geometry
    if generators is None:
        generators = [build_generator(ss, p.u, g, noise) for p in sched.pieces]
    if rng is None:
        rng = block_rng(seed, 0)
    z = int(z0)
    times, idx, stages = [0.0], [z], [0]
    pieces = _pieces(sched, durations)
    for start, stop, _, k in pieces:
        mat = generators[k].matrix
        t = start
        if k > 0:
            times.append(start)
            idx.append(z)
            stages.append(k)
        while True:
            lo, hi = mat.indptr[z], mat.indptr[z + 1]
            rows, rates = mat.indices[lo:hi], mat.data[lo:hi]
            keep = rows != z
            rows, rates = rows[keep], rates[keep]
            total = rates.sum()
            if total <= 0:
                break
            t += rng.exponential(1.0 / total)
            if t >= stop:
                break
            z = int(rows[np.searchsorted(np.cumsum(rates), rng.uniform(0.0, total), side="right").clip(max=rows.size - 1)])
            times.append(t)
            idx.append(z)
            stages.append(k)
    times.append(pieces[-1][1])
    idx.append(z)
    stages.append(pieces[-1][3])
    idx = np.array(idx)
    return Trajectory(np.array(times), ss.positions[idx], np.array(stages), np.array([p[0] for p in pieces[1:]]), idx)


def discrete_durations(sched: Schedule, ss: DiscreteStateSpace, noise: NoiseParams,
                       generators: list[Generator] | None = None) -> list[float]:
    """Discrete settling time of every piece in the region it starts from."""
    g = sched.geometry
    if generators is None:
        generators = [build_generator(ss, p.u, g, noise) for p in sched.pieces]
    return [discrete_settling(gen, ss, p.within).time for gen, p in zip(generators, sched.pieces)]


def estimate_success(
    sched: Schedule, p: Pattern, model: str = "continuous", trials: int = 2000, seed: int = 0,
    noise: NoiseParams | None = None, dt: float = 1e-4, ss: DiscreteStateSpace | None = None,
    durations=None,
) -> ProbEstimate:
    """Fraction of trials that end in the pattern, with its binomial standard error.

    Continuous trials start uniformly on the segment and succeed if the state
    at the final time lies in the pattern box. Discrete trials start from a
    uniformly random occupancy and succeed if they end exactly on the pattern;
    their piece durations default to the discrete settling times.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    noise = noise or NoiseParams(sched.sigma)
    g = sched.geometry
    hits = 0
    if model == "continuous":
        box = pattern_box(p, g)
        pieces = _pieces(sched, durations)
        for b, m in enumerate(_block_sizes(trials)):
            rng = block_rng(seed, b)
            xs, _ = _integrate(uniform_initial_states(g, m, rng), pieces, g, noise.sigma, dt, rng)
            hits += int(box.contains_many(xs).sum())
        method = "continuous-sde"
    elif model == "discrete":
        if ss is None:
            ss = enumerate_states(g.n_particles, g.n_cells, g)
        gens = [build_generator(ss, piece.u, g, noise) for piece in sched.pieces]
        if durations is None:
            durations = discrete_durations(sched, ss, noise, gens)
        target = ss.pattern_index(p)
        for b, m in enumerate(_block_sizes(trials)):
            rng = block_rng(seed, b)
            for z0 in rng.integers(0, ss.size, m):
                traj = simulate_ssa(int(z0), sched, ss, noise, durations=durations, generators=gens, rng=rng)
                hits += int(traj.indices[-1] == target)
        method = "discrete-ssa"
    else:
        raise ValueError(f"unknown model {model!r}")
    value = hits / trials
    return ProbEstimate(value, float(np.sqrt(value * (1 - value) / trials)), method)
