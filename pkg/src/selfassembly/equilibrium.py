"""Stable equilibria inside a region of attraction.

Two independent solvers are provided. :func:`solve_fixed_point` iterates the
map whose ``k``-th component places particle ``k`` at the zero of its own force
with every other particle frozen; the map is a contraction on each region, so
the iteration converges to the unique equilibrium there.
:func:`solve_gradient_flow` integrates the deterministic overdamped motion
until the forces vanish.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import Geometry, active_set, energy, force, gershgorin_lower_bound, hessian
from .roa import Composition, contains_many


RESIDUAL_RTOL = 1e-8


class NoBracketError(RuntimeError):
    """A particle's scalar force equation has no sign change on its bracket."""


class MaxIterationError(RuntimeError):
    pass


class GradientFlowTimeout(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass
class EquilibriumResult:
    x_ss: np.ndarray
    iterations: int
    residual: float
    min_eig: float
    steps: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    times: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    energies: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)


class StabilityReport(NamedTuple):
    is_stable: bool
    min_eig: float
    gershgorin_bound: float


def force_scale(x, u, g: Geometry) -> float:
    """Largest sum of absolute force contributions on a single particle.

    Used to turn absolute force residuals into relative ones.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, np.inf)
    s = np.sum(1.0 / d**2, axis=1)
    charged = u != 0
    s += np.sum(np.abs(u[charged]) / (x[:, None] - g.q[None, charged]) ** 2, axis=1)
    return float(max(1.0, s.max()))


def initial_state(comp: Composition, g: Geometry) -> np.ndarray:
    """Particles evenly spaced strictly inside their active intervals."""
    parts = []
    for k, m in enumerate(comp.nu):
        if m == 0:
            continue
        a, b = g.q[comp.active[k]], g.q[comp.active[k + 1]]
        parts.append(a + (b - a) * np.arange(1, m + 1) / (m + 1))
    return np.concatenate(parts) if parts else np.empty(0)


def _check_admissible(comp: Composition, u, g: Geometry):
    u = np.asarray(u, dtype=float)
    if u.shape != g.q.shape:
        raise ValueError("control dimension does not match the electrode count")
    if comp.n != g.n_particles:
        raise ValueError("composition does not account for every particle")
    if active_set(u) != comp.active:
        raise ValueError(
            f"control is active on {active_set(u)} but the region is defined by {comp.active}"
        )
    if np.any(u < 0):
        raise ValueError("negative electrode charges are not supported")
    return u


def _component_forces(y, x, u_c, q_c):
    """Force on particle ``k`` at trial position ``y[k]``, others frozen at ``x``.

    Returns the force and its (negative) derivative with respect to ``y``.
    """
    d = y[:, None] - x[None, :]
    np.fill_diagonal(d, np.inf)
    ad = np.abs(d)
    f = np.sum(np.sign(d) / ad**2, axis=1)
    df = -np.sum(2.0 / ad**3, axis=1)
    dq = y[:, None] - q_c[None, :]
    adq = np.abs(dq)
    f += np.sum(u_c * np.sign(dq) / adq**2, axis=1)
    df -= np.sum(2.0 * u_c / adq**3, axis=1)
    return f, df


def _gmap(x, lo, hi, u_c, q_c, xtol=1e-13, maxiter=200):
    """One application of the per-particle root map, vectorized over particles.

    Each component is found by Newton's method safeguarded with bisection on
    the bracket formed by the neighbouring particles and active electrodes.
    """
    n = x.size
    a = lo.copy()
    b = hi.copy()
    if n > 1:
        a[1:] = np.maximum(a[1:], x[:-1])
        b[:-1] = np.minimum(b[:-1], x[1:])
    width = b - a
    probe_lo = a + 1e-9 * width
    probe_hi = b - 1e-9 * width
    f_lo, _ = _component_forces(probe_lo, x, u_c, q_c)
    f_hi, _ = _component_forces(probe_hi, x, u_c, q_c)
    bad = (f_lo <= 0) | (f_hi >= 0)
    if np.any(bad):
        raise NoBracketError(f"no sign change for particles {np.flatnonzero(bad).tolist()}")
    y = np.clip(x, probe_lo, probe_hi)
    for _ in range(maxiter):
        f, df = _component_forces(y, x, u_c, q_c)
        # force is decreasing in y: positive force means the root lies to the right
        pos = f > 0
        a = np.where(pos, y, a)
        b = np.where(pos, b, y)
        step = -f / df
        y_new = y + step
        outside = (y_new < a) | (y_new > b) | ~np.isfinite(y_new)
        y_new = np.where(outside, 0.5 * (a + b), y_new)
        done = np.abs(y_new - y) <= xtol * np.maximum(1.0, np.abs(y))
        y = y_new
        if np.all(done):
            break
    return y


def solve_fixed_point(
    comp: Composition,
    u,
    g: Geometry,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    x0=None,
) -> EquilibriumResult:
    """Equilibrium of region ``comp`` under charges ``u`` by contraction-map iteration.

    Parameters
    ----------
    comp : Composition
        Region of attraction; its active set must equal the positive entries of ``u``.
    u : array_like
        Electrode charges.
    g : Geometry
    tol : float
        Stop once the max-norm change between successive iterates drops below ``tol``.
    max_iter : int
    x0 : array_like, optional
        Starting state inside the region; evenly spaced particles by default.

    Returns
    -------
    EquilibriumResult
        ``steps`` holds the max-norm change of every iteration.
    """
    u = _check_admissible(comp, u, g)
    lo, hi = comp.bounds(g)
    charged = u > 0
    u_c, q_c = u[charged], g.q[charged]
    x = initial_state(comp, g) if x0 is None else np.array(x0, dtype=float)
    if not contains_many(comp, x[None, :], g)[0]:
        raise ValueError("starting state is not inside the requested region")
    steps = []
    for it in range(1, max_iter + 1):
        x_new = _gmap(x, lo, hi, u_c, q_c)
        step = float(np.max(np.abs(x_new - x)))
        steps.append(step)
        x = x_new
        if step < tol:
            break
    else:
        raise MaxIterationError(f"no convergence after {max_iter} iterations (last step {step:.3e})")
    x = _newton_polish(x, u, g, comp)
    residual = float(np.max(np.abs(force(x, u, g))))
    min_eig = float(np.linalg.eigvalsh(hessian(x, u, g))[0])
    return EquilibriumResult(x, it, residual, min_eig, steps=np.array(steps))


def _newton_polish(x, u, g, comp, iters: int = 3):
    """A few full Newton steps on the force, kept only while they stay inside and reduce it."""
    f = force(x, u, g)
    for _ in range(iters):
        y = x + np.linalg.solve(hessian(x, u, g), f)
        if not contains_many(comp, y[None, :], g)[0]:
            break
        fy = force(y, u, g)
        if np.max(np.abs(fy)) >= np.max(np.abs(f)):
            break
        x, f = y, fy
    return x


def is_certified(result: EquilibriumResult, u, g: Geometry, rtol: float = RESIDUAL_RTOL) -> bool:
    """Residual below ``rtol`` times the force scale and a positive definite Hessian."""
    return result.residual <= rtol * force_scale(result.x_ss, u, g) and result.min_eig > 0


def solve_gradient_flow(
    x0,
    u,
    g: Geometry,
    t_max: float = 1e3,
    tol: float = 1e-10,
    dt0: float = 1e-4,
    comp: Composition | None = None,
) -> EquilibriumResult:
    """Relax ``x0`` along the deterministic overdamped motion until forces vanish.

    Explicit Euler with adaptive steps: a step is rejected and halved if it
    leaves the starting region or raises the energy; after ten consecutive
    accepted steps the step size doubles. Convergence is declared when the
    max-norm force drops below ``tol`` times :func:`force_scale`.
    """
    from .roa import composition_of_state

    u = np.asarray(u, dtype=float)
    x = np.array(x0, dtype=float)
    if comp is None:
        comp = composition_of_state(x, g, active_set(u))
    _check_admissible(comp, u, g)
    if not contains_many(comp, x[None, :], g)[0]:
        raise ValueError("starting state is not inside the requested region")

    t, dt, streak, it = 0.0, dt0, 0, 0
    e = energy(x, u, g)
    f = force(x, u, g)
    times, energies = [t], [e]
    while True:
        res = float(np.max(np.abs(f)))
        if res <= tol * force_scale(x, u, g):
            break
        if t >= t_max:
            raise GradientFlowTimeout(f"gradient flow did not converge by t={t_max}", res)
        x_new = x + dt * f
        ok = contains_many(comp, x_new[None, :], g)[0]
        if ok:
            e_new = energy(x_new, u, g)
            f_new = force(x_new, u, g)
            # the force norm decays along the exact flow (convex region); checking it
            # catches step-size instability long after energy changes drop below round-off
            ok = e_new <= e + 1e-14 * abs(e) and f_new @ f_new <= f @ f
        if not ok:
            dt *= 0.5
            streak = 0
            if dt < 1e-300:
                raise GradientFlowTimeout("step size underflow", res)
            continue
        x, e, f, t = x_new, e_new, f_new, t + dt
        it += 1
        times.append(t)
        energies.append(e)
        streak += 1
        if streak >= 10:
            dt *= 2.0
            streak = 0
    min_eig = float(np.linalg.eigvalsh(hessian(x, u, g))[0])
    return EquilibriumResult(
        x, it, res, min_eig, times=np.array(times), energies=np.array(energies)
    )


def certify_stability(x_ss, u, g: Geometry) -> StabilityReport:
    """Positive definiteness of the Hessian, with the cheap Gershgorin lower bound."""
    h = hessian(x_ss, u, g)
    lam = float(np.linalg.eigvalsh(h)[0])
    return StabilityReport(lam > 0, lam, gershgorin_lower_bound(h))
