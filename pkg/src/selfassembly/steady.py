"""Steady-state probabilities of pattern formation under a constant control.

Within a region of attraction the stationary law is the Gibbs density
``exp(-2 V / sigma**2)`` restricted to that region. Probabilities are ratios of
Gibbs masses; they are estimated by sampling a Gaussian centred at the
region's equilibrium with the linearized stationary covariance, either taking
the Gaussian at face value (saddle-point estimate) or reweighting it towards
the Gibbs density (importance-sampled exact estimate).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .core import Geometry, active_set, energy_many, hessian
from .equilibrium import solve_fixed_point
from .roa import Composition, Pattern, contains_many, pattern_box, roa_of_pattern

N_BATCHES = 32


class DegenerateProposalError(np.linalg.LinAlgError):
    """The Hessian at the equilibrium is not positive definite."""


@dataclass(frozen=True)
class NoiseParams:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def beta(self) -> float:
        """Inverse temperature ``2 / sigma**2`` of the Gibbs density."""
        return 2.0 / self.sigma**2


@dataclass(frozen=True)
class ProbEstimate:
    value: float
    std_err: float
    method: str

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0) or self.std_err < 0:
            raise ValueError(f"invalid probability estimate {self.value} +- {self.std_err}")

    def to_dict(self) -> dict:
        return {"value": self.value, "std_err": self.std_err, "method": self.method}


def _hessian_cholesky(x_ss, u, g):
    h = hessian(x_ss, u, g)
    try:
        return h, np.linalg.cholesky(h)
    except np.linalg.LinAlgError as exc:
        raise DegenerateProposalError("Hessian is not positive definite") from exc


def steady_covariance(x_ss, u, g: Geometry, noise: NoiseParams) -> np.ndarray:
    """Stationary covariance ``sigma**2 / 2 * inv(H)`` of the linearized motion."""
    h, chol = _hessian_cholesky(x_ss, u, g)
    eye = np.eye(h.shape[0])
    hinv = np.linalg.solve(chol.T, np.linalg.solve(chol, eye))
    cov = 0.5 * noise.sigma**2 * hinv
    return 0.5 * (cov + cov.T)


def lyapunov_residual(cov, x_ss, u, g: Geometry, noise: NoiseParams) -> float:
    h = hessian(x_ss, u, g)
    r = -h @ cov - cov @ h + noise.sigma**2 * np.eye(h.shape[0])
    return float(np.max(np.abs(r)))


def settling_time(x_ss, u, g: Geometry) -> float:
    """Five relaxation times of the slowest linearized mode."""
    lam = np.linalg.eigvalsh(hessian(x_ss, u, g))[0]
    if not lam > 0:
        raise DegenerateProposalError("Hessian is not positive definite")
    return float(5.0 / lam)


def standard_normals(n: int, samples: int, seed: int) -> np.ndarray:
    """Reproducible ``(samples, n)`` standard normal draws in fixed batches.

    Batch ``b`` comes from its own Philox stream keyed by ``(seed, b)``, so the
    draws do not depend on how batches are distributed over workers.
    """
    sizes = np.full(N_BATCHES, samples // N_BATCHES)
    sizes[: samples % N_BATCHES] += 1
    children = np.random.SeedSequence(seed).spawn(N_BATCHES)
    blocks = [
        np.random.Generator(np.random.Philox(ss)).standard_normal((m, n))
        for ss, m in zip(children, sizes)
    ]
    return np.concatenate(blocks, axis=0)


def _batch_ids(samples: int) -> np.ndarray:
    sizes = np.full(N_BATCHES, samples // N_BATCHES)
    sizes[: samples % N_BATCHES] += 1
    return np.repeat(np.arange(N_BATCHES), sizes)


def _ratio_with_batches(log_w_num, log_w_den, batch):
    """Self-normalized ratio and its batch-means standard error.

    ``log_w_*`` hold ``-inf`` for samples outside the respective set.
    """
    num = logsumexp(log_w_num)
    den = logsumexp(log_w_den)
    if not np.isfinite(den):
        return 0.0, 0.0
    value = float(np.exp(num - den)) if np.isfinite(num) else 0.0
    ratios = []
    for b in range(N_BATCHES):
        sel = batch == b
        db = logsumexp(log_w_den[sel])
        if np.isfinite(db):
            nb = logsumexp(log_w_num[sel])
            ratios.append(float(np.exp(nb - db)) if np.isfinite(nb) else 0.0)
    if len(ratios) > 1:
        se = float(np.std(ratios, ddof=1) / np.sqrt(len(ratios)))
    else:
        se = 0.0
    return min(max(value, 0.0), 1.0), se


Region = Callable[[np.ndarray], np.ndarray]


def gaussian_ratio(
    x_ss, u, g: Geometry, noise: NoiseParams, target: Region, within: Region,
    z: np.ndarray, reweight: bool = False,
) -> ProbEstimate:
    """Ratio of masses of ``target`` and ``within`` from Gaussian samples.

    Samples are ``x_ss + L z`` with ``L L^T`` the stationary covariance. With
    ``reweight`` the Gaussian weights are replaced by Gibbs weights (importance
    sampling); otherwise the Gaussian itself is the model.
    """
    x_ss = np.asarray(x_ss, dtype=float)
    cov = steady_covariance(x_ss, u, g, noise)
    chol = np.linalg.cholesky(cov)
    xs = x_ss + z @ chol.T
    ok_den = within(xs)
    ok_num = ok_den & target(xs)
    batch = _batch_ids(z.shape[0])
    if reweight:
        log_w = np.full(z.shape[0], -np.inf)
        if np.any(ok_den):
            v = energy_many(xs[ok_den], u, g)
            log_phi = -0.5 * np.sum(z[ok_den] ** 2, axis=1)
            log_w[ok_den] = -noise.beta * v - log_phi
        method = "exact-mc"
    else:
        log_w = np.where(ok_den, 0.0, -np.inf)
        method = "saddle-point"
    log_num = np.where(ok_num, log_w, -np.inf)
    value, se = _ratio_with_batches(log_num, log_w, batch)
    return ProbEstimate(value, se, method)


def _pattern_regions(p: Pattern, g: Geometry, active):
    comp = roa_of_pattern(p, g, active)
    box = pattern_box(p, g)
    return box.contains_many, (lambda xs: contains_many(comp, xs, g)), comp


def p_ss_saddle(
    x_ss, u, p: Pattern, g: Geometry, noise: NoiseParams,
    samples: int = 20_000, seed: int = 0,
) -> ProbEstimate:
    """Saddle-point estimate of the stationary probability of pattern ``p``.

    Parameters
    ----------
    x_ss : array_like
        Certified equilibrium of the pattern's region under ``u``.
    u : array_like
        Static electrode charges; their positive entries define the regions.
    """
    target, within, _ = _pattern_regions(p, g, active_set(u))
    z = standard_normals(g.n_particles, samples, seed)
    return gaussian_ratio(x_ss, u, g, noise, target, within, z)


def p_ss_exact(
    u, p: Pattern, g: Geometry, noise: NoiseParams,
    samples: int = 200_000, seed: int = 0, x_ss=None,
) -> ProbEstimate:
    """Importance-sampled Gibbs probability of pattern ``p`` within its region.

    The Gaussian proposal is centred at the region's equilibrium (solved here
    unless ``x_ss`` is supplied).
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    target, within, comp = _pattern_regions(p, g, active_set(u))
    if x_ss is None:
        x_ss = solve_fixed_point(comp, u, g).x_ss
    z = standard_normals(g.n_particles, samples, seed)
    return gaussian_ratio(x_ss, u, g, noise, target, within, z, reweight=True)


def stage_probability(
    x_ss, u, g: Geometry, noise: NoiseParams, target: Composition, within: Composition,
    samples: int = 20_000, seed: int = 0, exact: bool = False,
) -> ProbEstimate:
    """Stationary mass of region ``target`` inside region ``within`` under ``u``."""
    z = standard_normals(g.n_particles, samples, seed)
    return gaussian_ratio(
        x_ss, u, g, noise,
        lambda xs: contains_many(target, xs, g),
        lambda xs: contains_many(within, xs, g),
        z, reweight=exact,
    )
