"""Forward OU process and exact score machinery for finitely supported measures.

The forward process is dX = -X dt + sqrt(2) dB, whose time-t marginal given
X(0) is c_t X(0) + sigma_t Z with c_t = e^-t and sigma_t = sqrt(1 - e^-2t).
For a finite measure the noised marginal is a Gaussian mixture, so the score,
the posterior over support points, and the conditional expectation all have
closed forms. Everything is computed in the log domain with max subtraction:
exponents reach -1e4 in the small-sigma regimes this lab studies.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .rng import generator

# score evaluation below this time is out of contract (early stopping keeps
# the reverse process away from the t=0 singularity)
TIME_FLOOR = 1e-8


@dataclass(frozen=True)
class OUCoeffs:
    """Closed-form mixture coefficients of the OU process at time t."""

    t: float
    c: float
    sigma: float

    def __post_init__(self):
        if abs(self.c**2 + self.sigma**2 - 1.0) > 1e-14:
            raise ValueError("c_t^2 + sigma_t^2 must equal 1 to 1e-14")


def ou_coeffs(t: float) -> OUCoeffs:
    """c_t = e^-t, sigma_t = sqrt(1 - e^-2t)."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    c = math.exp(-t)
    sigma = math.sqrt(-math.expm1(-2.0 * t))
    return OUCoeffs(t, c, sigma)


@dataclass(frozen=True)
class FiniteMeasure:
    """Weighted point cloud in ambient space."""

    support: np.ndarray   # (n, D)
    weights: np.ndarray   # (n,), nonnegative, sums to 1

    def __post_init__(self):
        if np.isnan(self.support).any():
            raise ValueError("support contains NaN coordinates")
        if (self.weights < 0).any():
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")

    @property
    def n(self) -> int:
        return len(self.support)

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    @staticmethod
    def point_mass(y) -> "FiniteMeasure":
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return FiniteMeasure(y[None, :], np.array([1.0]))

    @staticmethod
    def from_points(points) -> "FiniteMeasure":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return FiniteMeasure(points, np.full(len(points), 1.0 / len(points)))

    def save_csv(self, path) -> None:
        """One row per point: weight, coords."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["weight"] + [f"x{i}" for i in range(self.dim)])
            for wi, yi in zip(self.weights, self.support):
                w.writerow([repr(float(wi))] + [repr(float(v)) for v in yi])

    @staticmethod
    def load_csv(path) -> "FiniteMeasure":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        return FiniteMeasure(data[:, 1:], data[:, 0])


@dataclass(frozen=True)
class PosteriorWeights:
    """p(y_i | t, x) over the support of a finite measure."""

    weights: np.ndarray

    def __post_init__(self):
        if (self.weights < 0).any() or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("posterior weights must be a distribution")


@dataclass(frozen=True)
class ScoreField:
    """Time-indexed vector field (t, x) -> R^D with validity metadata."""

    fn: Callable[[float, np.ndarray], np.ndarray]
    dim: int
    t_min: float = TIME_FLOOR
    t_max: float = math.inf
    name: str = "score"

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        if not (self.t_min <= t <= self.t_max):
            raise ValueError(f"{self.name}: t={t} outside [{self.t_min}, {self.t_max}]")
        out = self.fn(t, np.asarray(x, dtype=float))
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"{self.name}: non-finite output at t={t}")
        return out


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo estimate with its standard error (always reported)."""

    value: float
    stderr: float


# ---------------------------------------------------------------------------
# mixture computations


def _check_time(t: float) -> OUCoeffs:
    if t < TIME_FLOOR:
        raise ValueError(f"score machinery is out of contract below t={TIME_FLOOR}")
    return ou_coeffs(t)


def posterior_log_weights(mu: FiniteMeasure, t: float, x: np.ndarray) -> np.ndarray:
    """log p(y_i | t, x), normalized; x may be (D,) or (B, D)."""
    co = _check_time(t)
    x2 = np.atleast_2d(x)
    # -|x - c y|^2 / (2 sigma^2), expanded to avoid a B x n x D intermediate
    cy = co.c * mu.support
    sq = ((x2**2).sum(axis=1)[:, None] - 2.0 * x2 @ cy.T
          + (cy**2).sum(axis=1)[None, :])
    with np.errstate(divide="ignore"):
        logw = np.log(mu.weights)[None, :] - np.maximum(sq, 0.0) / (2.0 * co.sigma**2)
    logw = logw - logsumexp(logw, axis=1, keepdims=True)
    return logw[0] if np.ndim(x) == 1 else logw


def posterior_weights(mu: FiniteMeasure, t: float, x: np.ndarray) -> PosteriorWeights:
    """Posterior over support points given the noised observation x."""
    return PosteriorWeights(np.exp(posterior_log_weights(mu, t, x)))


def log_density(mu: FiniteMeasure, t: float, x: np.ndarray) -> np.ndarray:
    """log of the (normalized) Gaussian-mixture density of X(t) at x."""
    co = _check_time(t)
    x2 = np.atleast_2d(x)
    cy = co.c * mu.support
    sq = np.maximum(((x2**2).sum(axis=1)[:, None] - 2.0 * x2 @ cy.T
                     + (cy**2).sum(axis=1)[None, :]), 0.0)
    with np.errstate(divide="ignore"):
        logp = logsumexp(np.log(mu.weights)[None, :] - sq / (2.0 * co.sigma**2), axis=1)
    logp = logp - 0.5 * mu.dim * math.log(2 * math.pi * co.sigma**2)
    return logp[0] if np.ndim(x) == 1 else logp


def cond_expectation(mu: FiniteMeasure, t: float, x: np.ndarray) -> np.ndarray:
    """e(t, x) = E[X(0) | X(t) = x]; posterior mean over the support."""
    w = np.exp(posterior_log_weights(mu, t, np.atleast_2d(x)))
    e = w @ mu.support
    return e[0] if np.ndim(x) == 1 else e


def exact_score(mu: FiniteMeasure, t: float, x: np.ndarray) -> np.ndarray:
    """s(t, x) = grad log p(t, x) = (c_t e(t, x) - x) / sigma_t^2."""
    co = _check_time(t)
    e = cond_expectation(mu, t, x)
    return (co.c * e - np.asarray(x, dtype=float)) / co.sigma**2


def empirical_score(samples: np.ndarray, t: float, x: np.ndarray) -> np.ndarray:
    """Exact score of the uniform empirical measure on the sample set."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(samples) == 0:
        raise ValueError("empirical score needs at least one sample")
    return exact_score(FiniteMeasure.from_points(samples), t, x)


def exact_score_field(mu: FiniteMeasure, name: str = "exact") -> ScoreField:
    return ScoreField(lambda t, x: exact_score(mu, t, x), mu.dim, name=name)


def empirical_score_field(samples: np.ndarray) -> ScoreField:
    return exact_score_field(FiniteMeasure.from_points(samples), name="empirical")


def zero_score_field(dim: int) -> ScoreField:
    return ScoreField(lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
                      dim, name="zero")


# ---------------------------------------------------------------------------
# forward process


def forward_sample(mu: FiniteMeasure, t: float, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One draw of the coupled triple (X(0), Z, X(t) = c_t X(0) + sigma_t Z)."""
    x0, z, xt = forward_samples(mu, t, 1, rng)
    return x0[0], z[0], xt[0]


def forward_samples(mu: FiniteMeasure, t: float, n: int, rng):
    """Vectorized forward draws; returns (X0, Z, Xt) each of shape (n, D)."""
    co = ou_coeffs(t)
    rng = generator(rng)
    idx = rng.choice(mu.n, size=n, p=mu.weights)
    x0 = mu.support[idx]
    z = rng.standard_normal((n, mu.dim))
    return x0, z, co.c * x0 + co.sigma * z


# ---------------------------------------------------------------------------
# losses


def time_grid(a: float, b: float, per_doubling: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint quadrature nodes/weights on a geometric subdivision of [a, b].

    The interval is split at a, 2a, 4a, ... (ratio-2 segments, matching the
    doubling time grid used for per-interval estimators); each segment gets
    ``per_doubling`` equal midpoint cells.
    """
    if not (0 < a < b):
        raise ValueError("need 0 < a < b")
    edges = [a]
    while edges[-1] * 2.0 < b * (1 - 1e-12):
        edges.append(edges[-1] * 2.0)
    edges.append(b)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        h = (hi - lo) / per_doubling
        for j in range(per_doubling):
            nodes.append(lo + (j + 0.5) * h)
            weights.append(h)
    return np.asarray(nodes), np.asarray(weights)


def dsm_loss(field: ScoreField, y: np.ndarray, a: float, b: float,
             mc_trials: int, rng, per_doubling: int = 16,
             nodes_weights=None) -> MCEstimate:
    """Denoising loss of one data point: integral over [a, b] of
    E_Z |field(t, c_t y + sigma_t Z) + Z / sigma_t|^2, by midpoint quadrature
    in t and Monte Carlo over Z.

    The regression target is the conditional score -Z/sigma_t of the added
    noise Z (the score of a point mass at y evaluated at c_t y + sigma_t Z
    is exactly -Z/sigma_t, making the perfect denoiser's loss vanish, and
    this sign is the one under which the loss equals the score-matching loss
    up to an estimator-independent constant)."""
    if mc_trials < 1:
        raise ValueError("mc_trials must be >= 1")
    y = np.asarray(y, dtype=float)
    nodes, weights = nodes_weights or time_grid(a, b, per_doubling)
    rng = generator(rng)
    totals = np.zeros(mc_trials)
    for t, w in zip(nodes, weights):
        co = ou_coeffs(t)
        z = rng.standard_normal((mc_trials, y.size))
        x = co.c * y[None, :] + co.sigma * z
        resid = field(t, x) + z / co.sigma
        totals += w * (resid**2).sum(axis=1)
    se = float(totals.std(ddof=1) / math.sqrt(mc_trials)) if mc_trials > 1 else math.inf
    return MCEstimate(float(totals.mean()), se)


def empirical_risk(field: ScoreField, samples: np.ndarray, a: float, b: float,
                   mc_trials: int, rng, per_doubling: int = 16) -> MCEstimate:
    """Average of dsm_loss over the sample set, sharing one time grid and
    using independent noise per sample."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(samples) == 0:
        raise ValueError("empirical risk over an empty sample set")
    nw = time_grid(a, b, per_doubling)
    rng = generator(rng)
    vals, var_terms = [], []
    for y in samples:
        est = dsm_loss(field, y, a, b, mc_trials, rng, nodes_weights=nw)
        vals.append(est.value)
        var_terms.append(est.stderr**2)
    n = len(samples)
    return MCEstimate(float(np.mean(vals)), math.sqrt(sum(var_terms)) / n)


def sm_loss(field: ScoreField, mu_truth: FiniteMeasure, a: float, b: float,
            mc_trials: int, rng, per_doubling: int = 16) -> MCEstimate:
    """True score-matching loss against the exact score of mu_truth:
    integral over [a, b] of E |field(t, X(t)) - s(t, X(t))|^2."""
    nodes, weights = time_grid(a, b, per_doubling)
    rng = generator(rng)
    totals = np.zeros(mc_trials)
    for t, w in zip(nodes, weights):
        _, _, xt = forward_samples(mu_truth, t, mc_trials, rng)
        resid = field(t, xt) - exact_score(mu_truth, t, xt)
        totals += w * (resid**2).sum(axis=1)
    se = float(totals.std(ddof=1) / math.sqrt(mc_trials)) if mc_trials > 1 else math.inf
    return MCEstimate(float(totals.mean()), se)
