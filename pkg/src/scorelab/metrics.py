"""Distances and divergences backing the acceptance tests.

Wasserstein costs are computed exactly by linear assignment (shortest
augmenting path, O(n^3)) on uniform clouds; weighted inputs are reduced to
the uniform case by mass splitting. KL between Gaussians is closed-form.

Two checks probe the analytic relations between score matching and these
metrics: the dissipation identity d/dt KL(P_t||Q_t) = -E_Pt|grad log p -
grad log q|^2 along the forward noising flow, and the bound

    integral_t_min^t_max E|grad log p_t - grad log q_t|^2 dt
        <= W2(P,Q)^2 * c_{t_min}^2 / (2 sigma_{t_min}^2).

Both carry the constants that make them hold numerically (see the module
tests, which verify each against closed forms).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .diffusion import FiniteMeasure, MCEstimate, exact_score_field, ou_coeffs, sm_loss

SIZE_CAP = 4096


@dataclass(frozen=True)
class TransportPlan:
    """Sparse optimal coupling between two weighted clouds."""

    rows: np.ndarray     # indices into cloud A
    cols: np.ndarray     # indices into cloud B
    mass: np.ndarray     # coupling mass per (row, col) pair
    cost: float          # sum of mass * distance^p

    def marginals(self, n_a: int, n_b: int) -> tuple[np.ndarray, np.ndarray]:
        a = np.zeros(n_a)
        b = np.zeros(n_b)
        np.add.at(a, self.rows, self.mass)
        np.add.at(b, self.cols, self.mass)
        return a, b


def _split_counts(weights: np.ndarray, cap: int) -> np.ndarray:
    """Integer replication counts realizing the weights as k_i / L, L <= cap."""
    fracs = [Fraction(float(w)).limit_denominator(cap) for w in weights]
    if any(abs(float(f) - w) > 1e-9 for f, w in zip(fracs, weights)):
        raise ValueError("weights are not commensurable at the exact-mode cap; "
                         "subsample to uniform clouds instead")
    lcm = 1
    for f in fracs:
        lcm = lcm * f.denominator // math.gcd(lcm, f.denominator)
    if lcm > cap:
        raise ValueError(f"mass splitting needs {lcm} atoms (> cap {cap}); "
                         "subsample to uniform clouds instead")
    counts = np.array([int(f * lcm) for f in fracs])
    if counts.sum() != lcm:
        raise ValueError("weights do not split exactly; subsample instead")
    return counts


def w_p(cloud_a, cloud_b, p: int = 1, weights_a=None, weights_b=None,
        size_cap: int = SIZE_CAP) -> tuple[float, TransportPlan]:
    """Exact W_p (p in {1, 2}) between two point clouds of equal total mass.

    Uniform equal-size clouds go straight to the assignment solver; anything
    else is mass-split into a common number of uniform atoms first. Returns
    the distance and the optimal plan (aggregated over original indices).
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    a = np.atleast_2d(np.asarray(cloud_a, dtype=float))
    b = np.atleast_2d(np.asarray(cloud_b, dtype=float))
    wa = np.full(len(a), 1.0 / len(a)) if weights_a is None else np.asarray(weights_a, float)
    wb = np.full(len(b), 1.0 / len(b)) if weights_b is None else np.asarray(weights_b, float)
    if abs(wa.sum() - wb.sum()) > 1e-10:
        raise ValueError("clouds must carry equal total mass")

    uniform = (weights_a is None and weights_b is None and len(a) == len(b))
    if uniform:
        idx_a = np.arange(len(a))
        idx_b = np.arange(len(b))
    else:
        ca = _split_counts(wa / wa.sum(), size_cap)
        cb = _split_counts(wb / wb.sum(), size_cap)
        la = int(ca.sum())
        lb = int(cb.sum())
        lcm = la * lb // math.gcd(la, lb)
        if lcm > size_cap:
            raise ValueError(f"mass splitting needs {lcm} atoms (> cap {size_cap}); "
                             "subsample to uniform clouds instead")
        idx_a = np.repeat(np.arange(len(a)), ca * (lcm // la))
        idx_b = np.repeat(np.arange(len(b)), cb * (lcm // lb))
    if len(idx_a) > size_cap:
        raise ValueError(f"cloud size {len(idx_a)} exceeds exact-mode cap "
                         f"{size_cap}; subsample first")

    dist = cdist(a[idx_a], b[idx_b])
    cost_mat = dist if p == 1 else dist**2
    ri, ci = linear_sum_assignment(cost_mat)
    mass = np.full(len(ri), 1.0 / len(ri))
    cost = float((cost_mat[ri, ci] * mass).sum())
    plan = _aggregate_plan(idx_a[ri], idx_b[ci], mass, cost)
    value = cost if p == 1 else math.sqrt(cost)
    return value, plan


def _aggregate_plan(rows, cols, mass, cost) -> TransportPlan:
    key = rows.astype(np.int64) * (cols.max() + 1 if len(cols) else 1) + cols
    uniq, inv = np.unique(key, return_inverse=True)
    m = np.zeros(len(uniq))
    np.add.at(m, inv, mass)
    first = np.zeros(len(uniq), dtype=int)
    first[inv[::-1]] = np.arange(len(rows))[::-1]
    return TransportPlan(rows[first], cols[first], m, cost)


# ---------------------------------------------------------------------------
# Gaussian KL and the dissipation identity


def kl_gaussian(m1, s1, m2, s2) -> float:
    """KL(N(m1, s1) || N(m2, s2)) in closed form; inputs must be SPD."""
    m1 = np.atleast_1d(np.asarray(m1, dtype=float))
    m2 = np.atleast_1d(np.asarray(m2, dtype=float))
    s1 = np.atleast_2d(np.asarray(s1, dtype=float))
    s2 = np.atleast_2d(np.asarray(s2, dtype=float))
    k = len(m1)
    try:
        l1 = np.linalg.cholesky(s1)
        l2 = np.linalg.cholesky(s2)
    except np.linalg.LinAlgError as e:
        raise ValueError("covariances must be symmetric positive definite") from e
    if not (np.allclose(s1, s1.T) and np.allclose(s2, s2.T)):
        raise ValueError("covariances must be symmetric positive definite")
    sol = np.linalg.solve(s2, s1)
    diff = m2 - m1
    maha = diff @ np.linalg.solve(s2, diff)
    logdet = 2.0 * (np.log(np.diag(l2)).sum() - np.log(np.diag(l1)).sum())
    return 0.5 * float(np.trace(sol) + maha - k + logdet)


def ou_evolve_gaussian(m, s, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Law of the forward process at time t started from N(m, s)."""
    co = ou_coeffs(t)
    m = np.atleast_1d(np.asarray(m, dtype=float))
    s = np.atleast_2d(np.asarray(s, dtype=float))
    return co.c * m, co.c**2 * s + co.sigma**2 * np.eye(len(m))


def score_gap_expectation(m1, s1, m2, s2) -> float:
    """E_{x ~ N(m1, s1)} |grad log p1(x) - grad log p2(x)|^2, closed form.

    The gap of Gaussian scores is affine: A x + b with A = S2^-1 - S1^-1 and
    b = S1^-1 m1 - S2^-1 m2, so the expectation is |A m1 + b|^2 + tr(A S1 A^T).
    """
    m1 = np.atleast_1d(np.asarray(m1, dtype=float))
    m2 = np.atleast_1d(np.asarray(m2, dtype=float))
    s1 = np.atleast_2d(np.asarray(s1, dtype=float))
    s2 = np.atleast_2d(np.asarray(s2, dtype=float))
    a = np.linalg.inv(s2) - np.linalg.inv(s1)
    b = np.linalg.solve(s1, m1) - np.linalg.solve(s2, m2)
    mean_term = a @ m1 + b
    return float(mean_term @ mean_term + np.trace(a @ s1 @ a.T))


@dataclass(frozen=True)
class DissipationCheck:
    lhs: float   # centered finite difference of t -> KL(P_t || Q_t)
    rhs: float   # -E_{P_t} |grad log p_t - grad log q_t|^2
    gap: float   # lhs - rhs


def kl_dissipation_check(m1, s1, m2, s2, t: float, dt: float = 1e-4) -> DissipationCheck:
    """Check the KL dissipation identity along the forward noising flow.

    Both laws are Gaussian so the OU evolution and both sides are closed
    form up to the finite difference in t. The identity satisfied by this
    process is d/dt KL = -(1x) the expected squared score gap; the check
    reports both sides and their gap.
    """
    def kl_at(tt: float) -> float:
        p = ou_evolve_gaussian(m1, s1, tt)
        q = ou_evolve_gaussian(m2, s2, tt)
        return kl_gaussian(p[0], p[1], q[0], q[1])

    lhs = (kl_at(t + dt) - kl_at(t - dt)) / (2.0 * dt)
    pt = ou_evolve_gaussian(m1, s1, t)
    qt = ou_evolve_gaussian(m2, s2, t)
    rhs = -score_gap_expectation(pt[0], pt[1], qt[0], qt[1])
    return DissipationCheck(float(lhs), float(rhs), float(lhs - rhs))


# ---------------------------------------------------------------------------
# W2-vs-score-matching bound


@dataclass(frozen=True)
class SmlBoundCheck:
    loss: float
    loss_stderr: float
    bound: float
    ratio: float


def sml_bound_check(p_meas: FiniteMeasure, q_meas: FiniteMeasure,
                    t_min: float, t_max: float, mc_trials: int, rng,
                    per_doubling: int = 16) -> SmlBoundCheck:
    """Score-matching loss of using Q's exact score for P's, against the
    transport bound W2(P, Q)^2 c^2_{t_min} / (2 sigma^2_{t_min})."""
    if t_min <= 0:
        raise ValueError("t_min must be positive")
    est: MCEstimate = sm_loss(exact_score_field(q_meas, name="q-score"),
                              p_meas, t_min, t_max, mc_trials, rng,
                              per_doubling=per_doubling)
    w2, _ = w_p(p_meas.support, q_meas.support, p=2,
                weights_a=None if _is_uniform(p_meas) else p_meas.weights,
                weights_b=None if _is_uniform(q_meas) else q_meas.weights)
    co = ou_coeffs(t_min)
    bound = w2**2 * co.c**2 / (2.0 * co.sigma**2)
    ratio = 0.0 if bound == 0.0 else est.value / bound
    return SmlBoundCheck(est.value, est.stderr, float(bound), float(ratio))


def _is_uniform(mu: FiniteMeasure) -> bool:
    return bool(np.allclose(mu.weights, 1.0 / mu.n, atol=1e-12))


def metric_row(metric: str, value: float, stderr: float | None = None,
               bound: float | None = None, ratio: float | None = None) -> dict:
    """Uniform column layout for metric results appended to experiment CSVs."""
    return {"metric": metric, "value": value,
            "stderr": "" if stderr is None else stderr,
            "bound": "" if bound is None else bound,
            "ratio": "" if ratio is None else ratio}
