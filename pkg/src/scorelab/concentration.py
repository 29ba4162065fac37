"""Monte Carlo verification of the high-probability score/noise bounds.

Each check draws `trials` independent realizations, evaluates the statistic
the bound controls (usually a supremum over an epsilon-net on the manifold),
compares against the bound's right-hand side at confidence delta, and
reports the violation rate together with the raw statistic samples. The
"with probability 1-delta" statements become the empirical assertion
violation_rate <= delta + 3 binomial standard errors.

Suprema over the manifold are approximated by suprema over nets at one
quarter of the bound's resolution parameter, the same device the proofs use.
log_+ x means max(log x, 0) throughout.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .diffusion import (FiniteMeasure, exact_score, exact_score_field,
                        forward_samples, ou_coeffs, posterior_log_weights)
from .geometry import ComplexityConstant, EmbeddedManifold, EpsNet, eps_net
from .rng import generator
from .samplers import modified_drift


def log_plus(x: float) -> float:
    return max(math.log(x), 0.0)


@dataclass(frozen=True)
class BoundReport:
    """Outcome of one Monte Carlo bound check."""

    name: str
    config: dict
    stats: np.ndarray       # per-trial statistic samples
    bound: float            # representative RHS value (see extras for detail)
    violations: np.ndarray  # per-trial bound-violation flags
    delta: float | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.stats) < 1:
            raise ValueError("a report needs at least one trial")

    @property
    def trials(self) -> int:
        return len(self.stats)

    @property
    def violation_rate(self) -> float:
        return float(np.mean(self.violations))

    def violation_threshold(self) -> float:
        """delta + 3 binomial standard errors at this trial count."""
        if self.delta is None:
            return math.inf
        se = math.sqrt(self.delta * (1 - self.delta) / self.trials)
        return self.delta + 3.0 * se

    def quantiles(self, qs=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict:
        vals = np.quantile(self.stats, qs)
        return {f"q{int(100*q):02d}": float(v) for q, v in zip(qs, vals)}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["trial", "stat", "violated"])
            for i, (s, v) in enumerate(zip(self.stats, self.violations)):
                w.writerow([i, repr(float(s)), int(v)])

    def summary(self) -> dict:
        return {
            "bound": self.name,
            "config": _jsonable(self.config),
            "trials": self.trials,
            "delta": self.delta,
            "violation_rate": self.violation_rate,
            "violation_threshold": (None if self.delta is None
                                    else self.violation_threshold()),
            "bound_value": self.bound,
            "quantiles": self.quantiles(),
            "extras": _jsonable(self.extras),
        }

    def save_summary(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.summary(), f, indent=2, sort_keys=True)
            f.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


# ---------------------------------------------------------------------------
# net plumbing


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared distances (len(a), len(b)) without a 3-d intermediate."""
    sq = ((a**2).sum(axis=1)[:, None] - 2.0 * a @ b.T + (b**2).sum(axis=1)[None, :])
    return np.maximum(sq, 0.0)


def manifold_net(manifold: EmbeddedManifold, resolution: float) -> EpsNet:
    """Net on the manifold at the given resolution, with a density audit
    against a finer control sample."""
    pts = manifold.dense_points(resolution / 2.0)
    net = eps_net(pts, resolution)
    control = manifold.dense_points(resolution / 4.0)
    gaps = cKDTree(net.centers).query(control)[0]
    if gaps.max() > resolution:
        raise RuntimeError(f"net too coarse: control point at distance "
                           f"{gaps.max():.3g} > {resolution:.3g}")
    return net


# ---------------------------------------------------------------------------
# checks


def check_inner_product_sup(manifold: EmbeddedManifold, eps: float, delta: float,
                            trials: int, seed, chunk: int = 256) -> BoundReport:
    """sup over net pairs of |<Z, y - y'>| against
    4 eps sqrt(d) + (|y-y'| + 6 eps) sqrt(4d log(2/eps) + 4 log_+ Vol M
    + 2 log(2/delta))."""
    if eps >= manifold.r0:
        raise ValueError(f"eps={eps} must be below the chart radius r0={manifold.r0}")
    net = manifold_net(manifold, eps / 4.0)
    y = net.centers
    d = manifold.d
    iu, ju = np.triu_indices(len(y), k=1)
    pair_norm = np.linalg.norm(y[iu] - y[ju], axis=1)
    root = math.sqrt(4 * d * math.log(2.0 / eps) + 4 * log_plus(manifold.volume)
                     + 2 * math.log(2.0 / delta))
    rhs = 4 * eps * math.sqrt(d) + (pair_norm + 6 * eps) * root
    rng = generator(seed)
    stats = np.empty(trials)
    viol = np.zeros(trials, dtype=bool)
    for lo in range(0, trials, chunk):
        hi = min(lo + chunk, trials)
        z = rng.standard_normal((hi - lo, manifold.D))
        q = z @ y.T
        gaps = np.abs(q[:, iu] - q[:, ju])
        stats[lo:hi] = (gaps / (pair_norm + 6 * eps)).max(axis=1)
        viol[lo:hi] = (gaps > rhs).any(axis=1)
    return BoundReport(
        "inner_product_sup",
        {"kind": manifold.kind, "D": manifold.D, "d": d, "eps": eps,
         "delta": delta, "net_size": len(y), "trials": trials},
        stats, float(rhs.min()), viol, delta,
        extras={"median_stat": float(np.median(stats)), "root_term": root})


def check_tangent_projection(manifold: EmbeddedManifold, delta: float,
                             trials: int, seed,
                             resolution: float | None = None) -> BoundReport:
    """sup over net points of |proj_{T_yM} Z| against
    8 sqrt(d (4 log 2d + 2 log 1/r0 + 2 log_+ Vol M + 2 log 1/delta))."""
    res = resolution if resolution is not None else manifold.r0 / 2.0
    net = manifold_net(manifold, res)
    d = manifold.d
    frames = np.stack([manifold.tangent_basis(p) for p in net.centers])  # (m, D, d)
    flat = frames.reshape(-1, manifold.D, d)
    bound = 8.0 * math.sqrt(d * (4 * math.log(2 * d) + 2 * math.log(1.0 / manifold.r0)
                                 + 2 * log_plus(manifold.volume)
                                 + 2 * math.log(1.0 / delta)))
    rng = generator(seed)
    z = rng.standard_normal((trials, manifold.D))
    proj = np.einsum("tD,mDk->tmk", z, flat)
    stats = np.linalg.norm(proj, axis=2).max(axis=1)
    viol = stats > bound
    return BoundReport(
        "tangent_projection",
        {"kind": manifold.kind, "D": manifold.D, "d": d, "delta": delta,
         "net_size": len(net.centers), "trials": trials},
        stats, bound, viol, delta,
        extras={"median_stat": float(np.median(stats))})


def _band_constants(manifold: EmbeddedManifold, t: float, delta: float):
    co = ou_coeffs(t)
    c_log = ComplexityConstant.smallest(manifold).c_log
    a = 20.0 * manifold.d * (log_plus(co.sigma / co.c) + 4.0 * c_log)
    return co, c_log, a


def check_posterior_band(manifold: EmbeddedManifold, mu: FiniteMeasure, t: float,
                         delta: float, trials: int, seed,
                         cell_volumes: np.ndarray | None = None) -> BoundReport:
    """Band check on log p(y | t, X(t)) over the measure's support:

        -A - 8 log(1/delta) - (3/4)(c/s)^2 |X(0)-y|^2
            <= log p <= A + 8 log(1/delta) - (1/4)(c/s)^2 |X(0)-y|^2,

    A = 20 d (log_+ (s/c) + 4 C_log). The finite measure stands in for the
    manifold measure; posterior weights divided by per-point Hausdorff cell
    volumes give the density values."""
    co, c_log, a = _band_constants(manifold, t, delta)
    v = cell_volumes if cell_volumes is not None else manifold.volume * mu.weights
    log_v = np.log(v)
    tail = 8.0 * math.log(1.0 / delta)
    ratio2 = (co.c / co.sigma) ** 2
    rng = generator(seed)
    x0, _, xt = forward_samples(mu, t, trials, rng)
    log_dens = posterior_log_weights(mu, t, xt) - log_v[None, :]
    d2 = _sq_dists(x0, mu.support)
    lower = -a - tail - 0.75 * ratio2 * d2
    upper = a + tail - 0.25 * ratio2 * d2
    margin = np.maximum(log_dens - upper, lower - log_dens)
    stats = margin.max(axis=1)
    viol = stats > 0
    return BoundReport(
        "posterior_band",
        {"kind": manifold.kind, "D": manifold.D, "d": manifold.d, "t": t,
         "delta": delta, "support": mu.n, "trials": trials, "c_log": c_log},
        stats, 0.0, viol, delta,
        extras={"band_halfwidth": a + tail})


def check_denoiser_variance(manifold: EmbeddedManifold, mu: FiniteMeasure,
                            t: float, trials: int, seed) -> BoundReport:
    """Second moment of the denoiser residual sigma_t s(t, c_t y + sigma_t Z) + Z
    against 320 (d log_+ (sigma_t/c_t)^{-1} + 2 C_log + 1), with the control
    E|Z|^2 (which scales linearly in D) reported alongside.

    sigma_t s(t, X_t) is minus the posterior mean of the added noise, so the
    residual is the posterior noise fluctuation; for a point mass it vanishes
    identically."""
    co = ou_coeffs(t)
    c_log = ComplexityConstant.smallest(manifold).c_log
    bound = 320.0 * (manifold.d * log_plus(co.c / co.sigma) + 2.0 * c_log + 1.0)
    rng = generator(seed)
    _, z, xt = forward_samples(mu, t, trials, rng)
    resid = co.sigma * exact_score(mu, t, xt) + z
    stats = (resid**2).sum(axis=1)
    mean = float(stats.mean())
    se = float(stats.std(ddof=1) / math.sqrt(trials))
    return BoundReport(
        "denoiser_variance",
        {"kind": manifold.kind, "D": manifold.D, "d": manifold.d, "t": t,
         "support": mu.n, "trials": trials, "c_log": c_log},
        stats, bound, stats > bound, None,
        extras={"mean": mean, "stderr": se, "median": float(np.median(stats)),
                "control_noise_sq": float((z**2).sum(axis=1).mean()),
                "mean_violates": bool(mean + 3 * se > bound)})


def check_weight_radius(manifold: EmbeddedManifold, mu: FiniteMeasure,
                        net: EpsNet, t: float, delta: float, trials: int,
                        seed) -> BoundReport:
    """Two-sided sandwich of |X(0) - G_i|^2 by the squared-distance gaps
    |X(t) - c_t G_i|^2 - min_j |X(t) - c_t G_j|^2 over all net points."""
    co = ou_coeffs(t)
    c_log = ComplexityConstant.smallest(manifold).c_log
    g = net.centers
    eps = net.epsilon
    k = 128.0 * (co.sigma / co.c) ** 2 * (
        manifold.d * log_plus(co.c / co.sigma) + 4.0 * manifold.d * c_log
        + math.log(1.0 / delta))
    rng = generator(seed)
    x0, _, xt = forward_samples(mu, t, trials, rng)
    sq = _sq_dists(xt, co.c * g)
    gap = sq - sq.min(axis=1, keepdims=True)
    target = _sq_dists(x0, g)
    lower = (2.0 / 3.0) / co.c**2 * gap - k
    upper = 9.0 * eps**2 + 2.0 / co.c**2 * gap + k
    margin = np.maximum(target - upper, lower - target)
    stats = margin.max(axis=1)
    viol = stats > 0
    return BoundReport(
        "weight_radius",
        {"kind": manifold.kind, "D": manifold.D, "d": manifold.d, "t": t,
         "delta": delta, "net_size": len(g), "eps": eps, "trials": trials},
        stats, 0.0, viol, delta,
        extras={"additive_const": k, "lower_le_upper": bool(
            (lower <= upper + 1e-12).all())})


def check_drift_freeze(manifold: EmbeddedManifold, mu: FiniteMeasure, t: float,
                       gamma_list, trials: int, seed) -> BoundReport:
    """E |s(t, X(t)) - s~_{t+g}(t, X(t), X(t+g))|^2 across anchor gaps g,
    with (X(t), X(t+g)) forward-coupled. Reports the log-log slope of the
    mean statistic in g (expected near 1) and the bound
    66^2 g sigma_t^{-4} (20 d (log_+ (sigma/c at t+g) + 4 C_log)
    + 9 log 1/g)^3 wherever that RHS is below 1."""
    c_log = ComplexityConstant.smallest(manifold).c_log
    field = exact_score_field(mu)
    rng = generator(seed)
    gammas = np.asarray(sorted(gamma_list), dtype=float)
    if (gammas >= 0.25).any() or (gammas <= 0).any():
        raise ValueError("anchor gaps must lie in (0, 1/4)")
    co_t = ou_coeffs(t)
    means, ses, bounds, all_stats = [], [], [], []
    for gamma in gammas:
        x0, _, xt = forward_samples(mu, t, trials, rng)
        z3 = rng.standard_normal(xt.shape)
        co_g = ou_coeffs(gamma)
        xtg = co_g.c * xt + co_g.sigma * z3
        s_true = exact_score(mu, t, xt)
        s_frozen = modified_drift(t, xt, xtg, t + gamma, field)
        stats = ((s_true - s_frozen) ** 2).sum(axis=1)
        all_stats.append(stats)
        means.append(float(stats.mean()))
        ses.append(float(stats.std(ddof=1) / math.sqrt(trials)))
        co_tg = ou_coeffs(t + gamma)
        bounds.append(66.0**2 * gamma / co_t.sigma**4 *
                      (20.0 * manifold.d * (log_plus(co_tg.sigma / co_tg.c)
                                            + 4 * c_log)
                       + 9.0 * math.log(1.0 / gamma)) ** 3)
    slope = float(np.polyfit(np.log(gammas), np.log(means), 1)[0]) \
        if len(gammas) > 1 else math.nan
    bounds = np.asarray(bounds)
    means_arr = np.asarray(means)
    applicable = bounds < 1.0
    viol_means = applicable & (means_arr > bounds)
    return BoundReport(
        "drift_freeze",
        {"kind": manifold.kind, "D": manifold.D, "d": manifold.d, "t": t,
         "gammas": gammas.tolist(), "trials": trials},
        np.concatenate(all_stats), float(bounds[-1]),
        np.repeat(viol_means, trials), None,
        extras={"gammas": gammas, "means": means, "stderrs": ses,
                "bounds": bounds, "slope": slope,
                "bound_applicable": applicable})


def check_surface_gp(surface, manifold: EmbeddedManifold, delta: float,
                     trials: int, seed, n_eval: int = 400) -> BoundReport:
    """sup over charted points of |<Z, y - Phi* o Phi^{-1}(y)>| against the
    measured-displacement bound max|u| sqrt(2 d log(1/eps) + log_+ Vol M
    + 2 log(2/delta)); eps is the chart radius."""
    from .geometry import sample_measure

    rng = generator(seed)
    probe = sample_measure(manifold, None, n_eval, rng).support
    bases = np.stack([c.base for c in surface.charts])
    dist, nearest = cKDTree(bases).query(probe)
    covered = dist <= surface.chart_radius
    skipped = int((~covered).sum())
    disp = []
    for y, ci in zip(probe[covered], nearest[covered]):
        chart = surface.charts[ci]
        z = chart.frame.T @ (y - chart.base)
        nz = np.linalg.norm(z)
        if nz > chart.eps_n:
            z *= chart.eps_n / nz
        from .fit import eval_chart
        disp.append(y - eval_chart(chart, z))
    disp = np.asarray(disp)
    eps = surface.chart_radius
    root = math.sqrt(2 * manifold.d * math.log(1.0 / eps)
                     + log_plus(manifold.volume) + 2 * math.log(2.0 / delta))
    max_disp = float(np.linalg.norm(disp, axis=1).max()) if len(disp) else 0.0
    bound = max_disp * root
    z = rng.standard_normal((trials, manifold.D))
    inner = np.abs(z @ disp.T) if len(disp) else np.zeros((trials, 1))
    stats = inner.max(axis=1)
    viol = stats > bound
    disp_norm = np.linalg.norm(disp, axis=1) if len(disp) else np.zeros(1)
    mean_inner = inner.mean(axis=0)
    if len(disp) > 2 and disp_norm.std() > 0 and mean_inner.std() > 0:
        corr = float(np.corrcoef(disp_norm, mean_inner)[0, 1])
    else:
        corr = math.nan
    return BoundReport(
        "surface_gp",
        {"kind": manifold.kind, "D": manifold.D, "d": manifold.d,
         "delta": delta, "eps": eps, "n_eval": n_eval, "trials": trials},
        stats, bound, viol, delta,
        extras={"max_displacement": max_disp, "skipped_uncovered": skipped,
                "corr_inner_vs_disp": corr})
