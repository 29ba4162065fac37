"""Local polynomial manifold estimation with the span-of-neighbors reduction.

Each sample point gets a chart Phi*(z) = y_i + P* z + sum_S a*_S z^S fitted to
its eps_n-neighborhood by minimizing

    sum_v |v - P P^T v - sum_S a_S (P^T v)^S|^2

over isometric frames P (D x d) and coefficient vectors a_S with
|a_S| <= 1/eps_n. The whole solve happens inside H_i = span of the neighbor
differences (an optimal solution always lives there), which keeps the work
independent of the ambient dimension; results are lifted back at the end.

The solver alternates a Procrustes frame update on the linearized residual
with a linear least-squares coefficient update, each guarded so the true
objective never increases.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .diffusion import FiniteMeasure
from .geometry import EmbeddedManifold, tangent_projector

FRAME_TOL = 1e-10
ORTHO_TOL = 1e-8


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class MultiIndexSet:
    """All exponent tuples S with 2 <= |S| <= max_degree, graded-lex order."""

    d: int
    degrees: np.ndarray  # (n_mono, d) int

    @staticmethod
    def build(d: int, beta: float) -> "MultiIndexSet":
        max_degree = math.ceil(beta) - 1
        rows = []
        for total in range(2, max_degree + 1):
            combos = [s for s in itertools.product(range(total + 1), repeat=d)
                      if sum(s) == total]
            combos.sort(reverse=True)  # lexicographic within a degree
            rows.extend(combos)
        deg = np.asarray(rows, dtype=int).reshape(len(rows), d)
        return MultiIndexSet(d, deg)

    def __len__(self):
        return len(self.degrees)

    def monomials(self, z: np.ndarray) -> np.ndarray:
        """Design matrix z^S, shape (n_points, n_mono)."""
        z = np.atleast_2d(z)
        if len(self) == 0:
            return np.zeros((len(z), 0))
        return np.prod(z[:, None, :] ** self.degrees[None, :, :], axis=2)


@dataclass(frozen=True)
class LocalPolyChart:
    """One fitted polynomial chart of the estimated surface."""

    base: np.ndarray            # y_i
    frame: np.ndarray           # P*, D x d, orthonormal columns
    coeffs: np.ndarray          # (n_mono, D); row S is a*_S
    multi_indices: MultiIndexSet
    eps_n: float
    subspace_basis: np.ndarray  # orthonormal basis of H_i = span V_i
    objective: float
    converged: bool

    def __post_init__(self):
        p = self.frame
        if np.abs(p.T @ p - np.eye(p.shape[1])).max() > FRAME_TOL:
            raise ValueError("frame is not isometric to 1e-10")
        if len(self.coeffs):
            if np.abs(self.coeffs @ p).max() > ORTHO_TOL:
                raise ValueError("coefficients are not orthogonal to Im P")
            norms = np.linalg.norm(self.coeffs, axis=1)
            if (norms > 1.0 / self.eps_n * (1 + 1e-12)).any():
                raise ValueError("coefficient norm exceeds 1/eps_n")
        q = self.subspace_basis
        off = self.frame - q @ (q.T @ self.frame)
        if np.abs(off).max() > ORTHO_TOL:
            raise ValueError("frame leaves the neighbor span")
        if len(self.coeffs):
            off = self.coeffs - (self.coeffs @ q) @ q.T
            if np.abs(off).max() > ORTHO_TOL:
                raise ValueError("coefficients leave the neighbor span")


@dataclass(frozen=True)
class PiecewiseSurface:
    """Union of local polynomial charts sharing one neighborhood radius."""

    charts: list
    chart_radius: float

    def __post_init__(self):
        if not self.charts:
            raise ValueError("surface needs at least one chart")

    def grid_points(self, grid_density: int = 20) -> np.ndarray:
        """Dense ambient evaluation of every chart ball (grid_density points
        per eps_n per dimension)."""
        out = [chart_grid(c, grid_density) for c in self.charts]
        return np.concatenate(out, axis=0)


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 200
    tol: float = 1e-9
    restrict_to_span: bool = True  # False solves in full ambient coordinates


@dataclass(frozen=True)
class EpsConfig:
    """Neighborhood radius policy: explicit eps_n, explicit C in the
    (C log n / (n-1))^(1/d) rule, or a pilot calibration that doubles C until
    the median neighborhood holds at least 2(d+1) points."""

    eps_n: float | None = None
    C: float | None = None
    pilot_min_neighbors: int | None = None

    def resolve(self, points: np.ndarray, d: int) -> float:
        if self.eps_n is not None:
            return float(self.eps_n)
        n = len(points)
        if n < 2:
            raise ValueError("need at least two points to set eps_n")

        def radius(c):
            return (c * math.log(n) / (n - 1)) ** (1.0 / d)

        if self.C is not None:
            return radius(self.C)
        target = self.pilot_min_neighbors or 2 * (d + 1)
        tree = cKDTree(points)
        c = 0.25
        for _ in range(40):
            eps = radius(c)
            counts = np.array([len(ix) - 1 for ix in
                               tree.query_ball_point(points, eps)])
            if np.median(counts) >= target:
                return eps
            c *= 2.0
        raise RuntimeError("pilot calibration failed to reach the neighbor target")


# ---------------------------------------------------------------------------
# neighborhoods


def neighbor_set(points: np.ndarray, i: int, eps_n: float) -> np.ndarray:
    """Difference vectors {y_j - y_i : |y_j - y_i| <= eps_n}, closed ball,
    excluding zero self-differences."""
    if eps_n <= 0:
        raise ValueError("eps_n must be positive")
    points = np.asarray(points, dtype=float)
    diffs = points - points[i]
    norms = np.linalg.norm(diffs, axis=1)
    keep = (norms <= eps_n) & (norms > 0)
    return diffs[keep]


def span_basis(vectors: np.ndarray, rank_tol: float | None = None) -> np.ndarray:
    """Orthonormal basis (D x h) of the span of the input vectors."""
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    if len(v) == 0:
        raise ValueError("span of an empty vector set")
    u, s, _ = np.linalg.svd(v.T, full_matrices=False)
    tol = (1e-10 * s[0]) if rank_tol is None else rank_tol
    rank = max(1, int((s > tol).sum()))
    return u[:, :rank]


# ---------------------------------------------------------------------------
# the constrained alternating solver


def _objective(u, p, a, mset):
    z = u @ p
    resid = u - z @ p.T
    if len(mset):
        resid = resid - mset.monomials(z) @ a
    return float((resid**2).sum())


def _solve_in_coords(u, d, mset, eps_n, cfg):
    """Alternating minimization in the given coordinates (h or D dims).

    Returns (p, a, objective, converged, trace). The frame update is an
    orthogonal-Procrustes alignment of the linearized residual; the
    coefficient update is a joint linear least squares followed by norm
    clipping. Both halves are guarded: a half-step is kept only if the true
    objective does not increase, so the objective trace is non-increasing.
    """
    n, h = u.shape
    if d > h:
        raise ValueError("solver needs d <= coordinate dimension")
    # init: top-d principal directions of the neighborhood
    _, _, vt = np.linalg.svd(u, full_matrices=False)
    p = vt[:d].T
    a = np.zeros((len(mset), h))
    best = _objective(u, p, a, mset)
    trace = [best]
    converged = False
    for _ in range(cfg.max_iter):
        prev = best

        # frame half-step: Procrustes on the linearized residual
        z = u @ p
        target = u - (mset.monomials(z) @ a if len(mset) else 0.0)
        c = target.T @ z
        uu, _, vv = np.linalg.svd(c, full_matrices=False)
        p_new = uu @ vv
        obj_new = _objective(u, p_new, a, mset)
        if obj_new <= best:
            p, best = p_new, obj_new

        # coefficient half-step: joint least squares, then clip and re-orthogonalize
        if len(mset):
            z = u @ p
            m = mset.monomials(z)
            resid = u - z @ p.T
            a_new = np.linalg.lstsq(m, resid, rcond=None)[0]
            a_new = a_new - (a_new @ p) @ p.T  # exact in theory; enforce numerically
            norms = np.linalg.norm(a_new, axis=1)
            over = norms > 1.0 / eps_n
            if over.any():
                a_new[over] *= (1.0 / eps_n) / norms[over, None]
            obj_new = _objective(u, p, a_new, mset)
            if obj_new <= best:
                a, best = a_new, obj_new

        trace.append(best)
        if prev - best <= cfg.tol * max(prev, 1e-300):
            converged = True
            break
    return p, a, best, converged, trace


def fit_local_chart(v_i: np.ndarray, d: int, beta: float, eps_n: float,
                    cfg: SolverConfig = SolverConfig(),
                    base: np.ndarray | None = None) -> LocalPolyChart:
    """Fit one chart to the neighbor differences v_i (rows y_j - y_i).

    When the neighbor span has fewer than d dimensions, the fit runs inside
    the span (it already reconstructs every neighbor) and the frame is
    completed with directions orthogonal to it; the recorded subspace basis
    is extended accordingly.
    """
    v = np.atleast_2d(np.asarray(v_i, dtype=float))
    if len(v) < d + 1:
        raise ValueError(f"need at least d+1={d+1} neighbors, got {len(v)}")
    dim = v.shape[1]
    mset = MultiIndexSet.build(d, beta)
    if cfg.restrict_to_span:
        q = span_basis(v)
        h = q.shape[1]
        d_eff = min(d, h)
        p_c, a_c, obj, converged, _ = _solve_in_coords(v @ q, d_eff, mset, eps_n, cfg)
        frame = q @ p_c
        coeffs = a_c @ q.T
        if d_eff < d:
            u_comp, _, _ = np.linalg.svd(np.eye(dim) - q @ q.T)
            pad = u_comp[:, : d - d_eff]
            frame = np.hstack([frame, pad])
            q = np.hstack([q, pad])
    else:
        if d > dim:
            raise ValueError("d exceeds the ambient dimension")
        p_c, a_c, obj, converged, _ = _solve_in_coords(v, d, mset, eps_n, cfg)
        frame, coeffs = p_c, a_c
        q = np.eye(dim)
    if base is None:
        base = np.zeros(dim)
    return LocalPolyChart(np.asarray(base, dtype=float), frame, coeffs, mset,
                          eps_n, q, obj, converged)


def fit_surface(points: np.ndarray, d: int, beta: float,
                eps_cfg: EpsConfig = EpsConfig(),
                solver: SolverConfig = SolverConfig()) -> PiecewiseSurface:
    """One chart per sample point with a large-enough neighborhood."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) < d + 2:
        raise ValueError(f"need at least d+2={d+2} distinct points")
    eps_n = eps_cfg.resolve(pts, d)
    tree = cKDTree(pts)
    charts = []
    for i, ball in enumerate(tree.query_ball_point(pts, eps_n)):
        idx = [j for j in ball if j != i]
        if len(idx) < d + 1:
            continue
        v = pts[idx] - pts[i]
        v = v[np.linalg.norm(v, axis=1) > 0]
        if len(v) < d + 1:
            continue
        charts.append(fit_local_chart(v, d, beta, eps_n, solver, base=pts[i]))
    if not charts:
        raise ValueError("all neighborhoods too sparse at this eps_n")
    return PiecewiseSurface(charts, eps_n)


# ---------------------------------------------------------------------------
# evaluation and diagnostics


def eval_chart(chart: LocalPolyChart, z: np.ndarray) -> np.ndarray:
    """Phi*(z) = base + P* z + sum_S a*_S z^S for |z| <= eps_n."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    if (np.linalg.norm(z2, axis=1) > chart.eps_n * (1 + 1e-12)).any():
        raise ValueError("chart coordinates exceed the chart radius")
    out = chart.base[None, :] + z2 @ chart.frame.T
    if len(chart.multi_indices):
        out = out + chart.multi_indices.monomials(z2) @ chart.coeffs
    return out[0] if single else out


def chart_grid(chart: LocalPolyChart, grid_density: int = 20) -> np.ndarray:
    """Ambient evaluation of the chart on a grid of its parameter ball."""
    d = chart.frame.shape[1]
    per_axis = 2 * grid_density + 1
    axes = [np.linspace(-chart.eps_n, chart.eps_n, per_axis)] * d
    z = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    z = z[np.linalg.norm(z, axis=1) <= chart.eps_n]
    return eval_chart(chart, z)


def _as_cloud(obj, grid_density):
    if isinstance(obj, PiecewiseSurface):
        return obj.grid_points(grid_density)
    if isinstance(obj, FiniteMeasure):
        return obj.support
    arr = np.atleast_2d(np.asarray(obj, dtype=float))
    return arr


def hausdorff(a, b, grid_density: int = 20) -> float:
    """Symmetric Hausdorff distance between surfaces/clouds, via dense chart
    grids and KD-tree nearest neighbors."""
    ca = _as_cloud(a, grid_density)
    cb = _as_cloud(b, grid_density)
    if len(ca) == 0 or len(cb) == 0:
        raise ValueError("hausdorff of an empty side")
    d_ab = cKDTree(cb).query(ca)[0].max()
    d_ba = cKDTree(ca).query(cb)[0].max()
    return float(max(d_ab, d_ba))


def tangent_angle(chart: LocalPolyChart, manifold: EmbeddedManifold) -> float:
    """Operator norm of (fitted tangent projector - true tangent projector)
    at the chart base: the largest principal-angle sine."""
    point, dist = manifold.project(chart.base)
    if dist > 0.1 * manifold.reach:
        raise ValueError(f"chart base is {dist:.3g} from the manifold; too far")
    pr_true = tangent_projector(manifold, point)
    pr_fit = chart.frame @ chart.frame.T
    return float(np.linalg.norm(pr_fit - pr_true, ord=2))


def partition_rho(x: np.ndarray) -> np.ndarray:
    """Piecewise-linear bump: 1 on |x| <= 1/2, 2 - 2|x| on [1/2, 1], 0 beyond."""
    return np.clip(2.0 - 2.0 * np.abs(x), 0.0, 1.0)


def pushforward_surface_measure(mu: FiniteMeasure, surface: PiecewiseSurface,
                                radius: float | None = None):
    """Transport each support point through its chart: soft rho-weights over
    charts by distance to base, hard argmax assignment, then
    Phi* applied to the frame coordinates of the point.

    Returns (moved measure, per-point displacements).
    """
    eps = radius if radius is not None else surface.chart_radius
    bases = np.stack([c.base for c in surface.charts])
    tree = cKDTree(bases)
    dist, nearest = tree.query(mu.support)
    rho_best = partition_rho(dist / eps)
    uncovered = np.nonzero(rho_best <= 0.0)[0]
    if len(uncovered):
        raise ValueError(f"support points not covered by any chart "
                         f"(rho = 0): indices {uncovered.tolist()}")
    moved = np.empty_like(mu.support)
    for row, (y, ci) in enumerate(zip(mu.support, nearest)):
        chart = surface.charts[ci]
        z = chart.frame.T @ (y - chart.base)
        nz = np.linalg.norm(z)
        if nz > chart.eps_n:  # projection can only shrink, but guard anyway
            z = z * (chart.eps_n / nz)
        moved[row] = eval_chart(chart, z)
    disp = np.linalg.norm(moved - mu.support, axis=1)
    return FiniteMeasure(moved, mu.weights), disp


# ---------------------------------------------------------------------------
# serialization


def save_surface(surface: PiecewiseSurface, path) -> None:
    """One CSV per surface: rows (chart id, field, index, value columns)."""
    dim = surface.charts[0].base.size
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["chart", "field", "index", "eps_n"]
                   + [f"v{i}" for i in range(dim)])
        for cid, c in enumerate(surface.charts):
            w.writerow([cid, "base", "", repr(c.eps_n)]
                       + [repr(float(v)) for v in c.base])
            for j in range(c.frame.shape[1]):
                w.writerow([cid, "frame", j, repr(c.eps_n)]
                           + [repr(float(v)) for v in c.frame[:, j]])
            for s, a in zip(c.multi_indices.degrees, c.coeffs):
                w.writerow([cid, "coeff", ";".join(map(str, s)), repr(c.eps_n)]
                           + [repr(float(v)) for v in a])


def load_surface(path) -> PiecewiseSurface:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    by_chart: dict[int, dict] = {}
    eps_n = None
    for r in rows[1:]:
        cid, fieldname, index = int(r[0]), r[1], r[2]
        eps_n = float(r[3])
        vec = np.array([float(v) for v in r[4:]])
        slot = by_chart.setdefault(cid, {"frame": [], "coeffs": [], "degs": []})
        if fieldname == "base":
            slot["base"] = vec
        elif fieldname == "frame":
            slot["frame"].append(vec)
        else:
            slot["degs"].append([int(x) for x in index.split(";")])
            slot["coeffs"].append(vec)
    charts = []
    for cid in sorted(by_chart):
        s = by_chart[cid]
        frame = np.stack(s["frame"], axis=1)
        d = frame.shape[1]
        degs = np.asarray(s["degs"], dtype=int).reshape(len(s["degs"]), d) \
            if s["degs"] else np.zeros((0, d), dtype=int)
        coeffs = np.stack(s["coeffs"]) if s["coeffs"] else np.zeros((0, len(s["base"])))
        mset = MultiIndexSet(d, degs)
        charts.append(LocalPolyChart(s["base"], frame, coeffs, mset, eps_n,
                                     span_basis(np.vstack([frame.T, coeffs])
                                                if len(coeffs) else frame.T),
                                     0.0, True))
    return PiecewiseSurface(charts, eps_n)
