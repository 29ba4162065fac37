"""Analytic test manifolds embedded in high ambient dimension.

Three families are supported, each with exact or certified regularity
constants (reach, chart-derivative bounds, volume):

* ``circle(r)``   -- canonical model in R^2, reach = r exactly
* ``sphere(d, r)``-- canonical model in R^(d+1), reach = r exactly
* ``poly_graph``  -- graph of a polynomial u -> (u, P(u)) over a chart ball,
                     reach certified by a dense curvature scan

The canonical model is positioned in R^D by an isometric frame (orthonormal
columns) plus an offset, so all intrinsic quantities are independent of the
ambient dimension by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import generator

FRAME_ORTHO_TOL = 1e-12
ON_MANIFOLD_TOL = 1e-8
REACH_SCAN_POINTS = 10_000


# ---------------------------------------------------------------------------
# core types


@dataclass(frozen=True)
class EmbeddedManifold:
    """A d-dimensional analytic manifold isometrically embedded in R^D."""

    kind: str                      # "circle" | "sphere" | "poly_graph"
    d: int
    D: int
    frame: np.ndarray              # D x (d+m), orthonormal columns
    offset: np.ndarray             # ambient shift
    radius: float | None = None    # circle / sphere
    poly_powers: np.ndarray | None = None   # (n_mono, d) int exponents, |S| >= 2
    poly_coeffs: np.ndarray | None = None   # (n_mono, m)
    chart_domain: float | None = None       # poly_graph parameter radius
    reach: float = 0.0
    holder_const: float = 1.0
    volume: float = 0.0
    density_bounds: tuple[float, float] = (0.0, 0.0)
    seed: int | None = None

    def __post_init__(self):
        gram = self.frame.T @ self.frame
        if not np.allclose(gram, np.eye(self.frame.shape[1]), atol=FRAME_ORTHO_TOL):
            raise ValueError("frame columns must be orthonormal to 1e-12")
        if self.reach <= 0:
            raise ValueError(f"reach must be positive, got {self.reach}")
        p_min, p_max = self.density_bounds
        if not (0 < p_min <= p_max):
            raise ValueError("density bounds must satisfy 0 < p_min <= p_max")

    # -- derived constants ---------------------------------------------------

    @property
    def r0(self) -> float:
        """Chart radius min(1, reach, 1/L_M)/8; all charts are well behaved inside."""
        return min(1.0, self.reach, 1.0 / self.holder_const) / 8.0

    @property
    def diam(self) -> float:
        if self.kind in ("circle", "sphere"):
            return 2.0 * self.radius
        u = _ball_grid(self.d, self.chart_domain, 33)
        pts = self.embed(self._graph(u))
        hi = pts.max(axis=0) - pts.min(axis=0)
        return float(np.linalg.norm(hi))  # box diagonal upper bound

    @property
    def canonical_dim(self) -> int:
        return self.frame.shape[1]

    # -- embedding -----------------------------------------------------------

    def embed(self, canonical: np.ndarray) -> np.ndarray:
        """Map canonical-model points (…, d+m) to ambient points (…, D)."""
        return canonical @ self.frame.T + self.offset

    def to_canonical(self, y: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`embed` on the embedded subspace."""
        return (y - self.offset) @ self.frame

    def _graph(self, u: np.ndarray) -> np.ndarray:
        """poly_graph canonical points (u, P(u)) for parameters u (…, d)."""
        u = np.atleast_2d(u)
        mono = np.prod(u[:, None, :] ** self.poly_powers[None, :, :], axis=2)
        return np.concatenate([u, mono @ self.poly_coeffs], axis=1)

    # -- geometry ------------------------------------------------------------

    def project(self, y: np.ndarray) -> tuple[np.ndarray, float]:
        """Nearest manifold point and its distance, for a single ambient y."""
        c = self.to_canonical(y)
        resid = y - self.embed(c)  # component off the embedded subspace
        if self.kind == "circle" or self.kind == "sphere":
            nrm = np.linalg.norm(c)
            if nrm == 0.0:
                c = np.zeros_like(c)
                c[0] = self.radius
            else:
                c = c * (self.radius / nrm)
        else:
            c = self._graph(self._foot_point(c))[0]
        point = self.embed(c)
        return point, float(np.linalg.norm(y - point))

    def _foot_point(self, c: np.ndarray) -> np.ndarray:
        """Parameter of the nearest graph point: coarse scan + Gauss-Newton."""
        grid = _ball_grid(self.d, self.chart_domain, 41)
        g = self._graph(grid)
        u = grid[np.argmin(((g - c) ** 2).sum(axis=1))]
        for _ in range(50):
            gu = self._graph(u[None])[0]
            J = self._graph_jacobian(u)
            step = np.linalg.lstsq(J.T @ J, J.T @ (c - gu), rcond=None)[0]
            u_new = u + step
            nrm = np.linalg.norm(u_new)
            if nrm > self.chart_domain:
                u_new = u_new * (self.chart_domain / nrm)
            if np.linalg.norm(u_new - u) < 1e-14:
                u = u_new
                break
            u = u_new
        return u

    def _graph_jacobian(self, u: np.ndarray) -> np.ndarray:
        """d(graph)/du at a single parameter u, shape (d+m, d)."""
        dP = np.zeros((self.poly_coeffs.shape[1], self.d))
        for j in range(self.d):
            pw = self.poly_powers.astype(float).copy()
            fac = pw[:, j].copy()
            pw[:, j] = np.maximum(pw[:, j] - 1, 0)
            mono = fac * np.prod(u[None, :] ** pw, axis=1)
            dP[:, j] = self.poly_coeffs.T @ mono
        return np.vstack([np.eye(self.d), dP])

    def tangent_basis(self, y: np.ndarray) -> np.ndarray:
        """Orthonormal columns (D x d) spanning T_yM; y must lie on M."""
        point, dist = self.project(np.asarray(y, dtype=float))
        if dist > ON_MANIFOLD_TOL:
            raise ValueError(f"point is off the manifold (distance {dist:.3e})")
        c = self.to_canonical(point)
        if self.kind == "circle":
            t = np.array([[-c[1], c[0]]]).T / self.radius
        elif self.kind == "sphere":
            # complement of the radial direction inside the canonical R^(d+1)
            radial = c / np.linalg.norm(c)
            u, _, _ = np.linalg.svd(np.eye(len(c)) - np.outer(radial, radial))
            t = u[:, : self.d]
        else:
            u = self._foot_point(c)
            t, _ = np.linalg.qr(self._graph_jacobian(u))
        return self.frame @ t

    def dense_points(self, spacing: float) -> np.ndarray:
        """Quasi-uniform ambient point set with nearest-neighbor gap <= spacing."""
        if self.kind == "circle":
            n = max(8, int(math.ceil(2 * math.pi * self.radius / spacing)))
            th = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
            canon = self.radius * np.stack([np.cos(th), np.sin(th)], axis=1)
        elif self.kind == "sphere":
            if self.d != 2:
                raise NotImplementedError("dense_points implemented for sphere d=2")
            n = max(32, int(math.ceil(4 * math.pi * self.radius**2 / spacing**2 * 4)))
            canon = self.radius * _fibonacci_sphere(n)
        else:
            per_axis = max(3, int(math.ceil(2 * self.chart_domain / spacing * 1.5)))
            u = _ball_grid(self.d, self.chart_domain, per_axis)
            canon = self._graph(u)
        return self.embed(canon)

    # -- config block --------------------------------------------------------

    def to_config(self) -> dict:
        cfg = {"kind": self.kind, "d": self.d, "D": self.D, "seed": self.seed}
        if self.kind in ("circle", "sphere"):
            cfg["radius"] = self.radius
        else:
            cfg["powers"] = self.poly_powers.tolist()
            cfg["coeffs"] = self.poly_coeffs.tolist()
            cfg["chart_domain"] = self.chart_domain
        return cfg

    @staticmethod
    def from_config(cfg: dict) -> "EmbeddedManifold":
        kind = cfg["kind"]
        if kind in ("circle", "sphere"):
            spec = (kind, cfg.get("radius", 1.0)) if kind == "circle" else (
                kind, cfg["d"], cfg.get("radius", 1.0))
        else:
            spec = (kind, np.asarray(cfg["powers"], dtype=int),
                    np.asarray(cfg["coeffs"], dtype=float), cfg["chart_domain"])
        return make_manifold(spec, cfg["D"], cfg.get("seed"))

    def normalized(self) -> "EmbeddedManifold":
        """Copy rescaled so diam <= 1, with a manifold point moved to the origin.

        The lab works with the manifold as constructed; this view exists for
        callers that want the unit-diameter convention literally.
        """
        s = min(1.0, 1.0 / self.diam)
        if self.kind in ("circle", "sphere"):
            base = np.zeros(self.canonical_dim)
            base[0] = self.radius * s
            m = make_manifold((self.kind, self.radius * s) if self.kind == "circle"
                              else (self.kind, self.d, self.radius * s),
                              self.D, self.seed)
        else:
            # rescaling space by s maps the graph of P to the graph of
            # u -> s * P(u/s); coefficient of multi-index S scales by s^(1-|S|)
            deg = self.poly_powers.sum(axis=1)
            coeffs = self.poly_coeffs * (s ** (1.0 - deg))[:, None]
            m = make_manifold(("poly_graph", self.poly_powers, coeffs,
                               self.chart_domain * s), self.D, self.seed)
            base = m._graph(np.zeros((1, self.d)))[0]
        shift = m.embed(base)
        return _replace_offset(m, m.offset - shift)


def _replace_offset(m: EmbeddedManifold, offset: np.ndarray) -> EmbeddedManifold:
    import dataclasses
    return dataclasses.replace(m, offset=offset)


@dataclass(frozen=True)
class ChartPoint:
    """Tangent coordinates of a point inside one chart."""

    coords: np.ndarray
    base: np.ndarray
    chart_radius: float

    def __post_init__(self):
        if np.linalg.norm(self.coords) > self.chart_radius * (1 + 1e-12):
            raise ValueError("chart coordinates exceed the chart radius")


@dataclass(frozen=True)
class EpsNet:
    """epsilon-dense, (epsilon/2)-separated subset of a point cloud."""

    centers: np.ndarray
    epsilon: float

    def __len__(self):
        return len(self.centers)

    def covering_bound(self, d: int, volume: float) -> float:
        """Cardinality bound (eps/2)^(-d) * Vol M for nets on a manifold."""
        return (self.epsilon / 2.0) ** (-d) * volume


@dataclass(frozen=True)
class ComplexityConstant:
    """Single scalar summarizing manifold/measure complexity."""

    c_log: float
    d: int
    p_min: float
    p_max: float
    volume: float
    reach: float
    holder_const: float

    def __post_init__(self):
        c = self.c_log
        ok = (
            c > max(self.d, 4)
            and math.exp(-c) < self.p_min
            and self.p_max < math.exp(c)
            and math.log(self.volume) < math.exp(c)
            and min(self.reach, 1.0 / self.holder_const) >= math.exp(-c)
        )
        if not ok:
            raise ValueError(f"c_log={c} violates the complexity inequalities")

    @staticmethod
    def smallest(manifold: EmbeddedManifold,
                 density_bounds: tuple[float, float] | None = None
                 ) -> "ComplexityConstant":
        """Smallest admissible value; bounds are monotone in c_log, so this is
        the strictest test configuration."""
        p_min, p_max = density_bounds or manifold.density_bounds
        lo = [max(manifold.d, 4),
              -math.log(p_min),
              math.log(p_max) if p_max > 1 else 0.0,
              -math.log(min(manifold.reach, 1.0 / manifold.holder_const))]
        if manifold.volume > 1:
            lo.append(math.log(math.log(manifold.volume)))
        c = max(lo) * (1 + 1e-9) + 1e-9
        return ComplexityConstant(c, manifold.d, p_min, p_max, manifold.volume,
                                  manifold.reach, manifold.holder_const)


# ---------------------------------------------------------------------------
# constructors


def make_manifold(spec, D: int, seed: int | None = None) -> EmbeddedManifold:
    """Build an embedded manifold from a kind spec.

    spec is one of::

        ("circle", radius)
        ("sphere", d, radius)
        ("poly_graph", powers, coeffs, chart_domain)   # graph of u -> (u, P(u))

    The positioning frame is a uniformly random orthonormal set drawn from
    ``seed``; ``seed=None`` gives the identity embedding (requires D equal to
    the canonical dimension).
    """
    kind = spec[0]
    if kind == "circle":
        radius = float(spec[1])
        d, m = 1, 1
        reach = radius
        holder = _circle_holder(radius)
        volume = 2 * math.pi * radius
    elif kind == "sphere":
        d, radius = int(spec[1]), float(spec[2])
        m = 1
        reach = radius
        holder = _circle_holder(radius)  # same per-direction curvature profile
        volume = _sphere_area(d, radius)
    elif kind == "poly_graph":
        powers = np.atleast_2d(np.asarray(spec[1], dtype=int))
        coeffs = np.atleast_2d(np.asarray(spec[2], dtype=float))
        chart_domain = float(spec[3])
        if coeffs.shape[0] != powers.shape[0]:
            raise ValueError("coefficient table must have one row per monomial")
        if (powers.sum(axis=1) < 2).any():
            raise ValueError("poly_graph monomials must have total degree >= 2")
        d, m = powers.shape[1], coeffs.shape[1]
        reach, holder = _poly_graph_constants(powers, coeffs, chart_domain, d)
        if reach <= 0:
            raise ValueError("computed reach lower bound is not positive")
        volume = _poly_graph_volume(powers, coeffs, chart_domain, d)
    else:
        raise ValueError(f"unknown manifold kind {kind!r}")

    k = d + m
    if D < k:
        raise ValueError(f"ambient dimension {D} below the model's minimum {k}")
    if seed is None:
        frame = np.eye(D)[:, :k]
    else:
        g = generator(seed).standard_normal((D, k))
        frame, r = np.linalg.qr(g)
        frame = frame * np.sign(np.diag(r))  # deterministic sign convention

    if kind in ("circle", "sphere"):
        p_unif = 1.0 / volume
        return EmbeddedManifold(kind, d, D, frame, np.zeros(D), radius=radius,
                                reach=reach, holder_const=holder, volume=volume,
                                density_bounds=(p_unif, p_unif), seed=seed)
    p_unif = 1.0 / volume
    return EmbeddedManifold(kind, d, D, frame, np.zeros(D),
                            poly_powers=powers, poly_coeffs=coeffs,
                            chart_domain=chart_domain, reach=reach,
                            holder_const=holder, volume=volume,
                            density_bounds=(p_unif, p_unif), seed=seed)


def _circle_holder(radius: float) -> float:
    # chart derivative bounds on |z| <= r/8 for an arc: |Phi'| <= (1-1/64)^(-1/2),
    # |Phi''| <= (1/r)(1-1/64)^(-3/2), |Phi'''| <= (3/(8 r^2))(1-1/64)^(-5/2)
    a = 1.0 - 1.0 / 64.0
    return max(a ** -0.5, a ** -1.5 / radius, 0.375 * a ** -2.5 / radius**2)


def _sphere_area(d: int, r: float) -> float:
    return (d + 1) * math.pi ** ((d + 1) / 2) / math.gamma((d + 1) / 2 + 1) * r**d


def _ball_grid(d: int, radius: float, per_axis: int) -> np.ndarray:
    axes = [np.linspace(-radius, radius, per_axis)] * d
    u = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return u[np.linalg.norm(u, axis=1) <= radius + 1e-12]


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _poly_eval_derivs(powers, coeffs, u):
    """Value, Jacobian and Hessian tensor of P at a batch of parameters."""
    nb, d = u.shape
    m = coeffs.shape[1]
    mono = np.prod(u[:, None, :] ** powers[None, :, :], axis=2)
    val = mono @ coeffs
    jac = np.zeros((nb, m, d))
    hes = np.zeros((nb, m, d, d))
    for j in range(d):
        pw = powers.astype(float).copy()
        fj = pw[:, j].copy()
        pw[:, j] = np.maximum(pw[:, j] - 1, 0)
        mj = fj[None, :] * np.prod(u[:, None, :] ** pw[None, :, :], axis=2)
        jac[:, :, j] = mj @ coeffs
        for k in range(d):
            pw2 = pw.copy()
            fk = pw2[:, k].copy()
            pw2[:, k] = np.maximum(pw2[:, k] - 1, 0)
            mjk = (fj * fk)[None, :] * np.prod(u[:, None, :] ** pw2[None, :, :], axis=2)
            hes[:, :, j, k] = mjk @ coeffs
    return val, jac, hes


def _poly_graph_constants(powers, coeffs, R, d):
    """Reach lower bound 1/(2 kappa_max) and chart-derivative bound by grid scan.

    kappa_max is the largest normal curvature of the graph over a dense scan
    of the chart ball (10^4 parameter points) and tangent directions.
    """
    per_axis = int(math.ceil(REACH_SCAN_POINTS ** (1.0 / d)))
    u = _ball_grid(d, R, per_axis)
    _, jac, hes = _poly_eval_derivs(powers, coeffs, u)
    if d == 1:
        dirs = np.array([[1.0]])
    else:
        th = np.linspace(0, math.pi, 32, endpoint=False)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
    kappa_max = 0.0
    for v in dirs:
        # curve t -> (u + t v, P(u + t v)): gamma' = (v, J v), gamma'' = (0, H[v,v])
        g1 = np.concatenate([np.broadcast_to(v, (len(u), d)),
                             np.einsum("bmj,j->bm", jac, v)], axis=1)
        g2 = np.concatenate([np.zeros((len(u), d)),
                             np.einsum("bmjk,j,k->bm", hes, v, v)], axis=1)
        sp = (g1 * g2).sum(axis=1) / (g1 * g1).sum(axis=1)
        perp = g2 - sp[:, None] * g1
        kappa = np.linalg.norm(perp, axis=1) / (g1 * g1).sum(axis=1)
        kappa_max = max(kappa_max, float(kappa.max()))
    reach_lb = math.inf if kappa_max == 0 else 1.0 / (2.0 * kappa_max)
    reach_lb = min(reach_lb, 1e6)
    # Holder bound: sup over scan of first/second differential norms
    d1 = 0.0
    d2 = 0.0
    for b in range(0, len(u), 2048):
        _, jb, hb = _poly_eval_derivs(powers, coeffs, u[b:b + 2048])
        full_j = np.concatenate([np.broadcast_to(np.eye(d), (len(jb), d, d)),
                                 jb], axis=1)
        d1 = max(d1, float(np.linalg.norm(full_j, ord=2, axis=(1, 2)).max()))
        d2 = max(d2, float(np.linalg.norm(hb.reshape(len(hb), -1), axis=1).max()))
    return reach_lb, max(d1, d2, 1.0)


def _poly_graph_volume(powers, coeffs, R, d):
    per_axis = 101 if d == 1 else 61
    u = _ball_grid(d, R, per_axis)
    _, jac, _ = _poly_eval_derivs(powers, coeffs, u)
    full_j = np.concatenate([np.broadcast_to(np.eye(d), (len(u), d, d)), jac], axis=1)
    gram = np.einsum("bij,bik->bjk", full_j, full_j)
    dets = np.sqrt(np.linalg.det(gram))
    cell = (2 * R / (per_axis - 1)) ** d
    return float(dets.sum() * cell)


# ---------------------------------------------------------------------------
# operations


def sample_measure(manifold: EmbeddedManifold, density, n: int, seed) :
    """n i.i.d. ambient points from density * dHausdorff, uniform weights.

    ``density`` is a callable on ambient points (vectorized) or None for the
    uniform measure. Sampling is by rejection against the uniform Hausdorff
    proposal; for poly_graph the proposal is uniform on the chart ball with
    the area Jacobian det(grad Phi grad^T Phi)^(1/2) folded into the
    acceptance ratio. Aborts if the acceptance rate falls below 1e-3.
    """
    from .diffusion import FiniteMeasure

    if n < 1:
        raise ValueError("n must be >= 1")
    rng = generator(seed)
    bound = _rejection_bound(manifold, density)
    out = []
    got, proposed = 0, 0
    while got < n:
        batch = max(1024, 2 * (n - got))
        if manifold.kind == "circle":
            th = rng.uniform(0, 2 * math.pi, batch)
            canon = manifold.radius * np.stack([np.cos(th), np.sin(th)], axis=1)
            jac = np.ones(batch)
        elif manifold.kind == "sphere":
            g = rng.standard_normal((batch, manifold.canonical_dim))
            canon = manifold.radius * g / np.linalg.norm(g, axis=1, keepdims=True)
            jac = np.ones(batch)
        else:
            u = rng.uniform(-manifold.chart_domain, manifold.chart_domain,
                            (batch, manifold.d))
            inside = np.linalg.norm(u, axis=1) <= manifold.chart_domain
            u = u[inside]
            _, j, _ = _poly_eval_derivs(manifold.poly_powers, manifold.poly_coeffs, u)
            full_j = np.concatenate(
                [np.broadcast_to(np.eye(manifold.d), (len(u), manifold.d, manifold.d)),
                 j], axis=1)
            gram = np.einsum("bij,bik->bjk", full_j, full_j)
            jac = np.sqrt(np.linalg.det(gram))
            canon = manifold._graph(u)
        pts = manifold.embed(canon)
        f = np.ones(len(pts)) if density is None else np.asarray(density(pts), float)
        if (f < 0).any():
            raise ValueError("density must be nonnegative")
        w = f * jac
        if w.max() > bound:
            raise RuntimeError("density exceeds its scanned supremum; the "
                               "rejection bound is unreliable for this density")
        accept = rng.uniform(0, bound, len(pts)) < w
        proposed += batch
        kept = pts[accept]
        got += len(kept)
        out.append(kept)
        if proposed >= 8192 and got / proposed < 1e-3:
            raise RuntimeError(
                f"rejection acceptance rate {got/proposed:.2e} below 1e-3; "
                "density is too peaked for the uniform proposal")
    pts = np.concatenate(out)[:n]
    return FiniteMeasure(pts, np.full(n, 1.0 / n))


def _rejection_bound(manifold: EmbeddedManifold, density) -> float:
    """Supremum of density x proposal-Jacobian over a dense deterministic scan."""
    if manifold.kind == "poly_graph":
        per_axis = int(math.ceil(20_000 ** (1.0 / manifold.d)))
        u = _ball_grid(manifold.d, manifold.chart_domain, per_axis)
        _, j, _ = _poly_eval_derivs(manifold.poly_powers, manifold.poly_coeffs, u)
        full_j = np.concatenate(
            [np.broadcast_to(np.eye(manifold.d), (len(u), manifold.d, manifold.d)),
             j], axis=1)
        jac = np.sqrt(np.linalg.det(np.einsum("bij,bik->bjk", full_j, full_j)))
        pts = manifold.embed(manifold._graph(u))
    else:
        jac = 1.0
        if manifold.kind == "circle":
            th = np.linspace(0, 2 * math.pi, 20_000, endpoint=False)
            canon = manifold.radius * np.stack([np.cos(th), np.sin(th)], axis=1)
        else:
            canon = manifold.radius * _fibonacci_sphere(20_000)
        pts = manifold.embed(canon)
    f = np.ones(len(pts)) if density is None else np.asarray(density(pts), float)
    return float(np.max(f * jac)) * 1.05 + 1e-300


def eps_net(points: np.ndarray, epsilon: float) -> EpsNet:
    """Greedy pass in input order: admit a point iff it is > eps/2 away from
    every admitted center. The result is eps-dense over the input and
    eps/2-separated."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        return EpsNet(points.reshape(0, points.shape[-1] if points.ndim > 1 else 0),
                      epsilon)
    centers = [points[0]]
    arr = points[0][None]
    for p in points[1:]:
        if np.min(np.linalg.norm(arr - p, axis=1)) > epsilon / 2.0:
            centers.append(p)
            arr = np.asarray(centers)
    return EpsNet(np.asarray(centers), epsilon)


def tangent_projector(manifold: EmbeddedManifold, y: np.ndarray) -> np.ndarray:
    """Symmetric idempotent D x D matrix of rank d projecting onto T_yM."""
    t = manifold.tangent_basis(y)
    return t @ t.T
