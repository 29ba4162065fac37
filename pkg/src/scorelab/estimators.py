"""Structured score estimators: per-anchor ReLU nets on low-dimensional
anchor subspaces, combined by distance-gap weights, trained by SGD on the
Monte Carlo denoising risk.

Networks follow the composition (A_L relu + b_L) o ... o (A_1 relu + b_1),
i.e. relu is applied before each affine map. Because the first relu would
discard sign information, the structured model feeds each net the lifted
features (t, xi, -xi).

The estimator evaluates, for anchors G_i with isometric frames L_i,

    phi(t, x) = (c_t / sigma_t^2) *
        sum_i rho_i w_i (G_i + L_i e_i) / sum_i rho_i w_i  -  x / sigma_t^2,

where e_i, w_i are the per-anchor nets evaluated at xi_i = L_i^T (x - c_t G_i),
w_i is floored at n^-C_w, e_i is clipped to the envelope
|c_t e_i - xi_i| / sigma_t <= C_e sqrt(C_dim log n) per coordinate, and the
combined prediction is clipped to a diameter bound. All gradients are
computed by hand (reverse mode) and checked against finite differences in
the tests.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from .diffusion import ScoreField, ou_coeffs
from .fit import partition_rho, span_basis
from .rng import generator


# ---------------------------------------------------------------------------
# plain ReLU networks


@dataclass
class ReluNet:
    """Fully connected net with relu-before-affine layers and an entry bound."""

    weights: list        # A_l, shape (out_l, in_l)
    biases: list         # b_l, shape (out_l,)
    bound: float = 10.0  # B: max |entry| kept after every training step
    sparsity: int = 0    # S: declared budget, tracked but not enforced

    def __post_init__(self):
        for l, (a, b) in enumerate(zip(self.weights, self.biases)):
            if a.ndim != 2 or b.shape != (a.shape[0],):
                raise ValueError(f"layer {l}: inconsistent shapes {a.shape}, {b.shape}")
            if l > 0 and a.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: input dim {a.shape[1]} does not match "
                                 f"previous output {self.weights[l-1].shape[0]}")
        if self.max_entry() > self.bound * (1 + 1e-12):
            raise ValueError("parameter entries exceed the bound B")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def max_entry(self) -> float:
        return max(max(np.abs(a).max(), np.abs(b).max())
                   for a, b in zip(self.weights, self.biases))

    def clip_(self) -> None:
        for a, b in zip(self.weights, self.biases):
            np.clip(a, -self.bound, self.bound, out=a)
            np.clip(b, -self.bound, self.bound, out=b)


def net_init(dims: list[int], rng, bound: float = 10.0, scale: float = 0.7,
             last_bias: float = 0.0) -> ReluNet:
    """Random net with layer dims [in, h1, ..., out]; He-style scaling."""
    rng = generator(rng)
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.standard_normal((fan_out, fan_in)) * scale / math.sqrt(fan_in)
        ws.append(np.clip(w, -bound, bound))
        bs.append(np.zeros(fan_out))
    bs[-1][:] = np.clip(last_bias, -bound, bound)
    return ReluNet(ws, bs, bound=bound)


def net_forward(net: ReluNet, x: np.ndarray):
    """Forward pass returning (output, cache); x is (B, in) or (in,)."""
    h = np.atleast_2d(np.asarray(x, dtype=float))
    if h.shape[1] != net.in_dim:
        raise ValueError(f"input dim {h.shape[1]} does not match net ({net.in_dim})")
    pre = [h]
    for a, b in zip(net.weights, net.biases):
        h = np.maximum(pre[-1], 0.0) @ a.T + b
        pre.append(h)
    return pre[-1], pre


def net_eval(net: ReluNet, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; single inputs give single outputs."""
    out, _ = net_forward(net, x)
    return out[0] if np.ndim(x) == 1 else out


def net_grad(net: ReluNet, x: np.ndarray, upstream: np.ndarray):
    """Reverse-mode parameter gradients of upstream . net(x), summed over the
    batch; relu subgradient at 0 is 0. Returns (weight grads, bias grads,
    input grad)."""
    _, pre = net_forward(net, x)
    g = np.atleast_2d(np.asarray(upstream, dtype=float))
    if g.shape[1] != net.out_dim or g.shape[0] != pre[-1].shape[0]:
        raise ValueError("upstream shape does not match the net output")
    return _grad_from_cache(net, pre, g)


def _grad_from_cache(net: ReluNet, pre: list, upstream: np.ndarray):
    g = upstream
    gw = [None] * net.depth
    gb = [None] * net.depth
    for l in range(net.depth - 1, -1, -1):
        act = np.maximum(pre[l], 0.0)
        gw[l] = g.T @ act
        gb[l] = g.sum(axis=0)
        g = (g @ net.weights[l]) * (pre[l] > 0.0)
    return gw, gb, g


# ---------------------------------------------------------------------------
# anchor construction


@dataclass(frozen=True)
class AnchorFrames:
    anchors: np.ndarray       # (N, D)
    frames: list              # L_i: (D, d_i), orthonormal columns
    flags: list               # per-anchor: None | "pca_fallback" | "truncated"


def build_anchor_frames(samples: np.ndarray, n_anchors: int, eps_n: float,
                        seed, d_cap: int | None = None,
                        c_dim: float = 2.0) -> AnchorFrames:
    """Uniform subsample of anchor points plus per-anchor neighbor-span frames.

    Frame dimension is capped at d_cap (default ceil(c_dim log n)); anchors
    with no neighbors inside eps_n fall back to the global PCA frame and are
    flagged.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = len(samples)
    if n_anchors > n:
        raise ValueError("cannot draw more anchors than samples")
    cap = d_cap if d_cap is not None else max(1, math.ceil(c_dim * math.log(max(n, 2))))
    rng = generator(seed)
    idx = rng.choice(n, size=n_anchors, replace=False)
    anchors = samples[idx]
    centered = samples - samples.mean(axis=0)
    global_basis = span_basis(centered)[:, :cap]
    frames, flags = [], []
    for g in anchors:
        diffs = samples - g
        norms = np.linalg.norm(diffs, axis=1)
        v = diffs[(norms <= eps_n) & (norms > 0)]
        if len(v) == 0:
            frames.append(global_basis)
            flags.append("pca_fallback")
            continue
        basis = span_basis(v)
        if basis.shape[1] > cap:
            frames.append(basis[:, :cap])
            flags.append("truncated")
        else:
            frames.append(basis)
            flags.append(None)
    return AnchorFrames(anchors, frames, flags)


# ---------------------------------------------------------------------------
# the structured estimator


def rho_weight(t: float, x: np.ndarray, anchors: np.ndarray,
               c_const: float) -> np.ndarray:
    """Distance-gap weights rho((|x - c_t G_i|^2 - min_j |x - c_t G_j|^2) /
    (2 c_const)); the minimizing anchor always gets weight 1."""
    if c_const <= 0:
        raise ValueError("c_const must be positive")
    anchors = np.atleast_2d(anchors)
    if len(anchors) == 0:
        raise ValueError("need at least one anchor")
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    c = ou_coeffs(t).c
    sq = ((x2 - c * anchors[:, None, :]) ** 2).sum(axis=2).T  # (B, N)
    gap = sq - sq.min(axis=1, keepdims=True)
    rho = partition_rho(gap / (2.0 * c_const))
    return rho[0] if np.ndim(x) == 1 else rho


@dataclass
class StructuredScore:
    """Anchored convex-combination score model with per-anchor ReLU nets."""

    anchors: np.ndarray
    frames: list
    nets_e: list
    nets_w: list
    n_data: int
    t_lo: float
    t_hi: float
    d: int = 1
    c_log: float = 4.0
    c_w: float = 4.0
    c_e: float = 2.0
    c_dim: float = 2.0
    e_norm_bound: float = 2.0

    def __post_init__(self):
        for i, f in enumerate(self.frames):
            if np.abs(f.T @ f - np.eye(f.shape[1])).max() > 1e-10:
                raise ValueError(f"frame {i} is not isometric to 1e-10")
        if not (0 < self.t_lo < self.t_hi):
            raise ValueError("invalid time interval")

    @property
    def n_anchors(self) -> int:
        return len(self.anchors)

    @property
    def weight_floor(self) -> float:
        return float(self.n_data) ** (-self.c_w)

    @property
    def envelope(self) -> float:
        return self.c_e * math.sqrt(self.c_dim * math.log(max(self.n_data, 2)))

    def c_const(self, t: float) -> float:
        s2 = -math.expm1(-2.0 * t)
        logn = math.log(max(self.n_data, 2))
        return 960.0 * s2 * (self.d * (logn + 4.0 * self.c_log) + 8.0 * logn)

    def as_field(self, name: str = "structured") -> ScoreField:
        return ScoreField(lambda t, x: structured_eval(self, t, x),
                          self.anchors.shape[1], self.t_lo, self.t_hi, name)


def structured_build(anchor_frames: AnchorFrames, n_data: int, t_lo: float,
                     t_hi: float | None, rng, hidden: tuple[int, ...] = (16, 16),
                     bound: float = 10.0, **consts) -> StructuredScore:
    """Fresh model over the given anchors: weight nets start near 1, mean
    nets near 0 (so the initial prediction is an anchor average)."""
    rng = generator(rng)
    nets_e, nets_w = [], []
    for f in anchor_frames.frames:
        d_i = f.shape[1]
        dims_in = 1 + 2 * d_i
        nets_e.append(net_init([dims_in, *hidden, d_i], rng, bound=bound, scale=0.3))
        nets_w.append(net_init([dims_in, *hidden, 1], rng, bound=bound, scale=0.3,
                               last_bias=1.0))
    if t_hi is None:
        t_hi = 2.0 * t_lo  # doubling grid default
    span = np.linalg.norm(anchor_frames.anchors, axis=1).max()
    consts.setdefault("e_norm_bound", 2.0 * span + 1.0)
    return StructuredScore(anchor_frames.anchors, list(anchor_frames.frames),
                           nets_e, nets_w, n_data, t_lo, t_hi, **consts)


def _structured_forward(model: StructuredScore, t: float, x: np.ndarray):
    """Forward pass with caches for the hand-written backward."""
    co = ou_coeffs(t)
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    nb = len(x2)
    rho = rho_weight(t, x2, model.anchors, model.c_const(t))
    cache = {"co": co, "x": x2, "rho": rho, "per_anchor": []}
    env = model.envelope
    floor = model.weight_floor
    num = np.zeros_like(x2)
    den = np.zeros(nb)
    for i in range(model.n_anchors):
        li = model.frames[i]
        xi = (x2 - co.c * model.anchors[i]) @ li
        feat = np.concatenate([np.full((nb, 1), t), xi, -xi], axis=1)
        raw_e, pre_e = net_forward(model.nets_e[i], feat)
        lo = (xi - co.sigma * env) / co.c
        hi = (xi + co.sigma * env) / co.c
        e = np.clip(raw_e, lo, hi)
        e_mask = (raw_e > lo) & (raw_e < hi)
        raw_w, pre_w = net_forward(model.nets_w[i], feat)
        w = np.maximum(raw_w[:, 0], floor)
        w_mask = raw_w[:, 0] > floor
        amb = model.anchors[i] + e @ li.T
        u = rho[:, i] * w
        num += u[:, None] * amb
        den += u
        cache["per_anchor"].append(
            {"xi": xi, "feat": feat, "pre_e": pre_e, "e_mask": e_mask,
             "pre_w": pre_w, "w_mask": w_mask, "amb": amb, "u": u, "w": w})
    fallback = den <= 0.0
    if fallback.any():
        # all rho vanished (cannot happen for the gap form, but stay total):
        # nearest anchor wins with weight 1
        sq = ((x2[:, None, :] - co.c * model.anchors[None, :, :]) ** 2).sum(axis=2)
        nearest = sq.argmin(axis=1)
        for row in np.nonzero(fallback)[0]:
            amb = cache["per_anchor"][nearest[row]]["amb"][row]
            num[row] = amb
            den[row] = 1.0
    cache["fallback"] = fallback
    e_bar = num / den[:, None]
    norms = np.linalg.norm(e_bar, axis=1)
    scale = np.minimum(1.0, model.e_norm_bound / np.maximum(norms, 1e-300))
    e_hat = e_bar * scale[:, None]
    cache.update(den=den, e_bar=e_bar, scale=scale, norms=norms)
    phi = (co.c * e_hat - x2) / co.sigma**2
    return phi, cache


def structured_eval(model: StructuredScore, t: float, x: np.ndarray) -> np.ndarray:
    """Score prediction; accepts a single point (D,) or a batch (B, D)."""
    if not (model.t_lo <= t <= model.t_hi):
        raise ValueError(f"t={t} outside the model interval "
                         f"[{model.t_lo}, {model.t_hi}]")
    phi, _ = _structured_forward(model, t, x)
    return phi[0] if np.ndim(x) == 1 else phi


def _structured_backward(model: StructuredScore, cache, g_phi: np.ndarray):
    """Parameter gradients of sum(g_phi * phi); returns per-anchor grads."""
    co = cache["co"]
    g_ehat = (co.c / co.sigma**2) * g_phi
    # through the norm clip e_hat = scale * e_bar
    scale = cache["scale"]
    e_bar = cache["e_bar"]
    norms = np.maximum(cache["norms"], 1e-300)
    clipped = scale < 1.0
    g_ebar = g_ehat * scale[:, None]
    if clipped.any():
        unit = e_bar[clipped] / norms[clipped, None]
        g_ebar[clipped] -= (scale[clipped, None] * unit
                            * (unit * g_ehat[clipped]).sum(axis=1, keepdims=True))
    den = cache["den"]
    rho = cache["rho"]
    live = ~cache["fallback"]
    grads = []
    for i in range(model.n_anchors):
        pa = cache["per_anchor"][i]
        g_u = ((pa["amb"] - e_bar) * g_ebar).sum(axis=1) / den
        g_amb = (pa["u"] / den)[:, None] * g_ebar
        g_u = np.where(live, g_u, 0.0)
        g_amb = np.where(live[:, None], g_amb, 0.0)
        g_e = (g_amb @ model.frames[i]) * pa["e_mask"]
        g_w = (rho[:, i] * g_u * pa["w_mask"])[:, None]
        gw_e, gb_e, _ = _grad_from_cache(model.nets_e[i], pa["pre_e"], g_e)
        gw_w, gb_w, _ = _grad_from_cache(model.nets_w[i], pa["pre_w"], g_w)
        grads.append(((gw_e, gb_e), (gw_w, gb_w)))
    return grads


def dsm_batch_loss_and_grads(model: StructuredScore, t: float, x: np.ndarray,
                             target: np.ndarray, weight: float = 1.0):
    """Monte Carlo batch loss weight * mean |phi(t,x) - target|^2 and its
    parameter gradients."""
    phi, cache = _structured_forward(model, t, x)
    resid = phi - np.atleast_2d(target)
    loss = weight * float((resid**2).sum(axis=1).mean())
    g_phi = (2.0 * weight / len(resid)) * resid
    return loss, _structured_backward(model, cache, g_phi)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    """SGD schedule for one doubling interval [t_lo, t_hi]."""

    t_lo: float
    t_hi: float | None = None   # defaults to 2 * t_lo
    step_size: float = 1e-2
    steps: int = 1000
    batch_size: int = 16
    mc_draws: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.t_lo <= 0:
            raise ValueError("t_lo must be positive")
        hi = self.t_hi if self.t_hi is not None else 2.0 * self.t_lo
        if hi <= self.t_lo:
            raise ValueError("t_hi must exceed t_lo")

    @property
    def interval(self) -> tuple[float, float]:
        return self.t_lo, (self.t_hi if self.t_hi is not None else 2.0 * self.t_lo)


@dataclass(frozen=True)
class TrainResult:
    model: StructuredScore
    risk_trace: np.ndarray
    diverged: bool


def erm_train(init: StructuredScore, samples: np.ndarray,
              config: TrainConfig) -> TrainResult:
    """Plain constant-step SGD on the Monte Carlo denoising risk.

    Each step draws one time point uniformly from the interval, a sample
    batch, and fresh noise; the (b - a) factor keeps the per-step loss an
    unbiased estimate of the interval risk. Parameters are clipped to the
    entry bound B after every step. Aborts (flagged) if the batch risk
    exceeds 10x its initial value.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(samples) == 0:
        raise ValueError("training needs at least one sample")
    model = copy.deepcopy(init)
    a, b = config.interval
    if not (init.t_lo <= a and b <= init.t_hi):
        raise ValueError("training interval exceeds the model interval")
    rng = generator(config.seed)
    trace = []
    diverged = False
    for _ in range(config.steps):
        t = float(rng.uniform(a, b))
        co = ou_coeffs(t)
        idx = rng.integers(0, len(samples), size=config.batch_size)
        y = np.repeat(samples[idx], config.mc_draws, axis=0)
        z = rng.standard_normal(y.shape)
        x = co.c * y + co.sigma * z
        loss, grads = dsm_batch_loss_and_grads(model, t, x, -z / co.sigma,
                                               weight=b - a)
        trace.append(loss)
        if len(trace) > 1 and loss > 10.0 * trace[0]:
            diverged = True
            break
        for i, ((gw_e, gb_e), (gw_w, gb_w)) in enumerate(grads):
            _sgd_step(model.nets_e[i], gw_e, gb_e, config.step_size)
            _sgd_step(model.nets_w[i], gw_w, gb_w, config.step_size)
        for net in (*model.nets_e, *model.nets_w):
            assert net.max_entry() <= net.bound * (1 + 1e-12)
    return TrainResult(model, np.asarray(trace), diverged)


def _sgd_step(net: ReluNet, gw, gb, lr: float) -> None:
    for a, g in zip(net.weights, gw):
        a -= lr * g
    for b, g in zip(net.biases, gb):
        b -= lr * g
    net.clip_()


# ---------------------------------------------------------------------------
# checkpoints


CHECKPOINT_VERSION = 1


def save_model(model: StructuredScore, path) -> None:
    """Self-describing npz bundle: header, anchors, frames, layer matrices."""
    arrays = {
        "version": np.array([CHECKPOINT_VERSION]),
        "anchors": model.anchors,
        "consts": np.array([model.n_data, model.t_lo, model.t_hi, model.d,
                            model.c_log, model.c_w, model.c_e, model.c_dim,
                            model.e_norm_bound]),
    }
    for i, f in enumerate(model.frames):
        arrays[f"frame_{i}"] = f
        for l, (a, b) in enumerate(zip(model.nets_e[i].weights,
                                       model.nets_e[i].biases)):
            arrays[f"e_{i}_w_{l}"] = a
            arrays[f"e_{i}_b_{l}"] = b
        for l, (a, b) in enumerate(zip(model.nets_w[i].weights,
                                       model.nets_w[i].biases)):
            arrays[f"w_{i}_w_{l}"] = a
            arrays[f"w_{i}_b_{l}"] = b
        arrays[f"bounds_{i}"] = np.array([model.nets_e[i].bound,
                                          model.nets_w[i].bound])
    np.savez(path, **arrays)


def load_model(path) -> StructuredScore:
    data = np.load(path)
    if int(data["version"][0]) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data['version'][0]}")
    n_data, t_lo, t_hi, d, c_log, c_w, c_e, c_dim, e_bound = data["consts"]
    anchors = data["anchors"]
    frames, nets_e, nets_w = [], [], []
    for i in range(len(anchors)):
        frames.append(data[f"frame_{i}"])
        be, bw = data[f"bounds_{i}"]
        ws, bs, l = [], [], 0
        while f"e_{i}_w_{l}" in data:
            ws.append(data[f"e_{i}_w_{l}"].copy())
            bs.append(data[f"e_{i}_b_{l}"].copy())
            l += 1
        nets_e.append(ReluNet(ws, bs, bound=float(be)))
        ws, bs, l = [], [], 0
        while f"w_{i}_w_{l}" in data:
            ws.append(data[f"w_{i}_w_{l}"].copy())
            bs.append(data[f"w_{i}_b_{l}"].copy())
            l += 1
        nets_w.append(ReluNet(ws, bs, bound=float(bw)))
    return StructuredScore(anchors, frames, nets_e, nets_w, int(n_data),
                           float(t_lo), float(t_hi), d=int(d), c_log=float(c_log),
                           c_w=float(c_w), c_e=float(c_e), c_dim=float(c_dim),
                           e_norm_bound=float(e_bound))
