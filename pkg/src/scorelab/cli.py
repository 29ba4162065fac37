"""Experiment runner: named scenarios, TOML run specs, CSV/JSON artifacts.

Usage:
    lab list [--json]
    lab validate <spec.toml>
    lab run <spec.toml>

Exit codes: 0 success, 1 error (bad spec, unknown scenario), 2 when a
scenario's bound check reports violations above its threshold.

A run spec is a TOML table; every key is optional except ``scenario`` and
falls back to the scenario's defaults (printed by ``lab list --json``). Runs
are deterministic: identical spec and seed produce byte-identical CSVs. The
default output directory is $LAB_OUT_DIR or ./runs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import concentration as conc
from . import estimators as est
from . import fit as fitmod
from . import metrics
from . import samplers
from .diffusion import (FiniteMeasure, exact_score_field, forward_samples,
                        ou_coeffs, sm_loss, zero_score_field)
from .geometry import eps_net, make_manifold, sample_measure
from .rng import substreams

SCHEMA_VERSION = 1

SCENARIOS: dict[str, dict] = {}


def scenario(name: str, description: str, defaults: dict):
    def wrap(fn):
        SCENARIOS[name] = {"fn": fn, "description": description,
                           "defaults": defaults}
        return fn
    return wrap


# ---------------------------------------------------------------------------
# config plumbing


class SpecError(ValueError):
    pass


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    out = dict(defaults)
    for k, v in override.items():
        where = f"{path}.{k}" if path else k
        if k not in defaults:
            raise SpecError(f"unknown config key: {where}")
        if isinstance(defaults[k], dict):
            if not isinstance(v, dict):
                raise SpecError(f"config key {where} must be a table")
            out[k] = _merge(defaults[k], v, where)
        else:
            out[k] = v
    return out


def _validate_sweeps(cfg: dict, path: str = "") -> None:
    for k, v in cfg.items():
        where = f"{path}.{k}" if path else k
        if isinstance(v, dict):
            _validate_sweeps(v, where)
        elif isinstance(v, list) and len(v) == 0:
            raise SpecError(f"sweep axis {where} is empty")


def load_spec(path) -> dict:
    raw = Path(path).read_bytes()
    spec = tomllib.loads(raw.decode())
    if "scenario" not in spec:
        raise SpecError("missing required key: scenario")
    name = spec.pop("scenario")
    if name not in SCENARIOS:
        raise SpecError(f"unknown scenario: {name}")
    version = spec.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SpecError(f"unsupported schema_version: {version}")
    out_dir = spec.pop("output_dir", None)
    seed = spec.pop("seed", 0)
    cfg = _merge(SCENARIOS[name]["defaults"], spec)
    _validate_sweeps(cfg)
    return {"scenario": name, "seed": int(seed), "output_dir": out_dir,
            "config": cfg, "sha256": hashlib.sha256(raw).hexdigest()}


def _manifold_from(block: dict, D: int, seed: int):
    kind = block["kind"]
    if kind == "circle":
        return make_manifold(("circle", block["radius"]), D, seed)
    if kind == "sphere":
        return make_manifold(("sphere", block["d"], block["radius"]), D, seed)
    if kind == "poly_graph":
        return make_manifold(("poly_graph", block["powers"], block["coeffs"],
                              block["chart_domain"]), D, seed)
    raise SpecError(f"unknown manifold kind: {kind}")


def write_csv(path, header: list[str], rows: list[list]) -> None:
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        if isinstance(v, (np.integer,)):
            return str(int(v))
        return v

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


# ---------------------------------------------------------------------------
# concentration scenarios (one per check, shared driver)

_CONC_COMMON = {
    "manifold": {"kind": "circle", "radius": 1.0, "d": 2,
                 "powers": [[2]], "coeffs": [[1.0]], "chart_domain": 0.3},
    "measure": {"n": 500},
    "sweep": {"D": [8, 64, 512]},
    "check": {"t": 0.05, "trials": 2000, "delta": 0.05, "eps": 0.1,
              "net_eps": 0.3, "gammas": [1e-3, 1e-2, 1e-1],
              "fit_n": 400, "fit_beta": 2.0},
}


def _conc_driver(check: str, cfg: dict, seed: int, out: Path):
    ck = cfg["check"]
    files, summaries = [], {}
    worst_excess = 0.0
    streams = substreams(seed, 2 * len(cfg["sweep"]["D"]))
    medians = {}
    for j, D in enumerate(cfg["sweep"]["D"]):
        man = _manifold_from(cfg["manifold"], int(D), seed)
        mu = sample_measure(man, None, cfg["measure"]["n"], streams[2 * j])
        trial_seed = streams[2 * j + 1]
        if check == "inner_product":
            rep = conc.check_inner_product_sup(man, ck["eps"], ck["delta"],
                                               ck["trials"], trial_seed)
        elif check == "tangent_projection":
            rep = conc.check_tangent_projection(man, ck["delta"], ck["trials"],
                                                trial_seed)
        elif check == "posterior_band":
            rep = conc.check_posterior_band(man, mu, ck["t"], ck["delta"],
                                            ck["trials"], trial_seed)
        elif check == "denoiser_variance":
            rep = conc.check_denoiser_variance(man, mu, ck["t"], ck["trials"],
                                               trial_seed)
        elif check == "weight_radius":
            net = eps_net(mu.support, ck["net_eps"])
            rep = conc.check_weight_radius(man, mu, net, ck["t"], ck["delta"],
                                           ck["trials"], trial_seed)
        elif check == "drift_freeze":
            rep = conc.check_drift_freeze(man, mu, ck["t"], ck["gammas"],
                                          ck["trials"], trial_seed)
        elif check == "surface_gp":
            surf = fitmod.fit_surface(mu.support[: ck["fit_n"]], man.d,
                                      ck["fit_beta"])
            rep = conc.check_surface_gp(surf, man, ck["delta"], ck["trials"],
                                        trial_seed)
        else:  # pragma: no cover - registry controls the names
            raise SpecError(f"unknown concentration check: {check}")
        fname = out / f"{check}_D{D}.csv"
        rep.to_csv(fname)
        files.append(fname)
        summaries[f"D={D}"] = rep.summary()
        medians[int(D)] = float(np.median(rep.stats))
        if rep.delta is not None:
            worst_excess = max(worst_excess,
                               rep.violation_rate - rep.violation_threshold())
    ds = sorted(medians)
    ratio = (medians[ds[-1]] / medians[ds[0]]) if medians[ds[0]] > 0 else math.nan
    summary = {"per_config": summaries,
               "median_ratio_largest_over_smallest_D": ratio}
    code = 2 if worst_excess > 0 else 0
    return files, summary, code


def _register_concentration():
    names = ["inner_product", "tangent_projection", "posterior_band",
             "denoiser_variance", "weight_radius", "drift_freeze", "surface_gp"]
    descs = {
        "inner_product": "sup inner product of noise with manifold chords vs bound",
        "tangent_projection": "sup tangent projection of noise vs bound",
        "posterior_band": "posterior log-density band membership",
        "denoiser_variance": "denoiser residual second moment vs bound, D-sweep",
        "weight_radius": "distance-gap sandwich of squared anchor radii",
        "drift_freeze": "frozen-anchor drift error scaling in the anchor gap",
        "surface_gp": "noise correlation with fitted-surface displacement",
    }
    for n in names:
        def make(nm):
            def fn(cfg, seed, out):
                return _conc_driver(nm, cfg, seed, out)
            return fn
        SCENARIOS[f"concentration.{n}"] = {
            "fn": make(n), "description": descs[n],
            "defaults": json.loads(json.dumps(_CONC_COMMON))}


_register_concentration()


# ---------------------------------------------------------------------------
# sampler scenarios


def _w1_uniform(a: np.ndarray, b: np.ndarray) -> float:
    return metrics.w_p(a, b, p=1)[0]


def _excess_resolution(floors) -> float:
    """Detectability scale of the deconvolved excess sqrt(raw^2 - floor^2).

    When the true scheme error is zero, raw - floor fluctuates with the seed
    spread s of the floor estimate, and the deconvolution amplifies a 3-sigma
    fluctuation to sqrt(2 * floor * 3 * sqrt(2) * s); excesses below this
    scale are indistinguishable from measurement noise."""
    floors = np.asarray(floors, dtype=float)
    s = float(floors.std())
    return math.sqrt(6.0 * math.sqrt(2.0) * float(np.median(floors)) * s)


def _circle_cloud_measure(n_pts: int, radius: float, D: int, seed: int):
    man = _manifold_from({"kind": "circle", "radius": radius}, D, seed)
    th = np.linspace(0, 2 * math.pi, n_pts, endpoint=False)
    canon = radius * np.stack([np.cos(th), np.sin(th)], axis=1)
    return FiniteMeasure.from_points(man.embed(canon))


@scenario("sampler.compare",
          "classic vs modified terminal W1 across ambient dimension",
          {"measure": {"n": 50, "radius": 1.0},
           "schedule": {"kappa": 0.25, "L": 4, "K": 32},
           "sweep": {"D": [16, 256], "seeds": 10},
           "paths": {"n_paths": 1024}})
def _sampler_compare(cfg, seed, out: Path):
    """Terminal W1 against an independent truth cloud, per scheme and D.

    Empirical W1 between finite clouds carries a sampling floor of order
    sigma_Tunder * sqrt(D) even for a perfect sampler, so the scheme error is
    reported as the deconvolved excess sqrt(max(W1^2 - floor^2, 0)) with the
    floor measured from a second independent truth cloud. An error is called
    measurable only above the floor-estimation resolution (3 x the seed
    spread of the floor)."""
    part = samplers.make_schedule(cfg["schedule"]["kappa"], cfg["schedule"]["L"],
                                  cfg["schedule"]["K"])
    rows = []
    d_list = [int(D) for D in cfg["sweep"]["D"]]
    n_seeds = cfg["sweep"]["seeds"]
    n_paths = cfg["paths"]["n_paths"]
    streams = substreams(seed, len(d_list) * n_seeds * 3)
    si = 0
    for D in d_list:
        mu = _circle_cloud_measure(cfg["measure"]["n"], cfg["measure"]["radius"],
                                   D, seed)
        field = exact_score_field(mu)
        for sd in range(n_seeds):
            truth_rng, truth_rng2, path_seed = streams[si:si + 3]
            si += 3
            truth = forward_samples(mu, part.T_under, n_paths, truth_rng)[2]
            truth2 = forward_samples(mu, part.T_under, n_paths, truth_rng2)[2]
            floor = _w1_uniform(truth2, truth)
            for scheme in ("classic", "modified"):
                run = samplers.SamplerRun(scheme, field, part, n_paths,
                                          int(path_seed.integers(2**31)))
                raw = _w1_uniform(samplers.run_backward(run), truth)
                excess = math.sqrt(max(raw**2 - floor**2, 0.0))
                rows.append([scheme, D, sd, raw, floor, excess])
    f = out / "scheme_compare.csv"
    write_csv(f, ["scheme", "D", "seed", "w1_raw", "w1_floor", "w1_excess"], rows)
    d_lo, d_hi = d_list[0], d_list[-1]
    resolution = {D: _excess_resolution([r[4] for r in rows if r[1] == D])
                  for D in d_list}
    summary = {"resolution": {str(k): v for k, v in resolution.items()}}
    for scheme in ("classic", "modified"):
        med = {D: float(np.median([r[5] for r in rows
                                   if r[0] == scheme and r[1] == D]))
               for D in d_list}
        growth = med[d_hi] / max(med[d_lo], resolution[d_lo], 1e-12)
        summary[scheme] = {
            "median_excess": {str(k): v for k, v in med.items()},
            "growth_lower_bound" if scheme == "classic" else "growth": growth,
            "measurable": {str(D): bool(med[D] > resolution[D]) for D in d_list},
            # no-growth certificate: high-D error below 1.3x low-D error or
            # below the measurement resolution
            "within_growth_1.3": bool(med[d_hi] <= max(1.3 * med[d_lo],
                                                       resolution[d_hi])),
        }
    return [f], summary, 0


@scenario("sampler.k_sweep",
          "modified-scheme W1 error certificate decay in the step count K",
          {"measure": {"n": 50, "radius": 1.0, "D": 16},
           "sweep": {"K": [16, 64, 256], "seeds": 10},
           "paths": {"n_paths": 1024},
           "certificate": {"trials": 300, "nodes_per_step": 2}})
def _sampler_k_sweep(cfg, seed, out: Path):
    """Decay of the modified scheme's sampling error in the step count.

    Two measurements per K. (i) Terminal W1 against an independent truth
    cloud, with the sampling floor and the deconvolved excess recorded: at
    desk scale the scheme error sits below the empirical-W1 resolution at
    every K, which certifies only that it does not grow. (ii) The W1/TV
    error certificate: the square root of the cumulated score-matching loss
    of the frozen-anchor drift, which is floor-free; its log-log slope in K
    carries the 1/sqrt(K) decay claim."""
    D = cfg["measure"]["D"]
    mu = _circle_cloud_measure(cfg["measure"]["n"], cfg["measure"]["radius"],
                               D, seed)
    field = exact_score_field(mu)
    rows = []
    ks = sorted(int(k) for k in cfg["sweep"]["K"])
    streams = substreams(seed, len(ks) * (cfg["sweep"]["seeds"] * 3 + 1))
    si = 0
    certs = {}
    for K in ks:
        if K % 4 != 0:
            raise SpecError(f"sweep.K entries must be divisible by 4, got {K}")
        # kappa L = 1 keeps T_bar = 2 across the sweep; K/4 uniform steps
        L = K // 4
        part = samplers.make_schedule(1.0 / L, L, K)
        cert = math.sqrt(samplers.discretized_score_loss(
            mu, part, cfg["certificate"]["trials"], streams[si],
            cfg["certificate"]["nodes_per_step"]))
        certs[K] = cert
        si += 1
        for sd in range(cfg["sweep"]["seeds"]):
            truth_rng, truth_rng2, path_seed = streams[si:si + 3]
            si += 3
            n_paths = cfg["paths"]["n_paths"]
            truth = forward_samples(mu, part.T_under, n_paths, truth_rng)[2]
            truth2 = forward_samples(mu, part.T_under, n_paths, truth_rng2)[2]
            floor = _w1_uniform(truth2, truth)
            run = samplers.SamplerRun("modified", field, part, n_paths,
                                      int(path_seed.integers(2**31)))
            raw = _w1_uniform(samplers.run_backward(run), truth)
            excess = math.sqrt(max(raw**2 - floor**2, 0.0))
            rows.append([K, sd, part.T_under, raw, floor, excess, cert])
    f = out / "k_sweep.csv"
    write_csv(f, ["K", "seed", "t_under", "w1_raw", "w1_floor", "w1_excess",
                  "w1_certificate"], rows)
    med = {K: float(np.median([r[5] for r in rows if r[0] == K])) for K in ks}
    res = {K: _excess_resolution([r[4] for r in rows if r[0] == K]) for K in ks}
    slope = float(np.polyfit(np.log(ks), np.log([certs[K] for K in ks]), 1)[0])
    return [f], {"median_excess": {str(k): v for k, v in med.items()},
                 "resolution": {str(k): v for k, v in res.items()},
                 "certificate": {str(k): certs[k] for k in ks},
                 "certificate_loglog_slope": slope,
                 "excess_below_resolution": bool(
                     all(med[k] <= max(res[k], 1.3 * med[ks[0]]) for k in ks))}, 0


# ---------------------------------------------------------------------------
# fit scenario


@scenario("fit.rate",
          "Hausdorff error of the fitted surface vs sample count",
          {"manifold": {"kind": "circle", "radius": 1.0, "D": 8},
           "fit": {"d": 1, "beta": 2.0, "C": 4.0},
           "sweep": {"n": [100, 200, 400, 800, 1600], "seeds": 5},
           # discretization must sit well below the smallest measured
           # distance, or the floors bend the fitted slope toward -1
           "hausdorff": {"grid_density": 100, "truth_spacing": 2e-4}})
def _fit_rate(cfg, seed, out: Path):
    man = _manifold_from(cfg["manifold"], cfg["manifold"]["D"], seed)
    truth = man.dense_points(cfg["hausdorff"]["truth_spacing"])
    ns = sorted(cfg["sweep"]["n"])
    d, beta = cfg["fit"]["d"], cfg["fit"]["beta"]
    streams = substreams(seed, len(ns) * cfg["sweep"]["seeds"])
    # C = 0 requests pilot calibration on the first (smallest-n) draw; the
    # resulting C is then held fixed across the sweep so the radius follows
    # the (C log n/(n-1))^(1/d) law
    c_cal = cfg["fit"]["C"] or None
    rows = []
    si = 0
    for n in ns:
        for sd in range(cfg["sweep"]["seeds"]):
            pts = sample_measure(man, None, n, streams[si]).support
            si += 1
            if c_cal is None:
                eps0 = fitmod.EpsConfig().resolve(pts, d)
                c_cal = eps0**d * (n - 1) / math.log(n)
            ecfg = fitmod.EpsConfig(C=c_cal)
            surf = fitmod.fit_surface(pts, d, beta, ecfg)
            dist = fitmod.hausdorff(surf, truth,
                                    cfg["hausdorff"]["grid_density"])
            max_vi = max(len(fitmod.neighbor_set(pts, i, surf.chart_radius))
                         for i in range(len(pts)))
            rows.append([int(n), int(sd), surf.chart_radius, dist, max_vi,
                         max_vi / math.log(n)])
    f = out / "fit_rate.csv"
    write_csv(f, ["n", "seed", "eps_n", "hausdorff", "max_vi",
                  "max_vi_over_logn"], rows)
    med = {n: float(np.median([r[3] for r in rows if r[0] == n])) for n in ns}
    slope = float(np.polyfit(np.log(ns), np.log([med[n] for n in ns]), 1)[0])
    vi_ratio = {n: float(np.median([r[5] for r in rows if r[0] == n])) for n in ns}
    return [f], {"median_hausdorff": {str(k): v for k, v in med.items()},
                 "loglog_slope": slope, "C": c_cal,
                 "vi_over_logn": {str(k): v for k, v in vi_ratio.items()}}, 0


# ---------------------------------------------------------------------------
# bounds scenarios


@scenario("bounds.sml_w2",
          "score-matching loss vs W2 transport bound on random measure pairs",
          {"pairs": {"count": 100, "points": 3, "D": 4},
           "interval": {"t_min": 0.2, "t_max": 1.0},
           "mc": {"trials": 300},
           "tight_pair": {"eps": 0.5}})
def _bounds_sml(cfg, seed, out: Path):
    rows = []
    worst = 0.0
    streams = substreams(seed, cfg["pairs"]["count"] + 1)
    for i in range(cfg["pairs"]["count"]):
        rng = streams[i]
        p = FiniteMeasure.from_points(rng.normal(size=(cfg["pairs"]["points"],
                                                       cfg["pairs"]["D"])))
        q = FiniteMeasure.from_points(rng.normal(size=(cfg["pairs"]["points"],
                                                       cfg["pairs"]["D"])))
        res = metrics.sml_bound_check(p, q, cfg["interval"]["t_min"],
                                      cfg["interval"]["t_max"],
                                      cfg["mc"]["trials"], rng)
        rows.append([i, res.loss, res.loss_stderr, res.bound, res.ratio])
        slack = 3.0 * res.loss_stderr / res.bound if res.bound > 0 else 0.0
        worst = max(worst, res.ratio - (1.0 + slack))
    # tightness probe: a pair of point masses at distance eps
    eps = cfg["tight_pair"]["eps"]
    p0 = FiniteMeasure.point_mass(np.zeros(cfg["pairs"]["D"]))
    q0 = FiniteMeasure.point_mass(np.eye(cfg["pairs"]["D"])[0] * eps)
    res0 = metrics.sml_bound_check(p0, q0, cfg["interval"]["t_min"],
                                   cfg["interval"]["t_max"],
                                   cfg["mc"]["trials"], streams[-1])
    rows.append(["delta_pair", res0.loss, res0.loss_stderr, res0.bound,
                 res0.ratio])
    f = out / "sml_w2.csv"
    write_csv(f, ["pair", "loss", "stderr", "bound", "ratio"], rows)
    summary = {"max_ratio": max(r[4] for r in rows),
               "delta_pair_ratio": res0.ratio}
    return [f], summary, (2 if worst > 0 else 0)


@scenario("bounds.kl_dissipation",
          "KL dissipation identity on OU-evolved Gaussian pairs",
          {"times": {"t": [0.1, 0.5, 1.0, 2.0], "dt": 1e-4},
           "pairs": {"random": 3, "D": 3}})
def _bounds_kl(cfg, seed, out: Path):
    pairs = [("canonical_1d", np.zeros(1), np.eye(1), np.ones(1), np.eye(1))]
    streams = substreams(seed, cfg["pairs"]["random"])
    for i in range(cfg["pairs"]["random"]):
        rng = streams[i]
        D = cfg["pairs"]["D"]
        a = rng.normal(size=(D, D)) * 0.3
        b = rng.normal(size=(D, D)) * 0.3
        pairs.append((f"random_{i}", rng.normal(size=D), np.eye(D) + a @ a.T,
                      rng.normal(size=D), np.eye(D) + b @ b.T))
    rows = []
    worst = 0.0
    for name, m1, s1, m2, s2 in pairs:
        for t in cfg["times"]["t"]:
            chk = metrics.kl_dissipation_check(m1, s1, m2, s2, t,
                                               cfg["times"]["dt"])
            denom = max(abs(chk.rhs), 1e-300)
            rel = abs(abs(chk.lhs) - abs(chk.rhs)) / denom
            worst = max(worst, rel)
            rows.append([name, t, chk.lhs, chk.rhs, chk.gap, rel])
    f = out / "kl_dissipation.csv"
    write_csv(f, ["pair", "t", "lhs", "rhs", "gap", "rel_err"], rows)
    return [f], {"max_rel_err": worst}, 0


# ---------------------------------------------------------------------------
# estimator scenario


@scenario("estimator.erm_demo",
          "SGD on the denoising risk beats the zero-score baseline",
          {"task": {"D": 8, "separation": 1.0},
           "train": {"t_lo": 0.25, "steps": 2000, "step_size": 0.05,
                     "batch_size": 16, "mc_draws": 4, "hidden": [16, 16]},
           "eval": {"mc_trials": 600}})
def _erm_demo(cfg, seed, out: Path):
    D = cfg["task"]["D"]
    pts = np.zeros((2, D))
    pts[1, 0] = cfg["task"]["separation"]
    af = est.build_anchor_frames(pts, 2, 2.0 * cfg["task"]["separation"], seed)
    model = est.structured_build(af, n_data=2, t_lo=cfg["train"]["t_lo"],
                                 t_hi=None, rng=seed,
                                 hidden=tuple(cfg["train"]["hidden"]))
    tc = est.TrainConfig(t_lo=cfg["train"]["t_lo"],
                         step_size=cfg["train"]["step_size"],
                         steps=cfg["train"]["steps"],
                         batch_size=cfg["train"]["batch_size"],
                         mc_draws=cfg["train"]["mc_draws"], seed=seed)
    result = est.erm_train(model, pts, tc)
    a, b = tc.interval
    mu = FiniteMeasure.from_points(pts)
    rng = substreams(seed, 2)
    trained = sm_loss(result.model.as_field(), mu, a, b,
                      cfg["eval"]["mc_trials"], rng[0])
    baseline = sm_loss(zero_score_field(D), mu, a, b,
                       cfg["eval"]["mc_trials"], rng[1])
    f1 = out / "risk_trace.csv"
    write_csv(f1, ["step", "risk"], [[i, v] for i, v in
                                     enumerate(result.risk_trace)])
    f2 = out / "erm_metrics.csv"
    hdr = ["metric", "value", "stderr", "bound", "ratio"]
    ratio = trained.value / baseline.value
    write_csv(f2, hdr, [
        list(metrics.metric_row("sm_loss_trained", trained.value,
                                trained.stderr).values()),
        list(metrics.metric_row("sm_loss_zero", baseline.value,
                                baseline.stderr).values()),
        list(metrics.metric_row("improvement_ratio", ratio).values())])
    return [f1, f2], {"sm_trained": trained.value, "sm_zero": baseline.value,
                      "ratio": ratio, "diverged": result.diverged}, 0


# ---------------------------------------------------------------------------
# entry points


def list_scenarios(as_json: bool = False) -> str:
    names = sorted(SCENARIOS)
    if as_json:
        return json.dumps({n: {"description": SCENARIOS[n]["description"],
                               "defaults": SCENARIOS[n]["defaults"]}
                           for n in names}, indent=2, sort_keys=True)
    width = max(len(n) for n in names)
    return "\n".join(f"{n:<{width}}  {SCENARIOS[n]['description']}"
                     for n in names)


def run(spec_path, out_dir=None) -> int:
    try:
        spec = load_spec(spec_path)
    except (SpecError, OSError, tomllib.TOMLDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    out = Path(out_dir or spec["output_dir"] or
               os.environ.get("LAB_OUT_DIR", "runs"))
    out = out / spec["scenario"].replace(".", "_")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    entry = SCENARIOS[spec["scenario"]]
    try:
        files, summary, code = entry["fn"](spec["config"], spec["seed"], out)
    except SpecError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "scenario": spec["scenario"],
        "seed": spec["seed"],
        "spec_sha256": spec["sha256"],
        "versions": _versions(),
        "wall_time_s": round(time.monotonic() - t0, 3),
        "outputs": [str(f.name) for f in files],
        "exit_code": code,
        "summary": summary,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=float)
        f.write("\n")
    print(f"{spec['scenario']}: wrote {len(files)} file(s) to {out} "
          f"(exit {code})")
    return code


def _versions() -> dict:
    import platform

    import scipy

    from . import __version__
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scorelab": __version__}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="lab", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    p_list = sub.add_parser("list", help="list scenarios")
    p_list.add_argument("--json", action="store_true")
    p_val = sub.add_parser("validate", help="validate a run spec")
    p_val.add_argument("spec")
    p_run = sub.add_parser("run", help="run a scenario from a spec file")
    p_run.add_argument("spec")
    p_run.add_argument("--out", default=None, help="output directory override")
    args = ap.parse_args(argv)
    if args.cmd == "list":
        print(list_scenarios(args.json))
        return 0
    if args.cmd == "validate":
        try:
            load_spec(args.spec)
        except (SpecError, OSError, tomllib.TOMLDecodeError) as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
        print("ok")
        return 0
    return run(args.spec, args.out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
