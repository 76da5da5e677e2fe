"""Config-driven experiment runner.

Every experiment reads a nested YAML config (or the built-in defaults),
runs deterministically from its base seed, and writes ``results.json``
(sorted keys, no timestamps), ``summary.txt`` and CSV tables into the
output directory.  Exit status: 0 when all configured assertions pass,
1 when one fails, 2 for an invalid config.

Config layout::

    experiment: cc-density
    seeds: {base: 3, replicas: 200}
    model: {d: 1, dt: 0.0009765625, horizon: 50}
    params: {...}          # experiment specific
    thresholds: {...}      # experiment specific
    output: {dir: out/cc-density}
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import certification as cert
from . import diffusion, geometry, vpso
from .seeding import replica_seeds


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# defaults

_FLOW_MODEL = {"d": 1, "dt": 2.0**-10, "horizon": 50.0, "boundary_eps": 1e-4,
               "integrator": "direct_em", "cap_factor": 4.0}
_TABLE_MODEL = {"m": 2, "d": 2, "nu_lower": 0.5}

DEFAULTS = {
    "derive-params": {
        "seeds": {"base": 0, "replicas": 1},
        "model": dict(_TABLE_MODEL),
        "params": {"preset": "table-m2d2", "overrides": {}, "fractions": {}},
        "thresholds": {"A": 5e-7, "B": 5e-6, "D": 5e-7, "alpha2": 1e-9},
    },
    "simulate-diffusion": {
        "seeds": {"base": 0, "replicas": 4},
        "model": dict(_FLOW_MODEL),
        "params": {"points": [0.1, 0.5, 0.9], "flow": "forward", "times": [0, 1, 5, 10, 25, 50]},
        "thresholds": {},
    },
    "estimate-b": {
        "seeds": {"base": 0, "replicas": 20},
        "model": dict(_FLOW_MODEL),
        "params": {"tol": 1e-3},
        "thresholds": {},
    },
    "verify-uniform": {
        "seeds": {"base": 4, "replicas": 2000},
        "model": dict(_FLOW_MODEL),
        "params": {"tol": 1e-3},
        "thresholds": {"ks_pvalue": 0.01, "correlation": 0.1},
    },
    "synchronization": {
        "seeds": {"base": 1, "replicas": 200},
        "model": dict(_FLOW_MODEL),
        "params": {"points": [0.1, 0.9], "t_final": 50.0, "tol": 1e-3},
        "thresholds": {"distance": 0.05, "fraction": 0.9},
    },
    "face-attraction": {
        "seeds": {"base": 2, "replicas": 200},
        "model": {**_FLOW_MODEL, "d": 2},
        "params": {"set": {"kind": "cantor", "ratio": 1.0 / 3.0, "depth": 5}, "m_level": 1,
                   "control": {"kind": "segment", "n": 33, "fixed": 0.5, "m_level": 0, "refine_gap": 0.1}},
        "thresholds": {"distance": 0.05, "fraction": 0.9, "control_distance": 0.25, "control_fraction": 0.9},
    },
    "cc-density": {
        "seeds": {"base": 3, "replicas": 200},
        "model": {**_FLOW_MODEL, "integrator": "logit_em"},
        "params": {"z_max": 12.0, "mesh": 0.05},
        "thresholds": {"gap": 0.1, "fraction": 0.8},
    },
    "simulate-vpso": {
        "seeds": {"base": 6, "replicas": 4},
        "model": {"m": 2, "d": 2, "catalog": None},
        "params": {"x0": [0.5, 0.5], "steps": 100, "property_cases": 0},
        "thresholds": {},
    },
    "chain-certificates": {
        "seeds": {"base": 20, "replicas": 10000},
        "model": dict(_TABLE_MODEL),
        "params": {"preset": "table-m2d2", "overrides": {}, "grid": 1000, "random_sets": 50,
                   "h_fraction": 0.1, "max_steps": 10000, "coupling_pairs": 1000, "coupling_steps": 200,
                   "tail_N": [20, 50]},
        "thresholds": {"success_below": 1e-8},
    },
    "domination": {
        "seeds": {"base": 5, "replicas": 10000},
        "model": dict(_TABLE_MODEL),
        "params": {"preset": "table-m2d2", "overrides": {}, "x0": [[0.5, 0.5], [0.9, 0.1]],
                   "N": [20, 50], "step1_trials": 1000},
        "thresholds": {},
    },
    "certify-delta": {
        "seeds": {"base": 6, "replicas": 200},
        "model": dict(_TABLE_MODEL),
        "params": {"preset": "table-m2d2", "overrides": {}, "eps": 0.5,
                   "sets": [{"kind": "point", "values": [0.5, 0.5]},
                            {"kind": "cantor", "log_ratio": -12000.0, "depth": 4, "embed": ["x", "1-x"]}],
                   "spot_balls": 10, "spot_steps": 500},
        "thresholds": {"distance": 0.05},
    },
}
EXPERIMENTS = tuple(DEFAULTS)
TOP_KEYS = ("experiment", "seeds", "model", "params", "thresholds", "output")


def _merge(base: dict, extra: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if key not in base:
            raise ConfigError(f"{path}.{key}", "unknown key")
        if isinstance(base[key], dict) and base[key] and key not in ("overrides", "fractions"):
            if not isinstance(val, dict):
                raise ConfigError(f"{path}.{key}", "expected a mapping")
            out[key] = _merge(base[key], val, f"{path}.{key}")
        else:
            out[key] = val
    return out


def build_config(raw: dict | None, experiment: str | None = None) -> dict:
    """Merge a raw config onto the experiment defaults and validate it."""
    raw = dict(raw or {})
    unknown = set(raw) - set(TOP_KEYS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown top-level key")
    name = raw.get("experiment", experiment)
    if experiment is not None and name != experiment:
        raise ConfigError("experiment", f"config names {name!r} but {experiment!r} was requested")
    if name not in DEFAULTS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    cfg = {"experiment": name, "output": {"dir": f"out/{name}"}}
    for key in ("seeds", "model", "params", "thresholds"):
        sub = raw.get(key, {}) or {}
        if not isinstance(sub, dict):
            raise ConfigError(key, "expected a mapping")
        cfg[key] = _merge(DEFAULTS[name][key], sub, key)
    out = raw.get("output", {}) or {}
    if not isinstance(out, dict) or set(out) - {"dir"}:
        raise ConfigError("output", "only 'dir' is supported")
    cfg["output"].update(out)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    seeds = cfg["seeds"]
    if not isinstance(seeds["base"], int) or seeds["base"] < 0:
        raise ConfigError("seeds.base", "must be a non-negative integer")
    if not isinstance(seeds["replicas"], int) or seeds["replicas"] < 1:
        raise ConfigError("seeds.replicas", "must be an integer >= 1")
    model = cfg["model"]
    if "dt" in model:
        try:
            _flow_config(model)
        except (diffusion.FlowError, ValueError, TypeError) as exc:
            raise ConfigError("model", str(exc)) from None
    catalog = model.get("catalog")
    if catalog:
        for i, f in enumerate(catalog.get("files", [])):
            if not Path(f).exists():
                raise ConfigError(f"model.catalog.files[{i}]", f"file not found: {f}")


def read_raw_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError("config", f"file not found: {path}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    return raw or {}


def load_config(path, experiment: str | None = None) -> dict:
    return build_config(read_raw_config(path), experiment)


# ---------------------------------------------------------------------------
# helpers


def _flow_config(model: dict) -> diffusion.FlowConfig:
    keys = ("d", "dt", "horizon", "boundary_eps", "integrator", "cap_factor")
    return diffusion.FlowConfig(**{k: model[k] for k in keys})


def _seeds(cfg: dict) -> np.ndarray:
    return replica_seeds(cfg["seeds"]["base"], cfg["seeds"]["replicas"])


def _params(cfg: dict, reference: bool = False) -> cert.ParameterSet:
    model, params = cfg["model"], cfg["params"]
    overrides = dict(params.get("overrides") or {})
    ref = None
    preset = params.get("preset")
    if preset == "table-m2d2":
        overrides = {**cert.REFERENCE_CHOICE_M2D2["inputs"], **overrides}
        ref = cert.REFERENCE_CHOICE_M2D2 if reference else None
    elif preset not in (None, "formula"):
        raise ConfigError("params.preset", "must be 'table-m2d2' or 'formula'")
    try:
        return cert.derive_parameters(model["m"], model["d"], model["nu_lower"], overrides,
                                      params.get("fractions") or None, reference=ref)
    except cert.ParameterError as exc:
        raise ConfigError("params.overrides", str(exc)) from None


def _assert(name: str, passed: bool, detail: str) -> dict:
    return {"name": name, "passed": bool(passed), "detail": detail}


def _cloud(desc: dict, path: str) -> geometry.CompactSetApprox:
    kind = desc.get("kind")
    try:
        if kind == "cantor":
            return geometry.make_cantor_cloud(desc.get("ratio"), int(desc["depth"]), desc.get("embed"),
                                              log_ratio=desc.get("log_ratio"))
        if kind == "point":
            return geometry.make_point_cloud(desc["values"])
        if kind == "segment":
            return geometry.product_cloud(geometry.make_interval_cloud(int(desc["n"])),
                                          geometry.make_point_cloud([desc["fixed"]]))
    except (KeyError, geometry.GeometryError) as exc:
        raise ConfigError(path, str(exc)) from None
    raise ConfigError(f"{path}.kind", "must be cantor, point or segment")


def _catalog(model: dict) -> vpso.OperatorCatalog:
    desc = model.get("catalog")
    if not desc:
        return vpso.canonical_catalog(model["m"], model["d"])
    tensors = [vpso.load_tensor(f) for f in desc["files"]]
    weights = desc.get("weights") or [1.0 / len(tensors)] * len(tensors)
    return vpso.OperatorCatalog(tuple(tensors), np.asarray(weights, dtype=float))


# ---------------------------------------------------------------------------
# experiments; each returns (results, assertions, tables)


def run_derive_params(cfg):
    ps = _params(cfg, reference=True)
    th = cfg["thresholds"]
    res = {"values": ps.values(), "provenance": ps.provenance, "formula": ps.formula,
           "validity": ps.validity, "warnings": ps.warnings}
    checks = [_assert("validity", ps.valid, "all strict inequalities hold")]
    if cfg["params"].get("preset") == "table-m2d2":
        rep = cert.REFERENCE_CHOICE_M2D2["reported"]
        for name in ("A", "B", "D", "alpha2"):
            got = getattr(ps, name)
            checks.append(_assert(f"{name} matches table", abs(got - rep[name]) <= th[name],
                                  f"{got!r} vs {rep[name]!r} (tol {th[name]})"))
        flagged = {w.split(":")[0] for w in ps.warnings}
        checks.append(_assert("discrepancy warnings", {"M", "l0", "beta"} <= flagged,
                              f"warned about {sorted(flagged)}"))
    rows = [[r.get("field", r.get("check")), r.get("value", r.get("lhs")), r.get("provenance", r.get("rhs")),
             r.get("formula_value", r.get("passed"))] for r in ps.to_records()]
    return res, checks, {"parameters.csv": (["name", "value_or_lhs", "provenance_or_rhs", "formula_or_passed"], rows)}


def run_simulate_diffusion(cfg):
    fc = _flow_config(cfg["model"])
    p = cfg["params"]
    pts = np.asarray(p["points"], dtype=float)
    pts = pts[:, None] if pts.ndim == 1 else pts
    ens = diffusion.PathEnsemble(tuple(int(s) for s in _seeds(cfg)), fc.d)
    times = [float(t) for t in p["times"]]
    if p["flow"] == "forward":
        traj = diffusion.forward_flow(pts, ens, fc, times)
    elif p["flow"] == "inverse":
        traj = diffusion.inverse_flow(pts, diffusion.inverse_view(ens), fc, times)
    else:
        raise ConfigError("params.flow", "must be 'forward' or 'inverse'")
    rows = []
    for i, t in enumerate(traj.times):
        for s, seed in enumerate(traj.seeds):
            for j in range(pts.shape[0]):
                rows.append([float(t), int(seed), j] + [float(v) for v in traj.states[i, s, j]])
    header = ["t", "seed", "point"] + [f"x{c}" for c in range(fc.d)]
    return {"final": traj.states[-1]}, [], {"trajectory.csv": (header, rows)}


def run_estimate_b(cfg):
    fc = _flow_config(cfg["model"])
    seeds = _seeds(cfg)
    est = diffusion.estimate_b_ensemble(diffusion.PathEnsemble(tuple(int(s) for s in seeds), fc.d),
                                        fc, cfg["params"]["tol"])
    rows = [[int(s)] + [float(v) for v in est["b"][i]] for i, s in enumerate(seeds)]
    return ({"b": est["b"], "horizon_used": est["horizon_used"]}, [],
            {"b.csv": (["seed"] + [f"b{c}" for c in range(fc.d)], rows)})


def run_verify_uniform(cfg):
    fc = _flow_config(cfg["model"])
    th = cfg["thresholds"]
    rep = diffusion.experiment_b_uniformity(_seeds(cfg), fc, cfg["params"]["tol"])
    checks = [_assert(f"KS coordinate {c}", p > th["ks_pvalue"], f"p = {p:.4g}, D = {d:.4g}")
              for c, (d, p) in enumerate(zip(rep["ks_statistic"], rep["ks_pvalue"]))]
    if fc.d >= 2:
        checks.append(_assert("max |correlation|", rep["max_abs_correlation"] < th["correlation"],
                              f"{rep['max_abs_correlation']:.4g}"))
    rows = [[i] + [float(v) for v in row] for i, row in enumerate(rep["b"])]
    return rep, checks, {"b.csv": (["replica"] + [f"b{c}" for c in range(fc.d)], rows)}


def run_synchronization(cfg):
    fc = _flow_config(cfg["model"])
    p, th = cfg["params"], cfg["thresholds"]
    rep = diffusion.experiment_synchronization(_seeds(cfg), fc, p["points"], p["t_final"],
                                               th["distance"], p["tol"])
    checks = [_assert("pullback to b", rep["pullback_fraction"] >= th["fraction"],
                      f"fraction {rep['pullback_fraction']:.3f}"),
              _assert("forward pair collapse", rep["pair_fraction"] >= th["fraction"],
                      f"fraction {rep['pair_fraction']:.3f}")]
    rows = [[i, float(rep["pullback_distance"][-1, i]), float(rep["pair_distance"][-1, i])]
            for i in range(rep["n"])]
    return rep, checks, {"replicas.csv": (["replica", "pullback_distance", "pair_distance"], rows)}


def run_face_attraction(cfg):
    fc = _flow_config(cfg["model"])
    p, th = cfg["params"], cfg["thresholds"]
    seeds = _seeds(cfg)
    base = _cloud(p["set"], "params.set")
    C = geometry.product_cloud(*[base] * fc.d) if base.dim == 1 and fc.d > 1 else base
    rep = diffusion.experiment_face_attraction(C, p["m_level"], seeds, fc, th["distance"])
    checks = [_assert("set reaches the faces", rep["fraction"] >= th["fraction"],
                      f"fraction {rep['fraction']:.3f} below {th['distance']}")]
    res = {"set": rep}
    rows = [[i, float(rep["terminal"][i]), None] for i in range(len(seeds))]
    ctl = p.get("control")
    if ctl:
        seg = _cloud(ctl, "params.control")
        crep = diffusion.experiment_face_attraction(seg, ctl["m_level"], seeds, fc, th["control_distance"],
                                                    refine_gap=ctl.get("refine_gap"), check_dimension=False)
        frac = float(np.mean(crep["terminal"] >= th["control_distance"]))
        checks.append(_assert("control stays away", frac >= th["control_fraction"],
                              f"fraction {frac:.3f} at or above {th['control_distance']}"))
        res["control"] = crep
        res["control_fraction"] = frac
        for i in range(len(seeds)):
            rows[i][2] = float(crep["terminal"][i])
    return res, checks, {"replicas.csv": (["replica", "set_distance", "control_distance"], rows)}


def run_cc_density(cfg):
    fc = _flow_config(cfg["model"])
    p, th = cfg["params"], cfg["thresholds"]
    rep = diffusion.experiment_cc_density(_seeds(cfg), fc, p["z_max"], p["mesh"], gap_threshold=th["gap"])
    checks = [_assert("grid image is dense", rep["fraction"] >= th["fraction"],
                      f"fraction {rep['fraction']:.3f} with gap below {th['gap']}")]
    rows = [[i, float(rep["grid_gap"][-1, i]), float(rep["full_gap"][-1, i])] for i in range(rep["n"])]
    return rep, checks, {"replicas.csv": (["replica", "grid_gap", "full_gap"], rows)}


def run_simulate_vpso(cfg):
    model, p = cfg["model"], cfg["params"]
    cat = _catalog(model)
    x0 = np.asarray(p["x0"], dtype=float)
    R = cfg["seeds"]["replicas"]
    idx = vpso.sample_indices(cat, cfg["seeds"]["base"], (R, int(p["steps"])))
    hist = vpso.iterate_batch(cat, idx, np.tile(x0, (R, 1)), record=True)
    rows = [[n, r] + [float(v) for v in hist[n, r]] for n in range(hist.shape[0]) for r in range(R)]
    res = {"final": hist[-1]}
    checks = []
    if p["property_cases"]:
        suite = vpso.property_suite(int(p["property_cases"]), cfg["seeds"]["base"])
        res["property_suite"] = suite
        for name, count in suite["violations"].items():
            checks.append(_assert(f"property {name}", count == 0, f"{count} violations"))
    return res, checks, {"trajectory.csv": (["step", "replica"] + [f"x{k}" for k in range(cat.m)], rows)}


def run_chain_certificates(cfg):
    ps = _params(cfg)
    p, th = cfg["params"], cfg["thresholds"]
    base, R = cfg["seeds"]["base"], cfg["seeds"]["replicas"]
    grid = np.linspace(0.0, ps.kappa, int(p["grid"]))
    sm = cert.supermartingale_certificate(ps, grid)
    rng = np.random.default_rng(base)
    rand = [cert.random_valid_parameters(rng) for _ in range(int(p["random_sets"]))]
    rand_ok = [cert.supermartingale_certificate(q, np.linspace(0.0, q.kappa, int(p["grid"])))["passed"]
               for q in rand]
    h0 = p["h_fraction"] * ps.kappa
    hc = cert.simulate_h_chain(h0, ps, R, base, int(p["max_steps"]), th["success_below"])
    cat = vpso.canonical_catalog(ps.m, ps.d)
    cp = cert.coupling_suite(cat, ps, int(p["coupling_pairs"]), int(p["coupling_steps"]), base)
    tails = [cert.l_chain_tail(int(N), ps, R, base + int(N)) for N in p["tail_N"]]
    pse = cert.per_step_expectations(ps)
    checks = [
        _assert("supermartingale (given parameters)", sm["passed"], f"min margin {sm['min_margin']:.3g}"),
        _assert("supermartingale (random parameters)", all(rand_ok), f"{sum(rand_ok)}/{len(rand_ok)} pass"),
        _assert("H-chain convergence bound", hc["frequency"] >= hc["bound"] - 3 * hc["sigma"],
                f"frequency {hc['frequency']:.4f} vs bound {hc['bound']:.4f} - 3 sigma"),
        _assert("pathwise coupling", cp["passed"], f"{len(cp['failures'])} failures"),
    ]
    res = {"supermartingale": {k: sm[k] for k in ("passed", "n", "min_margin", "offending_s")},
           "random_sets": [{"m": q.m, "d": q.d, "nu_lower": q.nu_lower, "passed": ok} for q, ok in zip(rand, rand_ok)],
           "h_chain": hc, "coupling": cp,
           "l_chain_tail": [{k: t[k] for k in ("analytic", "empirical", "sigma")} for t in tails],
           "per_step": {"A": pse["A"], "B": pse["B"], "C": pse["C"], "D": pse["D"], "E": pse["E"],
                        "top_l1_to_5": pse["top"][:5], "top_passed": pse["top_passed"]}}
    rows = [[float(s), float(v), float(e)] for s, v, e in zip(grid, sm["value"], sm["expectation"])]
    return res, checks, {"supermartingale.csv": (["s", "v", "expectation"], rows)}


def run_domination(cfg):
    ps = _params(cfg)
    p = cfg["params"]
    cat = vpso.canonical_catalog(ps.m, ps.d)
    rep = cert.domination_check(cat, ps, [np.asarray(x, dtype=float) for x in p["x0"]], [int(n) for n in p["N"]],
                                cfg["seeds"]["replicas"], cfg["seeds"]["base"], int(p["step1_trials"]))
    checks = [_assert(f"domination N={r['N']} x0={r['x0']}", r["passed"],
                      f"P(sigma<=N) {r['p_sigma']:.4f} vs P(tau<=N) {r['p_tau']:.4f}, 3 sigma {3 * r['sigma_combined']:.2g}")
              for r in rep["rows"]]
    checks.append(_assert("pathwise level bounds", rep["step1"]["passed"],
                          f"lift failures {rep['step1']['lift']}, drop failures {rep['step1']['drop']}"))
    rows = [[r["N"], *r["x0"], r["p_sigma"], r["p_tau"], r["sigma_combined"], r["passed"]] for r in rep["rows"]]
    header = ["N"] + [f"x{k}" for k in range(ps.m)] + ["p_sigma", "p_tau", "sigma_combined", "passed"]
    return rep, checks, {"domination.csv": (header, rows)}


def run_certify_delta(cfg):
    ps = _params(cfg)
    p, th = cfg["params"], cfg["thresholds"]
    cat = vpso.canonical_catalog(ps.m, ps.d)
    res, checks, tables = {"beta": ps.beta, "c": ps.c, "plans": []}, [], {}
    for i, desc in enumerate(p["sets"]):
        H = _cloud(desc, f"params.sets[{i}]")
        try:
            plan = cert.cover_and_certify(H, None, ps, p["eps"])
        except ValueError as exc:
            raise ConfigError(f"params.sets[{i}]", str(exc)) from None
        sc = cert.spot_check(plan, cat, cfg["seeds"]["base"] + i, int(p["spot_steps"]), cfg["seeds"]["replicas"],
                             th["distance"], int(p["spot_balls"]))
        finite = plan.n_balls > 0 and math.isfinite(plan.total_failure)
        checks.append(_assert(f"set {i} plan", finite and plan.total_budget > 0 and plan.total_failure < p["eps"],
                              f"{plan.n_balls} balls, total budget {plan.total_budget:.6f}"))
        checks.append(_assert(f"set {i} spot check", sc["passed"],
                              f"{sum(b['passed'] for b in sc['balls'])}/{len(sc['balls'])} balls pass"))
        res["plans"].append({"set": desc, "nominal_dimension": H.nominal_dimension, "cover": plan.cover,
                             "n_balls": plan.n_balls, "log_r": plan.log_r, "delta": plan.delta,
                             "eps1": plan.eps1, "total_failure": plan.total_failure,
                             "total_budget": plan.total_budget, "spot_check": sc})
        rows = [[*[float(v) for v in c], float(ld - math.log(2.0)), float(b)]
                for c, ld, b in zip(plan.centers, plan.log_diams, plan.budgets)]
        tables[f"plan_{i}.csv"] = ([f"c{k}" for k in range(ps.m)] + ["log_radius", "budget"], rows)
    return res, checks, tables


RUNNERS = {
    "derive-params": run_derive_params,
    "simulate-diffusion": run_simulate_diffusion,
    "estimate-b": run_estimate_b,
    "verify-uniform": run_verify_uniform,
    "synchronization": run_synchronization,
    "face-attraction": run_face_attraction,
    "cc-density": run_cc_density,
    "simulate-vpso": run_simulate_vpso,
    "chain-certificates": run_chain_certificates,
    "domination": run_domination,
    "certify-delta": run_certify_delta,
}


def run_experiment(cfg: dict) -> tuple[dict, list[dict], dict]:
    """Run a validated config; returns (results, assertions, tables)."""
    return RUNNERS[cfg["experiment"]](cfg)


# ---------------------------------------------------------------------------
# output


def _plain(obj):
    """JSON-ready copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (set, frozenset)):
        return sorted(_plain(v) for v in obj)
    return obj


def write_outputs(cfg: dict, results: dict, checks: list[dict], tables: dict) -> Path:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    doc = {"config": cfg, "assertions": checks, "passed": all(c["passed"] for c in checks), "results": results}
    (out / "results.json").write_text(json.dumps(_plain(doc), sort_keys=True, indent=1) + "\n")
    lines = [f"experiment: {cfg['experiment']}",
             f"seeds: base {cfg['seeds']['base']}, replicas {cfg['seeds']['replicas']}"]
    for c in checks:
        lines.append(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['detail']}")
    if not checks:
        lines.append("no assertions configured")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    for name, (header, rows) in tables.items():
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in rows])
    return out


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rdslab", description="Run an experiment from a config file.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run",) + EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=(name == "run"), help="YAML config file")
        sp.add_argument("--seed", type=int, help="override seeds.base")
        sp.add_argument("--replicas", type=int, help="override seeds.replicas")
        sp.add_argument("--out", help="override output.dir")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    experiment = None if args.command == "run" else args.command
    try:
        raw = read_raw_config(args.config) if args.config else {}
        if args.seed is not None:
            raw.setdefault("seeds", {})["base"] = args.seed
        if args.replicas is not None:
            raw.setdefault("seeds", {})["replicas"] = args.replicas
        if args.out is not None:
            raw.setdefault("output", {})["dir"] = args.out
        cfg = build_config(raw, experiment)
        results, checks, tables = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return 2
    out = write_outputs(cfg, results, checks, tables)
    print((out / "summary.txt").read_text(), end="")
    failed = [c["name"] for c in checks if not c["passed"]]
    if failed:
        print(f"failing criterion: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
