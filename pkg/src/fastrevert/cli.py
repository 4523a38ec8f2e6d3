"""Configuration-driven runner.

A TOML file describes the model, a list of experiments and numeric
settings::

    master_seed = 7
    output_dir = "runs/demo"

    [model.reversion]
    name = "odd_power"
    power = 3

    [model.observable]
    name = "even_power"
    power = 2

    [model.coefficients]
    c = 1.0
    L = { kind = "polynomial", coeffs = [1.0, 0.5] }

    [numeric]
    epsilons = [0.2, 0.1, 0.05]

    [[experiments]]
    kind = "limit_convergence"

Every experiment writes ``<index>_<kind>.json`` and ``<index>_<kind>.csv``;
``manifest.json`` lists each file with its SHA-256 digest. Exit status is 0
when all checks pass, 2 when a check fails and 1 on configuration or
runtime errors.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .experiments import (ExperimentReport, cir_max_bound_check, concatenation_identity_check,
                          ergodic_horizon_study, inequality_suite, local_window_average,
                          moment_growth_check, sp_error_study)
from .grids import NoiseSource, TimeGrid
from .model import (OBSERVABLES, REVERSIONS, CoefficientModel, ScalingConfig,
                    coefficient_from_spec, observable_from_name, reversion_from_name,
                    sample_coefficients, validate_model)
from .quadrature import QuadratureSpec, limit_average
from .sde import CirParams, simulate_X, simulate_X_timechanged

__all__ = ["ConfigError", "RunConfig", "parse_config", "run", "main", "EXPERIMENT_KEYS"]


class ConfigError(ValueError):
    """Malformed, unknown or out-of-range configuration entry."""


NUMERIC_DEFAULTS = {
    "epsilons": [0.2, 0.1, 0.05],
    "dt": 1e-4,
    "n_paths": 200,
    "horizon": 1.0,
    "p": 2.0,
    "delta": 0.1,
    "rel_tol": 1e-10,
    "abs_tol": 1e-12,
    "z0": 0.0,
}

# per-experiment keys and defaults; None means "take it from [numeric]"
EXPERIMENT_KEYS = {
    "limit_convergence": {"n_boot": 1000, "alpha": 0.05, "max_sp_norm": None,
                          "scheme": "drift_implicit"},
    "local_window": {"t": 0.5, "epsilon": None, "n_paths": None, "dt": None,
                     "rel_tolerance": 0.1},
    "ergodic": {"k": 1.0, "l": 1.0, "m": 1.0, "delta": 0.0, "sign": "+",
                "horizons": [1e2, 1e4], "n_repeats": 10, "dt": 0.01,
                "rel_tolerance": 0.02, "min_shrink": 9},
    "cir_bound": {"nu": 0.25, "theta": 1.0, "sigma": 1.0, "y0": 1.0, "n": 1,
                  "horizon": 100.0, "n_paths": 1000, "dt": 0.01},
    "moment_growth": {"n": 2, "n_paths": None, "dt": None, "n_checkpoints": 10,
                      "transient": 0.25},
    "inequality_suite": {},
    "identity_suite": {"window_steps": 10, "n_paths": 5, "n_steps": 2000,
                       "tolerance": 1e-10},
}

_TOP_KEYS = {"master_seed", "output_dir", "model", "numeric", "experiments"}
_MODEL_KEYS = {"reversion", "observable", "coefficients"}
_COEFF_KEYS = {"b", "c", "L", "M", "H", "K", "kappa"}


@dataclass
class RunConfig:
    """Fully resolved run description."""

    reversion: dict
    observable: dict
    coefficients: dict
    numeric: dict
    experiments: list
    master_seed: int = 0
    output_dir: str = "fastrevert-out"
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "output_dir": self.output_dir,
                "model": {"reversion": self.reversion, "observable": self.observable,
                          "coefficients": self.coefficients},
                "numeric": self.numeric, "experiments": self.experiments}

    # builders -------------------------------------------------------------

    def build_reversion(self):
        d = dict(self.reversion)
        return reversion_from_name(d.pop("name"), **d)

    def build_observable(self):
        d = dict(self.observable)
        return observable_from_name(d.pop("name"), **d)

    def build_coefficients(self) -> CoefficientModel:
        co = dict(self.coefficients)
        kappa = co.pop("kappa", None)
        chans = {k: coefficient_from_spec(co.get(k, 0.0 if k == "b" else 1.0))
                 for k in ("b", "c", "L", "M", "H", "K")}
        return CoefficientModel(horizon=float(self.numeric["horizon"]), kappa=kappa, **chans)

    def quadrature_spec(self) -> QuadratureSpec:
        return QuadratureSpec(rel_tol=self.numeric["rel_tol"], abs_tol=self.numeric["abs_tol"])


def _reject_unknown(section: dict, allowed, where: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def _positive(name, v):
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v <= 0:
        raise ConfigError(f"{name} must be a positive number, got {v!r}")


def _registry_entry(section, registry, where, default_name):
    section = dict(section or {})
    name = section.setdefault("name", default_name)
    if name not in registry:
        raise ConfigError(f"unknown {where} {name!r}; known: {sorted(registry)}")
    return section


def _validate_numeric(num: dict):
    eps = num["epsilons"]
    if not isinstance(eps, list) or not eps:
        raise ConfigError("numeric.epsilons must be a nonempty list")
    for e in eps:
        _positive("epsilon", e)
    if any(a <= b for a, b in zip(eps, eps[1:])):
        raise ConfigError("numeric.epsilons must be strictly decreasing")
    for k in ("dt", "horizon", "rel_tol", "abs_tol"):
        _positive(f"numeric.{k}", num[k])
    if not isinstance(num["n_paths"], int) or num["n_paths"] < 1:
        raise ConfigError("numeric.n_paths must be a positive integer")
    if num["p"] < 1:
        raise ConfigError("numeric.p must be >= 1")
    if not 0 <= num["delta"] < 1:
        raise ConfigError("numeric.delta must lie in [0, 1)")
    if num["dt"] >= num["horizon"]:
        raise ConfigError("numeric.dt must be below numeric.horizon")


def _validate_experiment(exp: dict, index: int):
    where = f"experiments[{index}]"
    kind = exp["kind"]
    if kind == "cir_bound":
        for k in ("nu", "theta", "sigma", "y0", "horizon", "dt"):
            _positive(f"{where}.{k}", exp[k])
        ratio = 2 * exp["nu"] * exp["theta"] / exp["sigma"] ** 2
        if ratio >= 1:
            raise ConfigError(f"{where}: 2 nu theta / sigma^2 = {ratio:g} must be < 1")
        if int(exp["n"]) != exp["n"] or exp["n"] < 0:
            raise ConfigError(f"{where}.n must be a nonnegative integer")
    elif kind == "ergodic":
        if exp["sign"] not in ("+", "-"):
            raise ConfigError(f"{where}.sign must be '+' or '-'")
        if not 0 <= exp["delta"] < 1:
            raise ConfigError(f"{where}.delta must lie in [0, 1)")
        for h in exp["horizons"]:
            _positive(f"{where}.horizons", h)
    for k, v in exp.items():
        if k in ("dt", "epsilon") and v is not None:
            _positive(f"{where}.{k}", v)
        if k == "n_paths" and v is not None and (not isinstance(v, int) or v < 1):
            raise ConfigError(f"{where}.n_paths must be a positive integer")


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse TOML text into a resolved :class:`RunConfig`.

    Unknown keys at any level raise :class:`ConfigError` naming the key;
    ``overrides`` replaces top-level or ``numeric`` entries after parsing.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    _reject_unknown(raw, _TOP_KEYS, "top level")
    model = raw.get("model", {})
    _reject_unknown(model, _MODEL_KEYS, "model")
    rev = _registry_entry(model.get("reversion"), REVERSIONS, "reversion", "linear")
    obs = _registry_entry(model.get("observable"), OBSERVABLES, "observable", "even_power")
    if obs == {"name": "even_power"}:
        obs["power"] = 2
    coeffs = dict(model.get("coefficients", {}))
    _reject_unknown(coeffs, _COEFF_KEYS, "model.coefficients")
    numeric = dict(NUMERIC_DEFAULTS)
    num_raw = raw.get("numeric", {})
    _reject_unknown(num_raw, NUMERIC_DEFAULTS, "numeric")
    numeric.update(num_raw)
    overrides = dict(overrides or {})
    seed = overrides.pop("master_seed", raw.get("master_seed", 0))
    out = overrides.pop("output_dir", raw.get("output_dir", "fastrevert-out"))
    for k, v in overrides.items():
        if k not in NUMERIC_DEFAULTS:
            raise ConfigError(f"unknown override {k!r}")
        numeric[k] = v
    _validate_numeric(numeric)
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("master_seed must be an integer in [0, 2**64)")
    exps = []
    for i, e in enumerate(raw.get("experiments", [])):
        e = dict(e)
        kind = e.pop("kind", None)
        if kind not in EXPERIMENT_KEYS:
            raise ConfigError(f"experiments[{i}]: unknown kind {kind!r}")
        _reject_unknown(e, EXPERIMENT_KEYS[kind], f"experiments[{i}] ({kind})")
        resolved = {"kind": kind, **copy.deepcopy(EXPERIMENT_KEYS[kind]), **e}
        _validate_experiment(resolved, i)
        exps.append(resolved)
    cfg = RunConfig(rev, obs, coeffs, numeric, exps, seed, str(out))
    try:
        cfg.build_reversion()
        cfg.build_observable()
        cfg.build_coefficients()
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model section: {exc}") from exc
    return cfg


# ---------------------------------------------------------------------------
# experiment runners


def _workers():
    v = os.environ.get("FASTREVERT_WORKERS")
    if v is None:
        return None
    try:
        n = int(v)
    except ValueError as exc:
        raise ConfigError(f"FASTREVERT_WORKERS must be an integer, got {v!r}") from exc
    return max(n, 1)


def _run_limit_convergence(cfg, exp, rf, of, cm, rng):
    num = cfg.numeric
    rep = sp_error_study(cm, rf, of, num["epsilons"], num["dt"], num["n_paths"], rng, num["p"],
                         num["z0"], exp["scheme"], cfg.quadrature_spec(), exp["n_boot"],
                         exp["alpha"], _workers())
    exact = rep.flags["max_abs_error"] <= 1e-12
    rep.flags["exact_zero"] = exact
    rep.flags["pass_trend"] = exact or rep.flags["strictly_decreasing"]
    if exp["max_sp_norm"] is not None:
        rep.flags["pass_finest_sp_norm"] = rep.rows[-1]["sp_norm"] <= exp["max_sp_norm"]
    return rep


def _run_local_window(cfg, exp, rf, of, cm, rng):
    num = cfg.numeric
    eps = exp["epsilon"] if exp["epsilon"] is not None else num["epsilons"][-1]
    n_paths = exp["n_paths"] or num["n_paths"]
    dt = exp["dt"] or num["dt"]
    grid = TimeGrid.uniform(cm.horizon, dt=dt)
    coeffs = sample_coefficients(cm, grid, rng, n_paths)
    path = simulate_X(cm, rf, ScalingConfig(eps, z0=num["z0"]), grid, "drift_implicit", rng,
                      n_paths, coeffs)
    vals = local_window_average(path, coeffs["H"], coeffs["K"], of, exp["t"], eps)
    i = grid.index_of(exp["t"])
    spec = cfg.quadrature_spec()
    targets = np.array([coeffs["H"][j, i] * limit_average(
        rf, of, coeffs["K"][j, i], coeffs["L"][j, i], coeffs["M"][j, i], spec)
        for j in range(coeffs["H"].shape[0])])
    target = float(targets.mean())
    mean = float(vals.mean())
    rel = abs(mean - target) / abs(target) if target else abs(mean)
    rows = [{"path": j, "window_average": float(v)} for j, v in enumerate(vals)]
    return ExperimentReport("local_window", rows,
                            {"pass_within_tolerance": rel <= exp["rel_tolerance"],
                             "relative_deviation": rel},
                            {"master_seed": rng.seed}, ("path", "window_average"),
                            {"target": target, "sample_mean": mean, "epsilon": eps,
                             "t": exp["t"], "dt": dt})


def _run_ergodic(cfg, exp, rf, of, cm, rng):
    return ergodic_horizon_study(rf, of, exp["k"], exp["l"], exp["m"], exp["delta"], exp["sign"],
                                 exp["horizons"], exp["n_repeats"], exp["dt"], rng,
                                 exp["rel_tolerance"], exp["min_shrink"], cfg.quadrature_spec())


def _run_cir_bound(cfg, exp, rf, of, cm, rng):
    params = CirParams(exp["nu"], exp["theta"], exp["sigma"], exp["y0"])
    res = cir_max_bound_check(params, int(exp["n"]), exp["horizon"], exp["n_paths"],
                              exp["dt"], rng)
    row = res.to_dict()
    return ExperimentReport("cir_bound", [row], {"pass_bound": res.passed},
                            {"master_seed": rng.seed}, tuple(row))


def _run_moment_growth(cfg, exp, rf, of, cm, rng):
    num = cfg.numeric
    if cm.kappa is None:
        cm = CoefficientModel(cm.b, cm.c, cm.L, cm.M, cm.H, cm.K, cm.horizon,
                              kappa=min(cm.L.value, cm.M.value) if cm.is_constant else None)
    return moment_growth_check(cm, rf, int(exp["n"]), num["epsilons"],
                               exp["n_paths"] or num["n_paths"], exp["dt"] or num["dt"], rng,
                               num["z0"], exp["n_checkpoints"], exp["transient"])


def _run_inequality_suite(cfg, exp, rf, of, cm, rng):
    return inequality_suite()


def _run_identity_suite(cfg, exp, rf, of, cm, rng):
    num = cfg.numeric
    rows = []
    n_steps = int(exp["n_steps"])
    grid = TimeGrid.uniform(cm.horizon, n_steps)
    dt = grid.dt[0]
    eps = exp["window_steps"] * dt
    scaling = ScalingConfig(eps, z0=num["z0"])
    coeffs = sample_coefficients(cm, grid, rng, exp["n_paths"])
    path = simulate_X(cm, rf, scaling, grid, "drift_implicit", rng, exp["n_paths"], coeffs)
    worst = 0.0
    for m in np.linspace(0, n_steps, 9).astype(int):
        dev = concatenation_identity_check(path, coeffs["H"], coeffs["K"], of, eps,
                                           float(grid.nodes[m]))
        worst = max(worst, dev)
        rows.append({"check": "concatenation", "t": float(grid.nodes[m]), "deviation": dev})
    tc_dev = math.nan
    if cm.c.__class__.__name__ == "Constant" and cm.is_deterministic:
        c = float(cm.c.value)
        xi_grid = TimeGrid.uniform(c * cm.horizon / eps ** 2, n_steps)
        norm = rng.normals("W", n_steps, exp["n_paths"])
        y = simulate_X_timechanged(cm, rf, scaling, xi_grid, increments=norm * math.sqrt(
            xi_grid.dt[0]))
        x = simulate_X(cm, rf, scaling, grid, "drift_implicit",
                       increments=norm * math.sqrt(dt), n_paths=exp["n_paths"])
        tc_dev = float(np.max(np.abs(x.values - eps * y.values)))
        rows.append({"check": "time_change", "t": cm.horizon, "deviation": tc_dev})
    flags = {"pass_concatenation": worst < exp["tolerance"],
             "pass_time_change": math.isnan(tc_dev) or tc_dev < exp["tolerance"],
             "max_concatenation_deviation": worst, "time_change_deviation": tc_dev}
    return ExperimentReport("identity_suite", rows, flags, {"master_seed": rng.seed},
                            ("check", "t", "deviation"), {"epsilon": eps, "dt": dt})


RUNNERS = {
    "limit_convergence": _run_limit_convergence,
    "local_window": _run_local_window,
    "ergodic": _run_ergodic,
    "cir_bound": _run_cir_bound,
    "moment_growth": _run_moment_growth,
    "inequality_suite": _run_inequality_suite,
    "identity_suite": _run_identity_suite,
}


# ---------------------------------------------------------------------------
# orchestration


class StageError(RuntimeError):
    """Downstream failure annotated with the experiment that raised it."""


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_text(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def emit_outputs(report: ExperimentReport, cfg: RunConfig, exp: dict, out_dir: Path,
                 stem: str) -> list:
    """Write ``stem.json`` and ``stem.csv``; return ``[(name, digest), ...]``."""
    # output_dir is left out so that digests do not depend on where a run is written
    config = {k: v for k, v in cfg.to_dict().items() if k != "output_dir"}
    payload = {"config": config, "experiment": exp, "passed": report.passed,
               "report": report.to_dict()}
    jpath = out_dir / f"{stem}.json"
    _write_text(jpath, json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")
    cpath = out_dir / f"{stem}.csv"
    report.write_csv(cpath)
    return [(p.name, _sha256(p)) for p in (jpath, cpath)]


def run(cfg: RunConfig, out_dir: str | Path | None = None) -> dict:
    """Execute every experiment of ``cfg``; return the manifest dictionary.

    The manifest has ``passed`` (bool), ``files`` (name to digest), ``timings``
    and the resolved configuration. It is also written as ``manifest.json``.
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError(f"output directory {out}: {exc}") from exc
    rf, of, cm = cfg.build_reversion(), cfg.build_observable(), cfg.build_coefficients()
    files, timings, results = {}, {}, []
    start = time.perf_counter()
    for i, exp in enumerate(cfg.experiments):
        stem = f"{i:02d}_{exp['kind']}"
        t0 = time.perf_counter()
        try:
            rep = RUNNERS[exp["kind"]](cfg, exp, rf, of, cm, NoiseSource(cfg.master_seed))
        except ConfigError:
            raise
        except Exception as exc:  # surfaced with stage context
            raise StageError(f"{stem}: {type(exc).__name__}: {exc}") from exc
        timings[stem] = time.perf_counter() - t0
        for name, digest in emit_outputs(rep, cfg, exp, out, stem):
            files[name] = digest
        results.append({"experiment": stem, "passed": rep.passed,
                        "flags": json.loads(json.dumps(rep.to_dict()["flags"]))})
    timings["total"] = time.perf_counter() - start
    manifest = {
        "config": cfg.to_dict(),
        "versions": {"fastrevert": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "files": files,
        "results": results,
        "timings": timings,
        "passed": all(r["passed"] for r in results),
    }
    _write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _parse_floats(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--epsilons expects comma-separated numbers: {exc}") from exc


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fastrevert-run",
                                 description="Run averaging experiments from a TOML config.")
    ap.add_argument("config", help="path to the TOML configuration")
    ap.add_argument("--output-dir", help="override output_dir")
    ap.add_argument("--seed", type=int, help="override master_seed")
    ap.add_argument("--epsilons", help="override numeric.epsilons, e.g. 0.2,0.1,0.05")
    ap.add_argument("--dry-run", action="store_true",
                    help="parse and validate only, print the resolved config")
    args = ap.parse_args(argv)
    overrides = {}
    try:
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if args.output_dir is not None:
            overrides["output_dir"] = args.output_dir
        if args.epsilons is not None:
            overrides["epsilons"] = _parse_floats(args.epsilons)
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text, overrides)
        if args.dry_run:
            rep = validate_model(cfg.build_reversion(), cfg.build_observable(),
                                 cfg.build_coefficients())
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            for name in rep.failed():
                print(f"model check failed: {name}", file=sys.stderr)
            return 0 if rep.passed else 1
        manifest = run(cfg)
    except (ConfigError, StageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for r in manifest["results"]:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['experiment']}")
    return 0 if manifest["passed"] else 2


if __name__ == "__main__":
    sys.exit(main())
