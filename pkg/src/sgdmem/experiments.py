"""Declarative experiment runner.

Experiments are described by a single TOML file: a spectrum, a list of runs
(each a schedule plus an engine: the deterministic moment evolution, the
noiseless dynamics, a Monte-Carlo ensemble, or the propagator-expansion
reconstruction), a horizon T and a fit window.  ``run_experiment`` executes
every run, writes one trajectory CSV per run plus a ``summary.json`` with
fits, asymptotic predictions, stability verdicts and pass/fail results for
declared expectations.  Unknown config keys are errors.

Independent runs can execute in parallel across processes; set the
``SGDMEM_WORKERS`` environment variable to the desired worker count.

Config sketch::

    schema_version = 1
    seed = 0
    T = 100000
    output_dir = "out/fig1"

    [spectrum]
    kind = "power_law"      # or "csv" with path = "..."
    nu = 3.0
    zeta = 0.5
    big_lambda = 1.0
    K = 10000

    [fit]
    t_lo = 1000
    t_hi = 100000

    [[runs]]
    name = "sgd_b1"
    engine = "evolution"    # evolution | noiseless | montecarlo | expansion
    [runs.schedule]
    kind = "gd"
    alpha = 0.25
    [runs.se]
    tau1 = 1.0
    tau2 = 0.0
    batch_size = 1
    [runs.expect]
    exponent = 0.5
    tol = 0.05
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

import numpy as np

from . import montecarlo
from .algorithm import Schedule, schedule_from_dict, to_multistep
from .evolution import SEParams, run, run_noiseless
from .fitting import fit_exponent
from .propagators import (
    asymptotic_predictions,
    compute_propagators,
    loss_from_expansion,
    propagator_sums,
)
from .spectrum import PowerLawSpec, Spectrum, build_power_law, power_law_spec_of
from .stability import Memory1Point, memory1_point_of, noise_stability_sum, strict_stability

__all__ = [
    "ConfigError",
    "load_config",
    "loads_config",
    "dumps_config",
    "run_experiment",
    "stability_scan",
    "propagators_report",
]

SCHEMA_VERSION = 1
WORKERS_ENV = "SGDMEM_WORKERS"


class ConfigError(ValueError):
    """Invalid experiment configuration (unknown key, missing field, ...)."""


# ---------------------------------------------------------------------------
# TOML in / out
# ---------------------------------------------------------------------------


def loads_config(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc


def load_config(path) -> dict:
    cfg = loads_config(Path(path).read_text())
    cfg["_base_dir"] = str(Path(path).resolve().parent)
    return cfg


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        text = repr(v)
        return text if ("." in text or "e" in text or "E" in text) else text + ".0"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value of type {type(v)!r}")


def _emit_table(out: list, prefix: str, table: dict) -> None:
    scalars = {
        k: v
        for k, v in table.items()
        if not isinstance(v, dict)
        and not (isinstance(v, list) and v and isinstance(v[0], dict))
    }
    for k, v in scalars.items():
        out.append(f"{k} = {_fmt_value(v)}")
    for k, v in table.items():
        if isinstance(v, dict):
            name = f"{prefix}{k}"
            out.append("")
            out.append(f"[{name}]")
            _emit_table(out, name + ".", v)
        elif isinstance(v, list) and v and isinstance(v[0], dict):
            name = f"{prefix}{k}"
            for item in v:
                out.append("")
                out.append(f"[[{name}]]")
                _emit_table(out, name + ".", item)


def dumps_config(cfg: dict) -> str:
    cfg = {k: v for k, v in cfg.items() if not k.startswith("_")}
    out: list[str] = []
    _emit_table(out, "", cfg)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# schema validation
# ---------------------------------------------------------------------------

_SPECTRUM_KEYS = {"kind", "nu", "zeta", "big_lambda", "K", "Q", "path"}
_FIT_KEYS = {"t_lo", "t_hi", "ratio"}
_RUN_KEYS = {"name", "engine", "record", "schedule", "se", "mc", "expect", "predictions"}
_SE_KEYS = {"tau1", "tau2", "batch_size"}
_MC_KEYS = {"batch_size", "n_seeds"}
_EXPECT_KEYS = {"exponent", "tol", "diverged"}
_PREDICTION_KEYS = {"sums_T", "tail"}
_TOP_KEYS = {"schema_version", "seed", "T", "output_dir", "spectrum", "fit", "runs"}
_SCHEDULE_KEYS = {
    "kind",
    "alpha",
    "beta",
    "delta",
    "alpha_eff",
    "q0",
    "alpha1",
    "scale",
    "delta_bar",
    "alpha_bar",
    "delta_cap",
}


def _check_keys(table: dict, allowed: set, where: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{where}]")


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing required key '{key}' in [{where}]")
    return table[key]


def build_spectrum(spec_cfg: dict, base_dir: str = ".") -> Spectrum:
    _check_keys(spec_cfg, _SPECTRUM_KEYS, "spectrum")
    kind = _require(spec_cfg, "kind", "spectrum")
    if kind == "power_law":
        pl = PowerLawSpec(
            nu=_require(spec_cfg, "nu", "spectrum"),
            zeta=_require(spec_cfg, "zeta", "spectrum"),
            big_lambda=spec_cfg.get("big_lambda", 1.0),
            K=spec_cfg.get("K", 10_000),
            Q=spec_cfg.get("Q"),
        )
        return build_power_law(pl)
    if kind == "csv":
        path = Path(_require(spec_cfg, "path", "spectrum"))
        if not path.is_absolute():
            path = Path(base_dir) / path
        return Spectrum.from_csv(path)
    raise ConfigError(f"unknown spectrum kind {kind!r}")


def _validate_run(run_cfg: dict, idx: int) -> None:
    where = f"runs[{idx}]"
    _check_keys(run_cfg, _RUN_KEYS, where)
    _require(run_cfg, "name", where)
    engine = _require(run_cfg, "engine", where)
    if engine not in ("evolution", "noiseless", "montecarlo", "expansion"):
        raise ConfigError(f"unknown engine {engine!r} in [{where}]")
    sched_cfg = _require(run_cfg, "schedule", where)
    _check_keys(sched_cfg, _SCHEDULE_KEYS, f"{where}.schedule")
    _require(sched_cfg, "kind", f"{where}.schedule")
    if engine in ("evolution", "expansion"):
        se_cfg = _require(run_cfg, "se", where)
        _check_keys(se_cfg, _SE_KEYS, f"{where}.se")
        _require(se_cfg, "tau1", f"{where}.se")
        _require(se_cfg, "tau2", f"{where}.se")
    if engine == "montecarlo":
        mc_cfg = _require(run_cfg, "mc", where)
        _check_keys(mc_cfg, _MC_KEYS, f"{where}.mc")
        _require(mc_cfg, "n_seeds", f"{where}.mc")
    if "expect" in run_cfg:
        _check_keys(run_cfg["expect"], _EXPECT_KEYS, f"{where}.expect")
        if "exponent" in run_cfg["expect"] and "tol" not in run_cfg["expect"]:
            raise ConfigError(f"expect.exponent needs expect.tol in [{where}]")
    if isinstance(run_cfg.get("predictions"), dict):
        _check_keys(run_cfg["predictions"], _PREDICTION_KEYS, f"{where}.predictions")


def validate_experiment_config(cfg: dict) -> None:
    _check_keys({k: v for k, v in cfg.items() if not k.startswith("_")}, _TOP_KEYS, "top level")
    version = cfg.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    _require(cfg, "T", "top level")
    _require(cfg, "spectrum", "top level")
    runs = _require(cfg, "runs", "top level")
    if not runs:
        raise ConfigError("config declares no runs")
    if "fit" in cfg:
        _check_keys(cfg["fit"], _FIT_KEYS, "fit")
    for i, run_cfg in enumerate(runs):
        _validate_run(run_cfg, i)
    names = [r["name"] for r in runs]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate run names: {names}")


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------


def _stability_report(sched: Schedule, spectrum: Spectrum, se_cfg) -> dict:
    """Stability verdict for the summary; closed-form where it exists."""
    if not sched.stationary:
        report = {"kind": "nonstationary"}
        pl = power_law_spec_of(spectrum)
        if sched.preset.get("kind") == "am1" and pl is not None:
            bound = sched.preset["delta_bar"] * (1.0 - 1.0 / pl.nu)
            report["alpha_bar"] = sched.preset["alpha_bar"]
            report["alpha_bar_bound"] = bound
            report["predicted_stable"] = bool(sched.preset["alpha_bar"] <= bound)
        return report
    params = sched.params(0)
    if params.memory == 0:
        point = Memory1Point(1.0, params.alpha, 0.0)
    elif params.memory == 1:
        point = memory1_point_of(params)
    else:
        coeffs = to_multistep(params)
        return {"kind": "numeric", "memory": params.memory,
                "note": "no closed-form region for memory >= 2",
                "sum_p": float(np.sum(coeffs.p))}
    verdict = strict_stability(point, spectrum.lambda_max)
    report = {
        "kind": "memory1",
        "delta": point.delta,
        "alpha_eff": point.alpha_eff,
        "q0": point.q0,
        "stable": verdict.stable,
        "reason": verdict.reason,
    }
    if verdict.stable and se_cfg is not None:
        noise = noise_stability_sum(
            spectrum, point, se_cfg.get("tau1", 1.0), int(se_cfg.get("batch_size", 1))
        )
        report["U_prime_Sigma"] = noise.value
        report["noise_stable"] = bool(noise.value < 1.0)
    return report


def _execute_run(args: tuple) -> dict:
    run_cfg, shared = args
    spectrum = build_spectrum(shared["spectrum"], shared["base_dir"])
    sched = schedule_from_dict(run_cfg["schedule"])
    T = shared["T"]
    record = run_cfg.get("record", "all")
    engine = run_cfg["engine"]
    name = run_cfg["name"]
    out_dir = Path(shared["output_dir"])

    se_cfg = run_cfg.get("se")
    se = (
        SEParams(se_cfg["tau1"], se_cfg["tau2"], int(se_cfg.get("batch_size", 1)))
        if se_cfg is not None
        else None
    )

    result: dict = {"name": name, "engine": engine}
    if engine == "evolution":
        traj = run(spectrum, sched, se, T, record=record)
    elif engine == "noiseless":
        traj = run_noiseless(spectrum, sched, T, record=record)
    elif engine == "expansion":
        if not sched.stationary:
            raise ConfigError(
                f"expansion engine needs a stationary schedule; run {name!r} "
                f"uses {sched.name!r}"
            )
        series = compute_propagators(spectrum, sched.params(0), se, T + 1)
        traj = loss_from_expansion(series, T)
    elif engine == "montecarlo":
        mc_cfg = run_cfg["mc"]
        base_seed = shared["seed"] + 100_000 * run_cfg["_index"]
        ens = montecarlo.ensemble(
            spectrum,
            sched,
            int(mc_cfg.get("batch_size", 1)),
            T,
            int(mc_cfg["n_seeds"]),
            base_seed,
        )
        ens.to_csv(out_dir / f"{name}_ensemble.csv")
        result["n_diverged_seeds"] = ens.n_diverged
        traj = ens.as_trajectory()
    else:  # pragma: no cover - guarded by validation
        raise ConfigError(f"unknown engine {engine!r}")

    csv_path = out_dir / f"{name}.csv"
    traj.to_csv(csv_path)
    result["csv"] = str(csv_path)
    result["diverged_at"] = traj.diverged_at

    fit_cfg = shared.get("fit") or {}
    window = (
        (fit_cfg["t_lo"], fit_cfg["t_hi"]) if "t_lo" in fit_cfg and "t_hi" in fit_cfg else None
    )
    try:
        fit = fit_exponent(traj, window=window, ratio=fit_cfg.get("ratio", 1.05))
        result["fit"] = fit.as_dict()
    except ValueError as exc:
        fit = None
        result["fit"] = {"error": str(exc)}

    result["stability"] = _stability_report(sched, spectrum, se_cfg)

    pl = power_law_spec_of(spectrum)
    wants_predictions = run_cfg.get("predictions", True)
    if (
        wants_predictions
        and pl is not None
        and se is not None
        and sched.stationary
        and pl.nu > 0.5
    ):
        pred_cfg = wants_predictions if isinstance(wants_predictions, dict) else {}
        preds = asymptotic_predictions(
            pl,
            sched.params(0),
            se,
            sums_T=int(pred_cfg.get("sums_T", min(2000, T))),
            tail=pred_cfg.get("tail", "truncate"),
            spectrum=spectrum,
        )
        result["predictions"] = preds.as_dict()

    expect = run_cfg.get("expect")
    if expect is not None:
        checks = []
        if "exponent" in expect:
            if fit is None:
                checks.append(False)
            else:
                checks.append(abs(fit.exponent - expect["exponent"]) <= expect["tol"])
        if "diverged" in expect:
            checks.append(bool(traj.diverged) == bool(expect["diverged"]))
        result["expectation"] = dict(expect)
        result["passed"] = all(checks) if checks else True
    return result


def run_experiment(cfg: dict, output_dir=None) -> dict:
    """Execute every run of a config; returns (and writes) the summary.

    ``summary["ok"]`` is False iff some declared expectation failed; the
    CLI maps that to a nonzero exit code.
    """
    validate_experiment_config(cfg)
    base_dir = cfg.get("_base_dir", ".")
    out_dir = Path(output_dir or cfg.get("output_dir", "out"))
    if not out_dir.is_absolute():
        out_dir = Path(base_dir) / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    shared = {
        "spectrum": cfg["spectrum"],
        "T": int(cfg["T"]),
        "seed": int(cfg.get("seed", 0)),
        "fit": cfg.get("fit"),
        "output_dir": str(out_dir),
        "base_dir": base_dir,
    }
    jobs = []
    for i, run_cfg in enumerate(cfg["runs"]):
        run_cfg = dict(run_cfg)
        run_cfg["_index"] = i
        jobs.append((run_cfg, shared))

    workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_execute_run, jobs))
    else:
        results = [_execute_run(job) for job in jobs]

    ok = all(r.get("passed", True) for r in results)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "ok": ok,
        "runs": results,
    }
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, default=_json_default)
    return summary


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


# ---------------------------------------------------------------------------
# stability scans and propagator reports
# ---------------------------------------------------------------------------

_SCAN_KEYS = {"schema_version", "output", "lambda_max", "tau1", "batch_size", "grid", "spectrum"}
_GRID_KEYS = {"delta", "alpha_eff", "q0"}


def stability_scan(cfg: dict, output=None) -> list[dict]:
    """Grid scan of (delta, alpha_eff, q0) -> stability and U'_Sigma.

    Writes a CSV with columns (delta, alpha_eff, q0, stable, U_prime_sigma);
    the noise sum needs a spectrum and is NaN for unstable points or when
    no spectrum is configured.
    """
    _check_keys({k: v for k, v in cfg.items() if not k.startswith("_")}, _SCAN_KEYS, "top level")
    grid = _require(cfg, "grid", "top level")
    _check_keys(grid, _GRID_KEYS, "grid")
    lambda_max = float(cfg.get("lambda_max", 1.0))
    tau1 = float(cfg.get("tau1", 1.0))
    batch = int(cfg.get("batch_size", 1))
    base_dir = cfg.get("_base_dir", ".")
    spectrum = (
        build_spectrum(cfg["spectrum"], base_dir) if "spectrum" in cfg else None
    )

    rows = []
    for delta in grid["delta"]:
        for alpha_eff in grid["alpha_eff"]:
            for q0 in grid["q0"]:
                point = Memory1Point(float(delta), float(alpha_eff), float(q0))
                check_at = spectrum.lambda_max if spectrum is not None else lambda_max
                verdict = strict_stability(point, check_at)
                u_sigma = math.nan
                if verdict.stable and spectrum is not None:
                    u_sigma = noise_stability_sum(spectrum, point, tau1, batch).value
                rows.append(
                    {
                        "delta": float(delta),
                        "alpha_eff": float(alpha_eff),
                        "q0": float(q0),
                        "stable": verdict.stable,
                        "U_prime_sigma": u_sigma,
                    }
                )

    path = output or cfg.get("output", "stability_scan.csv")
    path = Path(path)
    if not path.is_absolute():
        path = Path(base_dir) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write("delta,alpha_eff,q0,stable,U_prime_sigma\n")
        for r in rows:
            f.write(
                f"{r['delta']!r},{r['alpha_eff']!r},{r['q0']!r},"
                f"{int(r['stable'])},{r['U_prime_sigma']!r}\n"
            )
    return rows


def propagators_report(cfg: dict, output_dir=None) -> dict:
    """Propagator series + sums for each (stationary) run of a config."""
    validate_experiment_config(cfg)
    base_dir = cfg.get("_base_dir", ".")
    out_dir = Path(output_dir or cfg.get("output_dir", "out"))
    if not out_dir.is_absolute():
        out_dir = Path(base_dir) / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    spectrum = build_spectrum(cfg["spectrum"], base_dir)
    T = int(cfg["T"])
    summary = {"schema_version": SCHEMA_VERSION, "runs": []}
    for run_cfg in cfg["runs"]:
        if run_cfg["engine"] not in ("evolution", "expansion"):
            continue
        sched = schedule_from_dict(run_cfg["schedule"])
        if not sched.stationary:
            raise ConfigError(
                f"propagator series need a stationary schedule; run "
                f"{run_cfg['name']!r} uses {sched.name!r}"
            )
        se_cfg = run_cfg["se"]
        se = SEParams(se_cfg["tau1"], se_cfg["tau2"], int(se_cfg.get("batch_size", 1)))
        series = compute_propagators(spectrum, sched.params(0), se, T)
        series.to_csv(out_dir / f"{run_cfg['name']}_propagators.csv")
        sums = propagator_sums(series)
        summary["runs"].append({"name": run_cfg["name"], "sums": sums.as_dict()})
    with open(out_dir / "propagators_summary.json", "w") as f:
        json.dump(summary, f, indent=2, default=_json_default)
    return summary
