"""Command-line entry point: ``gtfm <command> [options]``.

Commands
--------
impact    response and diffusion curves of the target against every macro
fit       sample one model and report draws, summary and diagnostics
forecast  fit, then project the target along each scenario
compare   fit several models and tabulate fit measures and criteria
simulate  hit-rate and parameter-recovery experiments on synthetic data
baseline  OLS regression with static scenario projections

Options come from an optional JSON file (``--config``) and are overridden
by flags.  Every run writes its files plus ``manifest.json`` into ``--out``.
Outputs are held in memory and written only once the command succeeds, so
a failed run leaves no partial results.  Failures print a JSON error
object on stderr; exit code 2 marks bad input, 1 a failure while running.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import platform
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import FitReport, fit_report, ols_baseline
from .forecast import coherence_check, project
from .hmc import SUMMARY_HEADER, SamplerConfig, SamplerError, diagnostics, sample, summarize
from .impact import DIFFUSION, LAGGED, RESPONSE, ZERO_ANCHOR, classify_decay, diffusion, mean_decay, response
from .model import CATALOG_VARIANTS, BoundModel, ModelError, catalog_model, resolve_model
from .series import Period, SeriesError, TimeSeriesFrame, data_path, load_frame, load_scenarios
from .simstudy import (CONFIG1, CONFIG2, HIT_HEADER, RECOVERY_HEADER, RECOVERY_SAMPLER, hit_rate_experiment,
                       recovery_experiment, table1_configs)

COMMANDS = ("impact", "fit", "forecast", "compare", "simulate", "baseline")
DEMO_DATA = "demo_lgd.csv"
DEMO_SCENARIOS = "demo_scenarios.csv"
BUNDLED = "bundled:"

DEFAULTS = {
    "data": None,
    "scenarios": None,
    "target": "LGD",
    "window": None,
    "model": "I",
    "models": ["I", "II", "III", "IV"],
    "lags": None,
    "seed": 0,
    "threads": 1,
    "out": "gtfm-out",
    "sampler": {},
    "severity": None,
    "direction": 1,
    "horizon": None,
    "convention": LAGGED,
    "simulate": {},
}


class ConfigError(ValueError):
    """Invalid invocation; ``extra`` is merged into the error JSON."""

    def __init__(self, message: str, **extra):
        super().__init__(message)
        self.extra = extra


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------- config


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gtfm", description="Transfer-function stress-testing toolkit.")
    p.add_argument("--version", action="version", version=f"gtfm {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON file with options; flags take precedence")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--threads", type=int)
        if name != "simulate":
            s.add_argument("--data", help="CSV with a period column and one column per series")
            s.add_argument("--target", help="name of the target column")
            s.add_argument("--window", help="restrict the sample, e.g. 2009Q1:2014Q4")
        if name in ("impact", "fit", "forecast", "compare"):
            s.add_argument("--lags", type=int,
                           help="max lag of the impact curves, or the superposition order of catalog models")
        if name in ("fit", "forecast", "compare"):
            s.add_argument("--model", help="catalog name (I..IV), spec JSON path, or a comma list for compare")
        if name in ("forecast", "baseline"):
            s.add_argument("--scenarios", help="scenario CSV")
        if name == "forecast":
            s.add_argument("--severity", help="comma list of scenarios from least to most severe")
            s.add_argument("--direction", type=int, choices=(1, -1))
            s.add_argument("--horizon", type=int)
        if name == "impact":
            s.add_argument("--convention", choices=(LAGGED, ZERO_ANCHOR))
        if name == "simulate":
            s.add_argument("--experiment", choices=("hit_rate", "recovery", "all"))
            s.add_argument("--replicates", type=int, help="replicates per configuration")
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        cfg.update(loaded)
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("command", "config")}
    if "experiment" in flags:
        cfg["simulate"] = {**cfg["simulate"], "experiment": flags.pop("experiment")}
    if "replicates" in flags:
        cfg["simulate"] = {**cfg["simulate"], "M": flags.pop("replicates")}
    if "severity" in flags:
        flags["severity"] = [s.strip() for s in flags["severity"].split(",") if s.strip()]
    if "model" in flags and args.command == "compare":
        cfg["models"] = [m.strip() for m in flags.pop("model").split(",") if m.strip()]
    cfg.update(flags)
    cfg["command"] = args.command
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    if cfg["lags"] is not None and (not isinstance(cfg["lags"], int) or cfg["lags"] < 0):
        raise ConfigError("lags must be a non-negative integer")
    return cfg


def _input_path(value, bundled_name: str) -> tuple[str, Path]:
    """(label for the manifest, filesystem path)."""
    if value is None:
        return BUNDLED + bundled_name, data_path(bundled_name)
    path = Path(value)
    if not path.is_file():
        raise ConfigError(f"input file not found: {path}")
    return str(value), path


def _sampler_config(cfg: dict, base: SamplerConfig | None = None) -> SamplerConfig:
    given = dict(cfg.get("sampler") or {})
    for key in ("seed", "threads"):
        if key in given:
            raise ConfigError(f"set {key!r} at the top level of the config, not under 'sampler'")
    settings = {**(base or SamplerConfig()).to_json(), **given, "seed": cfg["seed"], "threads": cfg["threads"]}
    try:
        return SamplerConfig.from_json(settings)
    except (SamplerError, TypeError) as exc:
        raise ConfigError(f"invalid sampler settings: {exc}") from None


def _window(frame: TimeSeriesFrame, text) -> TimeSeriesFrame:
    if not text:
        return frame
    first, sep, last = str(text).partition(":")
    if not sep:
        raise ConfigError(f"window must look like START:END, got {text!r}")
    try:
        return frame.window(Period.parse(first) if first else None, Period.parse(last) if last else None)
    except SeriesError as exc:
        raise ConfigError(f"bad window {text!r}: {exc}") from None


def _resolve_model(name: str, lags):
    if name in CATALOG_VARIANTS:
        return catalog_model(name) if lags is None else catalog_model(name, lags=lags)
    try:
        return resolve_model(name)
    except ModelError as exc:
        raise ConfigError(str(exc), model=name) from None


# ---------------------------------------------------------------- output


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else "nan"
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(v) for v in r) + "\n")
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


class Outputs:
    """In-memory output files, flushed together with the manifest."""

    def __init__(self):
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        if name in self.files or name == "manifest.json":
            raise RuntimeError(f"duplicate output {name}")
        self.files[name] = text

    def flush(self, out_dir: Path, manifest: dict) -> list[str]:
        out_dir.mkdir(parents=True, exist_ok=True)
        listing = []
        for name in sorted(self.files):
            data = self.files[name].encode("utf-8")
            (out_dir / name).write_bytes(data)
            listing.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        manifest = {**manifest, "outputs": listing}
        (out_dir / "manifest.json").write_text(json_text(manifest), encoding="utf-8")
        return [*sorted(self.files), "manifest.json"]


def _versions() -> dict:
    import numba
    import scipy

    from ._accel import USE_NUMBA

    return {"gtfm": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "numba_kernels": bool(USE_NUMBA)}


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------- commands


def _load_data(cfg: dict, inputs: dict) -> TimeSeriesFrame:
    label, path = _input_path(cfg["data"], DEMO_DATA)
    inputs["data"] = {"path": label, "sha256": _digest(path)}
    return _window(load_frame(path, cfg["target"]), cfg["window"])


def _load_scenarios(cfg: dict, inputs: dict, required: bool):
    if cfg["scenarios"] is None and cfg["data"] is not None and not required:
        return None
    if cfg["scenarios"] is None and cfg["data"] is not None:
        raise ConfigError("--scenarios is required with a custom --data file")
    label, path = _input_path(cfg["scenarios"], DEMO_SCENARIOS)
    inputs["scenarios"] = {"path": label, "sha256": _digest(path)}
    return load_scenarios(path)


def cmd_impact(cfg: dict, out: Outputs, inputs: dict) -> dict:
    frame = _load_data(cfg, inputs)
    L = 10 if cfg["lags"] is None else cfg["lags"]
    summary = {"target": frame.target, "lags": L, "convention": cfg["convention"], "T": frame.T,
               "first": str(frame.start), "last": str(frame.end), "macros": {}}
    y = frame.y
    for x_name in frame.macro_names:
        x = frame.column(x_name)
        curves = {RESPONSE: response(y, x, L, y_name=frame.target, x_name=x_name),
                  DIFFUSION: diffusion(y, x, L, y_name=frame.target, x_name=x_name)}
        entry = {}
        for kind, curve in curves.items():
            out.add(f"impact_{_safe_name(x_name)}_{kind}.csv",
                    csv_text(["lag", "value"], zip(curve.lags.tolist(), curve.values)))
            entry[kind] = {"classification": classify_decay(curve) if L >= 3 else None,
                           "mean_decay": mean_decay(curve, cfg["convention"]) if L >= 2 else None}
        summary["macros"][x_name] = entry
    out.add("impact.json", json_text(summary))
    return {"L": L}


def _fit(cfg: dict, frame: TimeSeriesFrame, name: str):
    spec = _resolve_model(name, cfg["lags"])
    model = BoundModel(spec, frame)
    post = sample(model, config=_sampler_config(cfg))
    return model, post


def _fit_outputs(out: Outputs, model, post, prefix: str = "") -> dict:
    buf = io.StringIO()
    post.to_csv(buf)
    out.add(f"{prefix}draws.csv", buf.getvalue())
    rows = summarize(post)
    out.add(f"{prefix}summary.csv", csv_text(SUMMARY_HEADER, [r.as_list() for r in rows]))
    diag = diagnostics(post).to_json()
    diag["step_sizes"] = post.step_sizes
    diag["warmup_divergences"] = post.warmup_divergences
    out.add(f"{prefix}diagnostics.json", json_text(diag))
    out.add(f"{prefix}model.json", json_text(model.spec.to_json()))
    return diag


def cmd_fit(cfg: dict, out: Outputs, inputs: dict) -> dict:
    frame = _load_data(cfg, inputs)
    model, post = _fit(cfg, frame, cfg["model"])
    diag = _fit_outputs(out, model, post)
    out.add("fit_report.json", json_text(fit_report(model, post).to_json()))
    return {"model": model.spec.name, "max_rhat": diag["max_rhat"]}


def cmd_forecast(cfg: dict, out: Outputs, inputs: dict) -> dict:
    frame = _load_data(cfg, inputs)
    scenarios = _load_scenarios(cfg, inputs, required=True)
    model, post = _fit(cfg, frame, cfg["model"])
    _fit_outputs(out, model, post)
    try:
        result = project(model, post, scenarios, H=cfg["horizon"], seed=cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for name in result.names:
        out.add(f"forecast_{_safe_name(name)}.csv",
                csv_text(["period", "mean", "p2.5", "p97.5"], result[name].rows()))
    order = cfg["severity"] or result.names
    report = coherence_check(result, order, cfg["direction"]) if len(order) >= 2 else None
    out.add("forecast.json", json_text({
        "model": model.spec.name,
        "horizon": result[result.names[0]].H,
        "scenarios": result.names,
        "severity_order": list(order),
        "direction": cfg["direction"],
        "coherence": None if report is None else report.to_json(),
    }))
    return {"coherent": None if report is None else report.coherent}


def cmd_compare(cfg: dict, out: Outputs, inputs: dict) -> dict:
    frame = _load_data(cfg, inputs)
    names = list(cfg["models"])
    if not names:
        raise ConfigError("no models to compare")
    specs = [_resolve_model(n, cfg["lags"]) for n in names]  # fail early on bad names
    reports, details = [], {}
    for name, spec in zip(names, specs):
        model = BoundModel(spec, frame)
        post = sample(model, config=_sampler_config(cfg))
        rep = fit_report(model, post)
        reports.append(rep)
        details[spec.name] = {"report": rep.to_json(), "diagnostics": diagnostics(post).to_json()}
    out.add("compare.csv", csv_text(FitReport.COMPARE_HEADER, [r.compare_row() for r in reports]))
    out.add("compare.json", json_text(details))
    return {"models": [r.model for r in reports]}


def cmd_simulate(cfg: dict, out: Outputs, inputs: dict) -> dict:
    sim = dict(cfg.get("simulate") or {})
    known = {"experiment", "M", "T", "L", "alpha", "convention", "sampler"}
    unknown = sorted(set(sim) - known)
    if unknown:
        raise ConfigError(f"unknown simulate settings {unknown}")
    experiment = sim.get("experiment", "hit_rate")
    if experiment not in ("hit_rate", "recovery", "all"):
        raise ConfigError(f"unknown experiment {experiment!r}")
    seed = cfg["seed"]
    done = []
    if experiment in ("hit_rate", "all"):
        configs = table1_configs(T=int(sim.get("T", 40)), M=int(sim.get("M", 500)),
                                 alpha=float(sim.get("alpha", 0.0)), seed=seed)
        rows = hit_rate_experiment(configs, L=int(sim.get("L", 10)), convention=sim.get("convention", LAGGED))
        out.add("table1_hit_rates.csv", csv_text(HIT_HEADER, [r.as_list() for r in rows]))
        done.append("hit_rate")
    if experiment in ("recovery", "all"):
        sampler = _sampler_config({**cfg, "sampler": sim.get("sampler", {})}, RECOVERY_SAMPLER)
        M = int(sim.get("M", CONFIG1.M))
        failures = {}
        for label, base in (("table2_recovery_config1.csv", CONFIG1), ("table3_recovery_config2.csv", CONFIG2)):
            c = replace(base, M=M, seed=base.seed + seed)
            res = recovery_experiment(c, sampler)
            out.add(label, csv_text(RECOVERY_HEADER, res.table()))
            failures[label] = {"failures": res.failures, "max_rhat": float(np.max(res.max_rhat)) if res.max_rhat.size else None}
        out.add("recovery.json", json_text(failures))
        done.append("recovery")
    return {"experiments": done}


def cmd_baseline(cfg: dict, out: Outputs, inputs: dict) -> dict:
    frame = _load_data(cfg, inputs)
    res = ols_baseline(frame)
    out.add("ols_coefficients.csv",
            csv_text(["term", "estimate", "std_error", "t_value", "p_value"], res.table()))
    out.add("ols_report.json", json_text({**res.report.to_json(), "sigma": res.sigma}))
    scenarios = _load_scenarios(cfg, inputs, required=False)
    if scenarios is not None:
        cols = [n for n in res.names if n != "intercept"]
        missing = [c for c in cols if c not in scenarios.macro_names]
        if missing:
            raise ConfigError(f"scenarios lack columns {missing} used by the baseline regression")
        for name in scenarios.names:
            path = scenarios.scenarios[name]
            X = np.column_stack([np.ones(scenarios.horizon)]
                                + [path[:, scenarios.macro_names.index(c)] for c in cols])
            proj = res.project(X)
            out.add(f"baseline_{_safe_name(name)}.csv",
                    csv_text(["period", "projection"], zip(map(str, scenarios.periods), proj)))
    return {}


HANDLERS = {"impact": cmd_impact, "fit": cmd_fit, "forecast": cmd_forecast, "compare": cmd_compare,
            "simulate": cmd_simulate, "baseline": cmd_baseline}

BAD_INPUT = (ConfigError, ModelError, SeriesError, FileNotFoundError)


def _error(exc: BaseException, command) -> dict:
    err = {"error": type(exc).__name__, "message": str(exc), "command": command}
    err.update(getattr(exc, "extra", {}))
    return err


def run(argv=None) -> int:
    """Parse ``argv``, execute the command and return the exit code."""
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        cfg = resolve_config(args)
        out, inputs = Outputs(), {}
        info = HANDLERS[command](cfg, out, inputs)
        manifest = {
            "command": command,
            "seed": cfg["seed"],
            "config": {k: v for k, v in cfg.items() if k != "out"},
            "inputs": inputs,
            "versions": _versions(),
            "result": info,
        }
        written = out.flush(Path(cfg["out"]), manifest)
    except BAD_INPUT as exc:
        print(json.dumps(_error(exc, command)), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as JSON, never a traceback
        print(json.dumps(_error(exc, command)), file=sys.stderr)
        return 1
    print(json.dumps({"command": command, "out": str(cfg["out"]), "files": written}))
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
