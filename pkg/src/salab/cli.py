"""Command-line experiment harness.

Usage::

    salab run --preset scalar-linear --out out/
    salab sweep --config my.json --threads 4
    salab oracle --preset td
    salab decompose --preset scalar-linear --steps 10000
    salab presets list

An experiment is one JSON document::

    {
      "model": {"id": "scalar-linear", "beta": 0.9, "b": -10.0},
      "schedule": {"kind": "constant", "alpha": 0.0028},
      "N": 100000, "N0": null, "M": 500, "master_seed": 1,
      "theta0": {"mean": [10.0], "std": 0.0},
      "mse_from": null,
      "recorders": {"store_path": false, "histogram": {"bins": 50, "range": null}},
      "sweep": {"param": "alpha", "values": [0.0005, 0.0028]}
    }

``chain`` may be given as well; it must then equal the chain implied by the
model.  ``threads`` and ``description`` are accepted but do not enter the
resolved configuration, since they do not change any output.

Exit status: 0 on success, 2 for invalid configuration or arguments, 3 when
runs diverged (outputs are still written), 4 when the model lacks a
required closed form.
"""
from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (EnsembleConfig, HistogramSpec, InitialCondition, ensemble_run, histogram,
                       write_csv)
from .engine import Constant, default_burn_in, sa_run, schedule_from_dict
from .errors import (ArgumentError, CapabilityError, ConfigError, DivergenceError, DomainError,
                     LayoutError, SALabError)
from .models import MODEL_TYPES
from .oracles import decompose_disturbance
from .rng import make_rng

PRESET_NAMES = ("camel", "scalar-linear", "styblinski", "td")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CAPABILITY = 0, 2, 3, 4

_TOP_KEYS = {"model", "chain", "schedule", "N", "N0", "M", "master_seed", "theta0", "mse_from",
             "recorders", "sweep", "threads", "description"}
_SCHEDULE_KEYS = {"constant": {"alpha"}, "polynomial": {"a", "rho"}, "clipped": {"alpha", "rho"}}


# ------------------------------------------------------------------ config

@dataclasses.dataclass
class ExperimentConfig:
    model: dict
    schedule: dict
    N: int
    M: int
    master_seed: int
    theta0: dict
    N0: int | None = None
    mse_from: int | None = None
    recorders: dict = dataclasses.field(default_factory=dict)
    sweep: dict | None = None
    threads: int = 1

    def resolved(self) -> dict:
        """Canonical JSON form; feeding it back reproduces the same outputs."""
        model_obj = build_model(self.model)
        out = {
            "model": dict(self.model),
            "chain": model_obj.chain().to_dict(),
            "schedule": dict(self.schedule),
            "N": self.N,
            "N0": self.N0,
            "M": self.M,
            "master_seed": self.master_seed,
            "theta0": dict(self.theta0),
            "mse_from": self.mse_from,
            "recorders": copy.deepcopy(self.recorders),
        }
        if self.sweep is not None:
            out["sweep"] = copy.deepcopy(self.sweep)
        return out

    def ensemble_config(self, grid_key: int = 0) -> EnsembleConfig:
        ic = InitialCondition(self.theta0["mean"], self.theta0.get("std", 0.0))
        return EnsembleConfig(M=self.M, N=self.N, theta0=ic, N0=self.N0,
                              master_seed=self.master_seed, grid_key=grid_key,
                              threads=self.threads, mse_from=self.mse_from)


def _number(value, path, integer=False, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(path, f"expected an integer, got {value!r}")
        value = int(value)
    elif not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value}")
    return value


def _mapping(value, path) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected an object, got {type(value).__name__}")
    return value


def _reject_unknown(d: dict, allowed, path):
    for key in d:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(where, f"unknown key; allowed: {sorted(allowed)}")


def build_model(spec: dict):
    """Instantiate the model described by a validated ``model`` section."""
    params = {k: v for k, v in spec.items() if k != "id"}
    cls = MODEL_TYPES[spec["id"]]
    try:
        return cls(**params)
    except DomainError as exc:
        raise ConfigError("model", str(exc)) from None


def _validate_model(raw) -> dict:
    m = _mapping(raw, "model")
    mid = m.get("id")
    if mid not in MODEL_TYPES:
        raise ConfigError("model.id", f"unknown model {mid!r}; expected one of {sorted(MODEL_TYPES)}")
    cls = MODEL_TYPES[mid]
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _reject_unknown(m, set(fields) | {"id"}, "model")
    out = {"id": mid}
    for name, f in fields.items():
        value = m.get(name, f.default)
        if isinstance(f.default, str):
            if not isinstance(value, str):
                raise ConfigError(f"model.{name}", f"expected a string, got {value!r}")
        else:
            value = float(_number(value, f"model.{name}"))
        out[name] = value
    build_model(out)
    return out


def _validate_schedule(raw) -> dict:
    s = _mapping(raw, "schedule")
    kind = s.get("kind")
    if kind not in _SCHEDULE_KEYS:
        raise ConfigError("schedule.kind", f"unknown schedule {kind!r}; expected one of {sorted(_SCHEDULE_KEYS)}")
    _reject_unknown(s, _SCHEDULE_KEYS[kind] | {"kind"}, "schedule")
    out = {"kind": kind}
    for key in sorted(_SCHEDULE_KEYS[kind]):
        if key not in s:
            raise ConfigError(f"schedule.{key}", "missing")
        out[key] = float(_number(s[key], f"schedule.{key}"))
    try:
        schedule_from_dict(out)
    except DomainError as exc:
        raise ConfigError("schedule", str(exc)) from None
    return out


def validate_config(raw: dict) -> ExperimentConfig:
    """Check every field of a raw config and fill in defaults.

    Raises
    ------
    ConfigError
        With the dotted path of the first offending field.
    """
    raw = _mapping(raw, "<root>")
    _reject_unknown(raw, _TOP_KEYS, "")
    for key in ("model", "schedule", "N", "M", "theta0"):
        if key not in raw:
            raise ConfigError(key, "missing")
    model = _validate_model(raw["model"])
    schedule = _validate_schedule(raw["schedule"])
    N = _number(raw["N"], "N", integer=True, minimum=1)
    M = _number(raw["M"], "M", integer=True, minimum=2)
    N0 = raw.get("N0")
    if N0 is not None:
        N0 = _number(N0, "N0", integer=True, minimum=0)
        if N0 >= N:
            raise ConfigError("N0", f"burn-in must be < N, got N0={N0}, N={N}")
    mse_from = raw.get("mse_from")
    if mse_from is not None:
        mse_from = _number(mse_from, "mse_from", integer=True, minimum=0)
        if mse_from >= N:
            raise ConfigError("mse_from", "must be < N")
    seed = _number(raw.get("master_seed", 0), "master_seed", integer=True, minimum=0)
    if seed >= 2**64:
        raise ConfigError("master_seed", "must fit in 64 bits")

    th = _mapping(raw["theta0"], "theta0")
    _reject_unknown(th, {"mean", "std"}, "theta0")
    mean = th.get("mean")
    if not isinstance(mean, list):
        raise ConfigError("theta0.mean", "expected a list of numbers")
    mean = [float(_number(v, f"theta0.mean[{i}]")) for i, v in enumerate(mean)]
    dim = build_model(model).problem().dim
    if len(mean) != dim:
        raise ConfigError("theta0.mean", f"model has dimension {dim}, got {len(mean)} entries")
    theta0 = {"mean": mean, "std": float(_number(th.get("std", 0.0), "theta0.std", minimum=0))}

    rec = _mapping(raw.get("recorders", {}), "recorders")
    _reject_unknown(rec, {"store_path", "histogram"}, "recorders")
    store = rec.get("store_path", False)
    if not isinstance(store, bool):
        raise ConfigError("recorders.store_path", "expected true or false")
    hist = _mapping(rec.get("histogram", {}), "recorders.histogram")
    _reject_unknown(hist, {"bins", "range"}, "recorders.histogram")
    bins = _number(hist.get("bins", 50), "recorders.histogram.bins", integer=True, minimum=1)
    hrange = hist.get("range")
    if hrange is not None:
        if not (isinstance(hrange, list) and len(hrange) == 2):
            raise ConfigError("recorders.histogram.range", "expected [low, high] or null")
        hrange = [float(_number(v, f"recorders.histogram.range[{i}]")) for i, v in enumerate(hrange)]
        if not hrange[1] > hrange[0]:
            raise ConfigError("recorders.histogram.range", "high must exceed low")
    recorders = {"store_path": store, "histogram": {"bins": bins, "range": hrange}}

    sweep = raw.get("sweep")
    if sweep is not None:
        sweep = _mapping(sweep, "sweep")
        _reject_unknown(sweep, {"param", "values"}, "sweep")
        param = sweep.get("param")
        if param not in _SCHEDULE_KEYS[schedule["kind"]]:
            raise ConfigError("sweep.param",
                              f"{param!r} is not a parameter of the {schedule['kind']} schedule")
        values = sweep.get("values")
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep.values", "expected a non-empty list")
        values = [float(_number(v, f"sweep.values[{i}]")) for i, v in enumerate(values)]
        for i, v in enumerate(values):
            try:
                schedule_from_dict({**schedule, param: v})
            except DomainError as exc:
                raise ConfigError(f"sweep.values[{i}]", str(exc)) from None
        sweep = {"param": param, "values": values}

    threads = _number(raw.get("threads", 1), "threads", integer=True, minimum=1)
    cfg = ExperimentConfig(model, schedule, N, M, seed, theta0, N0, mse_from, recorders, sweep,
                           threads)
    if "chain" in raw and raw["chain"] != cfg.resolved()["chain"]:
        raise ConfigError("chain", "does not match the chain implied by the model section")
    return cfg


def load_preset(name: str) -> dict:
    if name not in PRESET_NAMES:
        raise ConfigError("--preset", f"unknown preset {name!r}; have {list(PRESET_NAMES)}")
    text = resources.files("salab.presets").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def load_config(args) -> ExperimentConfig:
    if (args.config is None) == (args.preset is None):
        raise ConfigError("--config/--preset", "give exactly one of --config or --preset")
    if args.preset is not None:
        raw = load_preset(args.preset)
    else:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from None
    raw = dict(raw)
    if args.seed is not None:
        raw["master_seed"] = args.seed
    if args.threads is not None:
        raw["threads"] = args.threads
    return validate_config(raw)


# ------------------------------------------------------------------ output

def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _histograms(summary, rec: dict) -> dict:
    spec = rec["histogram"]
    rng = None if spec["range"] is None else tuple(spec["range"])
    out = {}
    ok = summary.included
    for label, arr in (("theta_final", summary.theta_final), ("theta_pr", summary.theta_pr)):
        for i in range(arr.shape[1]):
            h = histogram(arr[ok, i], HistogramSpec(spec["bins"], rng))
            out[f"{label}_{i}"] = h.to_dict()
    return out


def _report_divergence(summary) -> int:
    if summary.n_diverged:
        print(f"{summary.n_diverged} of {summary.M} runs diverged and were excluded",
              file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args)
    model = build_model(cfg.model)
    problem, chain = model.problem(), model.chain()
    schedule = schedule_from_dict(cfg.schedule)
    summary = ensemble_run(problem, chain, schedule, cfg.ensemble_config(0))
    out = _out_dir(args)
    _dump_json(out / "summary.json", {"version": __version__, "config": cfg.resolved(),
                                      "summary": summary.to_dict()})
    summary.write_runs_csv(out / "runs.csv")
    _dump_json(out / "histogram.json", _histograms(summary, cfg.recorders))
    if cfg.recorders["store_path"]:
        rng = make_rng(cfg.master_seed, 0, 0)
        th0 = cfg.ensemble_config(0).theta0.sample(rng)
        rec = sa_run(problem, chain, schedule, th0, cfg.N, cfg.N0, rng=rng, record_path=True,
                     mse_from=cfg.mse_from)
        d = rec.thetas.shape[1]
        write_csv(out / "path.csv", ["n"] + [f"theta_{i}" for i in range(d)],
                  [[n, *row] for n, row in enumerate(rec.thetas)])
    print(json.dumps({"out": str(out), "mean_pr": summary.mean_pr.tolist(),
                      "n_diverged": summary.n_diverged}))
    return _report_divergence(summary)


SWEEP_BASE_COLUMNS = ["grid_index", "param", "value", "n_included", "n_diverged"]


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    if cfg.sweep is None:
        raise ConfigError("sweep", "missing; a sweep needs {'param': ..., 'values': [...]}")
    model = build_model(cfg.model)
    problem, chain = model.problem(), model.chain()
    d = problem.dim
    header = list(SWEEP_BASE_COLUMNS)
    for i in range(d):
        header += [f"mean_pr_{i}", f"mean_pr_se_{i}", f"bias_pr_{i}",
                   f"scaled_var_pr_{i}", f"scaled_var_pr_se_{i}"]
    header += ["mse_pr", "mse_pr_se", "window_mse", "window_mse_se"]
    rows = []
    status = EXIT_OK
    param = cfg.sweep["param"]
    for g, value in enumerate(cfg.sweep["values"]):
        schedule = schedule_from_dict({**cfg.schedule, param: value})
        s = ensemble_run(problem, chain, schedule, cfg.ensemble_config(g))
        m = s.n_included
        row = [g, param, value, m, s.n_diverged]
        for i in range(d):
            var = s.scaled_cov_pr[i, i]
            row += [s.mean_pr[i], s.mean_pr_se[i],
                    "" if s.theta_star is None else s.bias_pr[i],
                    var, var * math.sqrt(2.0 / (m - 1))]
        if s.theta_star is None:
            row += ["", "", "", ""]
        else:
            err = np.sum((s.theta_pr[s.included] - s.theta_star) ** 2, axis=1)
            row += [s.mse_pr, float(err.std(ddof=1) / math.sqrt(m)), s.window_mse,
                    s.window_mse_se]
        rows.append(row)
        status = max(status, _report_divergence(s))
    out = _out_dir(args)
    write_csv(out / "sweep.csv", header, rows)
    print(json.dumps({"out": str(out), "rows": len(rows)}))
    return status


def cmd_oracle(args) -> int:
    cfg = load_config(args)
    model = build_model(cfg.model)
    alpha = cfg.schedule["alpha"] if cfg.schedule["kind"] == "constant" else None
    report = model.oracles(alpha)
    out = _out_dir(args)
    payload = {"version": __version__, "model": cfg.model, "oracle": report.to_dict()}
    _dump_json(out / "oracle.json", payload)
    print(json.dumps(payload["oracle"], indent=2))
    return EXIT_OK


def cmd_decompose(args) -> int:
    cfg = load_config(args)
    if cfg.schedule["kind"] != "constant":
        raise ConfigError("schedule.kind", "the decomposition needs a constant gain")
    model = build_model(cfg.model)
    for name in ("f_vec", "fbar_vec", "hhat_vec", "phat_vec"):
        if not hasattr(model, name):
            raise CapabilityError(f"model {cfg.model['id']!r} has no closed-form Poisson solution")
    steps = cfg.N if args.steps is None else args.steps
    if steps < 1:
        raise ArgumentError("--steps must be >= 1")
    alpha = cfg.schedule["alpha"]
    rng = make_rng(cfg.master_seed, 0, 0)
    th0 = cfg.ensemble_config(0).theta0.sample(rng)
    rec = sa_run(model.problem(), model.chain(), Constant(alpha), th0, steps,
                 N0=min(default_burn_in(steps), steps - 1), rng=rng, record_path=True)
    tr = decompose_disturbance(model, rec.thetas, rec.states, alpha)
    d = tr.delta.shape[1]
    header = ["n"]
    for name in ("delta", "martingale", "telescope", "upsilon", "residual"):
        header += [f"{name}_{i}" for i in range(d)]
    rows = [[n, *tr.delta[n], *tr.martingale[n], *tr.telescope[n + 1], *tr.upsilon[n],
             *tr.residual[n]] for n in range(steps)]
    out = _out_dir(args)
    write_csv(out / "decomposition.csv", header, rows)
    payload = {"version": __version__, "config": cfg.resolved(), "steps": steps,
               "max_residual": tr.max_residual, "summed_residual": tr.summed_residual(),
               "upsilon_mean": tr.upsilon_mean.tolist()}
    _dump_json(out / "decomposition.json", payload)
    print(json.dumps({k: payload[k] for k in ("max_residual", "upsilon_mean")}))
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in PRESET_NAMES:
        print(f"{name}\t{load_preset(name).get('description', '')}")
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment JSON file")
    common.add_argument("--preset", metavar="NAME", help=f"bundled config: {', '.join(PRESET_NAMES)}")
    common.add_argument("--out", metavar="DIR", default="salab-out", help="output directory")
    common.add_argument("--seed", metavar="U64", type=int, help="override master_seed")
    common.add_argument("--threads", metavar="K", type=int, help="worker threads")

    parser = argparse.ArgumentParser(prog="salab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"salab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run an ensemble").set_defaults(func=cmd_run)
    sub.add_parser("sweep", parents=[common], help="ensemble per grid point").set_defaults(func=cmd_sweep)
    sub.add_parser("oracle", parents=[common], help="closed-form statistics").set_defaults(func=cmd_oracle)
    dec = sub.add_parser("decompose", parents=[common], help="disturbance decomposition of one run")
    dec.add_argument("--steps", type=int, help="number of stored steps (default N)")
    dec.set_defaults(func=cmd_decompose)
    pre = sub.add_parser("presets", help="bundled configurations")
    pre.add_argument("action", choices=["list"])
    pre.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ArgumentError, DomainError, LayoutError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CapabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except SALabError as exc:  # pragma: no cover - remaining numerical failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
