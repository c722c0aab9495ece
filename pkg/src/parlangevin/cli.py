"""Experiment runner.

Usage::

    parlangevin --config run.json [--seed S] [--out DIR] [--threads N]

The config is a JSON object validated against :data:`CONFIG_SCHEMA` before
anything runs. Each run writes ``manifest.json`` (resolved schedule, seeds,
planner formulas, timestamps), ``metrics.csv`` (one row per assertion) and,
when requested, ``residuals.csv``. The exit status is 0 when every assertion
passes, 1 when one fails and 2 for an invalid config.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

import jsonschema
import numpy as np

from parlangevin import __version__
from parlangevin import diagnostics as dg
from parlangevin import discrete as ds
from parlangevin.checks import Metric, at_most, equals, format_value, run_suite
from parlangevin.errors import ConfigurationError, ParLangevinError
from parlangevin.lmc import plan_lmc_params, run_parallel_lmc
from parlangevin.score import make_gaussian_mixture_target, make_gaussian_target, perturb_score
from parlangevin.ulmc import DEFAULT_CONSTANTS, plan_ulmc_params, run_parallel_ulmc

CSV_COLUMNS = ["module", "claim_anchor", "metric", "value", "threshold", "pass"]

_POSINT = {"type": "integer", "minimum": 1}
_POSNUM = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["mode"],
    "properties": {
        "mode": {"enum": ["continuous-lmc", "continuous-ulmc", "discrete", "verify", "bench"]},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "replicas": _POSINT,
        "residuals": {"type": "boolean"},
        "target": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "mean", "precision"],
                    "properties": {
                        "kind": {"const": "gaussian"},
                        "mean": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                        "precision": {"type": "array", "items": _POSNUM, "minItems": 1},
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "centers", "radius"],
                    "properties": {
                        "kind": {"const": "mixture"},
                        "centers": {"type": "array", "minItems": 2, "items": {"type": "array", "items": {"type": "number"}}},
                        "radius": _POSNUM,
                        "noise_scale": _POSNUM,
                    },
                },
            ]
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "h": _POSNUM,
                "M": _POSINT,
                "K": _POSINT,
                "N": _POSINT,
                "gamma": _POSNUM,
                "max_M": _POSINT,
                "max_N": _POSINT,
                "acknowledge_override": {"type": "boolean"},
                "constants": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: _POSNUM for k in DEFAULT_CONSTANTS},
                },
            },
        },
        "perturbation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["delta"],
            "properties": {
                "delta": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "planned"}]},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "distribution": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "n"],
                    "properties": {"kind": {"const": "uniform"}, "n": {"type": "integer", "minimum": 1, "maximum": 20}},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "marginals"],
                    "properties": {
                        "kind": {"const": "product"},
                        "marginals": {"type": "array", "minItems": 1, "maxItems": 20, "items": {"type": "number", "minimum": 0, "maximum": 1}},
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "path"],
                    "properties": {"kind": {"const": "table"}, "path": {"type": "string"}},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "signs"],
                    "properties": {"kind": {"const": "pointmass"}, "signs": {"type": "string", "pattern": "^[+-]{1,20}$"}},
                },
            ]
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["enum", "product"]},
                "eps": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "auto"}]},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "localization": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "c": _POSNUM,
                "runs": _POSINT,
                "t_const": _POSNUM,
                "eta_split": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
                "inner": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["lmc", "ulmc", "exact"]},
                        "max_M": _POSINT,
                        "max_N": _POSINT,
                        "acknowledge_override": {"type": "boolean"},
                        "max_evaluations": _POSINT,
                    },
                },
            },
        },
        "assertions": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"kl_max": _POSNUM, "tv_max": _POSNUM},
        },
    },
    "allOf": [
        {"if": {"properties": {"mode": {"enum": ["continuous-lmc", "continuous-ulmc", "bench"]}}}, "then": {"required": ["target"]}},
        {"if": {"properties": {"mode": {"const": "discrete"}}}, "then": {"required": ["distribution"]}},
    ],
}

# the fit budget added to eps^2 when judging a Gaussian fit of the samples
FIT_BUDGET = 0.02


class ConfigError(Exception):
    """Invalid configuration; the message carries field and line information."""


def _line_of(text: str, key: Optional[str]) -> Optional[int]:
    if key is None:
        return None
    match = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, match.start()) + 1 if match else None


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            field = "/".join(str(p) for p in err.absolute_path) or "<root>"
            key = next((str(p) for p in reversed(err.absolute_path) if isinstance(p, str)), None)
            if err.validator == "additionalProperties":
                unexpected = re.findall(r"'([^']+)' was unexpected", err.message)
                key = unexpected[0] if unexpected else key
                if unexpected:
                    field = f"{field}/{unexpected[0]}" if field != "<root>" else unexpected[0]
            line = _line_of(text, key)
            where = f"{path}:{line}" if line else str(path)
            lines.append(f"{where}: field '{field}': {err.message}")
        raise ConfigError("\n".join(lines))
    config["_base_dir"] = str(path.resolve().parent)
    return config


# builders ------------------------------------------------------------------


def build_target(spec: dict):
    if spec["kind"] == "gaussian":
        return make_gaussian_target(spec["mean"], spec["precision"])
    return make_gaussian_mixture_target(spec["centers"], spec["radius"], spec.get("noise_scale", 1.0))


def build_distribution(spec: dict, base_dir: str) -> ds.HypercubeDistribution:
    kind = spec["kind"]
    if kind == "uniform":
        return ds.HypercubeDistribution.uniform(spec["n"])
    if kind == "product":
        return ds.HypercubeDistribution.product(spec["marginals"])
    if kind == "pointmass":
        return ds.HypercubeDistribution.pointmass(spec["signs"])
    path = Path(spec["path"])
    return ds.HypercubeDistribution.from_table(path if path.is_absolute() else Path(base_dir) / path)


def build_schedule(config: dict, target, kind: str):
    spec = config.get("schedule", {})
    explicit = {k: spec[k] for k in ("h", "M", "K", "N") if k in spec}
    if kind == "lmc":
        schedule = plan_lmc_params(target.alpha, target.beta, target.dimension, config.get("epsilon", 0.3))
    else:
        schedule = plan_ulmc_params(target.alpha, target.beta, target.dimension, config.get("epsilon", 0.3), spec.get("constants"))
        if "gamma" in spec:
            explicit["gamma"] = spec["gamma"]
    schedule = schedule.desk_scale(spec.get("max_M"), spec.get("max_N"))
    return schedule.with_overrides(**explicit)


def _gaussian_law(target):
    """Mean and covariance of a Gaussian target, or None for other targets."""
    if target.name != "gaussian":
        return None
    # the score is lam * (x - mean), so unit offsets read off the precisions
    lam = np.diag(target.score(target.minimizer + np.eye(target.dimension)))
    return dg.GaussianFit(target.minimizer, np.diag(1.0 / lam))


# modes ---------------------------------------------------------------------


def _accounting_rows(module: str, ledger, schedule) -> List[Metric]:
    return [
        equals(module, "adaptive-round-accounting", "rounds", ledger.rounds, schedule.rounds),
        equals(module, "adaptive-round-accounting", "evaluations", ledger.evaluations, schedule.evaluations),
    ]


def _residual_rows(residuals, prefix=()):
    rows = []
    res = np.asarray(residuals)
    for n in range(res.shape[0]):
        for k in range(res.shape[1]):
            rows.append(list(prefix) + [n, k + 1, format_value(res[n, k])])
    return rows


def run_continuous(config: dict, seed: int, threads: int, kind: str):
    target = build_target(config["target"])
    schedule = build_schedule(config, target, kind)
    oracle = target.exact_oracle()
    pert = config.get("perturbation")
    delta = 0.0
    if pert is not None:
        delta = schedule.delta if pert["delta"] == "planned" else float(pert["delta"])
        oracle = perturb_score(oracle, delta, pert.get("seed", 0))
    replicas = config.get("replicas", 1000)
    ack = config.get("schedule", {}).get("acknowledge_override", False)
    runner = run_parallel_lmc if kind == "lmc" else run_parallel_ulmc
    result = runner(target, oracle, schedule, n_samples=replicas, rng_seed=seed, acknowledge_override=ack, workers=threads)
    module = kind
    rows = _accounting_rows(module, result.ledger, schedule)
    eps = schedule.epsilon
    law = _gaussian_law(target)
    extra = {"delta": delta}
    if law is not None:
        if replicas < target.dimension + 1:
            raise ConfigurationError("a Gaussian fit needs more replicas than dimensions")
        fit = dg.empirical_gaussian_fit(result.samples)
        kl = dg.gaussian_kl(fit, law)
        w2 = dg.gaussian_w2(fit, law)
        if kind == "lmc":
            kl_max = config.get("assertions", {}).get("kl_max", eps**2 + FIT_BUDGET)
            rows.append(at_most(module, "parallel-lmc-kl-guarantee", "gaussian_fit_kl", kl, kl_max))
            rows.append(at_most(module, "talagrand-w2-from-kl", "gaussian_fit_w2", w2, dg.talagrand_w2_bound(kl_max, target.alpha)))
        else:
            tv_max = config.get("assertions", {}).get("tv_max", eps)
            rows.append(at_most(module, "parallel-ulmc-tv-guarantee", "pinsker_tv_of_fit", dg.pinsker_tv_bound(kl), tv_max))
            rows.append(at_most(module, "talagrand-w2-from-kl", "gaussian_fit_w2", w2, dg.talagrand_w2_bound(2 * tv_max**2, target.alpha)))
        extra["fit"] = {"mean": fit.mean.tolist(), "covariance": fit.covariance.tolist(), "kl": kl, "w2": w2}
    residuals = _residual_rows(result.residuals)
    return rows, schedule.as_dict(), residuals, ["outer_step", "sweep", "residual"], extra


def run_discrete(config: dict, seed: int, threads: int):
    mu = build_distribution(config["distribution"], config["_base_dir"])
    eps = config.get("epsilon", 0.1)
    ospec = config.get("oracle", {})
    if ospec.get("kind", "enum") == "product":
        if mu.name != "product":
            raise ConfigurationError("the product oracle needs a product distribution")
        base = ds.make_product_oracle(config["distribution"]["marginals"])
    else:
        base = ds.make_enum_oracle(mu)
    oracle_eps = ospec.get("eps", 0.0)
    if oracle_eps == "auto":
        oracle_eps = eps / math.sqrt(mu.n)
    oracle = ds.approximate_wrapper(base, float(oracle_eps), ospec.get("seed", 0))
    lspec = config.get("localization", {})
    ispec = lspec.get("inner", {})
    inner = ds.InnerSamplerConfig(
        kind=ispec.get("kind", "lmc"),
        max_M=ispec.get("max_M"),
        max_N=ispec.get("max_N"),
        acknowledge_override=ispec.get("acknowledge_override", False),
        max_evaluations=ispec.get("max_evaluations", 10**6),
    )
    c = lspec.get("c", 2.0)
    runs = lspec.get("runs", 10000)
    result = ds.run_localization_sampler(
        oracle,
        mu.n,
        c,
        eps,
        inner,
        rng_seed=seed,
        n_runs=runs,
        t_const=lspec.get("t_const", 4.0),
        eta_split=lspec.get("eta_split", 0.5),
        workers=threads,
    )
    empirical = ds.empirical_distribution(result.samples, mu.n)
    tv = dg.discrete_tv(empirical, mu.probabilities)
    tv_max = config.get("assertions", {}).get("tv_max", eps)
    plan = result.plan
    rows = [
        at_most("discrete", "localization-tv-guarantee", "empirical_tv", tv, tv_max),
        at_most("discrete", "localization-coupling-budget", "T_eta", plan.inner_budget, eps / 2 * (1 + 1e-12)),
    ]
    schedule = result.schedule
    if schedule is not None:
        rows += [
            equals("discrete", "adaptive-round-accounting", "score_rounds", result.score_ledger.rounds, plan.T * schedule.rounds),
            equals("discrete", "adaptive-round-accounting", "score_evaluations", result.score_ledger.evaluations, plan.T * schedule.evaluations),
            equals("discrete", "laplace-round-accounting", "laplace_rounds", result.laplace_ledger.rounds, plan.T * schedule.rounds),
            equals(
                "discrete",
                "laplace-round-accounting",
                "laplace_evaluations",
                result.laplace_ledger.evaluations,
                (mu.n + 1) * plan.T * schedule.evaluations,
            ),
        ]
    resolved = {
        "localization": {"T": plan.T, "eta": plan.eta, "c": c, "runs": runs, "epsilon": eps},
        "inner": None if schedule is None else schedule.as_dict(),
        "oracle_eps": oracle.eps,
    }
    residuals = []
    for i, res in enumerate(result.residuals):
        residuals += _residual_rows(res, prefix=(i,))
    extra = {"empirical": empirical.tolist(), "exact": mu.probabilities.tolist()}
    return rows, resolved, residuals, ["localization_step", "outer_step", "sweep", "residual"], extra


def run_bench(config: dict, seed: int, threads: int):
    target = build_target(config["target"])
    schedule = build_schedule(config, target, "lmc")
    replicas = config.get("replicas", 100)
    ack = config.get("schedule", {}).get("acknowledge_override", False)
    start = time.perf_counter()
    result = run_parallel_lmc(target, target.exact_oracle(), schedule, n_samples=replicas, rng_seed=seed, acknowledge_override=ack, workers=threads)
    elapsed = time.perf_counter() - start
    sequential_rounds = schedule.N * schedule.M
    rows = _accounting_rows("lmc", result.ledger, schedule)
    rows.append(
        Metric(
            "lmc",
            "parallel-round-reduction",
            "sequential_over_parallel_rounds",
            sequential_rounds / result.ledger.rounds,
            f"== {format_value(schedule.M / schedule.K)}",
            math.isclose(sequential_rounds / result.ledger.rounds, schedule.M / schedule.K),
        )
    )
    return rows, schedule.as_dict(), _residual_rows(result.residuals), ["outer_step", "sweep", "residual"], {"wall_seconds": elapsed}


def metrics_csv(rows: List[Metric]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for m in rows:
        writer.writerow(m.row())
    return buf.getvalue()


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def execute(config: dict, seed: int, out: Path, threads: int = 1) -> int:
    mode = config["mode"]
    started = _timestamp()
    residuals, header, extra = [], None, {}
    if mode == "verify":
        rows, resolved = run_suite(), {"suite": "default"}
    elif mode in ("continuous-lmc", "continuous-ulmc"):
        rows, resolved, residuals, header, extra = run_continuous(config, seed, threads, mode.split("-")[1])
    elif mode == "discrete":
        rows, resolved, residuals, header, extra = run_discrete(config, seed, threads)
    else:
        rows, resolved, residuals, header, extra = run_bench(config, seed, threads)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(rows))
    if config.get("residuals") and header:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(residuals)
        (out / "residuals.csv").write_text(buf.getvalue())
    overridden = bool(resolved.get("overrides")) or bool((resolved.get("inner") or {}).get("overrides"))
    manifest = {
        "package_version": __version__,
        "mode": mode,
        "seed": seed,
        "threads": threads,
        "config": {k: v for k, v in config.items() if not k.startswith("_")},
        "resolved": resolved,
        "desk_scale_override": overridden,
        "extra": extra,
        "all_passed": all(m.passed for m in rows),
        "started": started,
        "finished": _timestamp(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return 0 if manifest["all_passed"] else 1


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return str(obj)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parlangevin", description="Run a parallel Langevin sampling experiment.")
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    parser.add_argument("--out", default="parlangevin-out", help="output directory")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for score batches")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    try:
        return execute(config, seed, Path(args.out), args.threads)
    except ParLangevinError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
