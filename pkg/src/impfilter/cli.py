"""Command-line front end.

    impfilter run CONFIG [--rate R] [--rounds N] [--seeds N] [--section.key VALUE ...]
    impfilter sweep CONFIG [--rates R1 R2 ...]
    impfilter diagnose CONFIG

Configuration is a YAML document with the sections listed in ``SCHEMA``.
Command-line overrides win over the file, which wins over the defaults.
Exit codes: 0 success, 1 configuration error, 2 a run broke the rate or
fairness contract, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np
import yaml

from . import model as nn
from .bounds import BoundReport, check_bounds, model_score_fn
from .datasets import DataError, load_dataset
from .energy import EnergyParams
from .filtering import FilterConfig
from .simulator import (METRIC_FIELDS, SCHEMES, RoundMetrics, SimConfig, check_fairness,
                        check_rate_compliance, fit_scaling_law, run)

log = logging.getLogger("impfilter")

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT, EXIT_IO = 0, 1, 2, 3

SCHEMA = {
    "experiment": {"schemes": ["importance", "uniform", "genie"], "rates": [0.3], "seeds": 5,
                   "output_dir": "out", "jobs": 1},
    "data": {"source": "synthetic_gaussians", "path": None, "label_column": -1, "has_header": True,
             "images": None, "labels": None, "limit": None,
             "class_means": [[-1.0, -1.0], [1.0, 1.0]], "class_scales": 1.0,
             "class_weights": [0.5, 0.5], "count": 8000, "channels": 9, "seed": 0},
    "sim": {"nodes": 4, "samples_per_interval": 100, "rounds": 10, "selection": "bernoulli",
            "epochs": 1, "batch_size": 0, "test_fraction": 0.2, "cycle": True,
            "train_set": "cumulative"},
    "filter": {"buffer_size": 16, "neighbors": 3, "beta_min": 0.0, "beta_max": 1.0,
               "anneal_intervals": 10},
    "model": {"hidden_layers": [8], "activation": "relu", "dropout_rate": 0.0,
              "loss_kind": "cross_entropy"},
    "optimizer": {"kind": "sgd", "learning_rate": 0.01, "adam_beta1": 0.9, "adam_beta2": 0.999,
                  "adam_epsilon": 1e-8},
    "energy": {"e_wake": 1.0, "e_tx": 50.0, "e_rx": 20.0, "battery_capacity": math.inf},
    "diagnose": {"field": "model", "queries": 1000, "delta": 0.05, "output": None, "dim": 2},
}

SUMMARY_FIELDS = ("round", "scheme", "rate", "metric", "metric_mean", "metric_std", "n")
SUMMARY_METRICS = ("train_error", "test_error", "packets", "energy_mean", "energy_max", "beta")


class ConfigError(Exception):
    pass


# -- configuration -----------------------------------------------------------

def _key_line(text: str, section: str, key: str | None = None):
    """Best-effort 1-based line of ``section`` (or ``key`` inside it) in the YAML text."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return None
    if not isinstance(root, yaml.MappingNode):
        return None
    for knode, vnode in root.value:
        if knode.value != section:
            continue
        if key is None or not isinstance(vnode, yaml.MappingNode):
            return knode.start_mark.line + 1
        for k2, _ in vnode.value:
            if k2.value == key:
                return k2.start_mark.line + 1
    return None


def parse_config(text: str, source: str = "<config>") -> dict:
    """Merge a YAML document over the defaults; unknown sections or keys are fatal."""
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: {getattr(exc, 'problem', None) or exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    cfg = {sec: dict(vals) for sec, vals in SCHEMA.items()}
    for sec, vals in doc.items():
        if sec not in SCHEMA:
            line = _key_line(text, sec)
            raise ConfigError(f"{source}:{line}: unknown section {sec!r}")
        if vals is None:
            continue
        if not isinstance(vals, dict):
            raise ConfigError(f"{source}:{_key_line(text, sec)}: section {sec!r} must be a mapping")
        for key, val in vals.items():
            if key not in SCHEMA[sec]:
                line = _key_line(text, sec, key)
                raise ConfigError(f"{source}:{line}: unknown key {sec}.{key}")
            cfg[sec][key] = val
    return cfg


def apply_overrides(cfg: dict, pairs: list[tuple[str, str]]) -> dict:
    for dotted, raw in pairs:
        sec, _, key = dotted.partition(".")
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError(f"unknown override --{dotted}")
        try:
            cfg[sec][key] = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(f"cannot parse value {raw!r} for --{dotted}") from None
    return cfg


def _split_extra(extra: list[str]) -> list[tuple[str, str]]:
    pairs = []
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        name, eq, val = tok[2:].partition("=")
        if not eq:
            try:
                val = next(it)
            except StopIteration:
                raise ConfigError(f"missing value for {tok}") from None
        pairs.append((name.replace("-", "_"), val))
    return pairs


def load_config(path: str, overrides: list[tuple[str, str]] = ()) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = apply_overrides(parse_config(text, path), list(overrides))
    _check_files(cfg)
    return cfg


def _check_files(cfg):
    data = cfg["data"]
    need = {"csv": ("path",), "idx": ("images", "labels")}.get(data["source"], ())
    for key in need:
        if not data[key]:
            raise ConfigError(f"data.{key} is required for source {data['source']!r}")
        if not os.path.exists(data[key]):
            raise ConfigError(f"data.{key}: no such file {data[key]}")


def seed_list(value) -> list[int]:
    if isinstance(value, int):
        if value < 1:
            raise ConfigError("experiment.seeds must be positive")
        return list(range(value))
    if isinstance(value, list) and value and all(isinstance(v, int) for v in value):
        return list(value)
    raise ConfigError("experiment.seeds must be a count or a list of integers")


def build_sim_config(cfg: dict, scheme: str, rate: float, seed: int) -> SimConfig:
    try:
        fcfg = FilterConfig(target_rate=rate, **cfg["filter"])
        energy = {k: (math.inf if v in (None, "inf", ".inf") else float(v)) if k == "battery_capacity"
                  else float(v) for k, v in cfg["energy"].items()}
        m = cfg["model"]
        return SimConfig(
            scheme=scheme, rate=float(rate), seed=int(seed), filter=fcfg,
            hidden_layers=tuple(int(h) for h in m["hidden_layers"]), activation=m["activation"],
            dropout_rate=float(m["dropout_rate"]), loss_kind=m["loss_kind"],
            optimizer=nn.OptimizerConfig(**cfg["optimizer"]), energy=EnergyParams(**energy),
            **cfg["sim"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def build_dataset(cfg: dict):
    data = {k: v for k, v in cfg["data"].items() if v is not None}
    source = data.pop("source")
    try:
        return load_dataset(source, **data)
    except (DataError, KeyError) as exc:
        raise ConfigError(f"data: {exc}") from None


# -- metrics files ------------------------------------------------------------

def write_metrics(path: str, metrics: list[RoundMetrics]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for m in metrics:
            w.writerow(m.row())


def read_metrics(path: str) -> list[RoundMetrics]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [RoundMetrics.from_row(row) for row in reader]


def summarize(results: list[list[RoundMetrics]]) -> list[dict]:
    """Mean and sample standard deviation across seeds per (scheme, rate, round, metric)."""
    groups = {}
    for metrics in results:
        for m in metrics:
            groups.setdefault((m.scheme, m.rate, m.round), []).append(m)
    rows = []
    for (scheme, rate, rnd), ms in sorted(groups.items()):
        for metric in SUMMARY_METRICS:
            vals = np.array([float(getattr(m, metric)) for m in ms])
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            rows.append({"round": rnd, "scheme": scheme, "rate": rate, "metric": metric,
                         "metric_mean": float(np.mean(vals)), "metric_std": std, "n": len(vals)})
    return rows


def write_rows(path: str, fields, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (row[f] for f in fields)])


def read_rows(path: str) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _metrics_name(scheme, rate, seed):
    return f"metrics_{scheme}_R{rate:g}_s{seed}.csv"


# -- commands ---------------------------------------------------------------------

@dataclass
class Outcome:
    results: dict  # (scheme, rate, seed) -> SimResult
    problems: list[str]


def _run_one(dataset, cfg, job):
    scheme, rate, seed = job
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run(build_sim_config(cfg, scheme, rate, seed), dataset)


def execute(cfg: dict, schemes, rates, seeds) -> Outcome:
    """Run every (scheme, rate, seed) combination, then check the contracts."""
    for s in schemes:
        if s not in SCHEMES:
            raise ConfigError(f"unknown scheme {s!r}")
    for r in rates:
        build_sim_config(cfg, schemes[0], r, seeds[0])  # validate before spending time
    dataset = build_dataset(cfg)
    jobs = list(itertools.product(schemes, rates, seeds))
    n_jobs = int(cfg["experiment"]["jobs"] or 1)
    fn = partial(_run_one, dataset, cfg)
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            out = list(ex.map(fn, jobs))
    else:
        out = [fn(j) for j in jobs]
    results = dict(zip(jobs, out))
    problems = []
    for res in out:
        problems += check_rate_compliance(res)
    for rate, seed in itertools.product(rates, seeds):
        problems += [f"R={rate} seed={seed}: {p}" for p in
                     check_fairness([results[(s, rate, seed)] for s in schemes])]
    return Outcome(results, problems)


def _write_run_files(outdir, outcome):
    os.makedirs(outdir, exist_ok=True)
    for (scheme, rate, seed), res in outcome.results.items():
        write_metrics(os.path.join(outdir, _metrics_name(scheme, rate, seed)), res.metrics)
    rows = summarize([res.metrics for res in outcome.results.values()])
    write_rows(os.path.join(outdir, "summary.csv"), SUMMARY_FIELDS, rows)
    return rows


def final_round_table(outcome: Outcome) -> list[dict]:
    cells = {}
    for (scheme, rate, _), res in outcome.results.items():
        cells.setdefault((scheme, rate), []).append(res)
    rows = []
    for (scheme, rate), rs in sorted(cells.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        test = np.array([r.metrics[-1].test_error for r in rs])
        train = np.array([r.metrics[-1].train_error for r in rs])
        rows.append({
            "scheme": scheme, "rate": rate,
            "test_error_mean": float(test.mean()),
            "test_error_std": float(test.std(ddof=1)) if len(rs) > 1 else 0.0,
            "train_error_mean": float(np.nanmean(train)) if np.isfinite(train).any() else math.nan,
            "packets_mean": float(np.mean([r.packets_total for r in rs])),
            "energy_per_interval": float(np.mean([r.energy_per_interval().mean() for r in rs])),
            "n": len(rs),
        })
    return rows


COMPARISON_FIELDS = ("scheme", "rate", "test_error_mean", "test_error_std", "train_error_mean",
                     "packets_mean", "energy_per_interval", "n")


def _print_table(rows, fields, stream=sys.stdout):
    print("  ".join(f"{f:>16}" for f in fields), file=stream)
    for row in rows:
        print("  ".join(f"{row[f]:>16.4f}" if isinstance(row[f], float) else f"{row[f]!s:>16}"
                        for f in fields), file=stream)


def _report_problems(problems):
    for p in problems:
        print(f"assertion failed: {p}", file=sys.stderr)
    return EXIT_ASSERT if problems else EXIT_OK


def cmd_run(cfg: dict) -> int:
    exp = cfg["experiment"]
    outcome = execute(cfg, list(exp["schemes"]), [float(r) for r in exp["rates"]], seed_list(exp["seeds"]))
    _write_run_files(exp["output_dir"], outcome)
    _print_table(final_round_table(outcome), COMPARISON_FIELDS)
    return _report_problems(outcome.problems)


def scaling_fits(table: list[dict]) -> list[dict]:
    rows = []
    for scheme in sorted({r["scheme"] for r in table}):
        pts = [(r["rate"], r["test_error_mean"]) for r in table if r["scheme"] == scheme]
        try:
            alpha, expo = fit_scaling_law(*zip(*pts))
            rows.append({"scheme": scheme, "alpha": alpha, "exponent": expo, "points": len(pts)})
        except ValueError as exc:
            rows.append({"scheme": scheme, "alpha": math.nan, "exponent": math.nan,
                         "points": len(pts), "note": str(exc)})
    return rows


def cmd_sweep(cfg: dict, rates=None) -> int:
    exp = cfg["experiment"]
    rates = [float(r) for r in (rates or exp["rates"])]
    if not rates:
        raise ConfigError("sweep needs at least one rate")
    outcome = execute(cfg, list(exp["schemes"]), rates, seed_list(exp["seeds"]))
    outdir = exp["output_dir"]
    _write_run_files(outdir, outcome)
    table = final_round_table(outcome)
    write_rows(os.path.join(outdir, "comparison.csv"), COMPARISON_FIELDS, table)
    _print_table(table, COMPARISON_FIELDS)
    if len(set(rates)) < 3:
        print("scaling-law fit skipped: needs at least 3 distinct rates")
    else:
        fits = scaling_fits(table)
        write_rows(os.path.join(outdir, "scaling_fit.csv"), ("scheme", "alpha", "exponent", "points"), fits)
        for f in fits:
            print(f"fit {f['scheme']}: error ~ {f['alpha']:.4g} * R^{f['exponent']:.4g}")
    return _report_problems(outcome.problems)


def smooth_field(X) -> np.ndarray:
    """Lipschitz test field on [0, 1]^n used by ``diagnose`` (field: smooth)."""
    X = np.atleast_2d(X)
    return 1.0 + 0.5 * np.sin(2 * np.pi * X[:, 0]) * np.cos(np.pi * X[:, -1])


def diagnose(cfg: dict) -> BoundReport:
    diag = cfg["diagnose"]
    exp = cfg["experiment"]
    seed = seed_list(exp["seeds"])[0]
    rate = float(exp["rates"][0])
    sim = build_sim_config(cfg, "importance", rate, seed)
    P, L = sim.filter.buffer_size, sim.filter.neighbors
    rng = np.random.default_rng(seed)
    queries = int(diag["queries"])
    delta = float(diag["delta"])
    field = diag["field"]
    if field == "model":
        dataset = build_dataset(cfg)
        res = _run_one(dataset, cfg, ("importance", rate, seed))
        node = res.nodes[0]
        test = res.streams.test_set()
        pick = rng.choice(len(test), size=min(queries, len(test)), replace=False)
        X, y = test.features[pick], test.labels[pick]
        return check_bounds(X, y, node.buffer_x, node.buffer_s, model_score_fn(res.model), L, delta)
    if field in ("constant", "smooth"):
        n = int(diag["dim"])
        bx = rng.random((P, n))
        X = rng.random((queries, n))
        if field == "constant":
            fn = lambda Z, _y: np.ones(len(Z))
        else:
            fn = lambda Z, _y: smooth_field(Z)
        return check_bounds(X, None, bx, fn(bx, None), fn, L, delta)
    raise ConfigError(f"unknown diagnose.field {field!r}")


def cmd_diagnose(cfg: dict) -> int:
    report = diagnose(cfg)
    out = cfg["diagnose"]["output"] or os.path.join(cfg["experiment"]["output_dir"], "bound_report.txt")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    sys.stdout.write(report.to_text())
    return EXIT_OK


# -- entry point --------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not the assertion exit code 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser():
    p = _Parser(prog="impfilter", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep", "diagnose"):
        sp = sub.add_parser(name)
        sp.add_argument("config")
        sp.add_argument("--rate", type=float, help="single rate (experiment.rates)")
        sp.add_argument("--rounds", type=int, help="sim.rounds")
        sp.add_argument("--seeds", type=int, help="number of seeds, 0..N-1")
        sp.add_argument("--schemes", help="comma-separated scheme list")
        sp.add_argument("--out", help="experiment.output_dir")
        sp.add_argument("--jobs", type=int, help="parallel worker processes")
        if name == "sweep":
            sp.add_argument("--rates", type=float, nargs="+")
    return p


def main(argv=None) -> int:
    parser = _parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        pairs = []
        if args.rate is not None:
            pairs.append(("experiment.rates", f"[{args.rate!r}]"))
        if args.rounds is not None:
            pairs.append(("sim.rounds", str(args.rounds)))
        if args.seeds is not None:
            pairs.append(("experiment.seeds", str(args.seeds)))
        if args.schemes:
            pairs.append(("experiment.schemes", "[" + args.schemes + "]"))
        if args.out:
            pairs.append(("experiment.output_dir", json.dumps(args.out)))
        if args.jobs:
            pairs.append(("experiment.jobs", str(args.jobs)))
        pairs += _split_extra(extra)
        cfg = load_config(args.config, pairs)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.rates)
        return cmd_diagnose(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
