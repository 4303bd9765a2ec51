"""Command-line driver for the full experiment pipeline.

Subcommands: run (ingest -> split -> spread -> impute -> evaluate), split
(persist a train/probe split), sweep-k (NRMSE-vs-K curve), stats (density
report), synth (generate a synthetic rating log).  A JSON config file with
flat keys mirroring the flags may supply any value; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import dataset, evaluation, imputation, spreading, synth
from .dataset import DataError, RatingParseError
from .imputation import IllsConfig, NumericError

MODES = ("probs-only", "ills", "raw-ills")
DEFAULT_K_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
DEFAULT_LISTS = (10, 20, 50, 100)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    input: str
    delimiter: str = "\t"
    threshold: float = 3.0
    ratio: float = 0.1
    seed: int = 0
    mode: str = "ills"
    k_grid: tuple[float, ...] = DEFAULT_K_GRID
    full_k_scan: bool = False
    baseline_k: float = 0.3
    max_iters: int = 10
    tol: float = 1e-4
    mask_fraction: float = 0.01
    lists: tuple[int, ...] = DEFAULT_LISTS
    out: str = "out"
    dump_scores: bool = False

    def validate(self):
        if not self.input:
            raise ConfigError("an input ratings file is required")
        if len(self.delimiter) != 1:
            raise ConfigError("delimiter must be a single character")
        if not math.isfinite(self.threshold):
            raise ConfigError("threshold must be finite")
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError("ratio must be in (0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")
        if not self.k_grid or any(not 0.0 < f <= 1.0 for f in self.k_grid):
            raise ConfigError("k-grid fractions must lie in (0, 1]")
        if any(b <= a for a, b in zip(self.k_grid, self.k_grid[1:])):
            raise ConfigError("k-grid must be strictly increasing")
        if not 0.0 < self.baseline_k <= 1.0:
            raise ConfigError("baseline-k must be in (0, 1]")
        if self.max_iters < 1:
            raise ConfigError("max-iters must be >= 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if not 0.0 < self.mask_fraction < 1.0:
            raise ConfigError("mask-fraction must be in (0, 1)")
        if not self.lists or any(L < 1 for L in self.lists):
            raise ConfigError("lists must be positive integers")


def substream_seed(seed: int, index: int) -> int:
    """Deterministic child seed so substreams never share randomness."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def _load_split(config: ExperimentConfig) -> dataset.DataSplit:
    with open(config.input, "rb") as handle:
        records = dataset.parse_ratings(handle, config.delimiter)
    links = dataset.binarize(records, config.threshold)
    if len(links) < 2:
        raise DataError("fewer than 2 links survive the rating threshold")
    return dataset.split_train_probe(links, config.ratio, substream_seed(config.seed, 1))


def _ills_config(config: ExperimentConfig, user_count: int) -> IllsConfig:
    grid = config.k_grid
    if config.full_k_scan:
        grid = tuple(k / user_count for k in range(1, user_count + 1))
    return IllsConfig(k_grid=grid, max_iterations=config.max_iters,
                      convergence_tol=config.tol, mask_fraction=config.mask_fraction,
                      seed=substream_seed(config.seed, 2))


def run_experiment(config: ExperimentConfig) -> evaluation.MetricsReport:
    """Execute the configured mode end to end and write all outputs."""
    config.validate()
    split = _load_split(config)
    graph = dataset.build_graph(split.training)

    trace = None
    if config.mode == "probs-only":
        scores = spreading.densify(graph)
    elif config.mode == "ills":
        scores = spreading.densify(graph)
        scores, trace = imputation.run_ills(scores, _ills_config(config, graph.user_count))
    else:  # raw-ills: one estimation pass over the raw binary matrix, with
        # the combination row fully mean-filled like the rest of the data
        scores = spreading.binary_scores(split.training)
        K = max(1, int(math.floor(config.baseline_k * graph.user_count + 0.5)))
        scores = imputation.impute_iteration(scores, K, fill_w=True)

    report = evaluation.build_report(scores, split, config.lists, trace,
                                     threshold=config.threshold, mode=config.mode)

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(evaluation.report_to_json(report))
    (out / "curves.csv").write_text(evaluation.curves_to_csv(report))
    if trace is not None:
        payload = {"chosen_k": trace.chosen_k, "nrmse": list(trace.nrmse_per_iteration),
                   "iterations": trace.iterations_run}
        (out / "trace.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if config.dump_scores:
        spreading.write_scores(scores, out / "scores.bin", out / "provenance.bin")
    return report


def sweep_k(config: ExperimentConfig):
    """NRMSE of one estimation pass at each grid K, written as CSV."""
    config.validate()
    if config.mode != "ills":
        raise ConfigError("sweep-k requires mode 'ills'")
    split = _load_split(config)
    graph = dataset.build_graph(split.training)
    scores = spreading.densify(graph)
    curve = imputation.k_curve(scores, _ills_config(config, graph.user_count))

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["K,K_fraction,NRMSE"]
    lines += [f"{k},{fraction!r},{err!r}" for fraction, k, err in curve]
    (out / "ksweep.csv").write_text("\n".join(lines) + "\n")
    return curve


def data_stats(config: ExperimentConfig) -> dict:
    """Users/items/links/density before and after spreading."""
    config.validate()
    split = _load_split(config)
    links = split.training.with_links(split.training.links | split.probe.links)
    scores = spreading.densify(dataset.build_graph(split.training))
    stats = {
        "users": links.user_count,
        "items": links.item_count,
        "links": len(links),
        "training_links": len(split.training),
        "probe_links": len(split.probe),
        "density": dataset.density(links),
        "training_density": dataset.density(split.training),
        "density_after_spreading": spreading.spread_stats(scores).nonzero_fraction,
    }
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    return stats


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="illsrec",
                                     description="Spreading + least-squares recommender pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON file with flat keys mirroring the flags")
        p.add_argument("--input", help="delimiter-separated rating log")
        p.add_argument("--delimiter", help="field delimiter (default tab)")
        p.add_argument("--threshold", type=float, help="minimum rating that forms a link")
        p.add_argument("--ratio", type=float, help="probe fraction (default 0.1)")
        p.add_argument("--seed", type=int, help="experiment seed")
        p.add_argument("--out", help="output directory")

    run_p = sub.add_parser("run", help="full pipeline for one mode")
    add_common(run_p)
    run_p.add_argument("--mode", choices=MODES)
    run_p.add_argument("--k-grid", dest="k_grid", help="comma-separated fractions of the user count")
    run_p.add_argument("--full-k-scan", dest="full_k_scan", action="store_true", default=None,
                       help="scan every K from 1 to the user count")
    run_p.add_argument("--baseline-k", dest="baseline_k", type=float,
                       help="neighbour fraction for raw-ills mode (default 0.3)")
    run_p.add_argument("--max-iters", dest="max_iters", type=int)
    run_p.add_argument("--tol", type=float, help="NRMSE convergence tolerance")
    run_p.add_argument("--mask-fraction", dest="mask_fraction", type=float)
    run_p.add_argument("--lists", help="comma-separated list lengths (default 10,20,50,100)")
    run_p.add_argument("--dump-scores", dest="dump_scores", action="store_true", default=None,
                       help="also write the binary score/provenance dump")

    split_p = sub.add_parser("split", help="persist a train/probe split")
    add_common(split_p)

    sweep_p = sub.add_parser("sweep-k", help="NRMSE-versus-K curve")
    add_common(sweep_p)
    sweep_p.add_argument("--k-grid", dest="k_grid")
    sweep_p.add_argument("--full-k-scan", dest="full_k_scan", action="store_true", default=None)
    sweep_p.add_argument("--mask-fraction", dest="mask_fraction", type=float)
    sweep_p.add_argument("--max-iters", dest="max_iters", type=int)
    sweep_p.add_argument("--tol", type=float)

    stats_p = sub.add_parser("stats", help="density report for a rating log")
    add_common(stats_p)

    synth_p = sub.add_parser("synth", help="generate a synthetic rating log")
    synth_p.add_argument("--seed", type=int, default=0)
    synth_p.add_argument("--users", type=int, default=943)
    synth_p.add_argument("--items", type=int, default=1682)
    synth_p.add_argument("--records", type=int, default=100_000)
    synth_p.add_argument("--out", default="ratings.tsv", help="output file path")
    return parser


def _parse_fraction_list(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    if getattr(args, "config", None):
        try:
            values.update(json.loads(Path(args.config).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for name in known:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if isinstance(values.get("k_grid"), str):
        values["k_grid"] = _parse_fraction_list(values["k_grid"])
    if isinstance(values.get("lists"), str):
        values["lists"] = _parse_int_list(values["lists"])
    for key in ("k_grid", "lists"):
        if key in values and not isinstance(values[key], tuple):
            values[key] = tuple(values[key])
    if "input" not in values:
        raise ConfigError("an input ratings file is required (--input or config file)")
    try:
        config = ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    config.validate()
    return config


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "synth":
            records = synth.movielens_like(seed=args.seed, users=args.users,
                                           items=args.items, records=args.records)
            synth.write_ratings(records, args.out)
            print(f"wrote {len(records)} records to {args.out}")
            return 0
        config = _build_config(args)
        if args.command == "run":
            report = run_experiment(config)
            print(f"mode={config.mode} seed={config.seed} auc={report.auc:.4f}")
            for L in sorted(report.precision):
                print(f"  L={L} precision={report.precision[L]:.4f} "
                      f"recall={report.recall[L]:.4f} diversity={report.diversity[L]:.4f}")
            if report.chosen_k is not None:
                print(f"  chosen_k={report.chosen_k} iterations={len(report.nrmse_trace)}")
        elif args.command == "split":
            split = _load_split(config)
            dataset.write_split(split, config.out)
            print(f"training={len(split.training)} probe={len(split.probe)} -> {config.out}")
        elif args.command == "sweep-k":
            curve = sweep_k(config)
            best = min(curve, key=lambda point: (point[2], point[1]))
            print(f"best K={best[1]} (fraction {best[0]:g}) NRMSE={best[2]:.4f}")
        elif args.command == "stats":
            stats = data_stats(config)
            for key in sorted(stats):
                print(f"{key}: {stats[key]}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (RatingParseError, DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
