"""Command-line entry point: ``feded run|ablate|lambda-sweep --config FILE``.

Exit codes: 0 ok, 2 configuration, 3 data ingestion, 4 training, 5 I/O.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from feded import plotting
from feded.config import ExperimentConfig, parse_config
from feded.data import Dataset, gen_synthetic, load_mnist_idx, stratified_subset
from feded.engine import ABLATION_ROWS, FedConfig, Method, compare
from feded.errors import ConfigError, FedEDError, ReportIOError
from feded.metrics import empty_class_retention, write_report
from feded.partition import Partition, dirichlet_partition, partition_stats, quantity_shard_partition

log = logging.getLogger("feded")


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.dataset
    if d["source"] == "mnist":
        train = load_mnist_idx(d["train_images"], d["train_labels"], "train")
        test = load_mnist_idx(d["test_images"], d["test_labels"], "test")
        if d["subset_fraction"] < 1:
            train = stratified_subset(train, d["subset_fraction"], d["subset_seed"])
        return train, test
    return gen_synthetic(d["num_classes"], d["dim"], d["per_class"], d["spread"], d["seed"],
                         separation=d["separation"])


def partition_source(cfg: ExperimentConfig, train: Dataset):
    p = cfg.partition
    cache: dict[int, Partition] = {}

    def build(master_seed: int) -> Partition:
        seed = p["seed"] if p["seed"] is not None else master_seed
        if seed not in cache:
            if p["kind"] == "dirichlet":
                cache[seed] = dirichlet_partition(train.labels, p["num_clients"], p["beta"], seed,
                                                  train.num_classes)
            else:
                cache[seed] = quantity_shard_partition(train.labels, p["num_clients"], p["shards"], seed,
                                                       train.num_classes)
        return cache[seed]

    return build


def _execute(cfg: ExperimentConfig, configs: dict[str, FedConfig], out: Path, baseline: str | None = None) -> dict:
    train, test = load_data(cfg)
    parts = partition_source(cfg, train)
    seeds = cfg.seeds
    fmt = cfg.report["format"]
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "resolved_config.json")

    for s in seeds:
        parts(s).save(out / f"partition_seed{s}.json")

    results = compare(configs, train, test, parts, seeds)
    summary = {}
    for label, res in results.items():
        for s, reps in res["runs"].items():
            write_report(reps, out / f"{label}_seed{s}.{fmt}", fmt)
        entry = {"method": res["config"].method.value, "lambda": res["config"].lam,
                 "final": res["final"], "mean": res["mean"], "std": res["std"]}
        if cfg.report["diagnostics"]:
            entry["empty_class_retention"] = float(np.nanmean(
                [empty_class_retention(res["runs"][s], parts(s).count_matrix) for s in seeds]))
        summary[label] = entry
    if baseline is not None:
        for entry in summary.values():
            entry["delta"] = entry["mean"] - summary[baseline]["mean"]

    try:
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            cols = ["label", "method", "lambda", "mean", "std", "runs"] + (["delta"] if baseline else [])
            w.writerow(cols)
            for label, e in summary.items():
                row = [label, e["method"], repr(e["lambda"]), repr(e["mean"]), repr(e["std"]), len(e["final"])]
                w.writerow(row + ([repr(e["delta"])] if baseline else []))
    except OSError as e:
        raise ReportIOError(f"cannot write summary to {out}: {e}") from e

    if cfg.report["figures"]:
        fig_dir = out / "figures"
        plotting.accuracy_curves({k: v["runs"] for k, v in results.items()}, fig_dir / "accuracy.png")
        plotting.summary_bars(summary, fig_dir / "final_accuracy.png")
        last = {k: np.mean([v["runs"][s][-1].classwise_accuracy for s in seeds], axis=0)
                for k, v in results.items()}
        plotting.classwise_bars(last, fig_dir / "classwise_final.png", "final global model")
        for s in seeds:
            plotting.partition_heatmap(parts(s).count_matrix, fig_dir / f"partition_seed{s}.png",
                                       f"{cfg.partition['kind']} partition, seed {s}")
    for label, e in summary.items():
        print(f"{label:20s} {100 * e['mean']:6.2f} +- {100 * e['std']:5.2f}"
              + (f"  ({100 * e['delta']:+.2f})" if baseline else ""))
    return summary


def _out_dir(cfg: ExperimentConfig, command: str) -> Path:
    return Path(cfg.report["output_dir"]) / command


def cmd_run(cfg: ExperimentConfig) -> dict:
    base = cfg.fed_config()
    return _execute(cfg, {base.method.value: base}, _out_dir(cfg, "run"))


def cmd_ablate(cfg: ExperimentConfig) -> dict:
    base = cfg.fed_config()
    configs = {label: base.with_(method=m) for label, m in ABLATION_ROWS.items()}
    return _execute(cfg, configs, _out_dir(cfg, "ablate"), baseline="calibrated")


def cmd_lambda_sweep(cfg: ExperimentConfig) -> dict:
    base = cfg.fed_config(method=Method.FEDED)
    configs = {f"lambda={lam:g}": base.with_(lam=float(lam)) for lam in cfg.experiment["lambda_grid"]}
    return _execute(cfg, configs, _out_dir(cfg, "lambda-sweep"))


COMMANDS = {"run": cmd_run, "ablate": cmd_ablate, "lambda-sweep": cmd_lambda_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="feded", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="sectioned key-value config file")
        p.add_argument("--seed", type=int, action="append", help="master seed (repeatable)")
        p.add_argument("--lambda", dest="lam", type=float, help="distillation weight")
        p.add_argument("--method", help="fedavg, fedprox, calibrated, feded, feded_no_dis, feded_no_logit")
        p.add_argument("--rounds", type=int)
        p.add_argument("--clients", type=int)
        p.add_argument("--beta", type=float)
        p.add_argument("--workers", type=int, help="clients trained in parallel threads")
        p.add_argument("--out", help="report directory (overrides $FEDED_REPORT_DIR)")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--diagnostics", action="store_true", help="record per-client class-wise accuracy")
        p.add_argument("--no-figures", action="store_true")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def overrides_from_args(args) -> dict:
    o = {}
    flags = {
        "lam": "training.lambda", "method": "training.method", "rounds": "training.rounds",
        "clients": "partition.num_clients", "beta": "partition.beta", "workers": "training.workers",
        "out": "report.output_dir", "format": "report.format",
    }
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        o[key.strip()] = value.strip()
    for attr, key in flags.items():
        v = getattr(args, attr)
        if v is not None:
            o[key] = v
    if args.seed:
        o["experiment.seeds"] = list(args.seed)
    if args.diagnostics:
        o["report.diagnostics"] = True
    if args.no_figures:
        o["report.figures"] = False
    return o


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config, overrides_from_args(args))
        COMMANDS[args.command](cfg)
    except FedEDError as e:
        log.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except OSError as e:
        log.error("I/O error: %s", e)
        return ReportIOError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
