"""Experiment configuration: sectioned key-value files (INI syntax) plus overrides.

Example::

    [dataset]
    source = synthetic
    num_classes = 10
    dim = 32

    [partition]
    kind = dirichlet
    beta = 0.05
    num_clients = 10

    [training]
    method = feded
    rounds = 30
    lambda = 0.1

    [report]
    output_dir = reports

    [experiment]
    seeds = 1, 2, 3

Unset keys take the defaults in ``SCHEMA``. Precedence is file < environment
(``FEDED_REPORT_DIR``) < command-line overrides.
"""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from feded.engine import LAMBDA_GRID, FedConfig, Method
from feded.errors import ConfigError

REPORT_DIR_ENV = "FEDED_REPORT_DIR"


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.replace(",", " ").split()]


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.replace(",", " ").split()]


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "none", "off") else float(s)


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() in ("", "none", "master") else int(s)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "dataset": {
        "source": (str, "synthetic"),
        "num_classes": (int, 10),
        "dim": (int, 32),
        "per_class": (int, 200),
        "spread": (float, 1.0),
        "separation": (float, 0.5),
        "seed": (int, 0),
        "train_images": (str, ""),
        "train_labels": (str, ""),
        "test_images": (str, ""),
        "test_labels": (str, ""),
        "subset_fraction": (float, 1.0),
        "subset_seed": (int, 0),
    },
    "partition": {
        "kind": (str, "dirichlet"),
        "beta": (float, 0.05),
        "shards": (int, 2),
        "num_clients": (int, 10),
        # unset: each run partitions with its own master seed
        "seed": (_opt_int, None),
    },
    "training": {
        "method": (str, "feded"),
        "rounds": (int, 50),
        "participation": (float, 1.0),
        "local_epochs": (int, 5),
        "batch_size": (int, 64),
        "learning_rate": (float, 0.01),
        "momentum": (float, 0.9),
        "weight_decay": (float, 1e-5),
        "lambda": (float, 0.1),
        "mu": (float, 0.01),
        "logit_weight": (float, 1.0),
        "hidden": (_ints, [256, 128]),
        "clip_norm": (_opt_float, None),
        "strict_weights": (_bool, False),
        "workers": (int, 1),
    },
    "report": {
        "output_dir": (str, "reports"),
        "format": (str, "csv"),
        "diagnostics": (_bool, False),
        "figures": (_bool, True),
    },
    "experiment": {
        "seeds": (_ints, [0]),
        "lambda_grid": (_floats, list(LAMBDA_GRID)),
    },
}

SYNTHETIC_KEYS = {"num_classes", "dim", "per_class", "spread", "separation", "seed"}
MNIST_KEYS = {"train_images", "train_labels", "test_images", "test_labels"}


@dataclass
class ExperimentConfig:
    dataset: dict
    partition: dict
    training: dict
    report: dict
    experiment: dict
    explicit: set = field(default_factory=set, repr=False)

    @property
    def seeds(self) -> list[int]:
        return list(self.experiment["seeds"])

    def fed_config(self, **changes) -> FedConfig:
        t = self.training
        cfg = FedConfig(
            rounds=t["rounds"],
            num_clients=self.partition["num_clients"],
            participation=t["participation"],
            local_epochs=t["local_epochs"],
            batch_size=t["batch_size"],
            learning_rate=t["learning_rate"],
            momentum=t["momentum"],
            weight_decay=t["weight_decay"],
            method=t["method"],
            lam=t["lambda"],
            mu=t["mu"],
            logit_weight=t["logit_weight"],
            hidden=tuple(t["hidden"]),
            clip_norm=t["clip_norm"],
            master_seed=self.seeds[0],
            strict_weights=t["strict_weights"],
            workers=t["workers"],
            diagnostics=self.report["diagnostics"],
        )
        return cfg.with_(**changes) if changes else cfg

    def to_dict(self) -> dict:
        return {s: dict(getattr(self, s)) for s in SCHEMA}

    def dump(self, path) -> Path:
        """Write the resolved configuration as canonical JSON."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")
        return path


def _set(values: dict, explicit: set, section: str, key: str, raw, where: str) -> None:
    if section not in SCHEMA:
        raise ConfigError(f"{where}: unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{where}: unknown key {section}.{key}")
    parse = SCHEMA[section][key][0]
    try:
        values[section][key] = parse(raw) if isinstance(raw, str) else raw
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: bad value for {section}.{key}: {raw!r} ({e})") from None
    explicit.add(f"{section}.{key}")


def _load_json(path, values: dict, explicit: set) -> None:
    """Read a resolved-config dump; keys left at their defaults stay implicit."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"malformed config {path}: expected an object of sections")
    for section, keys in data.items():
        if not isinstance(keys, dict):
            raise ConfigError(f"{path}: section {section!r} must be an object")
        for key, value in keys.items():
            default = SCHEMA.get(section, {}).get(key, (None, object()))[1]
            if value != default:
                _set(values, explicit, section, key, value, str(path))


def parse_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Load ``path`` (INI, or a JSON dump) and apply env then ``overrides`` ({"section.key": value})."""
    values = {s: {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in keys.items()}
              for s, keys in SCHEMA.items()}
    explicit: set = set()
    if path is not None and Path(path).suffix == ".json":
        _load_json(path, values, explicit)
    elif path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except configparser.Error as e:
            raise ConfigError(f"malformed config {path}: {e}") from e
        for section in parser.sections():
            for key, raw in parser.items(section):
                _set(values, explicit, section, key, raw, str(path))
    env_dir = os.environ.get(REPORT_DIR_ENV)
    if env_dir:
        _set(values, explicit, "report", "output_dir", env_dir, REPORT_DIR_ENV)
    for dotted, raw in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        _set(values, explicit, section, key, raw, f"override {dotted}")
    cfg = ExperimentConfig(**values, explicit=explicit)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    d = cfg.dataset
    source = d["source"].lower()
    given = {k.split(".", 1)[1] for k in cfg.explicit if k.startswith("dataset.")}
    if source == "synthetic":
        mixed = given & MNIST_KEYS
    elif source == "mnist":
        mixed = given & SYNTHETIC_KEYS
        missing = [k for k in sorted(MNIST_KEYS) if not d[k]]
        if missing:
            raise ConfigError(f"dataset.source = mnist needs {', '.join('dataset.' + k for k in missing)}")
    else:
        raise ConfigError(f"dataset.source must be synthetic or mnist, got {d['source']!r}")
    if mixed:
        raise ConfigError(f"dataset.source = {source} conflicts with keys "
                          f"{', '.join('dataset.' + k for k in sorted(mixed))}")
    if not 0 < d["subset_fraction"] <= 1:
        raise ConfigError("dataset.subset_fraction must lie in (0, 1]")

    p = cfg.partition
    if p["kind"] not in ("dirichlet", "quantity"):
        raise ConfigError(f"partition.kind must be dirichlet or quantity, got {p['kind']!r}")
    if p["kind"] == "dirichlet" and not p["beta"] > 0:
        raise ConfigError(f"partition.beta must be positive, got {p['beta']}")
    if p["kind"] == "quantity" and p["shards"] < 1:
        raise ConfigError(f"partition.shards must be >= 1, got {p['shards']}")

    r = cfg.report
    if r["format"] not in ("csv", "json"):
        raise ConfigError(f"report.format must be csv or json, got {r['format']!r}")
    if not cfg.seeds:
        raise ConfigError("experiment.seeds must list at least one seed")
    if not cfg.experiment["lambda_grid"] or min(cfg.experiment["lambda_grid"]) < 0:
        raise ConfigError("experiment.lambda_grid must be a non-empty list of non-negative values")
    Method.parse(cfg.training["method"])
    try:
        cfg.fed_config()
    except ConfigError as e:
        raise ConfigError(f"training: {e}") from None
