"""Class-wise accuracy diagnostics and report serialization."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from feded.data import Dataset
from feded.errors import EvaluationError, ReportIOError, UsageError
from feded.nn import Model, forward

EVAL_CHUNK = 4096


@dataclass
class RoundReport:
    round: int
    global_accuracy: float
    classwise_accuracy: list[float]
    participants: list[int] = field(default_factory=list)
    # (N, C); None rows for clients that sat the round out
    client_classwise: list[list[float] | None] | None = None
    wall_time: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "round": self.round,
            "global_accuracy": self.global_accuracy,
            "classwise_accuracy": list(self.classwise_accuracy),
            "participants": list(self.participants),
            "client_classwise": self.client_classwise,
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RoundReport":
        return cls(
            round=int(d["round"]),
            global_accuracy=float(d["global_accuracy"]),
            classwise_accuracy=[float(v) for v in d["classwise_accuracy"]],
            participants=[int(v) for v in d.get("participants", [])],
            client_classwise=d.get("client_classwise"),
            wall_time=float(d.get("wall_time", 0.0)),
        )


def predict(model: Model, features) -> np.ndarray:
    """Argmax of raw logits; np.argmax already breaks ties toward the lowest index."""
    features = np.asarray(features)
    with np.errstate(over="ignore", invalid="ignore"):
        out = [np.argmax(forward(model, features[i:i + EVAL_CHUNK])[0], axis=1)
               for i in range(0, features.shape[0], EVAL_CHUNK)]
    return np.concatenate(out)


def classwise_from_predictions(pred, labels, num_classes: int) -> tuple[float, np.ndarray]:
    labels = np.asarray(labels)
    totals = np.bincount(labels, minlength=num_classes)
    missing = np.flatnonzero(totals == 0)
    if missing.size:
        raise EvaluationError(f"test set has no samples of classes {missing.tolist()}")
    correct = np.bincount(labels[pred == labels], minlength=num_classes)
    return float(np.mean(pred == labels)), correct / totals


def evaluate(model: Model, test: Dataset) -> tuple[float, np.ndarray]:
    return classwise_from_predictions(predict(model, test.features), test.labels, test.num_classes)


def _num(x: float) -> str:
    return repr(float(x))


def write_report(reports: list[RoundReport], path, fmt: str | None = None,
                 include_timing: bool = False) -> Path:
    """Write reports as CSV (round,global_acc,classwise_*) or JSON (all fields).

    Floats are written with ``repr`` so they read back bit-exact.
    """
    if not reports:
        raise UsageError("refusing to write an empty report list")
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".") or "csv").lower()
    if fmt == "csv":
        num_classes = len(reports[0].classwise_accuracy)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["round", "global_acc"] + [f"classwise_{c}" for c in range(num_classes)]
        if include_timing:
            header.append("wall_time")
        w.writerow(header)
        for r in reports:
            row = [str(r.round), _num(r.global_accuracy)] + [_num(v) for v in r.classwise_accuracy]
            if include_timing:
                row.append(_num(r.wall_time))
            w.writerow(row)
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps([r.to_dict(include_timing) for r in reports], indent=1) + "\n"
    else:
        raise UsageError(f"unknown report format {fmt!r}; use csv or json")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise ReportIOError(f"cannot write report {path}: {e}") from e
    return path


def read_report(path, fmt: str | None = None) -> list[RoundReport]:
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    try:
        text = path.read_text()
    except OSError as e:
        raise ReportIOError(f"cannot read report {path}: {e}") from e
    if fmt == "json":
        return [RoundReport.from_dict(d) for d in json.loads(text)]
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        cw = [float(row[k]) for k in row if k.startswith("classwise_")]
        out.append(RoundReport(int(row["round"]), float(row["global_acc"]), cw,
                               wall_time=float(row.get("wall_time") or 0.0)))
    return out


def summarize_runs(values) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; std is 0 for a single run."""
    values = [float(v) for v in values]
    if not values:
        raise UsageError("summarize_runs needs at least one value")
    if len(values) == 1:
        return values[0], 0.0
    return statistics.fmean(values), statistics.stdev(values)


def empty_class_retention(reports: list[RoundReport], count_matrix) -> float:
    """Mean post-update accuracy of participating clients on their own empty classes.

    Averages over every (round, client, empty class) triple that has a
    diagnostic row. Returns NaN when there is nothing to average.
    """
    counts = np.asarray(count_matrix)
    vals = []
    for r in reports:
        if not r.client_classwise:
            continue
        for client, row in enumerate(r.client_classwise):
            if row is None:
                continue
            empty = np.flatnonzero(counts[client] == 0)
            vals.extend(np.asarray(row)[empty].tolist())
    return float(np.mean(vals)) if vals else float("nan")
