"""Shot-group accuracy, logit adjustment and per-epoch reports."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .sinkhorn import PROB_FLOOR

GROUP_NAMES = ("many", "medium", "few")


@dataclass(frozen=True)
class ShotGroups:
    many: tuple
    medium: tuple
    few: tuple

    def __post_init__(self):
        sets = [set(self.many), set(self.medium), set(self.few)]
        if sum(len(s) for s in sets) != len(set().union(*sets)):
            raise ValueError("shot groups must be disjoint")

    @classmethod
    def thirds(cls, num_classes: int, class_sizes: Optional[Sequence[int]] = None) -> "ShotGroups":
        """First and last ``L // 3`` classes by size are many/few, the rest medium."""
        if class_sizes is None:
            order = np.arange(num_classes)
        else:
            order = np.argsort(-np.asarray(class_sizes), kind="stable")
        k = num_classes // 3
        return cls(
            tuple(int(c) for c in order[:k]),
            tuple(int(c) for c in order[k:num_classes - k]),
            tuple(int(c) for c in order[num_classes - k:]),
        )

    def check_cover(self, num_classes: int) -> None:
        if set(self.many) | set(self.medium) | set(self.few) != set(range(num_classes)):
            raise ValueError("shot groups must cover every class")


def accuracy_by_group(predictions, labels, groups: ShotGroups) -> dict:
    """Overall and per-group accuracy; a group with no test samples maps to None."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    correct = predictions == labels
    out = {"overall": float(correct.mean()) if len(labels) else None}
    for name in GROUP_NAMES:
        sel = np.isin(labels, getattr(groups, name))
        out[name] = float(correct[sel].mean()) if sel.any() else None
    return out


def logit_adjust_predict(logits, prior, zeta: float) -> np.ndarray:
    """``argmax_j g_j - zeta * log r_j`` row-wise (or for a single vector)."""
    g = np.asarray(logits, dtype=np.float64)
    r = np.maximum(np.asarray(prior, dtype=np.float64), PROB_FLOOR)
    scores = g - zeta * np.log(r) if zeta else g
    return scores.argmax(axis=-1)


def evaluate(model, X, labels, groups: ShotGroups, prior=None, zeta: float = 0.0) -> dict:
    logits = model.logits(X)
    if prior is None or zeta == 0:
        preds = logits.argmax(axis=1)
    else:
        preds = logit_adjust_predict(logits, prior, zeta)
    return accuracy_by_group(preds, labels, groups)


def prior_tv_distance(estimate, truth) -> float:
    return 0.5 * float(np.abs(np.asarray(estimate, dtype=np.float64) - np.asarray(truth, dtype=np.float64)).sum())


REPORT_COLUMNS = (
    "epoch", "lr", "eta", "rho", "loss", "ce", "cr", "mix", "rn",
    "reliable_fraction", "relaxed_steps", "prior_tv",
    "acc_overall", "acc_many", "acc_medium", "acc_few",
)


def report_rows(history: Sequence[dict]) -> list[dict]:
    if not history:
        raise ValueError("empty metrics history")
    return [{col: rec.get(col) for col in REPORT_COLUMNS} for rec in history]


def report(history: Sequence[dict], path, fmt: str = "csv") -> None:
    rows = report_rows(history)
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(rows, indent=1))
    elif fmt == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: "" if v is None else repr(v) for k, v in row.items()})
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def _parse_cell(text: str):
    if text == "":
        return None
    if text.lstrip("-").isdigit():
        return int(text)
    return float(text)


def read_report(path) -> list[dict]:
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    with path.open(newline="") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def read_metrics(path) -> list[dict]:
    """Load a JSON-lines metrics stream."""
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
