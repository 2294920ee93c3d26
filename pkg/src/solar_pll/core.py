"""Shared partial-label types and the JSON dataset format.

Candidate sets are stored as a dense ``(n, L)`` boolean matrix. Every
floating array is kept in float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

PRIOR_ATOL = 1e-9
ROW_ATOL = 1e-6


class DatasetError(ValueError):
    """Raised when a dataset or dataset file violates its invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PLLDataset:
    """Features plus candidate label sets.

    ``true_labels`` and ``class_counts`` are evaluation metadata. Training code
    only reads ``features`` and ``candidates``.
    """

    features: np.ndarray
    candidates: np.ndarray
    num_classes: int
    true_labels: Optional[np.ndarray] = field(default=None)
    class_counts: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        S = np.array(self.candidates, dtype=bool)
        L = int(self.num_classes)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DatasetError("empty dataset")
        if X.shape[1] < 1:
            raise DatasetError("features must have at least one column")
        if L < 2:
            raise DatasetError("num_classes must be >= 2")
        if S.ndim != 2 or S.shape[0] != X.shape[0]:
            raise DatasetError(
                f"candidate rows ({S.shape[0] if S.ndim else 0}) != feature rows ({X.shape[0]})"
            )
        if S.shape[1] != L:
            raise DatasetError(f"mask length {S.shape[1]} != num_classes {L}")
        empty = np.flatnonzero(~S.any(axis=1))
        if empty.size:
            raise DatasetError(f"empty candidate set at row {int(empty[0])}")
        y = None
        if self.true_labels is not None:
            y = np.array(self.true_labels, dtype=np.int64)
            if y.shape != (X.shape[0],):
                raise DatasetError("true_labels length != number of rows")
            if y.min() < 0 or y.max() >= L:
                raise DatasetError("true label out of range")
            bad = np.flatnonzero(~S[np.arange(len(y)), y])
            if bad.size:
                raise DatasetError(f"true label not in candidates at row {int(bad[0])}")
        counts = None
        if self.class_counts is not None:
            counts = np.array(self.class_counts, dtype=np.int64)
            if counts.shape != (L,):
                raise DatasetError("class_counts length != num_classes")
            if counts.sum() != X.shape[0]:
                raise DatasetError("class_counts do not sum to n")
            if np.any(np.diff(counts) > 0):
                raise DatasetError("class_counts must be sorted descending")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "candidates", _frozen(S))
        object.__setattr__(self, "num_classes", L)
        object.__setattr__(self, "true_labels", None if y is None else _frozen(y))
        object.__setattr__(self, "class_counts", None if counts is None else _frozen(counts))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def true_prior(self) -> Optional[np.ndarray]:
        """Empirical class distribution from ``class_counts`` (or labels)."""
        if self.class_counts is not None:
            return self.class_counts / self.class_counts.sum()
        if self.true_labels is not None:
            return np.bincount(self.true_labels, minlength=self.num_classes) / self.n
        return None

    def mean_candidates(self) -> float:
        return float(self.candidates.sum(axis=1).mean())

    def __eq__(self, other):
        if not isinstance(other, PLLDataset):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (
            self.num_classes == other.num_classes
            and same(self.features, other.features)
            and same(self.candidates, other.candidates)
            and same(self.true_labels, other.true_labels)
            and same(self.class_counts, other.class_counts)
        )


def masks_from_indices(candidates, num_classes: int) -> np.ndarray:
    """Turn per-row lists of class indices into a boolean mask matrix."""
    S = np.zeros((len(candidates), num_classes), dtype=bool)
    for i, row in enumerate(candidates):
        for j in row:
            j = int(j)
            if not 0 <= j < num_classes:
                raise DatasetError(f"candidate {j} out of range at row {i}")
            S[i, j] = True
    return S


def check_prior(r, num_classes: Optional[int] = None) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 1 or (num_classes is not None and r.shape[0] != num_classes):
        raise ValueError(f"prior must be a length-{num_classes} vector")
    if not (np.all(r >= 0) and abs(r.sum() - 1.0) <= PRIOR_ATOL):
        raise ValueError("prior must be non-negative and sum to 1")
    return r


def check_predictions(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError("prediction batch must be a 2-D array")
    # zeros can come from softmax underflow (consumers clamp them); the
    # positive form of each test also rejects NaN
    if not np.all((P >= 0) & (P <= 1)):
        raise ValueError("prediction entries must lie in [0, 1]")
    if not np.all(np.abs(P.sum(axis=1) - 1.0) <= ROW_ATOL):
        raise ValueError("prediction rows must sum to 1")
    return P


def load_dataset(path) -> PLLDataset:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise DatasetError("dataset file must hold a JSON object")
    try:
        L = int(doc["num_classes"])
        features = doc["features"]
        candidates = doc["candidates"]
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"missing field in dataset file: {exc}") from exc
    if len(features) == 0:
        raise DatasetError("empty dataset")
    if len(candidates) != len(features):
        raise DatasetError("features and candidates differ in length")
    return PLLDataset(
        features=np.array(features, dtype=np.float64),
        candidates=masks_from_indices(candidates, L),
        num_classes=L,
        true_labels=doc.get("true_labels"),
        class_counts=doc.get("class_counts"),
    )


def dataset_to_dict(ds: PLLDataset) -> dict:
    return {
        "num_classes": ds.num_classes,
        # float repr is the shortest exact round-trip form
        "features": ds.features.tolist(),
        "candidates": [np.flatnonzero(row).tolist() for row in ds.candidates],
        "true_labels": None if ds.true_labels is None else ds.true_labels.tolist(),
        "class_counts": None if ds.class_counts is None else ds.class_counts.tolist(),
    }


def save_dataset(ds: PLLDataset, path) -> None:
    if ds.n == 0:
        raise DatasetError("empty dataset")
    Path(path).write_text(json.dumps(dataset_to_dict(ds)))
