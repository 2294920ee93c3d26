"""Synthetic long-tailed partial-label data from Gaussian blobs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import PLLDataset


@dataclass(frozen=True)
class GenConfig:
    num_classes: int = 10
    dim: int = 10
    n_head: int = 1000
    imbalance_ratio: float = 10.0
    flip: str = "uniform"          # "uniform", "banded" or "matrix"
    phi: float = 0.3
    flip_matrix: Optional[tuple] = None
    separation: float = 4.0
    n_test_per_class: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.imbalance_ratio < 1:
            raise ValueError("imbalance ratio must be >= 1")
        if not 0.0 <= self.phi < 1.0:
            raise ValueError("phi must lie in [0, 1)")
        if self.flip not in ("uniform", "banded", "matrix"):
            raise ValueError(f"unknown flip mode {self.flip!r}")
        if self.flip == "matrix" and self.flip_matrix is None:
            raise ValueError("flip mode 'matrix' needs flip_matrix")

    def matrix(self) -> np.ndarray:
        if self.flip == "uniform":
            return uniform_flip_matrix(self.num_classes, self.phi)
        if self.flip == "banded":
            return banded_flip_matrix(self.num_classes)
        return check_flip_matrix(np.array(self.flip_matrix, dtype=np.float64), self.num_classes)


def class_sizes(num_classes: int, n_head: int, gamma: float) -> np.ndarray:
    """Exponential profile ``n_j = round(n_head * gamma**(-j / (L - 1)))``."""
    if gamma < 1:
        raise ValueError("imbalance ratio must be >= 1")
    if num_classes == 1:
        if gamma > 1:
            raise ValueError("a single class cannot have imbalance ratio > 1")
        return np.array([n_head], dtype=np.int64)
    j = np.arange(num_classes)
    return np.round(n_head * gamma ** (-j / (num_classes - 1))).astype(np.int64)


def class_centers(num_classes: int, dim: int, separation: float) -> np.ndarray:
    """Scaled basis vectors: every pair of centers is ``separation`` apart."""
    if dim < num_classes:
        raise ValueError(f"dim={dim} too small to place {num_classes} separated centers (need dim >= L)")
    centers = np.zeros((num_classes, dim))
    centers[np.arange(num_classes), np.arange(num_classes)] = separation / np.sqrt(2.0)
    return centers


def gen_features(sizes, dim: int, separation: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Unit-variance isotropic blobs, one per class, rows grouped by class."""
    sizes = np.asarray(sizes, dtype=np.int64)
    centers = class_centers(len(sizes), dim, separation)
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    X = centers[labels] + rng.standard_normal((len(labels), dim))
    return X, labels


def flip_candidates_uniform(true_labels, num_classes: int, phi: float, seed) -> np.ndarray:
    return flip_candidates_matrix(true_labels, uniform_flip_matrix(num_classes, phi), seed)


def flip_candidates_matrix(true_labels, flip_matrix, seed) -> np.ndarray:
    """Label ``j`` joins sample ``i``'s set with probability ``flip_matrix[y_i, j]``."""
    y = np.asarray(true_labels, dtype=np.int64)
    F = check_flip_matrix(flip_matrix)
    rng = np.random.default_rng(seed)
    masks = rng.random((len(y), F.shape[0])) < F[y]
    masks[np.arange(len(y)), y] = True
    return masks


def uniform_flip_matrix(num_classes: int, phi: float) -> np.ndarray:
    if not 0.0 <= phi < 1.0:
        raise ValueError("phi must lie in [0, 1)")
    F = np.full((num_classes, num_classes), float(phi))
    np.fill_diagonal(F, 1.0)
    return F


def banded_flip_matrix(num_classes: int, band=(0.5, 0.4, 0.3, 0.2, 0.1)) -> np.ndarray:
    """Diagonal of ones followed by a decaying band that wraps around."""
    F = np.zeros((num_classes, num_classes))
    np.fill_diagonal(F, 1.0)
    for offset, p in enumerate(band, start=1):
        if offset >= num_classes:
            break
        for i in range(num_classes):
            F[i, (i + offset) % num_classes] = p
    return F


def check_flip_matrix(F, num_classes: Optional[int] = None) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ValueError("flip matrix must be square")
    if num_classes is not None and F.shape[0] != num_classes:
        raise ValueError("flip matrix size does not match num_classes")
    if not np.all(np.diag(F) == 1.0):
        raise ValueError("flip matrix diagonal must be 1")
    off = F[~np.eye(len(F), dtype=bool)]
    if np.any(off < 0) or np.any(off >= 1):
        raise ValueError("off-diagonal flip probabilities must lie in [0, 1)")
    return F


def make_dataset(cfg: GenConfig) -> tuple[PLLDataset, PLLDataset]:
    """Long-tailed training set and a balanced test set sharing the same blobs.

    The test set carries singleton candidate sets (its true labels).
    """
    feat_seed, flip_seed, test_seed = np.random.SeedSequence(cfg.seed).spawn(3)
    sizes = class_sizes(cfg.num_classes, cfg.n_head, cfg.imbalance_ratio)
    X, y = gen_features(sizes, cfg.dim, cfg.separation, feat_seed)
    masks = flip_candidates_matrix(y, cfg.matrix(), flip_seed)
    train = PLLDataset(X, masks, cfg.num_classes, true_labels=y, class_counts=sizes)

    test_sizes = np.full(cfg.num_classes, cfg.n_test_per_class, dtype=np.int64)
    Xt, yt = gen_features(test_sizes, cfg.dim, cfg.separation, test_seed)
    test = PLLDataset(Xt, np.eye(cfg.num_classes, dtype=bool)[yt], cfg.num_classes,
                      true_labels=yt, class_counts=test_sizes)
    return train, test
