"""Class-wise reliable-sample selection.

A sample is reliable when it is among the smallest-loss members of its
pseudo-label slice (with a per-class quota proportional to the prior) or when
its pseudo-label agrees with the prediction beyond a confidence threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .prior import candidate_argmax
from .sinkhorn import PROB_FLOOR

QUOTA_SLACK = 1e-9


@dataclass(frozen=True)
class SelectionConfig:
    rho_start: float = 0.2
    rho_end: float = 0.5
    ramp_epochs: int = 50
    tau: float = 0.99

    def __post_init__(self):
        for name in ("rho_start", "rho_end", "tau"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.ramp_epochs < 0:
            raise ValueError("ramp_epochs must be >= 0")

    def rho(self, epoch: int) -> float:
        if self.ramp_epochs == 0 or epoch >= self.ramp_epochs:
            return self.rho_end
        frac = max(epoch, 0) / self.ramp_epochs
        return self.rho_start + (self.rho_end - self.rho_start) * frac


@dataclass(frozen=True)
class SelectionResult:
    reliable: np.ndarray
    per_class_counts: np.ndarray
    small_loss: np.ndarray
    high_confidence: np.ndarray

    @property
    def fraction(self) -> float:
        return float(self.reliable.mean()) if self.reliable.size else 0.0


def partition_by_argmax(Q, masks) -> list[np.ndarray]:
    """Split sample indices into one slice per class by candidate argmax of Q."""
    owner = candidate_argmax(Q, masks)
    L = np.asarray(masks).shape[1]
    return [np.flatnonzero(owner == j) for j in range(L)]


def instance_losses(Q, P) -> np.ndarray:
    Q = np.asarray(Q, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if Q.shape != P.shape:
        raise ValueError(f"shape mismatch: {Q.shape} vs {P.shape}")
    return -(Q * np.log(np.maximum(P, PROB_FLOOR))).sum(axis=1)


def quota(r_j: float, rho: float, batch_size: int) -> int:
    """``ceil(r_j * rho * batch_size)``, ignoring float noise below 1e-9."""
    x = r_j * rho * batch_size
    nearest = round(x)
    if abs(x - nearest) <= QUOTA_SLACK * max(1.0, abs(x)):
        return int(nearest)
    return math.ceil(x)


def select_small_loss(members, losses, r_j: float, rho: float, batch_size: int) -> np.ndarray:
    members = np.asarray(members, dtype=np.int64)
    k = min(quota(r_j, rho, batch_size), len(members))
    if k == 0:
        return members[:0]
    # stable sort keeps lower sample index first among equal losses
    order = np.argsort(np.asarray(losses)[members], kind="stable")
    return members[order[:k]]


def select_high_confidence(Q, P, tau: float) -> np.ndarray:
    Q = np.asarray(Q, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if Q.shape != P.shape:
        raise ValueError(f"shape mismatch: {Q.shape} vs {P.shape}")
    return (Q * P).sum(axis=1) > tau


def select_reliable(Q, P, masks, prior, cfg: SelectionConfig, epoch: int,
                    class_wise: bool = True) -> SelectionResult:
    """Union of the small-loss rule and the high-confidence rule.

    ``class_wise=False`` applies a single small-loss quota of
    ``ceil(rho * |B|)`` over the whole batch (the global-selection ablation).
    """
    Q = np.asarray(Q, dtype=np.float64)
    m, L = Q.shape
    rho = cfg.rho(epoch)
    losses = instance_losses(Q, P)
    small = np.zeros(m, dtype=bool)
    slices = partition_by_argmax(Q, masks)
    if class_wise:
        for j, members in enumerate(slices):
            small[select_small_loss(members, losses, prior[j], rho, m)] = True
    else:
        small[select_small_loss(np.arange(m), losses, 1.0, rho, m)] = True
    confident = select_high_confidence(Q, P, cfg.tau)
    reliable = small | confident
    counts = np.array([int(reliable[s].sum()) for s in slices], dtype=np.int64)
    return SelectionResult(reliable, counts, small, confident)
