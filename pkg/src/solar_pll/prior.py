"""Moving-average estimation of the class prior."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import PLLDataset, check_prior


def candidate_argmax(scores, masks) -> np.ndarray:
    """Row-wise argmax restricted to candidates; ties go to the lowest index."""
    scores = np.asarray(scores, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    if scores.shape != masks.shape:
        raise ValueError(f"shape mismatch: {scores.shape} vs {masks.shape}")
    return np.where(masks, scores, -np.inf).argmax(axis=1)


def empirical_prior(P, masks) -> np.ndarray:
    """Fraction of samples whose candidate-restricted argmax is each class."""
    winners = candidate_argmax(P, masks)
    L = np.asarray(masks).shape[1]
    return np.bincount(winners, minlength=L) / len(winners)


def update_prior(r, z, mu: float) -> np.ndarray:
    """``mu * r + (1 - mu) * z``."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must lie in [0, 1]")
    r = check_prior(r)
    z = check_prior(z, len(r))
    new = mu * r + (1.0 - mu) * z
    return new / new.sum()


def init_prior(mode: str, ds: PLLDataset) -> np.ndarray:
    L = ds.num_classes
    if mode == "uniform":
        return np.full(L, 1.0 / L)
    if mode == "candidate_count":
        counts = ds.candidates.sum(axis=0).astype(np.float64)
        return counts / counts.sum()
    raise ValueError(f"unknown prior init mode {mode!r}")


@dataclass(frozen=True)
class PriorConfig:
    init: str = "uniform"
    pre_estimate_epochs: int = 20
    pre_stage_mu: float = 0.1
    main_stage_mu: float = 0.01
    # "full": forward pass over the dataset at epoch end; "online": count during steps
    counting: str = "full"

    def __post_init__(self):
        if self.init not in ("uniform", "candidate_count"):
            raise ValueError(f"unknown prior init mode {self.init!r}")
        if self.counting not in ("full", "online"):
            raise ValueError(f"unknown counting mode {self.counting!r}")
        if self.pre_estimate_epochs < 0:
            raise ValueError("pre_estimate_epochs must be >= 0")
        for mu in (self.pre_stage_mu, self.main_stage_mu):
            if not 0.0 <= mu <= 1.0:
                raise ValueError("mu must lie in [0, 1]")


@dataclass(frozen=True)
class PriorEstimatorState:
    prior: np.ndarray
    mu: float

    def __post_init__(self):
        object.__setattr__(self, "prior", check_prior(self.prior))
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")

    def update(self, z) -> "PriorEstimatorState":
        return replace(self, prior=update_prior(self.prior, z, self.mu))


class OnlinePriorCounter:
    """Accumulates candidate-restricted argmax counts batch by batch."""

    def __init__(self, num_classes: int):
        self.counts = np.zeros(num_classes, dtype=np.int64)

    def add(self, P, masks) -> None:
        self.counts += np.bincount(candidate_argmax(P, masks), minlength=len(self.counts))

    def prior(self) -> np.ndarray:
        total = self.counts.sum()
        if total == 0:
            raise ValueError("no samples counted")
        return self.counts / total

    def reset(self) -> None:
        self.counts[:] = 0


def run_pre_estimation(ds: PLLDataset, config, epochs: int, seed: int = 0) -> np.ndarray:
    """Train a throwaway model for ``epochs`` and return its prior estimate.

    ``config`` is a :class:`solar_pll.trainer.SolarConfig`; the model weights
    are discarded.
    """
    from .trainer import train

    if epochs < 1:
        raise ValueError("pre-estimation needs epochs >= 1")
    stage = replace(
        config,
        train=replace(config.train, epochs=epochs),
        prior=replace(config.prior, pre_estimate_epochs=0, main_stage_mu=config.prior.pre_stage_mu),
    )
    result = train(ds, stage, seed=seed)
    return result.prior
