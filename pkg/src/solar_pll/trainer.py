"""The SoLar training loop and a supervised reference trainer."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .core import PLLDataset
from .evaluation import ShotGroups, evaluate, prior_tv_distance
from .model import SGD, ClassifierModel, StepBatch, TrainingDiverged, mixup_pairs, objective, renorm_targets
from .prior import OnlinePriorCounter, PriorConfig, empirical_prior, init_prior, update_prior
from .selection import SelectionConfig, select_reliable
from .sinkhorn import PredictionQueue, SinkhornConfig, refine_with_queue


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 0.05
    momentum: float = 0.9
    eta_max: float = 0.9
    eta_ramp_epochs: int = 50
    mixup_concentration: float = 4.0
    sigma_weak: float = 0.01
    sigma_strong: float = 0.1
    queue_multiplier: int = 64
    arch: str = "linear"
    hidden: int = 64
    use_cr: bool = True
    use_mixup: bool = True
    selection: str = "classwise"   # "classwise", "global" or "none"
    baseline: str = "solar"        # "solar" or "proden"
    ce_view: str = "weak"          # "weak" or "clean"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0 or not self.mixup_concentration > 0:
            raise ValueError("rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0.0 <= self.eta_max <= 0.9:
            raise ValueError("eta_max must lie in [0, 0.9]")
        if self.sigma_weak < 0 or self.sigma_strong < 0:
            raise ValueError("noise scales must be >= 0")
        if self.selection not in ("classwise", "global", "none"):
            raise ValueError(f"unknown selection mode {self.selection!r}")
        if self.baseline not in ("solar", "proden"):
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.ce_view not in ("weak", "clean"):
            raise ValueError(f"unknown ce_view {self.ce_view!r}")
        if self.arch not in ClassifierModel.KINDS:
            raise ValueError(f"unknown architecture {self.arch!r}")

    def lr_at(self, epoch: int) -> float:
        return 0.5 * self.learning_rate * (1.0 + math.cos(math.pi * epoch / self.epochs))

    def eta_at(self, epoch: int) -> float:
        if self.baseline == "proden":
            return 0.0
        if self.eta_ramp_epochs == 0 or epoch >= self.eta_ramp_epochs:
            return self.eta_max
        return self.eta_max * epoch / self.eta_ramp_epochs


@dataclass(frozen=True)
class SolarConfig:
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)


@dataclass
class TrainResult:
    model: ClassifierModel
    prior: np.ndarray
    history: list
    initial_prior: np.ndarray


@dataclass
class _EpochStats:
    terms: dict = field(default_factory=lambda: {k: [] for k in ("loss", "ce", "cr", "mix", "rn")})
    reliable: int = 0
    seen: int = 0
    relaxed: int = 0
    slice_sizes: Optional[np.ndarray] = None
    slice_reliable: Optional[np.ndarray] = None


def _mean(values):
    return float(np.mean(values)) if values else 0.0


def train(ds: PLLDataset, config: SolarConfig = SolarConfig(), seed: int = 0,
          eval_set: Optional[tuple] = None, groups: Optional[ShotGroups] = None,
          true_prior=None, on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Run the full loop: refine, select, update the model, re-estimate the prior.

    ``eval_set`` is an ``(X, labels)`` pair scored after every epoch;
    ``true_prior`` only feeds the ``prior_tv`` metric. Neither influences
    training.
    """
    tc = config.train
    master = np.random.default_rng(seed)
    pre_seed, model_seed, loop_seed = (int(s) for s in master.integers(0, 2**32, size=3))

    prior = init_prior(config.prior.init, ds)
    mu = config.prior.main_stage_mu
    if config.prior.pre_estimate_epochs > 0 and tc.baseline == "solar":
        from .prior import run_pre_estimation
        prior = run_pre_estimation(ds, config, config.prior.pre_estimate_epochs, seed=pre_seed)
    initial_prior = prior.copy()

    rng = np.random.default_rng(loop_seed)
    model = ClassifierModel(ds.dim, ds.num_classes, tc.arch, tc.hidden, rng=model_seed)
    opt = SGD(model, tc.momentum)
    # a queue longer than the training set would only hold stale duplicates
    queue = PredictionQueue(min(tc.queue_multiplier * tc.batch_size, ds.n), ds.num_classes)
    X, S = ds.features, ds.candidates
    n, L = S.shape
    feat_std = X.std(axis=0)
    feat_std[feat_std == 0] = 1.0
    counter = OnlinePriorCounter(L)
    if groups is None:
        groups = ShotGroups.thirds(L)
    history = []

    for epoch in range(tc.epochs):
        lr, eta = tc.lr_at(epoch), tc.eta_at(epoch)
        rho = config.selection.rho(epoch)
        stats = _EpochStats(slice_sizes=np.zeros(L, np.int64), slice_reliable=np.zeros(L, np.int64))
        counter.reset()
        order = rng.permutation(n)
        for start in range(0, n, tc.batch_size):
            idx = order[start:start + tc.batch_size]
            batch = _prepare_step(model, X[idx], S[idx], feat_std, prior, queue, config, epoch, rng, stats)
            if config.prior.counting == "online":
                counter.add(batch.pop("P"), S[idx])
            step = batch["step"]
            # overflow here surfaces as a non-finite gradient in opt.step
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads, terms = objective(model, step, eta)
            opt.step(model, grads, lr)
            stats.terms["loss"].append(loss)
            for k, v in terms.items():
                stats.terms[k].append(v)

        if config.prior.counting == "online":
            z = counter.prior()
        else:
            z = empirical_prior(model.predict_proba(X), S)
        prior = update_prior(prior, z, mu)

        record = {
            "epoch": epoch,
            "lr": lr,
            "eta": eta,
            "rho": rho,
            **{k: _mean(v) for k, v in stats.terms.items()},
            "reliable_fraction": stats.reliable / max(stats.seen, 1),
            "reliable_per_class": [
                None if s == 0 else float(c / s) for c, s in zip(stats.slice_reliable, stats.slice_sizes)
            ],
            "relaxed_steps": stats.relaxed,
            "prior": prior.tolist(),
        }
        if true_prior is not None:
            record["prior_tv"] = prior_tv_distance(prior, true_prior)
        if eval_set is not None:
            acc = evaluate(model, eval_set[0], eval_set[1], groups)
            record.update({f"acc_{k}": v for k, v in acc.items()})
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)

    return TrainResult(model, prior, history, initial_prior)


def _prepare_step(model, Xb, Sb, feat_std, prior, queue, config, epoch, rng, stats) -> dict:
    """Build the frozen targets and views for one step."""
    tc = config.train
    m = len(Xb)
    X_weak = Xb + rng.standard_normal(Xb.shape) * (tc.sigma_weak * feat_std)
    X_strong = Xb + rng.standard_normal(Xb.shape) * (tc.sigma_strong * feat_std)
    with np.errstate(over="ignore", invalid="ignore"):
        P = model.predict_proba(X_weak)
    if not np.all(np.isfinite(P)):
        raise TrainingDiverged(f"training diverged at epoch {epoch}: non-finite predictions")
    stats.seen += m

    if tc.baseline == "proden":
        step = StepBatch(np.empty((0, Xb.shape[1])), np.empty((0, Sb.shape[1])),
                         x_unreliable=X_weak, rn_targets=renorm_targets(P, Sb))
        return {"P": P, "step": step}

    res = refine_with_queue(P, Sb, queue, prior, config.sinkhorn)
    Q = res.pseudo_labels
    stats.relaxed += int(res.relaxed)
    if tc.selection == "none":
        reliable = np.ones(m, dtype=bool)
    else:
        sel = select_reliable(Q, P, Sb, prior, config.selection, epoch,
                              class_wise=tc.selection == "classwise")
        reliable = sel.reliable
        owners = np.where(Sb, Q, -np.inf).argmax(axis=1)
        stats.slice_sizes += np.bincount(owners, minlength=Sb.shape[1])
        stats.slice_reliable += sel.per_class_counts
    stats.reliable += int(reliable.sum())

    x_view = X_weak if tc.ce_view == "weak" else Xb
    x_mix = q_mix = None
    if tc.use_mixup:
        mixed = mixup_pairs(X_weak[reliable], Q[reliable], tc.mixup_concentration, rng)
        if mixed is not None:
            x_mix, q_mix = mixed
    unrel = ~reliable
    step = StepBatch(
        x_reliable=x_view[reliable],
        q_reliable=Q[reliable],
        x_strong=X_strong[reliable] if tc.use_cr else None,
        x_mix=x_mix,
        q_mix=q_mix,
        x_unreliable=X_weak[unrel],
        rn_targets=renorm_targets(P[unrel], Sb[unrel]),
    )
    return {"P": P, "step": step}


def train_supervised(X, labels, num_classes: int, config: TrainConfig = TrainConfig(), seed: int = 0) -> ClassifierModel:
    """Plain cross-entropy on true labels with the same optimizer and schedule."""
    from .model import soft_ce

    X = np.asarray(X, dtype=np.float64)
    Y = np.eye(num_classes)[np.asarray(labels)]
    master = np.random.default_rng(seed)
    model_seed, loop_seed = (int(s) for s in master.integers(0, 2**32, size=2))
    rng = np.random.default_rng(loop_seed)
    model = ClassifierModel(X.shape[1], num_classes, config.arch, config.hidden, rng=model_seed)
    opt = SGD(model, config.momentum)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(len(X))
        for start in range(0, len(X), config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads = soft_ce(model, X[idx], Y[idx])
            opt.step(model, grads, lr)
    return model
