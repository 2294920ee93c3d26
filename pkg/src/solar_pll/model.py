"""Small numpy classifiers, their losses and an SGD optimizer.

All losses are written against logits and return analytic gradients with
respect to the model parameters. Targets are always constants.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .sinkhorn import PROB_FLOOR


class TrainingDiverged(FloatingPointError):
    pass


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


class ClassifierModel:
    """Softmax-linear or one-hidden-layer ReLU classifier."""

    KINDS = ("linear", "mlp")

    def __init__(self, input_dim: int, num_classes: int, kind: str = "linear",
                 hidden: int = 64, params: Optional[dict] = None, rng=None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown architecture {kind!r}")
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.kind = kind
        self.hidden = int(hidden) if kind == "mlp" else 0
        if params is None:
            params = self._init_params(np.random.default_rng(rng))
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        for name, shape in self.shapes().items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def shapes(self) -> dict:
        d, L, h = self.input_dim, self.num_classes, self.hidden
        if self.kind == "linear":
            return {"W": (d, L), "b": (L,)}
        return {"W1": (d, h), "b1": (h,), "W2": (h, L), "b2": (L,)}

    def _init_params(self, rng) -> dict:
        params = {}
        for name, shape in self.shapes().items():
            if name.startswith("b"):
                params[name] = np.zeros(shape)
            else:
                bound = 1.0 / np.sqrt(shape[0])
                params[name] = rng.uniform(-bound, bound, size=shape)
        return params

    def copy(self) -> "ClassifierModel":
        return ClassifierModel(self.input_dim, self.num_classes, self.kind, self.hidden,
                               params={k: v.copy() for k, v in self.params.items()})

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected features of width {self.input_dim}, got shape {X.shape}")
        return X

    def logits(self, X, return_cache: bool = False):
        X = self._check(X)
        p = self.params
        if self.kind == "linear":
            g = X @ p["W"] + p["b"]
            cache = (X,)
        else:
            pre = X @ p["W1"] + p["b1"]
            h = np.maximum(pre, 0.0)
            g = h @ p["W2"] + p["b2"]
            cache = (X, pre, h)
        return (g, cache) if return_cache else g

    def backward(self, cache, dlogits: np.ndarray) -> dict:
        p = self.params
        if self.kind == "linear":
            (X,) = cache
            return {"W": X.T @ dlogits, "b": dlogits.sum(axis=0)}
        X, pre, h = cache
        dh = (dlogits @ p["W2"].T) * (pre > 0)
        return {
            "W1": X.T @ dh,
            "b1": dh.sum(axis=0),
            "W2": h.T @ dlogits,
            "b2": dlogits.sum(axis=0),
        }

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.logits(X))

    def to_dict(self) -> dict:
        return {
            "architecture": {
                "kind": self.kind,
                "input_dim": self.input_dim,
                "num_classes": self.num_classes,
                "hidden": self.hidden,
            },
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassifierModel":
        arch = doc["architecture"]
        return cls(arch["input_dim"], arch["num_classes"], arch["kind"], arch.get("hidden", 0) or 64,
                   params=doc["params"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def forward(model: ClassifierModel, X) -> np.ndarray:
    return model.predict_proba(X)


def zero_grads(model: ClassifierModel) -> dict:
    return {k: np.zeros_like(v) for k, v in model.params.items()}


def ce_loss(P, Q) -> float:
    """Mean cross-entropy of probability rows ``P`` against targets ``Q``."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {Q.shape}")
    if len(P) == 0:
        return 0.0
    return float(-(Q * np.log(np.maximum(P, PROB_FLOOR))).sum(axis=1).mean())


def soft_ce(model: ClassifierModel, X, targets) -> tuple[float, dict]:
    """Mean soft-target cross-entropy and its parameter gradients.

    An empty batch contributes zero loss and zero gradients.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if len(targets) == 0:
        return 0.0, zero_grads(model)
    g, cache = model.logits(X, return_cache=True)
    if g.shape != targets.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {targets.shape}")
    logp = log_softmax(g)
    n = len(targets)
    loss = float(-(targets * logp).sum() / n)
    dlogits = (np.exp(logp) * targets.sum(axis=1, keepdims=True) - targets) / n
    return loss, model.backward(cache, dlogits)


def renorm_targets(P, masks) -> np.ndarray:
    """Predictions restricted to the candidate set and re-normalized."""
    P = np.maximum(np.asarray(P, dtype=np.float64), PROB_FLOOR)
    masked = np.where(np.asarray(masks, dtype=bool), P, 0.0)
    return masked / masked.sum(axis=1, keepdims=True)


def renorm_pll_loss(model: ClassifierModel, X, masks, targets=None) -> tuple[float, dict]:
    """Re-normalized partial-label loss; targets are detached predictions."""
    if len(np.asarray(masks)) == 0:
        return 0.0, zero_grads(model)
    if targets is None:
        targets = renorm_targets(model.predict_proba(X), masks)
    return soft_ce(model, X, targets)


def consistency_loss(model: ClassifierModel, X_strong, Q) -> tuple[float, dict]:
    return soft_ce(model, X_strong, Q)


def mixup_pairs(X, Q, concentration: float, rng, sigma=None):
    """Convex combinations of each reliable sample with a permuted partner.

    Returns ``None`` when fewer than two samples are available. ``sigma`` may
    be given explicitly (scalar or one value per pair) instead of drawn from
    ``Beta(concentration, concentration)``.
    """
    X = np.asarray(X, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    n = len(X)
    if n < 2:
        return None
    partner = rng.permutation(n)
    if sigma is None:
        sigma = rng.beta(concentration, concentration, size=n)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (n,))[:, None]
    return sigma * X + (1 - sigma) * X[partner], sigma * Q + (1 - sigma) * Q[partner]


def composite_loss(components: dict, eta: float) -> float:
    """``eta * (ce + cr + mix) + (1 - eta) * rn``; missing terms count as 0."""
    reliable = sum(components.get(k, 0.0) for k in ("ce", "cr", "mix"))
    return eta * reliable + (1.0 - eta) * components.get("rn", 0.0)


@dataclass
class StepBatch:
    """Everything one optimisation step needs, with targets already frozen."""

    x_reliable: np.ndarray
    q_reliable: np.ndarray
    x_strong: Optional[np.ndarray] = None
    x_mix: Optional[np.ndarray] = None
    q_mix: Optional[np.ndarray] = None
    x_unreliable: Optional[np.ndarray] = None
    rn_targets: Optional[np.ndarray] = None


def objective(model: ClassifierModel, batch: StepBatch, eta: float) -> tuple[float, dict, dict]:
    """Composite loss value, its parameter gradients and the individual terms."""
    terms, weighted = {}, []
    if len(batch.q_reliable):
        terms["ce"], g = soft_ce(model, batch.x_reliable, batch.q_reliable)
        weighted.append((eta, g))
        if batch.x_strong is not None:
            terms["cr"], g = consistency_loss(model, batch.x_strong, batch.q_reliable)
            weighted.append((eta, g))
    if batch.x_mix is not None and len(batch.x_mix):
        terms["mix"], g = soft_ce(model, batch.x_mix, batch.q_mix)
        weighted.append((eta, g))
    if batch.rn_targets is not None and len(batch.rn_targets):
        terms["rn"], g = soft_ce(model, batch.x_unreliable, batch.rn_targets)
        weighted.append((1.0 - eta, g))
    grads = zero_grads(model)
    for w, g in weighted:
        for k in grads:
            grads[k] += w * g[k]
    return composite_loss(terms, eta), grads, terms


class SGD:
    """Heavy-ball momentum: ``v <- momentum * v + g; w <- w - lr * v``."""

    def __init__(self, model: ClassifierModel, momentum: float = 0.9):
        self.momentum = momentum
        self.buffers = zero_grads(model)

    def step(self, model: ClassifierModel, grads: dict, lr: float) -> None:
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(f"training diverged: non-finite gradient in {k}")
        for k, g in grads.items():
            v = self.buffers[k]
            v *= self.momentum
            v += g
            model.params[k] -= lr * v
