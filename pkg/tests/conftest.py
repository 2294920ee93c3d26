import itertools

import numpy as np
import pytest


def random_feasible_instance(rng, m, L, max_extra=None):
    """Predictions, masks and a prior for which the masked polytope is non-empty.

    Each row gets a hidden label plus random extra candidates; the prior is the
    column sum of a random joint matrix supported on the masks, so it is
    feasible by construction.
    """
    labels = rng.integers(0, L, size=m)
    masks = rng.random((m, L)) < rng.uniform(0.1, 0.6)
    masks[np.arange(m), labels] = True
    logits = rng.normal(scale=2.0, size=(m, L))
    P = np.exp(logits - logits.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    W = np.where(masks, rng.random((m, L)) + 0.05, 0.0)
    W /= W.sum(axis=1, keepdims=True) * m
    r = W.sum(axis=0)
    r /= r.sum()
    return P, masks, r


def enumerate_transport_vertices(P, masks, r):
    """Brute-force LP optimum: try every basis of the masked transport polytope."""
    m, L = P.shape
    support = np.argwhere(masks)
    A = np.zeros((m + L, len(support)))
    for k, (i, j) in enumerate(support):
        A[i, k] = 1.0
        A[m + j, k] = 1.0
    b = np.concatenate([np.full(m, 1.0 / m), r])
    cost = -np.log(P[masks])
    rank = np.linalg.matrix_rank(A)
    best, best_x = np.inf, None
    for cols in itertools.combinations(range(len(support)), rank):
        sub = A[:, cols]
        if np.linalg.matrix_rank(sub) < rank:
            continue
        xs, *_ = np.linalg.lstsq(sub, b, rcond=None)
        if np.any(xs < -1e-12) or np.abs(sub @ xs - b).max() > 1e-10:
            continue
        x = np.zeros(len(support))
        x[list(cols)] = np.maximum(xs, 0.0)
        val = cost @ x
        if val < best:
            best, best_x = val, x
    Q = np.zeros((m, L))
    Q[masks] = best_x
    return Q, best


def finite_difference(f, params, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``params`` (mutated in place)."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            up = f()
            arr[idx] = orig - eps
            down = f()
            arr[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        scale = max(np.abs(a).max(), np.abs(n).max(), 1e-8)
        worst = max(worst, np.abs(a - n).max() / scale)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gradient_cases(seed, kind):
    """Yield ``(name, loss_fn, model)`` triples covering every loss term.

    Each ``loss_fn(model)`` returns ``(loss, grads)``; targets are sampled once
    and held fixed so they act as constants under finite differences.
    """
    from solar_pll.model import (
        ClassifierModel, StepBatch, consistency_loss, mixup_pairs, objective,
        renorm_pll_loss, renorm_targets, soft_ce,
    )

    rng = np.random.default_rng(seed)
    n, L, d = 5, 3, 4
    model = ClassifierModel(d, L, kind, hidden=6, rng=rng)
    for v in model.params.values():
        v[...] = rng.normal(scale=0.7, size=v.shape)
    X = rng.normal(size=(n, d))
    Xs = X + rng.normal(scale=0.3, size=X.shape)
    Q = rng.dirichlet(np.ones(L), size=n)
    S = rng.random((n, L)) < 0.6
    S[np.arange(n), rng.integers(0, L, n)] = True
    Xm, Qm = mixup_pairs(X, Q, 4.0, rng)
    T = renorm_targets(model.predict_proba(X), S)
    batch = StepBatch(X[:3], Q[:3], x_strong=Xs[:3], x_mix=Xm, q_mix=Qm, x_unreliable=X[3:], rn_targets=T[3:])
    eta = float(rng.uniform(0.1, 0.9))
    yield "ce", lambda mdl: soft_ce(mdl, X, Q), model
    yield "cr", lambda mdl: consistency_loss(mdl, Xs, Q), model
    yield "mix", lambda mdl: soft_ce(mdl, Xm, Qm), model
    yield "rn", lambda mdl: renorm_pll_loss(mdl, X, S, targets=T), model
    yield "composite", lambda mdl: objective(mdl, batch, eta)[:2], model


def gradient_error(loss_fn, model):
    _, analytic = loss_fn(model)
    numeric = finite_difference(lambda: loss_fn(model)[0], model.params)
    return max_rel_error(analytic, numeric)
