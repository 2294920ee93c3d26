"""Candidate-masked entropic optimal transport for pseudo-label refinement.

Given predictions ``P`` and candidate masks, the refinery looks for a joint
matrix ``Q`` with rows summing to ``1/m``, columns summing to the class prior
``r`` and zeros outside each candidate set. The entropic version is solved by
Sinkhorn-Knopp scaling of ``M = P**lambda * mask``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import check_predictions, check_prior

PROB_FLOOR = 1e-12

CONVERGED = "converged"
DIVERGED = "diverged"
MAX_ITERS = "max_iters"


class InfeasiblePriorError(RuntimeError):
    """The transport problem stayed unsolvable even after relaxation."""


@dataclass(frozen=True)
class SinkhornConfig:
    lam: float = 3.0
    max_iters: int = 50
    tol: float = 1e-4
    relax_epsilon: float = 1e-5
    divergence_guard: int = 10

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not self.relax_epsilon > 0:
            raise ValueError("relax_epsilon must be > 0")
        if self.divergence_guard < 1:
            raise ValueError("divergence_guard must be >= 1")


@dataclass(frozen=True)
class SinkhornSolution:
    alpha: np.ndarray
    beta: np.ndarray
    status: str
    iterations: int
    violation: float

    def transport_plan(self, M: np.ndarray) -> np.ndarray:
        return self.alpha[:, None] * M * self.beta[None, :]


@dataclass(frozen=True)
class RefineryResult:
    pseudo_labels: np.ndarray
    column_marginal_error: float
    row_marginal_error: float
    iterations_used: int
    relaxed: bool
    status: str = CONVERGED


def _check_masks(masks, shape) -> np.ndarray:
    masks = np.asarray(masks, dtype=bool)
    if masks.shape != shape:
        raise ValueError(f"mask shape {masks.shape} does not match predictions {shape}")
    return masks


def build_scaled_mask(P, masks, lam: float, row_normalize: bool = False) -> np.ndarray:
    """``m_ij = p_ij**lam`` on candidates and exactly 0 elsewhere.

    With ``row_normalize`` each row is divided by its largest candidate entry,
    computed in log space so large ``lam`` cannot underflow whole rows. Row
    scaling is absorbed by the Sinkhorn row coefficients, so the refined
    pseudo-labels are unchanged.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError("P must be 2-D")
    masks = _check_masks(masks, P.shape)
    if not lam > 0:
        raise ValueError("lam must be > 0")
    logp = np.log(np.maximum(P, PROB_FLOOR))
    if not row_normalize:
        return np.where(masks, np.exp(lam * logp), 0.0)
    masked = np.where(masks, logp, -np.inf)
    rowmax = masked.max(axis=1, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    return np.where(masks, np.exp(lam * (masked - rowmax)), 0.0)


def sinkhorn_solve(M, r, c, cfg: SinkhornConfig = SinkhornConfig()) -> SinkhornSolution:
    """Alternate ``alpha <- c / (M beta)`` and ``beta <- r / (M^T alpha)``.

    ``beta`` starts at all ones. Stops when both marginal errors are within
    ``cfg.tol`` (``converged``), when the error fails to decrease for
    ``cfg.divergence_guard`` consecutive rounds or a coefficient turns
    non-finite (``diverged``), or after ``cfg.max_iters`` rounds (``max_iters``).
    """
    M = np.asarray(M, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    m, L = M.shape
    if r.shape != (L,) or c.shape != (m,):
        raise ValueError("marginal lengths do not match M")
    if np.any(M < 0):
        raise ValueError("M must be non-negative")
    zero_rows = np.flatnonzero(~(M > 0).any(axis=1))
    if zero_rows.size:
        raise ValueError(f"zero row in M at row {int(zero_rows[0])}")

    beta = np.ones(L)
    alpha = np.ones(m)
    best = math.inf
    stall = 0
    violation = math.inf
    status = MAX_ITERS
    t = 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        Mb = M @ beta
        for t in range(1, cfg.max_iters + 1):
            alpha = c / Mb
            colsum = M.T @ alpha
            # a class with zero target mass needs no support
            beta = np.where(r > 0, r / colsum, 0.0)
            if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
                status = DIVERGED
                break
            Mb = M @ beta
            violation = max(np.abs(alpha * Mb - c).max(), np.abs(beta * colsum - r).max())
            if not np.isfinite(violation):
                status = DIVERGED
                break
            if violation <= cfg.tol:
                status = CONVERGED
                break
            if violation >= best:
                stall += 1
                if stall >= cfg.divergence_guard:
                    status = DIVERGED
                    break
            else:
                best = violation
                stall = 0
    return SinkhornSolution(alpha, beta, status, t, float(violation))


def refine_labels(P, masks, r, cfg: SinkhornConfig = SinkhornConfig()) -> RefineryResult:
    """Refine predictions into prior-matching pseudo-labels.

    Falls back to the relaxed problem (zeros of ``M`` replaced by
    ``cfg.relax_epsilon``) when the exact one diverges, then zeroes the
    non-candidate entries and re-normalizes rows.
    """
    P = check_predictions(P)
    masks = _check_masks(masks, P.shape)
    m, L = P.shape
    r = check_prior(r, L)
    if not masks.any(axis=1).all():
        raise ValueError(f"zero row in M at row {int(np.flatnonzero(~masks.any(axis=1))[0])}")
    c = np.full(m, 1.0 / m)

    M = build_scaled_mask(P, masks, cfg.lam, row_normalize=True)
    sol = sinkhorn_solve(M, r, c, cfg)
    relaxed = False
    if sol.status == DIVERGED:
        M_relaxed = np.where(masks, M, cfg.relax_epsilon)
        sol = sinkhorn_solve(M_relaxed, r, c, cfg)
        if sol.status == DIVERGED:
            raise InfeasiblePriorError("infeasible prior")
        relaxed = True
        Q = np.where(masks, sol.transport_plan(M_relaxed), 0.0)
        iterations = sol.iterations
    else:
        Q = sol.transport_plan(M)
        iterations = sol.iterations

    col_err = float(np.abs(Q.sum(axis=0) - r).max())
    row_err = float(np.abs(Q.sum(axis=1) - c).max())
    targets = m * Q
    rowsum = targets.sum(axis=1, keepdims=True)
    dead = rowsum[:, 0] <= 0
    if dead.any():
        # mass underflowed; fall back to the row's own scaled predictions
        targets[dead] = M[dead]
        rowsum = targets.sum(axis=1, keepdims=True)
    targets = targets / rowsum
    return RefineryResult(targets, col_err, row_err, iterations, relaxed, sol.status)


class PredictionQueue:
    """Fixed-capacity FIFO of past prediction rows and their masks."""

    def __init__(self, capacity: int, num_classes: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = int(capacity)
        self.num_classes = int(num_classes)
        self._probs = np.empty((self.capacity, self.num_classes))
        self._masks = np.zeros((self.capacity, self.num_classes), dtype=bool)
        self._start = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, P, masks) -> None:
        P = np.asarray(P, dtype=np.float64)
        masks = np.asarray(masks, dtype=bool)
        if self.capacity == 0:
            return
        if len(P) > self.capacity:
            P, masks = P[-self.capacity:], masks[-self.capacity:]
        for k in range(len(P)):
            slot = (self._start + self.size) % self.capacity
            if self.size == self.capacity:
                self._start = (self._start + 1) % self.capacity
            else:
                self.size += 1
            self._probs[slot] = P[k]
            self._masks[slot] = masks[k]

    def contents(self) -> tuple[np.ndarray, np.ndarray]:
        """Stored rows, oldest first."""
        idx = (self._start + np.arange(self.size)) % max(self.capacity, 1)
        return self._probs[idx].copy(), self._masks[idx].copy()

    def clear(self) -> None:
        self._start = 0
        self.size = 0


def refine_with_queue(P, masks, queue: PredictionQueue, r, cfg: SinkhornConfig = SinkhornConfig()) -> RefineryResult:
    """Solve jointly over the batch and the queued rows, return batch rows only.

    The batch is pushed into the queue afterwards.
    """
    P = np.asarray(P, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    m = P.shape[0]
    if queue.size:
        qP, qS = queue.contents()
        res = refine_labels(np.vstack([P, qP]), np.vstack([masks, qS]), r, cfg)
        res = RefineryResult(
            res.pseudo_labels[:m],
            res.column_marginal_error,
            res.row_marginal_error,
            res.iterations_used,
            res.relaxed,
            res.status,
        )
    else:
        res = refine_labels(P, masks, r, cfg)
    queue.push(P, masks)
    return res


def transport_cost(Q, P) -> float:
    """``<Q, -log P>`` summed over the support of ``Q``."""
    Q = np.asarray(Q, dtype=np.float64)
    logp = np.log(np.maximum(np.asarray(P, dtype=np.float64), PROB_FLOOR))
    return float(-(Q[Q > 0] * logp[Q > 0]).sum())


def lp_oracle(P, masks, r) -> np.ndarray:
    """Exact minimizer of ``<Q, -log P>`` over the masked transport polytope.

    Tiny instances only (m <= 6, L <= 4); returns the joint matrix whose rows
    sum to ``1/m`` and columns to ``r``.
    """
    from scipy.optimize import linprog

    P = np.asarray(P, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    m, L = P.shape
    if m > 6 or L > 4:
        raise ValueError("instance too large for the LP oracle")
    r = check_prior(r, L)
    support = np.argwhere(masks)
    cost = -np.log(np.maximum(P[masks], PROB_FLOOR))
    A = np.zeros((m + L, len(support)))
    for k, (i, j) in enumerate(support):
        A[i, k] = 1.0
        A[m + j, k] = 1.0
    b = np.concatenate([np.full(m, 1.0 / m), r])
    res = linprog(
        cost,
        A_eq=A,
        b_eq=b,
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        raise ValueError("infeasible constraint set")
    if not res.success:
        raise RuntimeError(f"LP solve failed: {res.message}")
    Q = np.zeros((m, L))
    Q[masks] = np.maximum(res.x, 0.0)
    return Q
