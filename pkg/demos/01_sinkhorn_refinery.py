"""
Refining noisy predictions under a class prior
==============================================

Four samples, three classes. Each sample carries a candidate set and the
classifier's current (head-biased) probabilities. The refinery rescales the
predictions so that the pseudo-labels, summed over the batch, match a target
class prior while staying inside each candidate set.
"""
import numpy as np

from solar_pll.sinkhorn import PredictionQueue, SinkhornConfig, lp_oracle, refine_labels, refine_with_queue

np.set_printoptions(precision=3, suppress=True)

P = np.array([
    [0.70, 0.20, 0.10],
    [0.60, 0.30, 0.10],
    [0.55, 0.05, 0.40],
    [0.50, 0.25, 0.25],
])
S = np.array([
    [1, 1, 0],
    [1, 1, 1],
    [1, 0, 1],
    [1, 1, 1],
], dtype=bool)
r = np.array([0.5, 0.25, 0.25])

# plain argmax would call every sample class 0
print("argmax over candidates:", np.where(S, P, -1).argmax(axis=1))

res = refine_labels(P, S, r)
print("pseudo-labels:\n", res.pseudo_labels)
print("column sums / m:", res.pseudo_labels.sum(axis=0) / len(P), "target:", r)
print("status:", res.status, "after", res.iterations_used, "iterations")

# larger lambda sharpens the plan toward the unregularized optimum
for lam in (1.0, 3.0, 20.0):
    Q = refine_labels(P, S, r, SinkhornConfig(lam=lam, max_iters=5000, tol=1e-9)).pseudo_labels
    print(f"lambda={lam:>4}: row 3 ->", Q[3])
print("LP optimum (x m):\n", lp_oracle(P, S, r) * len(P))

# A prior that the candidate sets cannot support: nobody may hold class 2.
# The solver relaxes the problem and still returns in-candidate targets.
S_bad = S.copy()
S_bad[:, 2] = False
res = refine_labels(P, S_bad, r)
print("relaxed:", res.relaxed, "unmet column mass:", round(res.column_marginal_error, 3))
print(res.pseudo_labels)

# During training, past predictions sit in a queue so that small batches
# are solved jointly with recent history.
queue = PredictionQueue(capacity=8, num_classes=3)
for step in range(3):
    out = refine_with_queue(P, S, queue, r)
    print(f"step {step}: queue holds {len(queue)} rows, row 0 ->", out.pseudo_labels[0])
