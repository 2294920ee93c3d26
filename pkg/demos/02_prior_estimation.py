"""
Estimating a long-tailed class prior from partial labels
=========================================================

The true class frequencies are hidden behind candidate sets. Counting
candidates overstates the tail; the moving-average estimate driven by the
model's own candidate-restricted predictions gets much closer.
"""
import numpy as np

from solar_pll.datagen import GenConfig, make_dataset
from solar_pll.evaluation import prior_tv_distance
from solar_pll.prior import PriorConfig, init_prior, run_pre_estimation, update_prior
from solar_pll.trainer import SolarConfig, TrainConfig

np.set_printoptions(precision=3, suppress=True)

train, _ = make_dataset(GenConfig(num_classes=6, dim=6, n_head=800, imbalance_ratio=10, phi=0.3,
                                  separation=3.0, seed=0))
truth = train.true_prior()
print("class counts:", train.class_counts)
print("true prior:        ", truth)

for mode in ("uniform", "candidate_count"):
    r0 = init_prior(mode, train)
    print(f"{mode:<19}", r0, " TV", round(prior_tv_distance(r0, truth), 4))

# the update is a convex step toward the latest empirical estimate
print("one update step:", update_prior([0.5, 0.5], [0.9, 0.1], mu=0.1))

cfg = SolarConfig(train=TrainConfig(epochs=1, batch_size=128), prior=PriorConfig(pre_stage_mu=0.1))
for epochs in (1, 5, 20):
    r = run_pre_estimation(train, cfg, epochs, seed=0)
    print(f"after {epochs:>2} epochs:    ", r, " TV", round(prior_tv_distance(r, truth), 4))
