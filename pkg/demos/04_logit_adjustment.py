"""
Post-hoc logit adjustment with the estimated prior
==================================================

Subtracting zeta * log(prior) from the logits moves predictions toward the
tail. The estimated prior comes for free from training, so no labels are
needed to apply it.
"""
from solar_pll.datagen import GenConfig, make_dataset
from solar_pll.evaluation import ShotGroups, accuracy_by_group, logit_adjust_predict
from solar_pll.prior import PriorConfig
from solar_pll.trainer import SolarConfig, TrainConfig, train

train_ds, test_ds = make_dataset(GenConfig(num_classes=10, dim=10, n_head=1000, imbalance_ratio=10,
                                           phi=0.3, separation=3.0, seed=1))
groups = ShotGroups.thirds(10, train_ds.class_counts)
cfg = SolarConfig(train=TrainConfig(epochs=60), prior=PriorConfig(pre_estimate_epochs=10))
res = train(train_ds, cfg, seed=1)
logits = res.model.logits(test_ds.features)

print(" zeta  overall   many  medium    few  few-class predictions")
for zeta in (0.0, 0.5, 1.0, 2.0):
    pred = logit_adjust_predict(logits, res.prior, zeta)
    acc = accuracy_by_group(pred, test_ds.true_labels, groups)
    n_few = int(sum((pred == c).sum() for c in groups.few))
    print(f"{zeta:5.1f}  {acc['overall']:.3f}  {acc['many']:.3f}  {acc['medium']:.3f}  {acc['few']:.3f}  {n_few:>5}")
