import math
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import gradient_cases, gradient_error
from solar_pll.model import (
    SGD,
    ClassifierModel,
    StepBatch,
    TrainingDiverged,
    ce_loss,
    composite_loss,
    consistency_loss,
    forward,
    mixup_pairs,
    objective,
    renorm_pll_loss,
    soft_ce,
)
from solar_pll.selection import instance_losses
from solar_pll.trainer import TrainConfig


class TestForward:
    def test_zero_weights_give_uniform(self):
        model = ClassifierModel(3, 4, params={"W": np.zeros((3, 4)), "b": np.zeros(4)})
        np.testing.assert_allclose(forward(model, np.ones((2, 3))), 0.25)

    def test_constant_logits_give_uniform(self):
        model = ClassifierModel(3, 4, params={"W": np.zeros((3, 4)), "b": np.ones(4)})
        np.testing.assert_allclose(forward(model, np.ones((2, 3))), 0.25)

    def test_rows_on_simplex(self, rng):
        model = ClassifierModel(5, 7, "mlp", hidden=9, rng=0)
        P = forward(model, rng.normal(size=(20, 5)) * 50)
        assert np.all(P >= 0)
        np.testing.assert_allclose(P.sum(axis=1), 1.0)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            forward(ClassifierModel(3, 2, rng=0), np.ones((1, 4)))

    def test_checkpoint_round_trip(self, tmp_path):
        for kind in ClassifierModel.KINDS:
            model = ClassifierModel(4, 3, kind, hidden=5, rng=1)
            model.save(tmp_path / f"{kind}.json")
            back = ClassifierModel.load(tmp_path / f"{kind}.json")
            assert back.kind == kind and back.hidden == model.hidden
            for k in model.params:
                assert back.params[k].tobytes() == model.params[k].tobytes()


class TestLossValues:
    def test_ce_examples(self):
        assert ce_loss([[1.0, 0.0]], [[1.0, 0.0]]) == 0.0
        assert ce_loss([[0.25] * 4], [[1.0, 0, 0, 0]]) == pytest.approx(1.386294, abs=1e-6)

    def test_ce_matches_instance_losses(self, rng):
        P = rng.dirichlet(np.ones(5), size=30)
        Q = rng.dirichlet(np.ones(5), size=30)
        assert ce_loss(P, Q) == pytest.approx(instance_losses(Q, P).mean(), rel=1e-14)

    def test_renorm_singletons_equal_supervised(self, rng):
        model = ClassifierModel(4, 3, rng=2)
        X = rng.normal(size=(6, 4))
        labels = rng.integers(0, 3, 6)
        a, ga = renorm_pll_loss(model, X, np.eye(3, dtype=bool)[labels])
        b, gb = soft_ce(model, X, np.eye(3)[labels])
        assert a == pytest.approx(b)
        for k in ga:
            np.testing.assert_allclose(ga[k], gb[k], atol=1e-12)

    def test_renorm_full_masks_uniform_predictions(self):
        model = ClassifierModel(2, 5, params={"W": np.zeros((2, 5)), "b": np.zeros(5)})
        loss, _ = renorm_pll_loss(model, np.ones((3, 2)), np.ones((3, 5), bool))
        assert loss == pytest.approx(math.log(5))

    def test_consistency_without_noise_is_ce(self, rng):
        model = ClassifierModel(4, 3, rng=3)
        X = rng.normal(size=(5, 4))
        Q = rng.dirichlet(np.ones(3), size=5)
        assert consistency_loss(model, X, Q)[0] == soft_ce(model, X, Q)[0]
        assert soft_ce(model, X, Q)[0] == pytest.approx(ce_loss(model.predict_proba(X), Q))


class TestGradients:
    @pytest.mark.parametrize("kind", ClassifierModel.KINDS)
    @pytest.mark.parametrize("seed", range(3))
    def test_every_term_matches_finite_differences(self, kind, seed):
        for name, fn, model in gradient_cases(seed, kind):
            assert gradient_error(fn, model) < 1e-5, name


class TestMixup:
    def test_midpoint(self):
        rng = np.random.default_rng(0)
        X = np.array([[0.0, 0.0], [2.0, 2.0]])
        Q = np.array([[1.0, 0.0], [0.0, 1.0]])
        while True:
            # retry until the permutation pairs the two samples
            state = rng.bit_generator.state
            if rng.permutation(2)[0] == 1:
                break
        rng.bit_generator.state = state
        xm, qm = mixup_pairs(X, Q, 4.0, rng, sigma=0.5)
        np.testing.assert_allclose(xm[0], [1.0, 1.0])
        np.testing.assert_allclose(qm[0], [0.5, 0.5])

    def test_sigma_one_is_identity(self, rng):
        X, Q = rng.normal(size=(6, 3)), rng.dirichlet(np.ones(4), size=6)
        xm, qm = mixup_pairs(X, Q, 4.0, rng, sigma=1.0)
        np.testing.assert_array_equal(xm, X)
        np.testing.assert_array_equal(qm, Q)

    def test_rows_stay_on_simplex(self, rng):
        Q = rng.dirichlet(np.ones(4), size=50)
        _, qm = mixup_pairs(rng.normal(size=(50, 2)), Q, 4.0, rng)
        assert np.all(qm >= 0)
        np.testing.assert_allclose(qm.sum(axis=1), 1.0)

    def test_needs_two_samples(self, rng):
        assert mixup_pairs(np.ones((1, 2)), np.ones((1, 2)) / 2, 4.0, rng) is None


class TestComposite:
    def test_endpoints(self):
        terms = {"ce": 1.0, "cr": 2.0, "mix": 3.0, "rn": 4.0}
        assert composite_loss(terms, 0.0) == 4.0
        assert composite_loss(terms, 0.9) == pytest.approx(0.9 * 6 + 0.1 * 4)
        assert composite_loss({"rn": 2.0}, 0.5) == 1.0

    def test_decomposition(self, rng):
        model = ClassifierModel(4, 3, "mlp", hidden=6, rng=11)
        X = rng.normal(size=(8, 4))
        Q = rng.dirichlet(np.ones(3), size=8)
        batch = StepBatch(X[:5], Q[:5], x_strong=X[:5] + 0.1, x_mix=X[:5] * 0.5, q_mix=Q[:5],
                          x_unreliable=X[5:], rn_targets=Q[5:])
        loss, _, terms = objective(model, batch, 0.7)
        expect = 0.7 * (soft_ce(model, X[:5], Q[:5])[0] + soft_ce(model, X[:5] + 0.1, Q[:5])[0]
                        + soft_ce(model, X[:5] * 0.5, Q[:5])[0]) + 0.3 * soft_ce(model, X[5:], Q[5:])[0]
        assert abs(loss - expect) <= 1e-12

    def test_no_reliable_samples(self, rng):
        model = ClassifierModel(4, 3, rng=0)
        X = rng.normal(size=(4, 4))
        T = rng.dirichlet(np.ones(3), size=4)
        batch = StepBatch(np.empty((0, 4)), np.empty((0, 3)), x_unreliable=X, rn_targets=T)
        loss, _, terms = objective(model, batch, 0.6)
        assert set(terms) == {"rn"}
        assert loss == pytest.approx(0.4 * soft_ce(model, X, T)[0])


class TestSGD:
    def bowl(self, w0):
        return SimpleNamespace(params={"w": np.array(w0, dtype=np.float64)})

    def test_plain_step(self):
        m = self.bowl([1.0])
        SGD(m, momentum=0.0).step(m, {"w": np.array([1.0])}, 0.1)
        assert m.params["w"][0] == pytest.approx(0.9)

    def test_momentum_recurrence(self):
        m = self.bowl([0.0])
        opt = SGD(m, momentum=0.9)
        for _ in range(2):
            opt.step(m, {"w": np.array([1.0])}, 1.0)
        assert m.params["w"][0] == pytest.approx(-2.9)

    def test_quadratic_bowl(self):
        center = np.array([3.0, -1.0, 0.5])
        A = np.diag([1.0, 2.0, 0.5])
        m = self.bowl(np.zeros(3))
        opt = SGD(m, momentum=0.9)
        for step in range(500):
            opt.step(m, {"w": A @ (m.params["w"] - center)}, 0.1)
        assert np.abs(m.params["w"] - center).max() < 1e-6

    def test_non_finite_gradient(self):
        m = self.bowl([0.0])
        with pytest.raises(TrainingDiverged, match="training diverged"):
            SGD(m).step(m, {"w": np.array([np.nan])}, 0.1)


def test_cosine_schedule():
    cfg = TrainConfig(epochs=40, learning_rate=0.2)
    assert cfg.lr_at(0) == 0.2
    for t in range(40):
        assert cfg.lr_at(t) == pytest.approx(0.1 * (1 + math.cos(math.pi * t / 40)))
        assert cfg.lr_at(t) >= 0


def test_eta_ramp():
    cfg = TrainConfig()
    assert cfg.eta_at(0) == 0.0
    assert cfg.eta_at(25) == pytest.approx(0.45)
    assert cfg.eta_at(50) == 0.9 and cfg.eta_at(199) == 0.9
    assert TrainConfig(baseline="proden").eta_at(100) == 0.0
