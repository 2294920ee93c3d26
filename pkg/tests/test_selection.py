import math

import numpy as np
import pytest

from solar_pll.selection import (
    SelectionConfig,
    instance_losses,
    partition_by_argmax,
    quota,
    select_high_confidence,
    select_reliable,
    select_small_loss,
)


def random_batch(rng, m, L):
    S = rng.random((m, L)) < 0.4
    S[np.arange(m), rng.integers(0, L, m)] = True
    Q = np.where(S, rng.random((m, L)), 0.0)
    Q /= Q.sum(axis=1, keepdims=True)
    P = rng.dirichlet(np.ones(L), size=m)
    prior = rng.dirichlet(np.ones(L))
    return Q, P, S, prior


def fixed(rho, tau):
    return SelectionConfig(rho_start=rho, rho_end=rho, ramp_epochs=0, tau=tau)


class TestPartition:
    def test_one_hot(self):
        Q = np.eye(3)[[2, 0, 2]]
        slices = partition_by_argmax(Q, np.ones((3, 3), bool))
        assert [s.tolist() for s in slices] == [[1], [], [0, 2]]

    def test_shared_singleton_mask(self, rng):
        S = np.zeros((4, 3), bool)
        S[:, 2] = True
        slices = partition_by_argmax(rng.random((4, 3)), S)
        assert [len(s) for s in slices] == [0, 0, 4]

    def test_disjoint_cover(self, rng):
        Q, _, S, _ = random_batch(rng, 200, 7)
        slices = partition_by_argmax(Q, S)
        owner = np.full(200, -1)
        for j, s in enumerate(slices):
            assert np.all(owner[s] == -1)
            owner[s] = j
        np.testing.assert_array_equal(owner, np.where(S, Q, -np.inf).argmax(axis=1))


class TestLosses:
    def test_values(self):
        assert instance_losses([[1.0, 0.0]], [[1.0, 0.0]])[0] == 0.0
        assert instance_losses([[1.0, 0.0]], [[np.exp(-1), 1 - np.exp(-1)]])[0] == pytest.approx(1.0)
        assert instance_losses([[0.5, 0.5, 0.0]], [[0.5, 0.5, 0.0]])[0] == pytest.approx(0.693147, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            instance_losses(np.ones((2, 2)), np.ones((2, 3)))


class TestSmallLoss:
    def test_quota_examples(self):
        assert min(quota(0.2, 0.5, 100), 15) == 10
        assert min(quota(0.01, 0.5, 100), 3) == 1
        # 0.1 * 0.3 * 100 is 3.0000000000000004 in floating point
        assert quota(0.1, 0.3, 100) == 3

    def test_empty_slice(self):
        assert select_small_loss([], np.array([0.1, 0.2]), 0.5, 0.5, 2).size == 0

    def test_picks_smallest_with_index_ties(self):
        losses = np.array([0.3, 0.1, 0.3, 0.3, 0.05])
        picked = select_small_loss([0, 2, 3, 4], losses, 0.5, 0.4, 5)
        assert picked.tolist() == [4]
        picked = select_small_loss([0, 2, 3], losses, 0.5, 0.8, 5)
        assert picked.tolist() == [0, 2]


class TestHighConfidence:
    def test_examples(self):
        assert select_high_confidence([[1.0, 0.0]], [[1.0, 0.0]], 0.99)[0]
        q = np.eye(10)[[0]]
        assert not select_high_confidence(q, np.full((1, 10), 0.1), 0.99)[0]

    def test_tau_one_selects_nothing(self):
        Q = np.eye(4)
        assert not select_high_confidence(Q, Q, 1.0).any()


class TestSchedule:
    def test_piecewise_linear(self):
        cfg = SelectionConfig()
        assert cfg.rho(0) == 0.2
        assert cfg.rho(25) == pytest.approx(0.35)
        assert cfg.rho(50) == 0.5
        assert cfg.rho(500) == 0.5

    def test_validation(self):
        with pytest.raises(ValueError):
            SelectionConfig(tau=1.5)


class TestReliable:
    def test_extremes(self, rng):
        Q, P, S, prior = random_batch(rng, 64, 5)
        assert select_reliable(Q, P, S, prior, fixed(1.0, 0.0), 0).reliable.all()
        assert not select_reliable(Q, P, S, prior, fixed(0.0, 1.0), 0).reliable.any()

    def test_union_and_quota_accounting(self, rng):
        for _ in range(200):
            m, L = int(rng.integers(1, 120)), int(rng.integers(2, 12))
            Q, P, S, prior = random_batch(rng, m, L)
            cfg = fixed(float(rng.uniform(0, 1)), float(rng.uniform(0.3, 1)))
            res = select_reliable(Q, P, S, prior, cfg, 0)
            owner = np.where(S, Q, -np.inf).argmax(axis=1)
            losses = -(Q * np.log(np.maximum(P, 1e-12))).sum(axis=1)
            conf = (Q * P).sum(axis=1) > cfg.tau
            small = np.zeros(m, bool)
            for j in range(L):
                members = np.flatnonzero(owner == j)
                k = min(math.ceil(round(prior[j] * cfg.rho_end * m, 9)), len(members))
                assert res.small_loss[members].sum() == k
                small[members[np.argsort(losses[members], kind="stable")[:k]]] = True
            np.testing.assert_array_equal(res.small_loss, small)
            np.testing.assert_array_equal(res.high_confidence, conf)
            np.testing.assert_array_equal(res.reliable, small | conf)

    def test_monotone_in_rho_and_tau(self, rng):
        Q, P, S, prior = random_batch(rng, 150, 6)
        prev_small = prev_conf = None
        for rho, tau in zip(np.linspace(0, 1, 11), np.linspace(1, 0, 11)):
            res = select_reliable(Q, P, S, prior, fixed(float(rho), float(tau)), 0)
            if prev_small is not None:
                assert np.all(res.small_loss[prev_small])
                assert np.all(res.high_confidence[prev_conf])
            prev_small, prev_conf = res.small_loss, res.high_confidence

    def test_tail_classes_keep_a_pick(self, rng):
        for _ in range(100):
            Q, P, S, _ = random_batch(rng, 100, 10)
            prior = np.array([0.5, 0.2, 0.1, 0.08, 0.05, 0.03, 0.02, 0.01, 0.005, 0.005])
            res = select_reliable(Q, P, S, prior, fixed(0.2, 1.0), 0)
            for j, members in enumerate(partition_by_argmax(Q, S)):
                if len(members):
                    assert res.per_class_counts[j] >= 1

    def test_global_mode_uses_single_quota(self, rng):
        Q, P, S, prior = random_batch(rng, 80, 5)
        res = select_reliable(Q, P, S, prior, fixed(0.25, 1.0), 0, class_wise=False)
        assert res.small_loss.sum() == 20
