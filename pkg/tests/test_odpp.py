import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protoperturb.core_math import SeededRng
from protoperturb.errors import ConfigError
from protoperturb.odpp import (OdppConfig, all_pairs, grad_r, hinge_new_pair, hinge_old_pair, objective,
                               objective_mc, old_only, optimize, pseudo_old_from_learned, sample_pairs)
from protoperturb.prototypes import PrototypeSet, SpaceTag

from conftest import central_diff, random_unit_rows, rel_err


def pset(rows, tag=SpaceTag.OLD):
    return PrototypeSet(np.asarray(rows, dtype=np.float64), tag)


def oracle_objective(old, r, new, theta_old, theta_new, gamma):
    """Direct double loop over ordered pairs c != c'."""
    c = len(old)
    p = [[old[i][d] + r[i][d] for d in range(len(old[i]))] for i in range(c)]
    total = 0.0
    for a in range(c):
        for b in range(c):
            if a == b:
                continue
            total += max(0.0, sum(x * y for x, y in zip(p[a], p[b])) - theta_old)
            if new is not None:
                total += gamma * max(0.0, sum(x * y for x, y in zip(p[a], new[b])) - theta_new)
    return total


def clustered(rng, c, d, spread=0.3):
    """Unit prototypes in a few tight groups so several pairs exceed 0.6."""
    centers = random_unit_rows(rng, max(1, c // 4), d)
    rows = centers[np.arange(c) % centers.shape[0]] + spread * rng.standard_normal((c, d)) / math.sqrt(d)
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def near_kink(old, r, new, cfg, tol=1e-3):
    """Boolean mask of perturbation coordinates touching a pair within ``tol`` of its threshold."""
    p = old + r
    c = p.shape[0]
    bad = np.zeros(c, dtype=bool)
    off = ~np.eye(c, dtype=bool)
    close = (np.abs(p @ p.T - cfg.theta_old) < tol) & off
    bad |= close.any(axis=0) | close.any(axis=1)
    if new is not None:
        bad |= ((np.abs(p @ new.T - cfg.theta_new) < tol) & off).any(axis=1)
    return np.repeat(bad[:, None], p.shape[1], axis=1)


class TestHinges:
    def test_old_active(self):
        a = np.array([1.0, 0.0])
        b = np.array([0.8, 0.6])
        assert abs(hinge_old_pair(a, np.zeros(2), b, np.zeros(2), 0.6) - 0.2) < 1e-15

    def test_old_inactive(self):
        a = np.array([1.0, 0.0])
        b = np.array([0.5, math.sqrt(0.75)])
        assert hinge_old_pair(a, np.zeros(2), b, np.zeros(2), 0.6) == 0.0

    def test_new_active(self):
        p = np.array([1.0, 0.0])
        r = np.array([-0.1, 0.0])
        assert abs(hinge_new_pair(p, r, np.array([1.0, 0.0]), 0.6) - 0.3) < 1e-15

    def test_new_orthogonal(self):
        assert hinge_new_pair([1.0, 0.0], [0.0, 0.0], [0.0, 1.0], 0.6) == 0.0


class TestObjective:
    def test_three_prototype_hand_case(self):
        deg = np.radians([0.0, 20.0, 90.0])
        old = pset(np.column_stack([np.cos(deg), np.sin(deg)]))
        value = objective(old, np.zeros((3, 2)), OdppConfig(theta_old=0.6))
        assert abs(value - 0.67938) < 1e-5
        assert abs(value - 2 * (math.cos(math.radians(20)) - 0.6)) < 1e-12

    @pytest.mark.parametrize("seed", range(6))
    def test_against_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        old = clustered(rng, 9, 4)
        new = clustered(rng, 9, 4)
        r = 0.1 * rng.standard_normal((9, 4))
        cfg = OdppConfig(theta_old=0.5, theta_new=0.4, gamma=0.7)
        want = oracle_objective(old.tolist(), r.tolist(), new.tolist(), 0.5, 0.4, 0.7)
        assert abs(objective(pset(old), r, cfg, pset(new, SpaceTag.NEW)) - want) < 1e-10
        want_old = oracle_objective(old.tolist(), r.tolist(), None, 0.5, 0.4, 0.7)
        assert abs(objective(pset(old), r, cfg) - want_old) < 1e-10

    def test_monte_carlo_close(self):
        rng = np.random.default_rng(1)
        old = pset(clustered(rng, 20, 5))
        cfg = OdppConfig(theta_old=0.5)
        exact = objective(old, np.zeros((20, 5)), cfg)
        mc = objective_mc(old, np.zeros((20, 5)), cfg, pairs=200_000)
        assert abs(mc - exact) / exact < 0.02

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(-0.5, 0.99))
    def test_nonnegative_and_zero_iff_all_below(self, seed, theta):
        rng = np.random.default_rng(seed)
        old = pset(random_unit_rows(rng, 6, 3))
        r = 0.2 * rng.standard_normal((6, 3))
        cfg = OdppConfig(theta_old=theta)
        value = objective(old, r, cfg)
        p = old.protos + r
        dots = (p @ p.T)[~np.eye(6, dtype=bool)]
        assert value >= 0.0
        assert (value == 0.0) == bool(np.all(dots <= theta))


class TestGrad:
    def test_inactive_zero(self):
        old = pset(np.eye(4))
        g = grad_r(all_pairs(4), all_pairs(4), old, pset(np.eye(4), SpaceTag.NEW), np.zeros((4, 4)),
                   OdppConfig())
        assert np.array_equal(g, np.zeros((4, 4)))

    def test_single_active_pair(self):
        old = pset([[1.0, 0.0, 0.0], [0.8, 0.6, 0.0], [0.0, 0.0, 1.0]])
        g = grad_r((np.array([0]), np.array([1])), None, old, None, np.zeros((3, 3)), OdppConfig())
        np.testing.assert_array_equal(g[0], old.protos[1])
        np.testing.assert_array_equal(g[1], old.protos[0])
        np.testing.assert_array_equal(g[2], np.zeros(3))

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        old, new = clustered(rng, 8, 4), clustered(rng, 8, 4)
        r = 0.05 * rng.standard_normal((8, 4))
        cfg = OdppConfig(theta_old=0.6, theta_new=0.6, gamma=0.5)
        po, pn = pset(old), pset(new, SpaceTag.NEW)
        analytic = grad_r(all_pairs(8), all_pairs(8), po, pn, r, cfg)
        numeric = central_diff(lambda x: objective(po, x, cfg, pn), r)
        keep = ~near_kink(old, r, new, cfg)
        assert keep.sum() > 0
        assert rel_err(analytic[keep], numeric[keep]) < 1e-4

    def test_gamma_zero_skips_new_term(self):
        rng = np.random.default_rng(3)
        old = pset(clustered(rng, 6, 3))
        cfg = OdppConfig(gamma=0.0)
        a = grad_r(all_pairs(6), all_pairs(6), old, pset(np.ones((6, 3)), SpaceTag.NEW),
                   np.zeros((6, 3)), cfg)
        b = grad_r(all_pairs(6), None, old, None, np.zeros((6, 3)), cfg)
        assert np.array_equal(a, b)


class TestSamplePairs:
    def test_never_self(self):
        a, b = sample_pairs(SeededRng(0), 5, 10_000)
        assert np.all(a != b)
        assert a.min() == 0 and a.max() == 4 and b.min() == 0 and b.max() == 4

    def test_uniform_over_ordered_pairs(self):
        a, b = sample_pairs(SeededRng(1), 4, 120_000)
        counts = np.zeros((4, 4))
        np.add.at(counts, (a, b), 1)
        off = counts[~np.eye(4, dtype=bool)]
        assert np.all(np.abs(off / off.mean() - 1) < 0.05)


class TestOptimize:
    def test_all_below_threshold_stays_zero(self):
        old = pset(np.eye(5))
        out = optimize(old, pset(np.eye(5), SpaceTag.NEW), OdppConfig(inner_epochs=3), SeededRng(0))
        assert np.array_equal(out.r_l, np.zeros((5, 5)))
        assert out.final_loss == 0.0

    def test_coincident_prototypes_separate(self):
        old = pset([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        cfg = OdppConfig(use_joint=False, inner_lr=0.01, pairs_per_epoch=64)
        out = optimize(old, None, cfg, SeededRng(2))
        p = old.protos + out.r_l
        assert p[0] @ p[1] < 1.0

    def test_gamma_zero_matches_old_only(self):
        rng = np.random.default_rng(4)
        old, new = pset(clustered(rng, 10, 4)), pset(clustered(rng, 10, 4), SpaceTag.NEW)
        cfg = OdppConfig(gamma=0.0, inner_lr=0.01, inner_epochs=10, pairs_per_epoch=200, batch_size=64)
        joint = optimize(old, new, cfg, SeededRng(8))
        alone = optimize(old, None, old_only(cfg), SeededRng(8))
        assert np.array_equal(joint.r_l, alone.r_l)

    def test_theta_one_inactive(self):
        rng = np.random.default_rng(5)
        old, new = pset(clustered(rng, 10, 4)), pset(clustered(rng, 10, 4), SpaceTag.NEW)
        out = optimize(old, new, OdppConfig(theta_old=1.0, theta_new=1.0), SeededRng(1))
        assert np.array_equal(out.r_l, np.zeros((10, 4)))

    @pytest.mark.parametrize("lr", [0.001, 0.005, 0.01])
    def test_full_batch_monotone(self, lr):
        rng = np.random.default_rng(6)
        old, new = pset(clustered(rng, 16, 6)), pset(clustered(rng, 16, 6), SpaceTag.NEW)
        cfg = OdppConfig(full_batch=True, inner_lr=lr, inner_epochs=1)
        r = np.zeros((16, 6))
        history = [objective(old, r, cfg, new)]
        for _ in range(40):
            r = optimize(old, new, replace(cfg, warm_start=True), SeededRng(0), init=r).r_l
            history.append(objective(old, r, cfg, new))
        assert history[0] > 0 and history[-1] < history[0]
        assert np.all(np.diff(history) <= 1e-10)

    def test_final_loss_exact(self):
        rng = np.random.default_rng(7)
        old = pset(clustered(rng, 12, 4))
        cfg = OdppConfig(use_joint=False, inner_epochs=4, pairs_per_epoch=100)
        out = optimize(old, None, cfg, SeededRng(3))
        assert out.final_loss == objective(old, out.r_l, cfg)

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        old, new = pset(clustered(rng, 10, 4)), pset(clustered(rng, 10, 4), SpaceTag.NEW)
        cfg = OdppConfig(inner_epochs=5, pairs_per_epoch=300, batch_size=100)
        a = optimize(old, new, cfg, SeededRng(12))
        b = optimize(old, new, cfg, SeededRng(12))
        assert np.array_equal(a.r_l, b.r_l)

    def test_joint_requires_new(self):
        with pytest.raises(ConfigError):
            optimize(pset(np.eye(3)), None, OdppConfig(use_joint=True), SeededRng(0))

    def test_warm_start_off_ignores_init(self):
        old = pset(np.eye(3))
        out = optimize(old, None, OdppConfig(use_joint=False, inner_epochs=1), SeededRng(0),
                       init=np.ones((3, 3)))
        assert np.array_equal(out.r_l, np.zeros((3, 3)))


class TestPseudoOld:
    def test_zero_perturbation(self):
        old = pset(random_unit_rows(np.random.default_rng(0), 4, 3))
        assert np.array_equal(pseudo_old_from_learned(old, np.zeros((4, 3))).protos, old.protos)

    def test_single_row_moves(self):
        old = pset(random_unit_rows(np.random.default_rng(0), 4, 3))
        r = np.zeros((4, 3))
        r[2] = [0.1, -0.2, 0.3]
        moved = pseudo_old_from_learned(old, r)
        changed = np.any(moved.protos != old.protos, axis=1)
        assert list(changed) == [False, False, True, False]
        assert moved.tag is SpaceTag.PSEUDO_OLD

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_offset_is_learned_perturbation(self, seed):
        rng = np.random.default_rng(seed)
        old = pset(random_unit_rows(rng, 6, 4))
        r = 0.3 * rng.standard_normal((6, 4))
        moved = pseudo_old_from_learned(old, r)
        assert np.max(np.abs(moved.protos - old.protos - r)) < 1e-12

    def test_shape_checked(self):
        with pytest.raises(ConfigError):
            pseudo_old_from_learned(pset(np.eye(3)), np.zeros((2, 3)))


class TestConfig:
    @pytest.mark.parametrize("kw", [{"theta_old": 1.5}, {"gamma": -1.0}, {"inner_epochs": 0},
                                    {"inner_lr": 0.0}, {"batch_size": 0}, {"pairs_per_epoch": 0}])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            OdppConfig(**kw)
