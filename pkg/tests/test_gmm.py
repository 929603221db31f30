import math

import numpy as np
import pytest

from mbnf.errors import ConfigError, DataError
from mbnf.gmm import (
    VAR_FLOOR,
    DiagGmm,
    em_fit_gmm,
    em_steps,
    frame_logliks,
    gmm_loglik,
    responsibilities,
)
from mbnf.ivector import BwStats, TvModel, accumulate_bw_stats, extract_ivector, train_tmatrix


def standard_normal_gmm(dim):
    return DiagGmm(np.ones(1), np.zeros((1, dim)), np.ones((1, dim)))


def oracle_loglik(gmm, x):
    """Direct summation without log-sum-exp (fine at small scale)."""
    total = 0.0
    for c in range(gmm.num_comp):
        quad = ((x - gmm.means[c]) ** 2 / gmm.vars[c]).sum()
        norm = np.prod(2.0 * np.pi * gmm.vars[c]) ** -0.5
        total += gmm.weights[c] * norm * math.exp(-0.5 * quad)
    return math.log(total)


class TestLoglik:
    def test_standard_normal_at_zero(self):
        for d in (1, 3, 7):
            assert gmm_loglik(standard_normal_gmm(d), np.zeros(d)) == pytest.approx(
                -(d / 2.0) * math.log(2.0 * math.pi), abs=1e-12
            )

    def test_matches_direct_summation_oracle(self, rng):
        for _ in range(25):
            c, d = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            w = rng.uniform(0.2, 1.0, c)
            gmm = DiagGmm(w / w.sum(), rng.standard_normal((c, d)), rng.uniform(0.5, 2.0, (c, d)))
            x = rng.standard_normal(d)
            assert gmm_loglik(gmm, x) == pytest.approx(oracle_loglik(gmm, x), abs=1e-10)

    def test_degenerate_weights_pick_component(self):
        gmm = DiagGmm(np.array([1.0, 0.0]), np.array([[0.0], [5.0]]), np.ones((2, 1)))
        only = DiagGmm(np.ones(1), np.zeros((1, 1)), np.ones((1, 1)))
        x = np.array([0.3])
        assert gmm_loglik(gmm, x) == pytest.approx(gmm_loglik(only, x), abs=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(DataError):
            gmm_loglik(standard_normal_gmm(3), np.zeros(2))


class TestEmFit:
    def test_single_component_closed_form(self, rng):
        X = rng.standard_normal((200, 3)) * 2.0 + 1.0
        gmm, _ = em_fit_gmm(X, 1, iters=1, seed=0)
        assert gmm.weights[0] == pytest.approx(1.0)
        np.testing.assert_allclose(gmm.means[0], X.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(
            gmm.vars[0], np.maximum(X.var(axis=0), VAR_FLOOR), atol=1e-12
        )

    def test_two_separated_clusters(self, rng):
        X = np.vstack(
            [rng.normal(-10.0, 1.0, (400, 2)), rng.normal(10.0, 1.0, (400, 2))]
        )
        gmm, trace = em_fit_gmm(X, 2, iters=10, seed=1)
        got = np.sort(gmm.means[:, 0])
        assert abs(got[0] + 10.0) < 0.2 and abs(got[1] - 10.0) < 0.2
        assert all(b >= a - 1e-8 for a, b in zip(trace, trace[1:]))

    def test_zero_iters_returns_init(self, rng):
        X = rng.standard_normal((50, 2))
        g1, t1 = em_fit_gmm(X, 3, iters=0, seed=5)
        g2, _ = em_fit_gmm(X, 3, iters=0, seed=5)
        assert t1 == []
        np.testing.assert_array_equal(g1.means, g2.means)
        np.testing.assert_array_equal(g1.weights, g2.weights)

    def test_empty_input(self):
        with pytest.raises(DataError):
            em_fit_gmm(np.zeros((0, 2)), 1)

    def test_responsibilities_simplex(self, rng):
        X = rng.standard_normal((60, 2))
        gmm, _ = em_fit_gmm(X, 3, iters=2, seed=2)
        gamma = responsibilities(gmm, X)
        np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(gamma >= 0)

    def test_starvation_reseeds_and_logs(self, caplog, rng):
        # a far-away component gets ~zero occupancy and is split from the top
        X = rng.standard_normal((100, 1))
        gmm = DiagGmm(
            np.array([0.5, 0.5]), np.array([[0.0], [1000.0]]), np.ones((2, 1)) * 0.01
        )
        with caplog.at_level("WARNING"):
            out, _ = em_steps(gmm, X, iters=1)
        assert "starved" in caplog.text
        assert abs(out.weights.sum() - 1.0) < 1e-9
        assert np.all(out.vars >= VAR_FLOOR - 1e-15)

    def test_determinism(self, rng):
        X = rng.standard_normal((120, 3))
        a, _ = em_fit_gmm(X, 4, iters=3, seed=9)
        b, _ = em_fit_gmm(X, 4, iters=3, seed=9)
        np.testing.assert_array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.vars, b.vars)


class TestBwStats:
    def test_zero_frames(self):
        ubm = standard_normal_gmm(3)
        stats = accumulate_bw_stats(ubm, np.zeros((0, 3)))
        assert stats.total_frames == 0
        np.testing.assert_array_equal(stats.n, 0.0)
        np.testing.assert_array_equal(stats.f, 0.0)

    def test_frame_at_mean_centers_to_zero(self):
        ubm = DiagGmm(np.ones(1), np.full((1, 2), 3.0), np.ones((1, 2)))
        stats = accumulate_bw_stats(ubm, np.full((1, 2), 3.0))
        np.testing.assert_allclose(stats.f, 0.0, atol=1e-12)

    def test_occupancies_sum_to_frames(self, rng):
        ubm, _ = em_fit_gmm(rng.standard_normal((100, 2)), 3, iters=2, seed=0)
        X = rng.standard_normal((37, 2))
        stats = accumulate_bw_stats(ubm, X)
        assert stats.n.sum() == pytest.approx(37.0, abs=1e-6)

    def test_merge_is_associative(self, rng):
        ubm, _ = em_fit_gmm(rng.standard_normal((80, 2)), 2, iters=1, seed=0)
        parts = [accumulate_bw_stats(ubm, rng.standard_normal((10, 2))) for _ in range(3)]
        left = (parts[0] + parts[1]) + parts[2]
        right = parts[0] + (parts[1] + parts[2])
        np.testing.assert_allclose(left.n, right.n, atol=1e-12)
        np.testing.assert_allclose(left.f, right.f, atol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(DataError):
            accumulate_bw_stats(standard_normal_gmm(3), np.zeros((5, 2)))


class TestTmatrix:
    def make_stats(self, rng, ubm, n_utts=8, frames=60, shift=0.0):
        out = []
        for i in range(n_utts):
            X = rng.standard_normal((frames, ubm.dim)) + shift * (i - n_utts / 2)
            out.append(accumulate_bw_stats(ubm, X))
        return out

    def test_zero_iters_is_seeded_init(self, rng):
        ubm = standard_normal_gmm(2)
        stats = self.make_stats(rng, ubm)
        m1, t1 = train_tmatrix(ubm, stats, 1, iters=0, seed=4)
        m2, _ = train_tmatrix(ubm, stats, 1, iters=0, seed=4)
        assert t1 == []
        np.testing.assert_array_equal(m1.T, m2.T)

    def test_seed_changes_init(self, rng):
        ubm = standard_normal_gmm(2)
        stats = self.make_stats(rng, ubm)
        m1, _ = train_tmatrix(ubm, stats, 1, iters=0, seed=4)
        m2, _ = train_tmatrix(ubm, stats, 1, iters=0, seed=5)
        assert not np.array_equal(m1.T, m2.T)

    def test_objective_monotone(self, rng):
        ubm, _ = em_fit_gmm(rng.standard_normal((200, 3)), 2, iters=3, seed=0)
        stats = self.make_stats(rng, ubm, shift=0.3)
        _, trace = train_tmatrix(ubm, stats, 2, iters=6, seed=1)
        assert all(b >= a - 1e-6 for a, b in zip(trace, trace[1:]))

    def test_planted_single_component_direction(self, rng):
        # Data generated as mu + t*w with w ~ N(0,1): the learned single
        # column must align with the planted direction t.
        dim = 4
        ubm = standard_normal_gmm(dim)
        t_true = np.array([2.0, -1.0, 0.5, 1.5])
        stats = []
        for _ in range(30):
            w = rng.standard_normal()
            X = rng.standard_normal((80, dim)) * 0.1 + t_true * w
            stats.append(accumulate_bw_stats(ubm, X))
        model, _ = train_tmatrix(ubm, stats, 1, iters=8, seed=2)
        learned = model.T[:, 0]
        cosine = abs(learned @ t_true) / (np.linalg.norm(learned) * np.linalg.norm(t_true))
        assert cosine > 0.9

    def test_dim_error(self, rng):
        ubm = standard_normal_gmm(2)
        stats = self.make_stats(rng, ubm)
        with pytest.raises(ConfigError):
            train_tmatrix(ubm, stats, 2, iters=1, seed=0)

    def test_needs_two_utterances(self, rng):
        ubm = standard_normal_gmm(2)
        stats = self.make_stats(rng, ubm, n_utts=1)
        with pytest.raises(DataError):
            train_tmatrix(ubm, stats, 1, iters=1, seed=0)


class TestExtractIvector:
    def test_zero_stats_give_zero_vector(self):
        ubm = standard_normal_gmm(2)
        model = TvModel(ubm=ubm, T=np.ones((2, 1)), ivec_dim=1)
        stats = BwStats(np.zeros(1), np.zeros((1, 2)), 0)
        np.testing.assert_array_equal(extract_ivector(model, stats), np.zeros(1))

    def test_scalar_closed_form(self):
        # 1 component, 1-dim features, N=1, F=f, T=t, var=v:
        # w* = (1 + t^2/v)^-1 * (t f / v)
        t, f, v = 0.7, 1.3, 0.5
        ubm = DiagGmm(np.ones(1), np.zeros((1, 1)), np.full((1, 1), v))
        model = TvModel(ubm=ubm, T=np.full((1, 1), t), ivec_dim=1)
        stats = BwStats(np.ones(1), np.full((1, 1), f), 1)
        want = (1.0 / (1.0 + t * t / v)) * (t * f / v)
        assert extract_ivector(model, stats)[0] == pytest.approx(want, abs=1e-12)

    def test_zero_t_matrix(self, rng):
        ubm = standard_normal_gmm(3)
        model = TvModel(ubm=ubm, T=np.zeros((3, 2)), ivec_dim=2)
        X = rng.standard_normal((20, 3))
        np.testing.assert_array_equal(extract_ivector(model, X), np.zeros(2))

    def test_solves_normal_equations(self, rng):
        ubm, _ = em_fit_gmm(rng.standard_normal((150, 3)), 2, iters=2, seed=0)
        stats = accumulate_bw_stats(ubm, rng.standard_normal((40, 3)) + 0.5)
        model, _ = train_tmatrix(ubm, [stats, stats], 2, iters=2, seed=0)
        w = extract_ivector(model, stats)
        T3 = model.T3
        inv_var = 1.0 / ubm.vars
        L = np.eye(2) + np.einsum("c,cdk,cd,cdl->kl", stats.n, T3, inv_var, T3)
        b = np.einsum("cdk,cd->k", T3, stats.f * inv_var)
        assert np.abs(L @ w - b).max() < 1e-8

    def test_frame_loglik_finite(self, rng):
        gmm, _ = em_fit_gmm(rng.standard_normal((100, 2)), 2, iters=1, seed=0)
        ll = frame_logliks(gmm, rng.standard_normal((10, 2)))
        assert np.all(np.isfinite(ll))
