import heapq
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import docmix as dm
from docmix.em import (
    EmConfig,
    _annihilate,
    e_step,
    m_step,
    random_init,
    robust_em,
    run_em,
    short_em,
    water_fill_project,
)
from docmix.errors import ConfigError, DegenerateFitError, InfeasibleFloorError
from docmix.mixture import FLOOR_SLACK, MixtureModel, default_floor, log_likelihood

from conftest import random_corpus


def floored_objective(weights, f):
    w = np.asarray(weights, dtype=np.float64)
    mask = w > 0
    return float(np.dot(w[mask], np.log(f[mask])))


def best_grid_objective(weights, epsilon, units=1000):
    """Exact best grid point of the floored simplex at resolution 1/units.

    The objective is separable and concave in each integer coordinate, so
    allocating leftover units one at a time to the largest marginal gain
    is optimal (greedy exchange argument). Independent of the sort-based
    solver under test.
    """
    w = np.asarray(weights, dtype=np.float64)
    floor_units = math.ceil(round(epsilon * units, 9))
    m = np.full(len(w), floor_units, dtype=np.int64)
    remaining = units - floor_units * len(w)
    if remaining < 0:
        raise ValueError("floor infeasible on this grid")
    heap = [(-w[b] * (math.log(m[b] + 1) - math.log(m[b])), b)
            for b in range(len(w)) if w[b] > 0]
    heapq.heapify(heap)
    for _ in range(remaining):
        _, b = heapq.heappop(heap)
        m[b] += 1
        heapq.heappush(heap, (-w[b] * (math.log(m[b] + 1) - math.log(m[b])), b))
    return floored_objective(w, m / units)


class TestWaterFill:
    def test_zero_weight_coordinates_pinned(self):
        f = water_fill_project(np.array([1.0, 0.0, 0.0]), 0.1)
        np.testing.assert_allclose(f, [0.8, 0.1, 0.1], atol=1e-15)

    def test_equal_weights_uniform(self):
        f = water_fill_project(np.full(4, 3.7), 0.05)
        np.testing.assert_allclose(f, 0.25, atol=1e-15)

    def test_unconstrained_when_floor_slack(self):
        w = np.array([5.0, 3.0, 2.0])
        f = water_fill_project(w, 0.01)
        np.testing.assert_allclose(f, w / w.sum(), atol=1e-15)

    def test_matches_greedy_grid(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            b = int(rng.integers(2, 7))
            w = rng.exponential(size=b) * rng.choice([1.0, 10.0])
            if rng.random() < 0.3:
                w[rng.integers(0, b)] = 0.0
            if w.sum() == 0:
                continue
            eps = int(rng.integers(1, max(2, int(0.8 / b * 1000)))) / 1000
            f = water_fill_project(w, eps)
            assert floored_objective(w, f) >= best_grid_objective(w, eps) - 1e-6

    def test_infeasible_floor(self):
        with pytest.raises(InfeasibleFloorError):
            water_fill_project(np.ones(3), 0.4)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            water_fill_project(np.array([1.0, -0.1]), 0.1)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            water_fill_project(np.zeros(3), 0.1)


@given(st.lists(st.floats(0.0, 100.0), min_size=2, max_size=8),
       st.integers(1, 100))
@settings(max_examples=80, deadline=None)
def test_water_fill_kkt(w_list, eps_thousandths):
    w = np.array(w_list)
    if w.sum() <= 0:
        return
    eps = eps_thousandths / 1000 / len(w)
    f = water_fill_project(w, eps)
    assert abs(f.sum() - 1.0) < 1e-9
    assert np.all(f >= eps - 1e-12)
    free = f > eps * (1 + 1e-9)
    if free.any():
        ratios = w[free] / f[free]
        lam = ratios.mean()
        # free coordinates share one multiplier
        assert np.allclose(ratios, lam, rtol=1e-6)
        # pinned coordinates would want to shrink below the floor
        pinned = ~free
        assert np.all(w[pinned] / eps <= lam * (1 + 1e-6))


class TestSteps:
    def test_e_step_rows_are_posteriors(self, tiny_corpus, tiny_model):
        resp, loglik = e_step(tiny_corpus, tiny_model)
        assert resp.shape == (6, 2)
        assert np.all(resp >= 0)
        np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-12)
        assert abs(loglik - log_likelihood(tiny_corpus, tiny_model)) < 1e-12

    def test_m_step_k1_is_water_filled_totals(self, tiny_corpus):
        eps = default_floor(tiny_corpus.total_tokens)
        resp = np.ones((tiny_corpus.num_docs, 1))
        model = m_step(tiny_corpus, resp, eps)
        expected = water_fill_project(
            tiny_corpus.word_totals().astype(float), eps)
        np.testing.assert_allclose(model.densities[0], expected, atol=1e-14)
        assert model.pi[0] == 1.0

    def test_m_step_zero_column(self, tiny_corpus):
        eps = default_floor(tiny_corpus.total_tokens)
        resp = np.zeros((tiny_corpus.num_docs, 2))
        resp[:, 0] = 1.0
        model = m_step(tiny_corpus, resp, eps)
        assert model.pi[1] == 0.0
        np.testing.assert_allclose(model.densities[1], 1 / 5, atol=1e-15)

    def test_m_step_improves_loglik(self, tiny_corpus, tiny_model):
        resp, before = e_step(tiny_corpus, tiny_model)
        updated = m_step(tiny_corpus, resp, tiny_model.epsilon)
        after = log_likelihood(tiny_corpus, updated)
        assert after >= before - 1e-9


class TestRunEm:
    def test_monotone_and_convergence(self, tiny_corpus, tiny_model):
        fit = run_em(tiny_corpus, tiny_model, EmConfig(rng_seed=0))
        trace = np.asarray(fit.loglik_trace)
        assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))
        assert fit.converged
        assert fit.eta_effective <= 1e-6
        fit.model.validate()

    def test_max_iters_respected(self, tiny_corpus, tiny_model):
        config = EmConfig(max_iters=2, rel_tol=1e-300)
        fit = run_em(tiny_corpus, tiny_model, config)
        assert len(fit.loglik_trace) <= 3
        assert not fit.converged


class TestShortEm:
    def test_deterministic(self, tiny_corpus):
        a = short_em(tiny_corpus, 3, seed=5, short_iters=4)
        b = short_em(tiny_corpus, 3, seed=5, short_iters=4)
        assert a.loglik_trace == b.loglik_trace
        assert np.array_equal(a.model.log_f, b.model.log_f)

    def test_seed_changes_start(self, tiny_corpus):
        a = short_em(tiny_corpus, 3, seed=5, short_iters=4)
        b = short_em(tiny_corpus, 3, seed=6, short_iters=4)
        assert not np.array_equal(a.model.log_f, b.model.log_f)

    def test_zero_iters_returns_init(self, tiny_corpus):
        fit = short_em(tiny_corpus, 2, seed=1, short_iters=0)
        eps = default_floor(tiny_corpus.total_tokens)
        init = random_init(tiny_corpus, 2, 1, eps)
        assert np.array_equal(fit.model.log_f, init.log_f)
        assert len(fit.loglik_trace) == 1

    def test_init_respects_floor(self, tiny_corpus):
        eps = default_floor(tiny_corpus.total_tokens)
        init = random_init(tiny_corpus, 3, 9, eps, noise_scale=3.0)
        assert np.all(init.densities >= eps - FLOOR_SLACK)
        np.testing.assert_allclose(init.densities.sum(axis=1), 1.0, atol=1e-9)


class TestAnnihilate:
    def build(self, pi):
        k = len(pi)
        f = np.full((k, 12), 1 / 12)
        return MixtureModel(pi=np.asarray(pi), log_f=np.log(f), epsilon=1e-3)

    def test_removes_all_below_in_one_sweep(self):
        model = self.build([0.5, 0.4985, 0.0005, 0.001])
        pruned, removed = _annihilate(model, 100.0)
        # threshold 1/(100*4) = 0.0025 catches both small components
        assert removed == [2, 3]
        assert pruned.num_components == 2
        assert abs(pruned.pi.sum() - 1.0) < 1e-12

    def test_no_removal_below_divisor(self):
        model = self.build([0.7, 0.29, 0.01])
        pruned, removed = _annihilate(model, 100.0)
        assert removed == []
        assert pruned is model

    def test_all_removed_raises(self):
        # the guard is defensive: with any divisor > 1 the largest weight
        # exceeds 1/(divisor*K), so only a sub-unit divisor can trip it
        model = self.build([0.25, 0.25, 0.25, 0.25])
        with pytest.raises(DegenerateFitError):
            _annihilate(model, 0.9)


class TestRobustEm:
    def test_k_max_one_plain_em(self, tiny_corpus):
        fit = robust_em(tiny_corpus, 1, EmConfig(rng_seed=3))
        assert fit.k_initial == 1
        assert fit.k_final == 1
        assert fit.annihilation_events == []

    def test_annihilation_event_recorded(self):
        mix = dm.planted_mixture(2, 12, seed=np.random.SeedSequence((1, 21)),
                                 min_pairwise_kl=1.0)
        planted = dm.generate_corpus(mix, 12, (20, 60),
                                     seed=np.random.SeedSequence((1, 22)))
        config = EmConfig(rng_seed=1, init_noise_scale=4.0, n_starts=5)
        fit = robust_em(planted.corpus, 6, config)
        assert fit.k_final == 5
        assert fit.annihilation_events == [(11, [5])]
        assert fit.converged
        fit.model.validate()

    def test_event_index_is_post_short_phase(self):
        # the first sweep happens on the multistart winner, whose trace
        # holds short_iters + 1 values
        mix = dm.planted_mixture(2, 12, seed=np.random.SeedSequence((1, 21)),
                                 min_pairwise_kl=1.0)
        planted = dm.generate_corpus(mix, 12, (20, 60),
                                     seed=np.random.SeedSequence((1, 22)))
        config = EmConfig(rng_seed=1, init_noise_scale=4.0, n_starts=5,
                          short_iters=7)
        fit = robust_em(planted.corpus, 6, config)
        if fit.annihilation_events:
            assert fit.annihilation_events[0][0] == 8

    def test_determinism(self, tiny_corpus):
        a = robust_em(tiny_corpus, 3, EmConfig(rng_seed=12))
        b = robust_em(tiny_corpus, 3, EmConfig(rng_seed=12))
        assert np.array_equal(a.model.log_f, b.model.log_f)
        assert np.array_equal(a.model.pi, b.model.pi)
        assert a.loglik_trace == b.loglik_trace

    def test_threads_do_not_change_result(self):
        corpus = random_corpus(30, 8, 50, seed=77)
        serial = robust_em(corpus, 4, EmConfig(rng_seed=8), threads=1)
        parallel = robust_em(corpus, 4, EmConfig(rng_seed=8), threads=4)
        assert np.array_equal(serial.model.log_f, parallel.model.log_f)
        assert serial.loglik_trace == parallel.loglik_trace

    def test_infeasible_floor(self, tiny_corpus):
        with pytest.raises(InfeasibleFloorError):
            robust_em(tiny_corpus, 2, EmConfig(rng_seed=0), epsilon=0.5)


class TestConfig:
    @pytest.mark.parametrize("field,value", [
        ("n_starts", 0),
        ("short_iters", 0),
        ("max_iters", 0),
        ("rel_tol", 0.0),
        ("annihilation_divisor", 1.0),
        ("init_noise_scale", -0.5),
    ])
    def test_rejects_bad_values(self, field, value):
        with pytest.raises(ConfigError):
            EmConfig(**{field: value})
