import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import binom

from app.datagen import gen_clustered, imbalanced_sizes
from app import sampling
from app.exceptions import PreconditionError
from app.matrix import IndexSet, numerical_rank, project_complement
from app.sampling import (
    AlternatingConfig,
    InformativeConfig,
    alternating_sample,
    augment_random,
    informative_columns,
    uniform_indices,
)


class TestUniformIndices:
    def test_all_indices(self, rng):
        assert sorted(uniform_indices(7, 7, rng)) == list(range(7))

    def test_empty(self, rng):
        assert len(uniform_indices(7, 0, rng)) == 0

    def test_too_many(self, rng):
        with pytest.raises(PreconditionError):
            uniform_indices(3, 4, rng)

    def test_deterministic_per_seed(self):
        a = uniform_indices(100, 10, np.random.default_rng(5))
        b = uniform_indices(100, 10, np.random.default_rng(5))
        assert a == b

    def test_every_index_equally_likely(self, rng):
        trials, n, m = 4000, 20, 5
        counts = np.zeros(n)
        for _ in range(trials):
            counts[uniform_indices(n, m, rng).as_array()] += 1
        lo, hi = binom.interval(1 - 1e-6, trials, m / n)
        assert np.all((counts >= lo) & (counts <= hi))


class TestAugmentRandom:
    def test_no_extra(self, rng):
        base = IndexSet((1, 3), 5)
        assert augment_random(base, 0, rng) is base

    def test_fills_the_missing_index(self, rng):
        out = augment_random(IndexSet((0, 1, 3, 4), 5), 1, rng)
        assert out.indices == (0, 1, 3, 4, 2)

    def test_not_enough_left(self, rng):
        with pytest.raises(PreconditionError):
            augment_random(IndexSet((0, 1), 3), 2, rng)

    def test_extra_indices_uniform_over_the_rest(self, rng):
        trials, base = 4000, IndexSet((0, 1, 2, 3, 4), 20)
        counts = np.zeros(20)
        for _ in range(trials):
            counts[list(augment_random(base, 3, rng).indices[5:])] += 1
        assert not counts[:5].any()
        lo, hi = binom.interval(1 - 1e-6, trials, 3 / 15)
        assert np.all((counts[5:] >= lo) & (counts[5:] <= hi))


class TestInformativeColumns:
    def test_rank_one(self, rng):
        u = rng.standard_normal(20)
        A = np.outer(u, rng.uniform(0.5, 2.0, 15))
        assert len(informative_columns(A, InformativeConfig(C=1), rng)) == 1

    def test_clustered_rank_six(self, rng):
        sizes = imbalanced_sizes(6, 3, total=180)
        A = gen_clustered(100, 6, 3, sizes, [1.0, 1.0, 1.0], rng)
        idx = informative_columns(A, InformativeConfig(C=1, tau_rel=1e-8), rng)
        assert len(idx) == 6
        assert numerical_rank(A[:, idx.as_array()]) == 6

    def test_two_repeats_on_doubled_identity(self, rng):
        A = np.hstack([np.eye(4), np.eye(4)])
        idx = informative_columns(A, InformativeConfig(C=2), rng)
        assert len(idx) == 8
        assert sorted(idx) == list(range(8))

    def test_second_repeat_runs_out_of_columns(self, rng):
        idx = informative_columns(np.eye(4), InformativeConfig(C=2), rng)
        assert sorted(idx) == [0, 1, 2, 3]

    def test_each_repeat_spans_the_range(self, rng):
        A = rng.standard_normal((30, 4)) @ rng.standard_normal((4, 50))
        cfg = InformativeConfig(C=3)
        idx = informative_columns(A, cfg, rng)
        assert len(idx) == 12
        for k in range(3):
            chosen = A[:, idx.as_array()[4 * k : 4 * (k + 1)]]
            residual = project_complement(chosen, A)
            assert np.linalg.norm(residual, axis=0).max() <= cfg.threshold_for(A)

    def test_zero_matrix(self, rng):
        with pytest.raises(PreconditionError, match="no nonzero columns"):
            informative_columns(np.zeros((3, 4)), rng=rng)

    def test_max_samples(self, rng):
        A = rng.standard_normal((10, 10))
        assert len(informative_columns(A, InformativeConfig(C=2, max_samples=5), rng)) == 5

    def test_leverage_seeding(self, rng):
        A = rng.standard_normal((15, 3)) @ rng.standard_normal((3, 25))
        idx = informative_columns(A, InformativeConfig(seeding="leverage"), rng)
        assert numerical_rank(A[:, idx.as_array()]) == 3

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            InformativeConfig(C=0)


class TestAlternatingSample:
    def test_stops_after_stable_rank(self, rng):
        D = rng.standard_normal((60, 3)) @ rng.standard_normal((3, 60))
        cfg = AlternatingConfig(C_r=3, r_hat=3, T=2, skip_pcp=True)
        result = alternating_sample(D, cfg, rng)
        assert result.rank_trace == [3, 3]
        assert result.cycles == 2
        assert result.col_rank_trace == [3]
        assert result.low_rank.shape == (len(result.row_idx), 60)

    def test_single_cycle(self, rng):
        D = rng.standard_normal((40, 2)) @ rng.standard_normal((2, 40))
        cfg = AlternatingConfig(C_r=3, r_hat=2, max_cycles=1, skip_pcp=True)
        result = alternating_sample(D, cfg, rng)
        assert result.cycles == 1
        assert result.col_rank_trace == []

    def test_augment_adds_random_columns(self, rng):
        D = rng.standard_normal((50, 2)) @ rng.standard_normal((2, 50))
        cfg = AlternatingConfig(C_r=3, r_hat=2, max_cycles=1, skip_pcp=True, augment=3)
        result = alternating_sample(D, cfg, rng)
        assert len(result.col_idx) == 6 + 3

    def test_sketch_larger_than_matrix(self, rng):
        with pytest.raises(PreconditionError):
            alternating_sample(rng.standard_normal((10, 10)), AlternatingConfig(r_hat=4), rng)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            AlternatingConfig(r_hat=2, T=1)

    def test_rank_below_hint_never_settles(self, rng):
        D = rng.standard_normal((60, 2)) @ rng.standard_normal((2, 60))
        cfg = AlternatingConfig(C_r=3, r_hat=3, T=2, max_cycles=4, skip_pcp=True)
        result = alternating_sample(D, cfg, rng)
        assert result.rank_trace == [2, 2, 2, 2]

    def test_exact_data_keeps_weak_directions(self, rng):
        strong = rng.standard_normal((60, 3)) @ rng.standard_normal((3, 60))
        weak = 1e-7 * np.outer(rng.standard_normal(60), rng.standard_normal(60))
        D = strong + weak
        cfg = AlternatingConfig(C_r=3, r_hat=4, max_cycles=1, skip_pcp=True)
        assert cfg.effective_rank_tol == 1e-10
        assert alternating_sample(D, cfg, rng).rank_trace == [4]
        coarse = cfg.model_copy(update={"rank_tol": 1e-6})
        assert alternating_sample(D, coarse, rng).rank_trace == [3]

    def test_pcp_tolerances_by_default(self):
        cfg = AlternatingConfig(r_hat=2)
        assert cfg.effective_rank_tol == 1e-6
        assert cfg.effective_tau_rel == 1e-6

    def test_noisy_sketches_use_stable_pcp(self, rng, monkeypatch):
        calls = []
        real = sampling.stable_pcp

        def spy(M, cfg, eps_n):
            calls.append(eps_n)
            return real(M, cfg, eps_n)

        monkeypatch.setattr(sampling, "stable_pcp", spy)
        D = rng.standard_normal((40, 2)) @ rng.standard_normal((2, 40))
        D += 1e-3 * rng.standard_normal(D.shape)
        cfg = AlternatingConfig(C_r=3, r_hat=2, max_cycles=1, noise_sigma=1e-3)
        alternating_sample(D, cfg, rng)
        assert calls == [pytest.approx(1e-3 * np.sqrt(6 * 40 + np.sqrt(8 * 6 * 40)))]
