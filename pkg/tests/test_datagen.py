import numpy as np
import pytest
from scipy.linalg import subspace_angles

from app.datagen import (
    StreamSpec,
    gen_bernoulli_sparse,
    gen_clustered,
    gen_doubly_clustered,
    gen_gaussian_lr,
    gen_rotating_stream,
    imbalanced_sizes,
    make_instance,
    materialize_stream,
)
from app.exceptions import PreconditionError
from app.matrix import numerical_rank


class TestGaussian:
    def test_rank_one(self, rng):
        L = gen_gaussian_lr(20, 30, 1, rng)
        assert numerical_rank(L) == 1

    def test_spectral_gap(self, rng):
        s = np.linalg.svd(gen_gaussian_lr(100, 100, 5, rng), compute_uv=False)
        assert s[4] > 1e3 * s[5]

    def test_full_rank(self, rng):
        assert numerical_rank(gen_gaussian_lr(12, 8, 8, rng)) == 8

    def test_rank_out_of_range(self, rng):
        with pytest.raises(PreconditionError):
            gen_gaussian_lr(5, 5, 6, rng)


class TestBernoulliSparse:
    def test_rho_zero(self, rng):
        assert not np.any(gen_bernoulli_sparse(10, 10, 0.0, rng=rng))

    def test_rho_one(self, rng):
        S = gen_bernoulli_sparse(10, 10, 1.0, amplitude=3.0, rng=rng)
        np.testing.assert_array_equal(np.abs(S), 3.0)

    def test_density(self, rng):
        S = gen_bernoulli_sparse(200, 200, 0.05, rng=rng)
        assert np.count_nonzero(S) / S.size == pytest.approx(0.05, abs=0.01)

    def test_bad_rho(self, rng):
        with pytest.raises(PreconditionError):
            gen_bernoulli_sparse(3, 3, 1.5, rng=rng)


class TestClustered:
    def test_sizes_sum_to_total(self):
        sizes = imbalanced_sizes(12, 6, total=500)
        assert sum(sizes) == 500
        assert min(sizes) >= 2
        assert sizes[0] > sizes[-1]

    def test_sizes_without_total(self):
        assert imbalanced_sizes(4, 2) == [400, 10]

    def test_cluster_count_must_divide_rank(self, rng):
        with pytest.raises(PreconditionError, match="divide"):
            gen_clustered(20, 5, 2, [5, 5], [1.0, 1.0], rng)

    def test_single_cluster_is_rank_r(self, rng):
        L = gen_clustered(40, 4, 1, [60], [1.0], rng)
        assert L.shape == (40, 60)
        assert numerical_rank(L) == 4

    def test_weighted_blocks(self, rng):
        inst = make_instance("clustered", 60, 140, 4, 0.0, rng, clusters=2, weighted=True)
        assert inst.scales == (1.0, 13.0)
        assert numerical_rank(inst.low_rank) == 4

    def test_uniform_sampling_misses_small_clusters(self):
        misses = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            inst = make_instance("clustered", 200, 1230, 12, 0.0, rng, clusters=6)
            cols = rng.choice(1230, size=36, replace=False)
            misses += numerical_rank(inst.low_rank[:, cols]) < 12
        assert misses >= 8

    def test_doubly_clustered(self, rng):
        L = gen_doubly_clustered(120, 6, 3, rng)
        assert L.shape == (120, 120)
        assert numerical_rank(L) == 6

    def test_doubly_clustered_must_be_square(self, rng):
        with pytest.raises(PreconditionError):
            make_instance("doubly_clustered", 50, 60, 2, 0.0, rng, clusters=2)


class TestMakeInstance:
    def test_data_is_sum(self, rng):
        inst = make_instance("gaussian", 30, 40, 3, 0.05, rng, seed=9)
        np.testing.assert_array_equal(inst.data, inst.low_rank + inst.sparse)
        assert inst.shape == (30, 40)
        meta = inst.metadata()
        assert (meta.model, meta.n1, meta.n2, meta.r_true, meta.seed) == ("gaussian", 30, 40, 3, 9)

    def test_noise(self, rng):
        inst = make_instance("gaussian", 30, 40, 3, 0.0, rng, noise_sigma=0.01)
        assert inst.noise is not None
        np.testing.assert_allclose(inst.data - inst.low_rank - inst.sparse, inst.noise)
        assert inst.metadata().noise_sigma == 0.01

    def test_unknown_model(self, rng):
        with pytest.raises(PreconditionError):
            make_instance("spiral", 10, 10, 1, 0.0, rng)

    def test_same_seed_same_instance(self):
        a = make_instance("gaussian", 20, 20, 2, 0.1, np.random.default_rng(4))
        b = make_instance("gaussian", 20, 20, 2, 0.1, np.random.default_rng(4))
        np.testing.assert_array_equal(a.data, b.data)


class TestRotatingStream:
    def test_static_subspace(self, rng):
        spec = StreamSpec(n1=30, r=3, alpha=0.0, length=25)
        columns = list(gen_rotating_stream(spec, rng))
        assert len(columns) == 25
        for col in columns[1:]:
            np.testing.assert_array_equal(col.basis, columns[0].basis)

    def test_noiseless_columns_lie_in_span(self, rng):
        spec = StreamSpec(n1=30, r=3, alpha=0.1, period=2, length=12)
        for col in gen_rotating_stream(spec, rng):
            U = col.basis
            np.testing.assert_allclose(U @ (U.T @ col.data), col.data, atol=1e-10)
            assert not np.any(col.sparse)

    def test_large_rotation_decorrelates(self, rng):
        spec = StreamSpec(n1=40, r=2, alpha=50.0, period=1, length=30)
        bases = [c.basis for c in gen_rotating_stream(spec, rng)]
        angles = [np.max(subspace_angles(a, b)) for a, b in zip(bases, bases[1:])]
        assert np.mean(angles) > 0.5

    def test_materialize(self, rng):
        spec = StreamSpec(n1=20, r=2, length=15, rho=0.1)
        inst = materialize_stream(spec, rng)
        assert inst.shape == (20, 15)
        np.testing.assert_allclose(inst.data, inst.low_rank + inst.sparse)
        assert inst.metadata().model == "stream"

    def test_rank_too_large(self, rng):
        with pytest.raises(PreconditionError):
            next(gen_rotating_stream(StreamSpec(n1=3, r=4, length=2), rng))
