import numpy as np
import pytest

from convfisher import (
    BagOfWordsEncoder,
    ConfigurationError,
    DiagonalGaussianMixture,
    PrincipalComponents,
    accumulate_statistics,
    encode_direct,
    encode_fisher,
    fisher_gradients,
    max_abs_normalize,
    power_l2_normalize,
)
from convfisher.fisher import FisherVectorEncoder

from .oracles import encode_fisher_oracle, fisher_vector_oracle, naive_posteriors


def make_gmm(weights, means, stddevs):
    model = DiagonalGaussianMixture(n_components=len(weights))
    model.weights_ = np.asarray(weights, dtype=np.float64)
    model.means_ = np.asarray(means, dtype=np.float64)
    model.stddevs_ = np.asarray(stddevs, dtype=np.float64)
    model.variance_floor_ = 1e-12
    return model


def random_gmm(rng, k, m):
    w = rng.uniform(0.3, 1.0, k)
    return make_gmm(w / w.sum(), rng.standard_normal((k, m)), rng.uniform(0.4, 1.5, (k, m)))


def identity_pca(d):
    model = PrincipalComponents(n_components=d)
    model.input_dim_ = d
    model.mean_ = np.zeros(d)
    model.components_ = np.eye(d)
    model.explained_variance_ = np.ones(d)
    return model


def random_pca(rng, d, m):
    basis = np.linalg.qr(rng.standard_normal((d, d)))[0][:m]
    model = PrincipalComponents(n_components=m)
    model.input_dim_ = d
    model.mean_ = rng.standard_normal(d) * 0.1
    model.components_ = basis
    model.explained_variance_ = np.linspace(2.0, 1.0, m)
    return model


class TestAccumulate:
    def test_single_descriptor_single_component(self):
        gmm = make_gmm([1.0], [[0.5, -0.5]], [[1.0, 2.0]])
        d = np.array([[2.0, 3.0]])
        s0, s1, s2 = accumulate_statistics(d, gmm)
        np.testing.assert_allclose(s0, [1.0], atol=1e-15)
        np.testing.assert_allclose(s1, d, atol=1e-15)
        np.testing.assert_allclose(s2, d**2, atol=1e-15)

    def test_duplication_doubles_everything(self):
        rng = np.random.default_rng(0)
        gmm = random_gmm(rng, 3, 4)
        X = rng.standard_normal((20, 4))
        s0, s1, s2 = accumulate_statistics(X, gmm)
        t0, t1, t2 = accumulate_statistics(np.concatenate([X, X]), gmm)
        np.testing.assert_allclose(t0, 2 * s0, atol=1e-10)
        np.testing.assert_allclose(t1, 2 * s1, atol=1e-10)
        np.testing.assert_allclose(t2, 2 * s2, atol=1e-10)

    def test_matches_per_descriptor_summation_oracle(self):
        rng = np.random.default_rng(1)
        gmm = random_gmm(rng, 3, 2)
        X = rng.standard_normal((15, 2))
        s0, s1, s2 = accumulate_statistics(X, gmm)
        e0 = np.zeros(3)
        e1 = np.zeros((3, 2))
        e2 = np.zeros((3, 2))
        for x in X:
            gamma = naive_posteriors(gmm.weights_, gmm.means_, gmm.stddevs_, x)
            for k in range(3):
                e0[k] += gamma[k]
                e1[k] += gamma[k] * x
                e2[k] += gamma[k] * x * x
        np.testing.assert_allclose(s0, e0, atol=1e-9)
        np.testing.assert_allclose(s1, e1, atol=1e-9)
        np.testing.assert_allclose(s2, e2, atol=1e-9)

    def test_soft_counts_total_t(self):
        rng = np.random.default_rng(2)
        gmm = random_gmm(rng, 4, 3)
        X = rng.standard_normal((57, 3))
        s0, _, _ = accumulate_statistics(X, gmm)
        assert abs(s0.sum() - 57.0) < 1e-8

    def test_rejects_dimension_mismatch(self):
        gmm = make_gmm([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
        with pytest.raises(ConfigurationError):
            accumulate_statistics(np.zeros((3, 5)), gmm)


class TestGradients:
    def test_single_descriptor_closed_form(self):
        mu = np.array([[0.3, -0.2]])
        sigma = np.array([[0.8, 1.4]])
        gmm = make_gmm([1.0], mu, sigma)
        d = np.array([1.0, 2.0])
        s0, s1, s2 = accumulate_statistics(d[None, :], gmm)
        vec = fisher_gradients(s0, s1, s2, gmm)
        expected_mean = (d - mu[0]) / sigma[0]
        expected_std = ((d - mu[0]) ** 2 - sigma[0] ** 2) / (np.sqrt(2.0) * sigma[0] ** 2)
        np.testing.assert_allclose(vec[:2], expected_mean, atol=1e-12)
        np.testing.assert_allclose(vec[2:], expected_std, atol=1e-12)

    def test_descriptors_at_the_means_zero_mean_blocks(self):
        # widely separated components so each descriptor's posterior is one-hot
        means = np.array([[0.0, 0.0], [60.0, 60.0], [-60.0, 60.0]])
        gmm = make_gmm([1 / 3] * 3, means, np.ones((3, 2)))
        s0, s1, s2 = accumulate_statistics(means, gmm)
        vec = fisher_gradients(s0, s1, s2, gmm)
        np.testing.assert_allclose(vec[: 3 * 2], np.zeros(6), atol=1e-10)

    def test_matches_single_pass_oracle(self):
        rng = np.random.default_rng(3)
        gmm = random_gmm(rng, 3, 4)
        X = rng.standard_normal((30, 4))
        s0, s1, s2 = accumulate_statistics(X, gmm)
        raw = fisher_gradients(s0, s1, s2, gmm)
        vec = power_l2_normalize(raw, 0.5)
        oracle = fisher_vector_oracle(X, gmm.weights_, gmm.means_, gmm.stddevs_, 0.5)
        np.testing.assert_allclose(vec, oracle, atol=1e-8)


class TestPowerL2:
    def test_alpha_one_is_plain_l2(self):
        np.testing.assert_allclose(power_l2_normalize([3.0, 4.0], 1.0), [0.6, 0.8], atol=1e-15)

    def test_signed_square_root(self):
        out = power_l2_normalize([4.0, -1.0], 0.5)
        np.testing.assert_allclose(out, [2.0 / np.sqrt(5.0), -1.0 / np.sqrt(5.0)], atol=1e-14)

    def test_l2_step_idempotent(self):
        rng = np.random.default_rng(4)
        v = rng.standard_normal(20)
        once = power_l2_normalize(v, 1.0)
        np.testing.assert_allclose(power_l2_normalize(once, 1.0), once, atol=1e-12)

    def test_zero_vector_warns_and_passes_through(self):
        with pytest.warns(UserWarning):
            out = power_l2_normalize(np.zeros(4), 0.5)
        np.testing.assert_array_equal(out, np.zeros(4))

    def test_rejects_bad_alpha(self):
        with pytest.raises(ConfigurationError):
            power_l2_normalize([1.0], 0.0)
        with pytest.raises(ConfigurationError):
            power_l2_normalize([1.0], 1.5)


class TestEncodeFisher:
    def test_output_length_is_2mk(self):
        rng = np.random.default_rng(5)
        pca = random_pca(rng, 8, 4)
        gmm = random_gmm(rng, 3, 4)
        vec = encode_fisher(rng.random((4, 4, 8)), pca, gmm)
        assert vec.shape == (2 * 4 * 3,)
        np.testing.assert_allclose(np.linalg.norm(vec), 1.0, atol=1e-10)

    def test_uniform_fibers_match_single_descriptor_encoding(self):
        rng = np.random.default_rng(6)
        pca = random_pca(rng, 6, 3)
        gmm = random_gmm(rng, 2, 3)
        fiber = rng.random(6) + 0.25
        maps = np.tile(fiber, (5, 4, 1))
        single = fiber.reshape(1, 1, 6)
        np.testing.assert_allclose(
            encode_fisher(maps, pca, gmm), encode_fisher(single, pca, gmm), atol=1e-10
        )

    def test_matches_end_to_end_oracle(self):
        rng = np.random.default_rng(7)
        pca = random_pca(rng, 8, 4)
        gmm = random_gmm(rng, 3, 4)
        maps = rng.standard_normal((4, 4, 8))
        vec = encode_fisher(maps, pca, gmm, alpha=0.5)
        oracle = encode_fisher_oracle(
            maps, pca.mean_, pca.components_, gmm.weights_, gmm.means_, gmm.stddevs_, 0.5
        )
        np.testing.assert_allclose(vec, oracle, atol=1e-8)

    def test_spatial_permutation_invariance(self):
        rng = np.random.default_rng(8)
        pca = random_pca(rng, 6, 3)
        gmm = random_gmm(rng, 4, 3)
        maps = rng.standard_normal((5, 6, 6))
        flat = maps.reshape(30, 6)
        permuted = flat[rng.permutation(30)].reshape(5, 6, 6)
        np.testing.assert_allclose(
            encode_fisher(maps, pca, gmm), encode_fisher(permuted, pca, gmm), atol=1e-10
        )

    def test_transformer_batches(self):
        rng = np.random.default_rng(9)
        pca = random_pca(rng, 6, 3)
        gmm = random_gmm(rng, 2, 3)
        enc = FisherVectorEncoder(pca, gmm).fit()
        batch = rng.random((3, 4, 4, 6))
        out = enc.transform(batch)
        assert out.shape == (3, enc.output_dim)
        np.testing.assert_array_equal(out[1], enc.encode(batch[1]))

    def test_mismatched_models_rejected(self):
        rng = np.random.default_rng(10)
        pca = random_pca(rng, 6, 3)
        gmm = random_gmm(rng, 2, 4)
        with pytest.raises(ConfigurationError):
            FisherVectorEncoder(pca, gmm).fit()


class TestEncodeDirect:
    def test_length_is_hwd(self):
        maps = np.random.default_rng(11).random((14, 14, 384))
        assert encode_direct(maps).shape == (14 * 14 * 384,)

    def test_single_fiber_is_normalized_fiber(self):
        fiber = np.array([4.0, -2.0, 1.0])
        expected = max_abs_normalize(fiber)
        expected = expected / np.linalg.norm(expected)
        np.testing.assert_allclose(encode_direct(fiber.reshape(1, 1, 3)), expected, atol=1e-14)

    def test_order_sensitivity(self):
        rng = np.random.default_rng(12)
        maps = rng.random((3, 3, 4))
        swapped = maps.copy()
        swapped[[0, 2], :, :] = swapped[[2, 0], :, :]
        assert not np.allclose(encode_direct(maps), encode_direct(swapped))


class TestEncodeBow:
    def test_single_center_histogram(self):
        rng = np.random.default_rng(13)
        pca = identity_pca(3)
        bow = BagOfWordsEncoder(pca, n_words=1, random_state=0)
        bow.codebook_ = np.zeros((1, 3))
        out = bow.encode(rng.random((2, 2, 3)))
        np.testing.assert_array_equal(out, [1.0])

    def test_two_of_four_centers_even_split(self):
        pca = identity_pca(2)
        bow = BagOfWordsEncoder(pca, n_words=4)
        bow.codebook_ = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        # fibers sit exactly at centers 0 and 1 and survive max-abs unchanged
        maps = np.array([[[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]])
        words = bow.pca.transform(max_abs_normalize(maps.reshape(4, 2)))
        hist = np.bincount(np.argmin(((words[:, None, :] - bow.codebook_) ** 2).sum(2), 1), minlength=4)
        np.testing.assert_array_equal(hist, [2, 2, 0, 0])
        out = bow.encode(maps)
        np.testing.assert_allclose(out, [0.5, 0.5, 0, 0] / np.linalg.norm([0.5, 0.5, 0, 0]))

    def test_assignments_match_exhaustive_oracle(self):
        rng = np.random.default_rng(14)
        pca = identity_pca(3)
        bow = BagOfWordsEncoder(pca, n_words=5)
        bow.codebook_ = rng.standard_normal((5, 3))
        maps = rng.standard_normal((4, 4, 3))
        fibers = pca.transform(max_abs_normalize(maps.reshape(16, 3)))
        expected = []
        for f in fibers:
            dists = [float(((f - c) ** 2).sum()) for c in bow.codebook_]
            expected.append(int(np.argmin(dists)))
        hist = np.bincount(expected, minlength=5).astype(float)
        hist /= hist.sum()
        np.testing.assert_allclose(bow.encode(maps), hist / np.linalg.norm(hist), atol=1e-12)

    def test_histogram_properties(self):
        rng = np.random.default_rng(15)
        pca = identity_pca(3)
        bow = BagOfWordsEncoder(pca, n_words=6)
        bow.fit(rng.standard_normal((100, 3)))
        maps = rng.standard_normal((5, 5, 3))
        fibers = pca.transform(max_abs_normalize(maps.reshape(25, 3)))
        from convfisher.kmeans import assign

        hist = np.bincount(assign(fibers, bow.codebook_), minlength=6).astype(float) / 25.0
        assert np.all(hist >= 0.0)
        assert abs(hist.sum() - 1.0) < 1e-12

    def test_empty_codebook_rejected(self):
        pca = identity_pca(2)
        bow = BagOfWordsEncoder(pca, n_words=1)
        bow.codebook_ = np.zeros((0, 2))
        with pytest.raises(ConfigurationError):
            bow.encode(np.zeros((2, 2, 2)))
