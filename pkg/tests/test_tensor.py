import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from cameval.errors import ContractError
from cameval.tensor import bilinear_upsample, gaussian_blur, mean_l1, normalize_max, pearson

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
maps = arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(2, 6)), elements=finite)
nonneg_maps = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                     elements=st.floats(0, 1e3, allow_nan=False))


class TestPearson:
    def test_self_correlation(self, rng):
        m = rng.random((5, 7))
        assert pearson(m, m) == pytest.approx(1.0, abs=1e-12)

    def test_negative_affine(self, rng):
        m = rng.random((4, 4))
        assert pearson(m, 1 - m) == pytest.approx(-1.0, abs=1e-12)

    def test_constant_maps(self):
        a = np.full((3, 3), 0.7)
        assert pearson(a, a.copy()) == 1.0
        assert pearson(a, np.full((3, 3), 0.2)) == 0.0

    def test_matches_scalar_oracle(self, rng):
        a, b = rng.random((6, 5)), rng.random((6, 5))
        assert pearson(a, b) == pytest.approx(oracles.pearson(a.ravel().tolist(), b.ravel().tolist()), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            pearson(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_too_small(self):
        with pytest.raises(ContractError):
            pearson(np.ones((1, 1)), np.ones((1, 1)))

    @given(maps, st.data())
    def test_symmetric(self, a, data):
        b = data.draw(arrays(np.float64, a.shape, elements=finite))
        assert pearson(a, b) == pytest.approx(pearson(b, a), abs=1e-12)

    @given(maps, st.floats(0.1, 10), st.floats(-5, 5), st.data())
    def test_positive_affine_invariance(self, a, alpha, beta, data):
        b = data.draw(arrays(np.float64, a.shape, elements=finite))
        if np.std(a) < 1e-3 or np.std(b) < 1e-3:
            return
        assert pearson(alpha * a + beta, b) == pytest.approx(pearson(a, b), abs=1e-9)


class TestNormalizeMax:
    def test_analytic(self):
        m, deg = normalize_max(np.array([[0, 2], [4, 8]]))
        np.testing.assert_array_equal(m, [[0, 0.25], [0.5, 1.0]])
        assert not deg

    def test_all_zero_flagged(self):
        m, deg = normalize_max(np.zeros((3, 3)))
        np.testing.assert_array_equal(m, np.zeros((3, 3)))
        assert deg

    def test_single(self):
        m, _ = normalize_max(np.array([[5.0]]))
        np.testing.assert_array_equal(m, [[1.0]])

    def test_negative_rejected(self):
        with pytest.raises(ContractError):
            normalize_max(np.array([[1.0, -0.1]]))

    @given(nonneg_maps)
    def test_idempotent(self, m):
        once, _ = normalize_max(m)
        twice, _ = normalize_max(once)
        np.testing.assert_array_equal(once, twice)

    @given(nonneg_maps)
    def test_mean_l1_bounded(self, m):
        assert 0.0 <= mean_l1(normalize_max(m)[0]) <= 1.0


class TestBilinear:
    # frozen from oracles.bilinear([[0, 1], [1, 0]], 4, 4)
    CHECKER_4X4 = [
        [0.0, 0.25, 0.75, 1.0],
        [0.25, 0.375, 0.625, 0.75],
        [0.75, 0.625, 0.375, 0.25],
        [1.0, 0.75, 0.25, 0.0],
    ]

    def test_oracle_agrees_with_frozen(self):
        np.testing.assert_allclose(oracles.bilinear([[0, 1], [1, 0]], 4, 4), self.CHECKER_4X4, atol=1e-15)

    def test_checkerboard(self):
        np.testing.assert_allclose(bilinear_upsample(np.array([[0.0, 1.0], [1.0, 0.0]]), 4, 4),
                                   self.CHECKER_4X4, atol=1e-12)

    def test_constant(self):
        np.testing.assert_allclose(bilinear_upsample(np.full((2, 2), 0.3), 8, 8), np.full((8, 8), 0.3), atol=1e-15)

    def test_replication(self):
        np.testing.assert_array_equal(bilinear_upsample(np.array([[0.6]]), 3, 5), np.full((3, 5), 0.6))

    @pytest.mark.parametrize("src,dst", [((3, 5), (7, 4)), ((4, 4), (16, 16)), ((6, 2), (3, 9)), ((1, 4), (5, 5))])
    def test_random_against_oracle(self, rng, src, dst):
        m = rng.random(src)
        np.testing.assert_allclose(bilinear_upsample(m, *dst), oracles.bilinear(m.tolist(), *dst), atol=1e-12)

    def test_stack(self, rng):
        s = rng.random((3, 4, 5))
        out = bilinear_upsample(s, 8, 10)
        for k in range(3):
            np.testing.assert_allclose(out[k], bilinear_upsample(s[k], 8, 10), atol=1e-15)

    @given(maps)
    def test_same_shape_identity(self, m):
        np.testing.assert_allclose(bilinear_upsample(m, *m.shape), m, atol=1e-12)

    def test_errors(self):
        with pytest.raises(ContractError):
            bilinear_upsample(np.zeros((0, 3)), 2, 2)
        with pytest.raises(ContractError):
            bilinear_upsample(np.zeros((2, 2)), 0, 2)


class TestGaussianBlur:
    def test_constant_unchanged(self):
        img = np.full((2, 6, 5), 0.42)
        np.testing.assert_allclose(gaussian_blur(img, 1.7), img, atol=1e-12)

    def test_impulse_matches_dense_convolution(self):
        img = np.zeros((1, 9, 9))
        img[0, 4, 4] = 1.0
        np.testing.assert_allclose(gaussian_blur(img, 1.0), oracles.blur_dense(img.tolist(), 1.0), atol=1e-9)

    def test_random_matches_dense_with_edges(self, rng):
        img = rng.random((2, 5, 7))
        np.testing.assert_allclose(gaussian_blur(img, 0.8), oracles.blur_dense(img.tolist(), 0.8), atol=1e-9)

    def test_single_pixel(self):
        img = np.array([[[0.3]]])
        np.testing.assert_allclose(gaussian_blur(img, 0.5), img, atol=1e-15)

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_bad_sigma(self, sigma):
        with pytest.raises(ContractError):
            gaussian_blur(np.zeros((1, 2, 2)), sigma)


class TestMeanL1:
    def test_values(self):
        assert mean_l1(np.ones((3, 4))) == 1.0
        assert mean_l1(np.zeros((3, 4))) == 0.0
        assert mean_l1(np.array([[1.0, 0.0], [1.0, 0.0]])) == 0.5

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            mean_l1(np.array([[1.5]]))

    def test_nonfinite(self):
        with pytest.raises(ContractError):
            mean_l1(np.array([[np.nan, 0.0]]))


@settings(max_examples=25)
@given(st.integers(1, 5), st.integers(1, 5))
def test_upsample_of_constant_is_constant(h, w):
    np.testing.assert_allclose(bilinear_upsample(np.full((h, w), 2.5), 2 * h + 1, w + 3), 2.5, atol=1e-12)
