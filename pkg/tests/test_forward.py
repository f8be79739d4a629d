import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stformer_sci.forward import (
    INIT_EPS,
    bayer_mosaic,
    bayer_reassemble,
    bayer_split,
    build_sensing_matrix,
    encode,
    gen_masks,
    init_estimate,
    integrate,
    modulate,
    vec_video,
)
from stformer_sci.tensor import ShapeError


def forward_loops(x, m):
    """Pixel-by-pixel modulate-and-sum for a (n_x, n_y, B) gray cube."""
    n_x, n_y, b = m.shape
    y = np.zeros((n_x, n_y))
    for i in range(n_x):
        for j in range(n_y):
            for f in range(b):
                y[i, j] += x[i, j, f] * m[i, j, f]
    return y


class TestGenMasks:
    def test_deterministic(self):
        assert gen_masks(2, 2, 1, seed=7).values.tobytes() == gen_masks(2, 2, 1, seed=7).values.tobytes()

    def test_seeds_differ(self):
        assert not np.array_equal(gen_masks(16, 16, 2, 0).values, gen_masks(16, 16, 2, 1).values)

    def test_mean(self):
        m = gen_masks(256, 256, 8, seed=0)
        assert m.values.shape == (256, 256, 8) and m.values.dtype == np.uint8
        assert abs(m.values.mean() - 0.5) < 0.01

    def test_high_p(self):
        assert gen_masks(32, 32, 4, 3, p=0.999).values.mean() > 0.99

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1])
    def test_bad_p(self, p):
        with pytest.raises(ValueError):
            gen_masks(2, 2, 1, 0, p=p)


class TestModulate:
    def test_all_ones(self, rng):
        x = rng.random((4, 4, 3))
        np.testing.assert_array_equal(modulate(x, np.ones((4, 4, 3), np.uint8))[:, :, 0], x)

    def test_all_zeros(self, rng):
        assert not modulate(rng.random((4, 4, 3)), np.zeros((4, 4, 3))).any()

    def test_loop_oracle(self, rng):
        x, m = rng.random((4, 4, 2)), gen_masks(4, 4, 2, 5).values
        ref = np.empty_like(x)
        for i in range(4):
            for j in range(4):
                for f in range(2):
                    ref[i, j, f] = x[i, j, f] * m[i, j, f]
        np.testing.assert_array_equal(modulate(x, m)[:, :, 0], ref)

    def test_color_shares_mask(self, rng):
        x, m = rng.random((4, 4, 3, 2)), gen_masks(4, 4, 2, 1).values
        out = modulate(x, m)
        for c in range(3):
            np.testing.assert_array_equal(out[:, :, c], x[:, :, c] * m)

    def test_complementary(self, rng):
        x, m = rng.random((6, 6, 4)), gen_masks(6, 6, 4, 2).values
        np.testing.assert_allclose(modulate(x, m) + modulate(x, 1 - m), x[:, :, None], atol=0)

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            modulate(np.ones((4, 4, 2)), np.ones((4, 4, 3)))


class TestIntegrate:
    def test_two_ones(self):
        np.testing.assert_array_equal(integrate(np.ones((3, 3, 2))).values, 2.0)

    def test_single_frame(self, rng):
        x = rng.random((3, 5, 1))
        np.testing.assert_array_equal(integrate(x).values, x[:, :, 0])

    def test_column_sum_oracle(self, rng):
        x = rng.random((5, 4, 6))
        ref = np.zeros((5, 4))
        for f in range(6):
            ref = ref + x[:, :, f]
        np.testing.assert_array_equal(integrate(x).values, ref)

    def test_linear(self, rng):
        x, z = rng.random((4, 4, 3)), rng.random((4, 4, 3))
        lhs = integrate(2.5 * x - 1.5 * z).values
        np.testing.assert_allclose(lhs, 2.5 * integrate(x).values - 1.5 * integrate(z).values, atol=1e-12)

    def test_noise_statistics(self):
        y = integrate(np.zeros((200, 200, 2)), sigma=0.1, seed=3)
        assert y.noise_sigma == 0.1
        assert abs(y.values.std() - 0.1) < 0.005

    def test_rejects_color(self):
        with pytest.raises(ShapeError):
            integrate(np.ones((2, 2, 3, 2)))


class TestSensingMatrix:
    def test_single_pixel(self):
        h = build_sensing_matrix(np.array([[[1, 0]]])).to_dense()
        np.testing.assert_array_equal(h, [[1, 0]])
        np.testing.assert_array_equal(h @ [3.0, 4.0], [3.0])

    def test_all_ones_sums(self, rng):
        x = rng.random((3, 3, 4))
        H = build_sensing_matrix(np.ones((3, 3, 4)))
        np.testing.assert_allclose(H @ vec_video(x), x.sum(-1).reshape(-1), atol=1e-12)

    def test_shape_and_nnz(self):
        H = build_sensing_matrix(np.ones((4, 5, 3)))
        assert H.shape == (20, 60) and H.nnz == 60

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_matches_direct(self, n_x, n_y, b, seed):
        rng = np.random.default_rng(seed)
        x, m = rng.random((n_x, n_y, b)), gen_masks(n_x, n_y, b, seed).values
        H = build_sensing_matrix(m)
        direct = integrate(modulate(x, m)).values.reshape(-1)
        assert np.abs(H @ vec_video(x) - direct).max() < 1e-12
        assert np.abs(H.to_dense() @ vec_video(x) - direct).max() < 1e-12

    def test_adjoint(self, rng):
        m = gen_masks(4, 4, 3, 0).values
        H = build_sensing_matrix(m)
        np.testing.assert_allclose(H.rmatvec(np.arange(16.0)), H.to_dense().T @ np.arange(16.0))


class TestBayer:
    def test_pure_red(self):
        x = np.zeros((4, 4, 3, 1))
        x[:, :, 0] = 1
        nz = np.argwhere(bayer_mosaic(x)[:, :, 0, 0])
        assert all(i % 2 == 0 and j % 2 == 0 for i, j in nz) and len(nz) == 4

    def test_white(self):
        np.testing.assert_array_equal(bayer_mosaic(np.full((4, 4, 3, 2), 0.3)), 0.3)

    def test_lookup_oracle(self, rng):
        x = rng.random((4, 4, 3, 1))
        chan = {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}
        out = bayer_mosaic(x)
        for i in range(4):
            for j in range(4):
                assert out[i, j, 0, 0] == x[i, j, chan[i % 2, j % 2], 0]

    def test_split_2x2(self):
        parts = bayer_split(np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert {k: v.item() for k, v in parts.items()} == {"r": 1, "g1": 2, "g2": 3, "b": 4}

    @pytest.mark.parametrize("shape", [(2, 2), (4, 6), (8, 8, 3), (10, 4)])
    def test_reassemble_identity(self, rng, shape):
        y = rng.random(shape)
        assert bayer_reassemble(bayer_split(y)).tobytes() == y.tobytes()

    def test_odd_extents(self):
        with pytest.raises(ShapeError):
            bayer_split(np.ones((3, 4)))
        with pytest.raises(ShapeError):
            bayer_mosaic(np.ones((4, 5, 3, 1)))

    def test_sub_measurement_matches_quad_forward(self, rng):
        x, m = rng.random((6, 8, 3, 4)), gen_masks(6, 8, 4, 9).values
        y = bayer_split(encode(x, m, color=True).values)
        ms = bayer_split(m)
        chan = {"r": 0, "g1": 1, "g2": 1, "b": 2}
        for k, (i, j) in {"r": (0, 0), "g1": (0, 1), "g2": (1, 0), "b": (1, 1)}.items():
            xq = x[i::2, j::2, chan[k]]
            assert np.abs(y[k] - forward_loops(xq, ms[k])).max() < 1e-12


class TestInitEstimate:
    def test_all_ones(self, rng):
        y = rng.random((4, 4))
        est = init_estimate(y, np.ones((4, 4, 8), np.uint8))
        assert est.shape == (4, 4, 1, 8)
        np.testing.assert_allclose(est[:, :, 0], np.repeat((y / (8 + INIT_EPS))[:, :, None], 8, axis=2), rtol=1e-15)
        np.testing.assert_allclose(est[:, :, 0, 0], y / 8, rtol=1e-8)

    def test_unobserved_pixel_zero(self, rng):
        m = gen_masks(4, 4, 3, 0).values.copy()
        m[1, 2] = 0
        est = init_estimate(rng.random((4, 4)), m)
        assert not est[1, 2].any()

    def test_loop_oracle(self, rng):
        y, m = rng.random((4, 4)), gen_masks(4, 4, 2, 4).values
        est = init_estimate(y, m)
        for i in range(4):
            for j in range(4):
                s = m[i, j, 0] + m[i, j, 1]
                for f in range(2):
                    assert est[i, j, 0, f] == m[i, j, f] * (y[i, j] / (s + INIT_EPS))

    def test_color_channels(self, rng):
        y, m = rng.random((8, 6)), gen_masks(8, 6, 4, 1).values
        est = init_estimate(y, m, color=True)
        assert est.shape == (4, 3, 4, 4)
        ys, ms = bayer_split(y), bayer_split(m)
        np.testing.assert_array_equal(est[:, :, 3], init_estimate(ys["b"], ms["b"])[:, :, 0])

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            init_estimate(np.ones((4, 4)), np.ones((4, 5, 2)))


def test_encode_color_flag(rng):
    meas = encode(rng.random((4, 4, 3, 2)), gen_masks(4, 4, 2, 0), color=True)
    assert meas.bayer == "RGGB" and meas.values.shape == (4, 4)
