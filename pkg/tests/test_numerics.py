import math
import statistics
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from advexplain.numerics import (
    BLOCK_OPS,
    Rng,
    _block_transform_plan,
    _resize_pad_plan,
    block_transform,
    conv2d_same,
    dct2,
    gaussian,
    gaussian_kernel,
    idct2,
    l1_normalize,
    norm,
    project_linf,
    read_tensor,
    resize_pad,
    sign,
    translate,
    uniform,
    write_tensor,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
unit = st.floats(0.0, 1.0, allow_nan=False)


# --- reference Philox-4x64-10, written out from the published round function ---

_M64 = (1 << 64) - 1
_PHILOX_M = (0xD2E7470EE14C6C93, 0xCA5A826395121157)
_PHILOX_W = (0x9E3779B97F4A7C15, 0xBB67AE8584CAA73B)


def _philox_block(ctr, key):
    c, k = list(ctr), list(key)
    for _ in range(10):
        p0, p1 = _PHILOX_M[0] * c[0], _PHILOX_M[1] * c[2]
        c = [(p1 >> 64) ^ c[1] ^ k[0], p1 & _M64, (p0 >> 64) ^ c[3] ^ k[1], p0 & _M64]
        k = [(k[0] + _PHILOX_W[0]) & _M64, (k[1] + _PHILOX_W[1]) & _M64]
    return c


def _philox_words(seed, stream, n):
    out, ctr = [], 0
    while len(out) < n:
        ctr += 1
        out += _philox_block([ctr, 0, 0, 0], [seed, stream])
    return out[:n]


class TestRng:
    def test_raw_words_match_reference_philox(self):
        for seed, stream in [(0, 0), (12345, 678), (2**64 - 1, 3)]:
            assert [int(v) for v in Rng(seed, stream).raw(10)] == _philox_words(seed, stream, 10)

    def test_uniform_doubles_use_top_53_bits(self):
        words = _philox_words(7, 0, 6)
        expected = [(w >> 11) * 2.0**-53 for w in words]
        assert Rng(7).random(6).tolist() == expected

    def test_frozen_first_values(self):
        # guards against silent changes to the documented stream layout
        r = Rng(0)
        assert r.random(3).tolist() == [(w >> 11) * 2.0**-53 for w in _philox_words(0, 0, 3)]

    def test_same_seed_same_stream(self):
        assert np.array_equal(Rng(42).raw(100), Rng(42).raw(100))
        assert not np.array_equal(Rng(42).raw(100), Rng(43).raw(100))

    def test_clone_continues_from_counter(self):
        r = Rng(5)
        r.random(7)
        c = r.clone()
        assert np.array_equal(r.random(11), c.random(11))

    def test_fork_depends_only_on_name(self):
        a, b = Rng(9), Rng(9)
        a.random(100)  # advancing the parent does not change its children
        assert np.array_equal(a.fork("x").raw(5), b.fork("x").raw(5))
        assert not np.array_equal(b.fork("x").raw(5), b.fork("y").raw(5))

    def test_integers_closed_range(self):
        v = Rng(1).integers(3, 6, size=5000)
        assert v.min() == 3 and v.max() == 6
        assert Rng(1).integers(4, 4) == 4
        with pytest.raises(ValueError):
            Rng(1).integers(5, 4)


class TestSampling:
    def test_gaussian_sigma_zero_is_constant(self):
        assert np.array_equal(gaussian(Rng(0), (4, 5), 0.0, 0.0), np.zeros((4, 5)))
        assert np.all(gaussian(Rng(0), 7, 2.5, 0.0) == 2.5)

    def test_gaussian_deterministic(self):
        assert np.array_equal(gaussian(Rng(3), (3, 3)), gaussian(Rng(3), (3, 3)))

    def test_gaussian_box_muller_layout(self):
        u = Rng(11).random(4)
        r = math.sqrt(-2 * math.log1p(-u[0]))
        z = gaussian(Rng(11), 3)
        assert z[0] == pytest.approx(r * math.cos(2 * math.pi * u[1]), rel=1e-15)
        assert z[1] == pytest.approx(r * math.sin(2 * math.pi * u[1]), rel=1e-15)

    def test_gaussian_moments_against_statistics_module(self):
        z = gaussian(Rng(2024), 100_000, 0.0, 1.0).tolist()
        assert abs(statistics.fmean(z)) <= 0.02
        assert abs(statistics.pstdev(z) - 1.0) <= 0.02

    def test_gaussian_rejects_negative_sigma(self):
        with pytest.raises(ValueError):
            gaussian(Rng(0), 3, 0.0, -1.0)

    def test_uniform_degenerate_and_deterministic(self):
        assert np.array_equal(uniform(Rng(0), (3, 2), 0.0, 0.0), np.zeros((3, 2)))
        assert np.array_equal(uniform(Rng(8), 50, -1, 2), uniform(Rng(8), 50, -1, 2))

    def test_uniform_mean_against_statistics_module(self):
        u = uniform(Rng(77), 100_000).tolist()
        assert abs(statistics.fmean(u) - 0.5) <= 0.01
        assert min(u) >= 0.0 and max(u) < 1.0

    @given(st.floats(-10, 10), st.floats(0, 10), st.integers(0, 2**32))
    @settings(max_examples=50)
    def test_uniform_half_open(self, lo, width, seed):
        hi = lo + width
        u = uniform(Rng(seed), 200, lo, hi)
        assert np.all(u >= lo)
        assert np.all(u < hi) if hi > lo else np.all(u == lo)


class TestElementwise:
    def test_sign_examples(self):
        assert sign([0.5, -2.0, 0.0]).tolist() == [1, -1, 0]
        assert np.array_equal(sign(np.zeros((2, 2))), np.zeros((2, 2)))
        assert sign([1e-30, -1e-30]).tolist() == [1, -1]

    @given(arrays(np.float64, st.integers(1, 30), elements=finite))
    def test_sign_times_abs_is_identity(self, t):
        assert np.array_equal(sign(t) * np.abs(t), t)

    def test_project_examples(self):
        assert project_linf([0.5], [0.9], 0.1).tolist() == pytest.approx([0.6])
        assert project_linf([0.5], [0.55], 0.1).tolist() == [0.55]
        assert project_linf([0.02], [-0.5], 0.1).tolist() == [0.0]

    def test_project_shape_mismatch(self):
        with pytest.raises(ValueError):
            project_linf(np.zeros(3), np.zeros(4), 0.1)

    @given(
        st.integers(1, 20).flatmap(lambda n: st.tuples(
            arrays(np.float64, n, elements=unit), arrays(np.float64, n, elements=st.floats(-2, 3)))),
        st.floats(0, 1),
    )
    def test_project_constraints_and_idempotence(self, pair, eps):
        x0, x = pair
        r = project_linf(x0, x, eps)
        assert np.all(np.abs(r - x0) <= eps + 1e-12)
        assert np.all((r >= 0) & (r <= 1))
        assert np.array_equal(project_linf(x0, r, eps), r)
        inside = (np.abs(x - x0) <= eps) & (x >= 0) & (x <= 1)
        assert np.array_equal(r[inside], x[inside])

    def test_norm_examples(self):
        assert norm([3, -4], 2) == 5
        assert norm([3, -4], 1) == 7
        assert norm([3, -4], np.inf) == 4
        with pytest.raises(ValueError):
            norm([], 2)

    @given(arrays(np.float64, st.integers(1, 40), elements=finite))
    def test_norm_ordering(self, t):
        n1, n2, ninf = norm(t, 1), norm(t, 2), norm(t, np.inf)
        assert n1 >= n2 * (1 - 1e-12) and n2 >= ninf * (1 - 1e-12)

    def test_l1_normalize(self):
        g = np.array([1.0, -3.0])
        assert np.abs(l1_normalize(g)).sum() == pytest.approx(1.0)
        assert np.array_equal(l1_normalize(np.zeros(3)), np.zeros(3))


class TestDct:
    def test_constant_image_has_only_dc(self):
        c = 0.3
        spec = dct2(np.full((1, 4, 6), c))
        assert spec[0, 0, 0] == pytest.approx(c * math.sqrt(24))
        spec[0, 0, 0] = 0
        assert np.max(np.abs(spec)) < 1e-12

    def test_zero_in_zero_out(self):
        assert np.array_equal(dct2(np.zeros((2, 5, 5))), np.zeros((2, 5, 5)))

    def test_matches_explicit_orthonormal_basis(self):
        # direct O(N^4) DCT-II with orthonormal scaling as an independent oracle
        x = uniform(Rng(4), (3, 5))
        H, W = x.shape

        def a(k, n):
            return math.sqrt((1 if k == 0 else 2) / n)

        ref = np.zeros_like(x)
        for u in range(H):
            for v in range(W):
                ref[u, v] = a(u, H) * a(v, W) * sum(
                    x[i, j] * math.cos(math.pi * (2 * i + 1) * u / (2 * H))
                    * math.cos(math.pi * (2 * j + 1) * v / (2 * W))
                    for i in range(H) for j in range(W))
        assert np.allclose(dct2(x), ref, atol=1e-12)

    def test_round_trip_16(self):
        x = uniform(Rng(1), (1, 16, 16))
        assert np.max(np.abs(idct2(dct2(x)) - x)) <= 1e-4

    @given(st.integers(1, 64), st.integers(1, 64), st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_round_trip_property(self, h, w, seed):
        x = gaussian(Rng(seed), (h, w))
        assert np.max(np.abs(idct2(dct2(x)) - x)) <= 1e-4

    def test_rejects_1d(self):
        with pytest.raises(ValueError):
            dct2(np.zeros(5))


class TestResizePad:
    def test_low_frac_one_is_identity(self):
        img = uniform(Rng(0), (2, 7, 9))
        assert np.array_equal(resize_pad(img, Rng(3), 1.0), img)

    def test_support_size_bounds(self):
        img = 0.5 + uniform(Rng(0), (1, 8, 8), 0, 0.5)  # strictly positive
        for s in range(30):
            out = resize_pad(img, Rng(s), 0.5)
            rows = np.nonzero(out[0].any(axis=1))[0]
            cols = np.nonzero(out[0].any(axis=0))[0]
            h, w = rows.max() - rows.min() + 1, cols.max() - cols.min() + 1
            assert 4 <= h <= 8 and 4 <= w <= 8
            assert out.max() <= img.max()

    def test_vjp_is_adjoint(self):
        img = uniform(Rng(1), (2, 9, 7))
        g = gaussian(Rng(2), img.shape)
        v = gaussian(Rng(3), img.shape)
        for s in range(10):
            # the forward map is linear in the image: <J v, g> == <v, J^T g>
            _, vjp = _resize_pad_plan(img, Rng(s), 0.6)
            jv, _ = _resize_pad_plan(v, Rng(s), 0.6)
            assert np.vdot(jv, g) == pytest.approx(np.vdot(v, vjp(g)), rel=1e-12)

    def test_rejects_bad_fraction(self):
        with pytest.raises(ValueError):
            resize_pad(np.zeros((1, 4, 4)), Rng(0), 0.0)


class TestTranslateAndConv:
    def test_translate_identity_and_roundtrip(self):
        img = uniform(Rng(0), (1, 5, 5))
        assert np.array_equal(translate(img, 0, 0), img)
        back = translate(translate(img, 1, 0), -1, 0)
        assert np.array_equal(back[:, :-1], img[:, :-1])
        assert np.all(back[:, -1] == 0)
        assert translate(img, 2, -3).sum() <= img.sum()

    def test_translate_out_of_range(self):
        with pytest.raises(ValueError):
            translate(np.zeros((1, 3, 3)), 3, 0)

    def test_conv_identity_kernel(self):
        img = uniform(Rng(0), (2, 5, 6))
        assert np.array_equal(conv2d_same(img, [[1.0]]), img)

    def test_box_kernel_keeps_interior_constant(self):
        out = conv2d_same(np.full((1, 7, 7), 0.4), np.full((3, 3), 1 / 9))
        assert np.allclose(out[0, 1:-1, 1:-1], 0.4)

    def test_delta_stamps_flipped_kernel(self):
        k = np.arange(9.0).reshape(3, 3)
        img = np.zeros((1, 7, 7))
        img[0, 3, 3] = 1.0
        out = conv2d_same(img, k)
        # convolution (not correlation) places k[u, v] at offset (u - 1, v - 1)
        assert np.array_equal(out[0, 2:5, 2:5], k)

    def test_matches_translation_average(self):
        # conv with kernel K == sum over shifts of K[shift] * translate(img, shift)
        img = uniform(Rng(5), (1, 6, 6))
        K = gaussian_kernel(3, 1.0)
        ref = sum(K[u, v] * translate(img, u - 1, v - 1) for u in range(3) for v in range(3))
        assert np.allclose(conv2d_same(img, K), ref, atol=1e-15)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            conv2d_same(np.zeros((1, 4, 4)), np.ones((2, 2)))
        with pytest.raises(ValueError):
            gaussian_kernel(4, 1.0)

    def test_gaussian_kernel_normalized(self):
        k = gaussian_kernel(7, 3.0)
        assert k.sum() == pytest.approx(1.0)
        assert np.array_equal(k, k.T)


class TestBlockTransform:
    def test_identity_only(self):
        img = uniform(Rng(0), (1, 6, 6))
        assert np.array_equal(block_transform(img, Rng(1), 1, ("identity",)), img)

    def test_range_and_determinism(self):
        img = uniform(Rng(0), (3, 10, 11))
        for s in range(20):
            out = block_transform(img, Rng(s), 3)
            assert out.min() >= 0 and out.max() <= 1
            assert out.shape == img.shape
        assert np.array_equal(block_transform(img, Rng(4)), block_transform(img, Rng(4)))

    def test_remainder_goes_to_last_block(self):
        img = uniform(Rng(0), (1, 7, 7))
        out = block_transform(img, Rng(0), 2, ("vflip",))
        assert np.array_equal(out[0, :3, :3], img[0, 2::-1, :3])
        assert np.array_equal(out[0, 3:, 3:], img[0, :2:-1, 3:])

    def test_vjp_matches_finite_differences(self):
        img = uniform(Rng(0), (1, 6, 6), 0.2, 0.8)
        g = gaussian(Rng(1), img.shape)
        for s in range(5):
            out, vjp = _block_transform_plan(img, Rng(s), 2, BLOCK_OPS)
            ad = vjp(g)
            for idx in [(0, 0, 0), (0, 2, 5), (0, 5, 1), (0, 3, 3)]:
                e = np.zeros_like(img)
                e[idx] = 1e-6
                plus, _ = _block_transform_plan(img + e, Rng(s), 2, BLOCK_OPS)
                minus, _ = _block_transform_plan(img - e, Rng(s), 2, BLOCK_OPS)
                fd = np.vdot(plus - minus, g) / 2e-6
                assert fd == pytest.approx(ad[idx], abs=1e-6)


class TestTensorFiles:
    def test_byte_layout(self, tmp_path):
        t = np.array([[1.0, -2.0, 0.5], [3.0, 4.0, 5.0]])
        write_tensor(tmp_path / "a.tsr", t)
        data = (tmp_path / "a.tsr").read_bytes()
        assert data[:4] == b"TSR1"
        assert struct.unpack("<III", data[4:16]) == (2, 2, 3)
        assert struct.unpack("<6f", data[16:]) == (1.0, -2.0, 0.5, 3.0, 4.0, 5.0)

    def test_round_trip(self, tmp_path):
        t = uniform(Rng(0), (2, 3, 4))
        write_tensor(tmp_path / "b.tsr", t)
        back = read_tensor(tmp_path / "b.tsr")
        assert back.shape == t.shape
        assert np.array_equal(back, t.astype(np.float32).astype(np.float64))

    def test_rejects_bad_files(self, tmp_path):
        (tmp_path / "bad.tsr").write_bytes(b"NOPE")
        with pytest.raises(ValueError):
            read_tensor(tmp_path / "bad.tsr")
        (tmp_path / "short.tsr").write_bytes(b"TSR1" + struct.pack("<II", 1, 4) + b"\0" * 8)
        with pytest.raises(ValueError):
            read_tensor(tmp_path / "short.tsr")
        with pytest.raises(ValueError):
            write_tensor(tmp_path / "nan.tsr", [np.nan])
