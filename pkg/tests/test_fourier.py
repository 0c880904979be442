import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msbd.fourier import (
    Lattice,
    LatticeError,
    circ_conv,
    circ_shift,
    circulant_apply,
    delta,
    dft,
    idft,
    idft_real,
    mirror,
)

from oracles import circulant, direct_dft, direct_dft2

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def vec(n):
    return arrays(np.float64, n, elements=finite)


class TestLattice:
    def test_n_and_axes(self):
        lat = Lattice((4, 6))
        assert lat.n == 24 and lat.ndim == 2 and lat.axes == (-2, -1)

    @pytest.mark.parametrize("dims", [(1,), (), (2, 2, 2), (0, 4)])
    def test_rejects_bad_dims(self, dims):
        with pytest.raises(LatticeError):
            Lattice(dims)

    def test_check_rejects_mismatch(self):
        with pytest.raises(LatticeError):
            Lattice((8,)).check(np.zeros(7))

    def test_ops_reject_mismatch(self):
        with pytest.raises(LatticeError):
            circ_conv(np.zeros(4), np.zeros(5), Lattice((5,)))


class TestDFT:
    def test_delta_is_flat(self):
        np.testing.assert_allclose(dft(delta(Lattice((8,)))), np.ones(8))

    def test_constant_is_dc(self):
        np.testing.assert_allclose(dft(np.ones(4)), [4, 0, 0, 0], atol=1e-15)

    def test_matches_direct_summation(self):
        x = np.random.default_rng(0).standard_normal(8)
        ref = direct_dft(x)
        assert np.linalg.norm(dft(x) - ref) <= 1e-12 * np.linalg.norm(ref)

    def test_2d_matches_direct_summation(self):
        x = np.random.default_rng(1).standard_normal((3, 4))
        ref = direct_dft2(x)
        assert np.linalg.norm(dft(x) - ref) <= 1e-12 * np.linalg.norm(ref)

    def test_idft_of_flat_is_delta(self):
        np.testing.assert_allclose(idft(np.ones(6)), delta(Lattice((6,))), atol=1e-15)

    def test_conjugate_symmetric_spectrum_gives_real(self):
        x = np.random.default_rng(2).standard_normal(16)
        z = idft(dft(x))
        assert np.max(np.abs(z.imag)) < 1e-12
        np.testing.assert_allclose(idft_real(dft(x)), x, atol=1e-12)

    def test_idft_real_rejects_asymmetric(self):
        s = np.zeros(8, dtype=complex)
        s[1] = 1.0
        with pytest.raises(ValueError):
            idft_real(s)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 64).flatmap(vec))
    def test_round_trip_and_parseval(self, x):
        np.testing.assert_allclose(idft(dft(x)).real, x, atol=1e-12 * (1 + np.abs(x).max()))
        assert abs(np.linalg.norm(dft(x)) ** 2 - x.size * np.linalg.norm(x) ** 2) <= 1e-10 * (
            1 + x.size * np.linalg.norm(x) ** 2
        )

    def test_real_spectrum_is_conjugate_symmetric(self):
        x = np.random.default_rng(3).standard_normal((5, 6))
        s = dft(x)
        np.testing.assert_allclose(s, np.conj(mirror(s)), atol=1e-12)


class TestConvolution:
    def test_delta_is_identity(self):
        x = np.random.default_rng(4).standard_normal(7)
        np.testing.assert_allclose(circ_conv(x, delta(Lattice((7,)))), x, atol=1e-14)

    def test_shift_composition(self):
        e2 = delta(Lattice((4,)), 1)
        np.testing.assert_allclose(circ_conv(e2, e2), delta(Lattice((4,)), 2), atol=1e-15)

    def test_matches_dense_circulant(self):
        rng = np.random.default_rng(5)
        x, h = rng.standard_normal(6), rng.standard_normal(6)
        ref = circulant(x) @ h
        assert np.linalg.norm(circ_conv(x, h) - ref) <= 1e-12 * np.linalg.norm(ref)

    def test_complex_matches_dense_circulant(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        h = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        np.testing.assert_allclose(circ_conv(x, h), circulant(x) @ h, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 64).flatmap(lambda n: st.tuples(vec(n), vec(n))))
    def test_convolution_theorem_and_commutativity(self, pair):
        x, h = pair
        err = np.linalg.norm(dft(circ_conv(x, h)) - dft(x) * dft(h))
        assert err <= 1e-10 * (1 + np.linalg.norm(x) * np.linalg.norm(h)) * x.size
        np.testing.assert_allclose(circ_conv(x, h), circ_conv(h, x), atol=1e-9 * (1 + np.abs(x).sum() * np.abs(h).max()))

    def test_bilinear(self):
        rng = np.random.default_rng(7)
        x, y, h = rng.standard_normal((3, 9))
        np.testing.assert_allclose(circ_conv(2 * x - 3 * y, h), 2 * circ_conv(x, h) - 3 * circ_conv(y, h), atol=1e-12)

    def test_batch_axes(self):
        rng = np.random.default_rng(8)
        X, h = rng.standard_normal((5, 8)), rng.standard_normal(8)
        out = circ_conv(X, h)
        for i in range(5):
            np.testing.assert_allclose(out[i], circulant(X[i]) @ h, atol=1e-12)

    def test_2d_separable(self):
        rng = np.random.default_rng(9)
        a1, a2, b1, b2 = rng.standard_normal(5), rng.standard_normal(4), rng.standard_normal(5), rng.standard_normal(4)
        lat = Lattice((5, 4))
        got = circ_conv(np.outer(a1, a2), np.outer(b1, b2), lat)
        want = np.outer(circulant(a1) @ b1, circulant(a2) @ b2)
        np.testing.assert_allclose(got, want, atol=1e-12)


class TestAdjoint:
    def test_first_row_of_circulant(self):
        x = np.arange(1.0, 6.0)
        got = circulant_apply(x, delta(Lattice((5,))), adjoint=True)
        np.testing.assert_allclose(got, [1, 5, 4, 3, 2], atol=1e-14)

    def test_forward_is_convolution(self):
        rng = np.random.default_rng(10)
        x, h = rng.standard_normal((2, 8))
        np.testing.assert_allclose(circulant_apply(x, h), circ_conv(x, h), atol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_adjoint_identity(self, seed):
        rng = np.random.default_rng(seed)
        x, h, g = rng.standard_normal((3, 8))
        lhs = circulant_apply(x, h) @ g
        rhs = h @ circulant_apply(x, g, adjoint=True)
        assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))

    def test_complex_adjoint_matches_conjugate_transpose(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        g = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        np.testing.assert_allclose(circulant_apply(x, g, adjoint=True), circulant(x).conj().T @ g, atol=1e-12)


class TestShift:
    def test_zero_shift(self):
        x = np.random.default_rng(12).standard_normal(6)
        np.testing.assert_array_equal(circ_shift(x, 0), x)

    def test_unit_shift_of_delta(self):
        lat = Lattice((4,))
        np.testing.assert_array_equal(circ_shift(delta(lat), 1), delta(lat, 1))

    def test_equals_convolution_with_shifted_delta(self):
        x = np.random.default_rng(13).standard_normal(10)
        for j in range(-3, 13):
            np.testing.assert_allclose(circ_shift(x, j), circ_conv(x, delta(Lattice((10,)), j % 10)), atol=1e-13)

    @given(st.integers(-50, 50), st.integers(-50, 50))
    def test_group_property(self, a, b):
        x = np.arange(7.0)
        np.testing.assert_array_equal(circ_shift(circ_shift(x, a), b), circ_shift(x, a + b))

    def test_2d_needs_per_axis_offsets(self):
        x = np.zeros((3, 4))
        with pytest.raises(LatticeError):
            circ_shift(x, 1)
        assert circ_shift(x, (1, 2)).shape == (3, 4)
