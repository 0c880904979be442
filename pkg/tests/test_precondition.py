import numpy as np
import pytest

from msbd.fourier import Lattice, circ_conv, circ_shift, dft, idft
from msbd.precondition import (
    Preconditioner,
    RankDeficientError,
    apply_R,
    build_preconditioner,
    estimate_theta,
    precond_gram_residual,
)
from msbd.synthesis import ObservationSet, gen_bernoulli_rademacher_channels, observe, random_instance

from oracles import circulant, dense_preconditioner


def random_obs(n, N, seed, field="real"):
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((N, n))
    if field == "complex":
        Y = Y + 1j * rng.standard_normal((N, n))
    return ObservationSet(Y, Lattice((n,)), field, 0.3)


def dense_R(p):
    return np.column_stack([apply_R(p, np.eye(p.lat.n)[k] + 0j) for k in range(p.lat.n)])


class TestBuild:
    def test_unit_gram_gives_identity(self):
        # One channel with a flat spectrum of height sqrt(theta n N).
        n, theta = 8, 0.25
        y = idft(np.full(n, np.sqrt(theta * n))).real
        p = build_preconditioner(ObservationSet(y[None], Lattice((n,))), theta)
        np.testing.assert_allclose(p.multipliers, 1.0, rtol=1e-12)

    @pytest.mark.parametrize("field", ["real", "complex"])
    def test_matches_dense_eig(self, field):
        obs = random_obs(4, 2, 0, field)
        p = build_preconditioner(obs, 0.3)
        ref = dense_preconditioner(obs.Y, 0.3)
        got = dense_R(p)
        assert np.linalg.norm(got - ref) <= 1e-10 * np.linalg.norm(ref)

    def test_matches_dense_eig_n8(self):
        obs = random_obs(8, 4, 1)
        p = build_preconditioner(obs, 0.3)
        ref = dense_preconditioner(obs.Y, 0.3)
        assert np.linalg.norm(dense_R(p).real - ref) <= 1e-10 * np.linalg.norm(ref)

    def test_converges_to_identity_for_delta_signal(self):
        lat = Lattice((32,))
        X = gen_bernoulli_rademacher_channels(lat, 100_000, 0.1, 4)
        p = build_preconditioner(ObservationSet(X, lat), 0.1)
        assert np.max(np.abs(p.multipliers - 1)) < 0.02

    def test_theta_sources(self):
        obs = random_obs(8, 3, 2)
        assert build_preconditioner(obs, 0.5).theta_source == "given"
        assert build_preconditioner(obs).theta_source == "hint"
        blind = ObservationSet(obs.Y, obs.lat)
        p = build_preconditioner(blind)
        assert p.theta_source == "estimated" and p.theta == estimate_theta(blind)

    def test_estimate_theta(self):
        Y = np.zeros((2, 10))
        Y[0, :3] = [1.0, 0.5, 0.05]
        assert estimate_theta(ObservationSet(Y, Lattice((10,)))) == pytest.approx(2 / 20)

    def test_zero_bin_reports_rank_deficiency(self):
        Y = np.ones((3, 8))
        with pytest.raises(RankDeficientError, match="rank-deficient.*bin \\(1,\\)"):
            build_preconditioner(ObservationSet(Y, Lattice((8,))), 0.1)

    def test_all_zero(self):
        with pytest.raises(RankDeficientError):
            build_preconditioner(ObservationSet(np.zeros((2, 8)), Lattice((8,))))

    def test_multipliers_validated(self):
        with pytest.raises(ValueError):
            Preconditioner(np.array([1.0, 0.0]), 0.1, Lattice((2,)))
        with pytest.raises(ValueError):
            Preconditioner(np.ones(3), 0.1, Lattice((2,)))


class TestApply:
    def test_identity(self):
        h = np.random.default_rng(0).standard_normal(8)
        np.testing.assert_allclose(apply_R(Preconditioner.identity(8), h), h, atol=1e-15)

    def test_twice_is_squared_multipliers(self):
        obs = random_obs(8, 3, 3)
        p = build_preconditioner(obs, 0.3)
        sq = Preconditioner(p.multipliers ** 2, p.theta, p.lat)
        h = np.random.default_rng(1).standard_normal(8)
        np.testing.assert_allclose(apply_R(p, apply_R(p, h)), apply_R(sq, h), atol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_self_adjoint(self, seed):
        obs = random_obs(16, 3, seed)
        p = build_preconditioner(obs, 0.3)
        rng = np.random.default_rng(seed + 10)
        h, g = rng.standard_normal((2, 16))
        assert abs(apply_R(p, h) @ g - h @ apply_R(p, g)) < 1e-12 * (1 + np.linalg.norm(h) * np.linalg.norm(g))

    def test_real_data_gives_real_output(self):
        p = build_preconditioner(random_obs(8, 2, 5), 0.3)
        assert p.is_even and np.isrealobj(apply_R(p, np.ones(8)))

    def test_complex_data_keeps_complex_output(self):
        p = build_preconditioner(random_obs(8, 2, 6, "complex"), 0.3)
        out = apply_R(p, np.ones(8))
        assert not p.is_even
        assert np.iscomplexobj(out)

    def test_lattice_mismatch(self):
        with pytest.raises(ValueError):
            apply_R(Preconditioner.identity(8), np.ones(7))


class TestResidual:
    def test_valid_preconditioner(self):
        obs = random_obs(8, 3, 7)
        p = build_preconditioner(obs, 0.3)
        assert precond_gram_residual(p, obs) < 1e-12

    def test_corrupted_multipliers(self):
        obs = random_obs(8, 3, 7)
        p = build_preconditioner(obs, 0.3)
        bad = Preconditioner(2 * p.multipliers, p.theta, p.lat)
        assert precond_gram_residual(bad, obs) == pytest.approx(3.0)


def test_invariant_under_ambiguity_orbit():
    gt = random_instance(Lattice((32,)), 20, 0.2, 3)
    obs = observe(gt)
    alt_f = circ_shift(gt.f, -5) / -3.0
    alt_X = -3.0 * circ_shift(gt.X, 5, gt.lat)
    obs2 = ObservationSet(circ_conv(alt_X, alt_f, gt.lat), gt.lat, theta_hint=0.2)
    p, p2 = build_preconditioner(obs), build_preconditioner(obs2)
    np.testing.assert_allclose(p.multipliers, p2.multipliers, rtol=1e-10)
    h = np.random.default_rng(0).standard_normal(32)
    a = circ_conv(gt.f, apply_R(p, h))
    b = circ_conv(alt_f, apply_R(p2, h))
    assert np.linalg.norm(b) == pytest.approx(np.linalg.norm(a) / 3.0, rel=1e-10)


def test_circulant_identity_for_average_gram():
    obs = random_obs(6, 3, 8)
    G = sum(circulant(y).T @ circulant(y) for y in obs.Y)
    # The sum of circulant Grams is itself circulant: constant along wrapped diagonals.
    np.testing.assert_allclose(G, circulant(G[:, 0]), atol=1e-12)
    np.testing.assert_allclose(np.linalg.eigvalsh(G), np.sort(np.sum(np.abs(dft(obs.Y, obs.lat)) ** 2, 0)), rtol=1e-10)
