import io
import math

import numpy as np
import pytest

from msbd.fourier import Lattice, delta
from msbd.objective import Objective, tangent_project
from msbd.optimize import (
    PMGD_PRESETS,
    OptimizerConfig,
    Trace,
    mgd_step,
    practical_schedule,
    random_sphere_init,
    run,
    tangent_perturbation,
    theoretical_iterations,
    theoretical_schedule,
)
from msbd.precondition import build_preconditioner
from msbd.synthesis import ObservationSet, observe, random_instance

from oracles import sphere


def objective(n=32, N=16, theta=0.2, seed=0):
    gt = random_instance(Lattice((n,)), N, theta, seed)
    obs = observe(gt)
    return Objective(obs, build_preconditioner(obs)), gt


class TestConfig:
    def test_defaults_are_mgd(self):
        cfg = practical_schedule()
        assert cfg.mode == "mgd" and cfg.gamma == 0.1 and cfg.T == 100
        assert practical_schedule(2).gamma == 0.05

    @pytest.mark.parametrize("kw", [dict(gamma=0), dict(T=-1), dict(T=1.5), dict(mode="sgd"), dict(record_every=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            OptimizerConfig(**kw)

    @pytest.mark.parametrize("kw", [dict(perturb_radius=0.0), dict(perturb_radius=1.0),
                                    dict(perturb_radius=0.1, perturb_interval=0.5),
                                    dict(perturb_radius=0.1, grad_tolerance=-1.0)])
    def test_invalid_pmgd(self, kw):
        with pytest.raises(ValueError):
            OptimizerConfig(mode="pmgd", **kw)

    def test_presets(self):
        for name, (radius, tol) in PMGD_PRESETS.items():
            cfg = OptimizerConfig.preset(name, T=5)
            assert cfg.mode == "pmgd" and cfg.perturb_radius == radius and cfg.grad_tolerance == tol and cfg.T == 5
        with pytest.raises(ValueError, match="preset"):
            OptimizerConfig.preset("D9c9")


class TestSchedule:
    def test_worked_values(self):
        rho = 5e-4
        cfg = theoretical_schedule(8, 0.1, rho)
        assert cfg.gamma == 1 / 65536
        assert cfg.grad_tolerance == pytest.approx(0.1 * 0.7 * rho ** 2 / 16, rel=1e-12)
        assert cfg.perturb_interval * cfg.gamma * 0.1 * 0.7 == pytest.approx(700 * math.log(8) / 3200, rel=1e-12)
        assert cfg.perturb_radius == pytest.approx(0.07 ** 2 / (700 ** 2 * 8 ** 6 * math.log(8) ** 2), rel=1e-12)

    def test_capped(self):
        cfg = theoretical_schedule(8, 0.1, 5e-4, T_cap=123)
        assert cfg.T == 123 and cfg.capped
        assert theoretical_iterations(8, 0.1, 5e-4) > 1e20

    @pytest.mark.parametrize("n,theta,rho", [(8, 1 / 3, 5e-4), (8, 0.0, 5e-4), (1, 0.1, 5e-4), (8, 0.1, 2e-3), (8, 0.1, 0.0)])
    def test_rejected(self, n, theta, rho):
        with pytest.raises(ValueError):
            theoretical_schedule(n, theta, rho)

    def test_xi_bound(self):
        with pytest.raises(ValueError, match="xi"):
            theoretical_schedule(8, 0.1, 5e-4, xi=600)


class TestInit:
    def test_unit_norm_and_seeded(self):
        a, b = random_sphere_init(16, 0), random_sphere_init(16, 1)
        assert abs(np.linalg.norm(a) - 1) < 1e-12
        assert not np.allclose(a, b)
        np.testing.assert_array_equal(a, random_sphere_init(16, 0))

    def test_complex(self):
        h = random_sphere_init(16, 0, "complex")
        assert np.iscomplexobj(h) and abs(np.linalg.norm(h) - 1) < 1e-12

    def test_uniform_mean(self):
        draws = np.array([random_sphere_init(8, s) for s in range(100_000)])
        assert np.linalg.norm(draws.mean(0)) < 0.02
        np.testing.assert_allclose(draws.T @ draws / len(draws), np.eye(8) / 8, atol=0.005)


class TestPerturbation:
    def test_norm_and_tangency(self):
        h = sphere(np.random.default_rng(0), 10)
        z = tangent_perturbation(h, 0.3, 1)
        assert abs(np.linalg.norm(z) - 0.3) < 1e-12
        assert abs(z @ h) < 1e-12
        assert abs(np.linalg.norm(math.sqrt(1 - 0.09) * h + z) - 1) < 1e-12

    @pytest.mark.parametrize("radius", [0.0, 1.0, 1.5])
    def test_radius_range(self, radius):
        with pytest.raises(ValueError):
            tangent_perturbation(np.eye(4)[0], radius, 0)

    def test_isotropic(self):
        n, radius = 6, 0.5
        h = sphere(np.random.default_rng(1), n)
        rng = np.random.default_rng(2)
        Z = np.array([tangent_perturbation(h, radius, rng) for _ in range(100_000)])
        cov = Z.T @ Z / len(Z)
        P = np.eye(n) - np.outer(h, h)
        target = radius ** 2 * P / (n - 1)
        assert np.linalg.norm(cov - target) <= 0.03 * np.linalg.norm(target)


class TestStep:
    def test_fixed_point(self):
        lat = Lattice((8,))
        obs = ObservationSet(delta(lat)[None], lat, theta_hint=0.3)
        obj = Objective(obs, build_preconditioner(obs))
        h = np.eye(8)[0]
        np.testing.assert_allclose(mgd_step(obj, h, 0.1), h, atol=1e-12)

    def test_unit_norm(self):
        obj, _ = objective()
        h = mgd_step(obj, sphere(np.random.default_rng(0), 32), 0.1)
        assert abs(np.linalg.norm(h) - 1) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_sufficient_decrease(self, seed):
        n = 8
        obj, _ = objective(n, 32, 0.2, seed)
        gamma = 1 / (128 * n ** 3)
        h = sphere(np.random.default_rng(seed), n)
        for _ in range(20):
            ev = obj.evaluate(h)
            h = mgd_step(obj, h, gamma, ev)
            assert obj.value(h) - ev.value <= -(0.0038 / n ** 3) * ev.rgrad_norm ** 2 + 1e-15

    def test_monotone_descent_n16(self):
        n = 16
        obj, _ = objective(n, 32, 0.2, 3)
        _, trace = run(obj, random_sphere_init(n, 0), OptimizerConfig(gamma=1 / (128 * n ** 3), T=200))
        assert np.all(np.diff(trace.column("objective")) <= 1e-15)


class TestRun:
    def test_zero_iterations(self):
        obj, _ = objective()
        h0 = random_sphere_init(32, 0)
        h, trace = run(obj, h0, OptimizerConfig(T=0))
        np.testing.assert_array_equal(h, h0)
        assert len(trace) == 1 and trace.records[0].t == 0

    def test_pmgd_without_tolerance_matches_mgd(self):
        obj, _ = objective()
        h0 = random_sphere_init(32, 0)
        a, ta = run(obj, h0, OptimizerConfig(T=30, seed=4))
        b, tb = run(obj, h0, OptimizerConfig(mode="pmgd", T=30, perturb_radius=0.3, perturb_interval=1,
                                             grad_tolerance=0.0, seed=4))
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(ta.column("objective"), tb.column("objective"))
        assert tb.perturbations == 0

    def test_perturbation_count_bound(self):
        obj, _ = objective()
        cfg = OptimizerConfig(mode="pmgd", T=100, perturb_radius=0.2, perturb_interval=7, grad_tolerance=1e9)
        _, trace = run(obj, random_sphere_init(32, 0), cfg)
        assert 0 < trace.perturbations <= math.ceil(cfg.T / cfg.perturb_interval)
        steps = [r.t for r in trace if r.perturbed]
        assert np.all(np.diff(steps) > cfg.perturb_interval)

    def test_deterministic(self):
        obj, gt = objective()
        cfg = OptimizerConfig.preset("D0.2c0.5", T=60, seed=9)
        h1, t1 = run(obj, random_sphere_init(32, 2), cfg, gt)
        h2, t2 = run(obj, random_sphere_init(32, 2), cfg, gt)
        np.testing.assert_array_equal(h1, h2)
        assert t1.records == t2.records

    def test_trace_stride(self):
        obj, gt = objective()
        _, trace = run(obj, random_sphere_init(32, 0), OptimizerConfig(T=10, record_every=3), gt)
        assert [r.t for r in trace] == [0, 3, 6, 9, 10]
        assert all(r.accuracy is not None for r in trace)

    def test_converges(self):
        obj, gt = objective(64, 128, 0.1, 1)
        _, trace = run(obj, random_sphere_init(64, 0), practical_schedule(), gt)
        assert trace.records[-1].accuracy > 0.95
        assert trace.records[-1].grad_norm < trace.records[0].grad_norm

    def test_rejects_off_sphere_start(self):
        obj, _ = objective()
        with pytest.raises(ValueError):
            run(obj, np.ones(32), practical_schedule())

    def test_trace_csv_round_trip(self):
        obj, gt = objective()
        _, trace = run(obj, random_sphere_init(32, 0), OptimizerConfig.preset("D0.4c1", T=25), gt)
        buf = io.StringIO()
        trace.write_csv(buf)
        assert buf.getvalue().splitlines()[0] == "t,objective,grad_norm,perturbed,accuracy"
        buf.seek(0)
        assert Trace.read_csv(buf).records == trace.records

    def test_trace_csv_rejects_other_header(self):
        with pytest.raises(ValueError):
            Trace.read_csv(io.StringIO("a,b\n1,2\n"))


def test_perturbed_iterate_stays_on_sphere():
    obj, _ = objective()
    h = random_sphere_init(32, 0)
    z = tangent_perturbation(h, 0.4, 0)
    g = math.sqrt(1 - 0.16) * h + z
    assert abs(np.linalg.norm(g) - 1) < 1e-12
    assert np.allclose(tangent_project(h, z), z)
    obj.check_point(g)
