"""Monte-Carlo success grids, the 2-D demo and the property battery.

Every trial draws its randomness from ``cell_seed(master, i, j, trial)``, so
a cell computed alone reproduces its value inside a full grid regardless of
execution order or worker count.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import landscape
from .fourier import Lattice, circ_shift
from .io import atomic_write_text, read_image, write_pgm
from .objective import Objective, real_inner, tangent_project
from .optimize import OptimizerConfig, Trace, practical_schedule, random_sphere_init, run
from .precondition import build_preconditioner, precond_gram_residual
from .recovery import (
    ACCURACY_THRESHOLD,
    SPECTRAL_RATIO_THRESHOLD,
    accuracy_metric,
    align,
    recover,
    spectral_ratio_metric,
)
from .synthesis import (
    MAX_REDRAWS,
    GroundTruthInstance,
    NoiseSpec,
    builtin_pattern,
    condition_number,
    embed_linear_conv,
    gen_bernoulli_rademacher_channels,
    gen_complex_gaussian_signal,
    gen_joint_sparse_complex,
    gen_sparse_gaussian_channels,
    gen_template_channels,
    make_rng,
    observe,
    random_instance,
    spectrum_is_invertible,
)

__all__ = [
    "GRID_HEADER",
    "KIND_AXES",
    "KIND_DEFAULTS",
    "cell_seed",
    "resolve_threads",
    "ExperimentGrid",
    "CellResult",
    "ResultGrid",
    "TrialResult",
    "run_trial",
    "run_grid",
    "Demo2DResult",
    "demo2d",
    "Check",
    "VerifyReport",
    "verify_battery",
]

# Seed of the reference demo run; other seeds converge too but some cross
# the 0.5 accuracy level after t = 100.
DEMO_SEED = 1

GRID_HEADER = ("axis1", "axis2", "trials", "successes", "mean_accuracy", "mean_seconds")

KIND_AXES = {
    "real": ("n", "N", "theta", "kappa"),
    "complex": ("n", "N", "s"),
    "linear": ("n", "N", "s", "m"),
}

KIND_DEFAULTS = {
    "real": dict(n=128, N=256, theta=0.1, kappa=None, noise="none"),
    "complex": dict(n=128, N=64, s=4),
    "linear": dict(n=128, N=64, s=4, m=64),
}


def cell_seed(master: int, i: int, j: int, trial: int) -> int:
    """Order-free 63-bit seed for one trial of cell ``(i, j)``."""
    state = np.random.SeedSequence([int(master), int(i), int(j), int(trial)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def resolve_threads(threads: Optional[int] = None) -> int:
    """``--threads`` if given, else ``MSBD_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("MSBD_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return int(threads)


@dataclass
class TrialResult:
    success: bool
    metric: float
    seconds: float


def _optimizer(params: dict, seed: int, ndim: int = 1) -> OptimizerConfig:
    preset = params.get("preset")
    common = dict(T=int(params.get("T", 100)), seed=seed)
    if params.get("gamma") is not None:
        common["gamma"] = float(params["gamma"])
    if preset:
        common.setdefault("gamma", 0.1)
        return OptimizerConfig.preset(preset, **common)
    return practical_schedule(ndim, **common)


def _linear_instance(X_prime, n, m, s, seed):
    for attempt in range(MAX_REDRAWS):
        f_prime = make_rng(seed + attempt, 0).standard_normal(n - m + 1)
        gt = embed_linear_conv(X_prime, f_prime, n, theta=s / n, seed=seed)
        if spectrum_is_invertible(gt.f, gt.lat):
            return gt
    raise RuntimeError(f"no invertible padded signal after {MAX_REDRAWS} redraws from seed {seed}")


def run_trial(kind: str, params: dict, seed: int) -> TrialResult:
    """One synthetic instance, one solve, one success decision."""
    start = time.perf_counter()
    n = int(params["n"])
    N = int(params["N"])
    lat = Lattice((n,))
    if kind == "real":
        theta = float(params["theta"])
        kappa = params.get("kappa")
        gt = random_instance(lat, N, theta, seed, None if kappa is None else float(kappa))
        noise = NoiseSpec.preset(params.get("noise") or "none", n, theta)
        obs = observe(gt, noise)
        p = build_preconditioner(obs)
        h, _ = run(Objective(obs, p), random_sphere_init(lat, seed), _optimizer(params, seed))
        metric = accuracy_metric(gt, p, h)
        success = metric > ACCURACY_THRESHOLD
    elif kind in ("complex", "linear"):
        s = int(params["s"])
        if kind == "complex":
            f = gen_complex_gaussian_signal(lat, seed)
            X = gen_joint_sparse_complex(lat, N, s, seed)
            gt = GroundTruthInstance(f, X, lat, "complex", s / n, seed)
        else:
            m = int(params["m"])
            if not s <= m <= n:
                raise ValueError(f"linear experiments need s <= m <= n, got s={s}, m={m}, n={n}")
            X_prime = gen_sparse_gaussian_channels(m, N, s, seed)
            gt = _linear_instance(X_prime, n, m, s, seed)
        obs = observe(gt)
        p = build_preconditioner(obs)
        h, _ = run(Objective(obs, p), random_sphere_init(lat, seed, gt.field), _optimizer(params, seed))
        try:
            metric = spectral_ratio_metric(gt.f, recover(obs, p, h).f_hat, lat)
        except ValueError:
            metric = 0.0
        success = metric > SPECTRAL_RATIO_THRESHOLD
    else:
        raise ValueError(f"unknown experiment kind {kind!r}; choose from {sorted(KIND_AXES)}")
    return TrialResult(bool(success), float(metric), time.perf_counter() - start)


@dataclass
class ExperimentGrid:
    """Two swept axes, fixed parameters, trials per cell and a master seed."""

    kind: str = "real"
    axis1: str = "n"
    values1: list = field(default_factory=list)
    axis2: str = "N"
    values2: list = field(default_factory=list)
    trials: int = 20
    fixed: dict = field(default_factory=dict)
    master_seed: int = 0

    def __post_init__(self):
        if self.kind not in KIND_AXES:
            raise ValueError(f"unknown experiment kind {self.kind!r}; choose from {sorted(KIND_AXES)}")
        allowed = KIND_AXES[self.kind]
        for ax in (self.axis1, self.axis2):
            if ax not in allowed:
                raise ValueError(
                    f"invalid axis combination: {ax!r} is not an axis of {self.kind!r} experiments "
                    f"(allowed: {', '.join(allowed)})"
                )
        if self.axis1 == self.axis2:
            raise ValueError(f"invalid axis combination: both axes are {self.axis1!r}")
        if self.trials < 0:
            raise ValueError(f"trials must be >= 0, got {self.trials}")
        unknown = set(self.fixed) - set(KIND_DEFAULTS[self.kind]) - {"T", "gamma", "preset", "mode"}
        if unknown:
            raise ValueError(f"unknown fixed parameters for {self.kind!r}: {sorted(unknown)}")
        noise = self.fixed.get("noise", "none")
        if noise not in (None, "none", "40dB", "20dB"):
            raise ValueError(f"noise must be one of none, 40dB, 20dB; got {noise!r}")
        if self.kind != "real" and noise not in (None, "none"):
            raise ValueError("noise presets apply to real experiments only")

    def params(self, i: int, j: int) -> dict:
        p = dict(KIND_DEFAULTS[self.kind])
        p.update(self.fixed)
        p[self.axis1] = self.values1[i]
        p[self.axis2] = self.values2[j]
        return p

    def cells(self):
        for i in range(len(self.values1)):
            for j in range(len(self.values2)):
                yield i, j


@dataclass
class CellResult:
    value1: object
    value2: object
    trials: int
    successes: int
    mean_accuracy: float
    mean_seconds: float

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else float("nan")


@dataclass
class ResultGrid:
    grid: ExperimentGrid
    cells: list = field(default_factory=list)

    def rate(self, value1, value2) -> float:
        for c in self.cells:
            if c.value1 == value1 and c.value2 == value2:
                return c.rate
        raise KeyError((value1, value2))

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for c in self.cells:
            w.writerow([c.value1, c.value2, c.trials, c.successes,
                        repr(c.mean_accuracy), repr(c.mean_seconds)])
        return buf.getvalue()

    def write(self, path, config: Optional[dict] = None) -> None:
        """Grid CSV plus a ``.meta.json`` sidecar echoing the effective config."""
        path = Path(path)
        atomic_write_text(path, self.to_csv())
        meta = {"axes": [self.grid.axis1, self.grid.axis2], "grid": asdict(self.grid),
                "config": config or {}}
        atomic_write_text(str(path) + ".meta.json", json.dumps(meta, indent=2, sort_keys=True, default=str))


def _trial_job(args):
    kind, params, seed = args
    return run_trial(kind, params, seed)


def run_grid(grid: ExperimentGrid, threads: Optional[int] = None, progress: Optional[Callable] = None) -> ResultGrid:
    """Run every trial of every cell; aggregation order is fixed."""
    jobs = []
    index = []
    for i, j in grid.cells():
        params = grid.params(i, j)
        for t in range(grid.trials):
            jobs.append((grid.kind, params, cell_seed(grid.master_seed, i, j, t)))
            index.append((i, j))
    workers = resolve_threads(threads)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_job, jobs))
    else:
        results = []
        for k, job in enumerate(jobs):
            results.append(_trial_job(job))
            if progress is not None:
                progress(k + 1, len(jobs))
    out = ResultGrid(grid)
    by_cell = {}
    for key, res in zip(index, results):
        by_cell.setdefault(key, []).append(res)
    for i, j in grid.cells():
        rs = by_cell.get((i, j), [])
        out.cells.append(CellResult(
            grid.values1[i], grid.values2[j], len(rs), sum(r.success for r in rs),
            float(np.mean([r.metric for r in rs])) if rs else float("nan"),
            float(np.mean([r.seconds for r in rs])) if rs else float("nan"),
        ))
    return out


# -- 2-D demo ----------------------------------------------------------------


@dataclass
class Demo2DResult:
    accuracy: float
    crossing: Optional[int]
    trace: Trace
    f: np.ndarray
    f_hat: np.ndarray
    f_corrected: np.ndarray
    observation: np.ndarray
    sign: int
    shift: tuple
    signal_error: float


def first_crossing(trace: Trace, level: float = 0.5) -> Optional[int]:
    """First recorded iteration whose accuracy exceeds ``level``."""
    for r in trace.records:
        if r.accuracy is not None and r.accuracy > level:
            return r.t
    return None


def demo2d(
    image=None,
    N: int = 256,
    theta: float = 0.01,
    T: int = 100,
    gamma: float = 0.05,
    seed: int = DEMO_SEED,
    channel_template=None,
    outdir=None,
) -> Demo2DResult:
    """Blind image deconvolution with sparse 2-D channels.

    Args:
        image: 2-D array or path (``.pgm``/``.npy``); defaults to the built-in
            64x64 pattern. It plays the role of the unknown signal.
        channel_template: optional image whose values fill the sparse channel
            support; Bernoulli-Rademacher channels otherwise.
        outdir: when given, writes ``f.pgm``, ``y0.pgm``, ``f_hat.pgm``,
            ``f_corrected.pgm``, ``trace.csv`` and ``summary.json``.
    """
    if image is None:
        f = builtin_pattern((64, 64))
    elif isinstance(image, (str, os.PathLike)):
        f = read_image(image)
    else:
        f = np.asarray(image, dtype=float)
    if f.ndim != 2 or f.shape[0] > 128 or f.shape[1] > 128:
        raise ValueError(f"image must be 2-D and at most 128x128, got shape {f.shape}")
    lat = Lattice(f.shape)
    if channel_template is not None:
        tmpl = read_image(channel_template) if isinstance(channel_template, (str, os.PathLike)) else channel_template
        tmpl = np.asarray(tmpl, dtype=float)
        if tmpl.shape != f.shape:
            raise ValueError(f"channel template shape {tmpl.shape} != image shape {f.shape}")
        X = gen_template_channels(tmpl, N, theta, seed)
    else:
        X = gen_bernoulli_rademacher_channels(lat, N, theta, seed)
    gt = GroundTruthInstance(f, X, lat, "real", theta, seed, condition_number(f, lat))
    obs = observe(gt)
    p = build_preconditioner(obs)
    cfg = OptimizerConfig(mode="mgd", gamma=gamma, T=T, seed=seed)
    h, trace = run(Objective(obs, p), random_sphere_init(lat, seed), cfg, ground_truth=gt)
    rec = recover(obs, p, h)
    al = align(gt, rec)
    f_corrected = al.sign * circ_shift(rec.f_hat, al.shift, lat)
    result = Demo2DResult(
        accuracy=accuracy_metric(gt, p, h), crossing=first_crossing(trace), trace=trace,
        f=f, f_hat=rec.f_hat, f_corrected=f_corrected, observation=obs.Y[0],
        sign=al.sign, shift=al.shift, signal_error=al.signal_error,
    )
    if outdir is not None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        write_pgm(out / "f.pgm", f)
        write_pgm(out / "y0.pgm", obs.Y[0])
        write_pgm(out / "f_hat.pgm", rec.f_hat)
        write_pgm(out / "f_corrected.pgm", f_corrected)
        buf = _io.StringIO()
        trace.write_csv(buf)
        atomic_write_text(out / "trace.csv", buf.getvalue())
        summary = dict(accuracy=result.accuracy, crossing=result.crossing, sign=al.sign,
                       shift=list(al.shift), signal_error=al.signal_error,
                       config=dict(N=N, theta=theta, T=T, gamma=gamma, seed=seed, dims=list(f.shape)))
        atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True))
    return result


# -- verification battery ------------------------------------------------------


@dataclass
class Check:
    name: str
    ok: bool
    margin: float
    detail: str = ""


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def add(self, name, ok, margin, detail=""):
        self.checks.append(Check(name, bool(ok), float(margin), detail))

    def lines(self):
        for c in self.checks:
            yield f"{'PASS' if c.ok else 'FAIL'}  {c.name:<38s} margin={c.margin:+.3e}  {c.detail}"


def _expected_value(h, n, theta):
    """Expected objective whose gradient is :func:`landscape.expected_egrad`."""
    return -0.25 * n * theta * (1 - 3 * theta) * np.sum(h ** 4) - 0.75 * n * theta ** 2 * np.sum(h ** 2)


def _unit(rng, n):
    z = rng.standard_normal(n)
    return z / np.linalg.norm(z)


def verify_battery(
    seed: int = 0,
    expected_rgrad: Callable = landscape.expected_rgrad,
    samples: int = 10_000,
    mc_channels: int = 20_000,
) -> VerifyReport:
    """Run the property checks at fixed seeds.

    ``expected_rgrad`` is injectable so that a corrupted closed form can be
    shown to make the battery fail.
    """
    rep = VerifyReport()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))

    # Closed-form gradient against finite differences of the expected objective.
    n, theta = 8, 0.2
    worst = 0.0
    for _ in range(10):
        h = _unit(rng, n)
        g = expected_rgrad(h, n, theta)
        for _ in range(5):
            z = tangent_project(h, rng.standard_normal(n))
            z /= np.linalg.norm(z)
            eps = 1e-5
            fd = (_expected_value((h + eps * z) / np.linalg.norm(h + eps * z), n, theta)
                  - _expected_value((h - eps * z) / np.linalg.norm(h - eps * z), n, theta)) / (2 * eps)
            worst = max(worst, abs(fd - g @ z) / max(np.linalg.norm(g), 1e-12))
    rep.add("expected gradient vs finite differences", worst < 1e-6, 1e-6 - worst, f"max rel err {worst:.2e}")

    # Closed-form gradient against a Monte-Carlo mean.
    h = np.array([5, 1, 0, -1, -1, -1, 0, 1.0])
    h /= np.linalg.norm(h)
    mc = landscape.monte_carlo_expectation_check(h, n, theta, mc_channels, seed)
    dev = float(np.linalg.norm(mc.mean_rgrad - expected_rgrad(h, n, theta)))
    tol = 5 * mc.rgrad_stderr
    rep.add("expected gradient vs Monte Carlo", dev < tol, tol - dev,
            f"deviation {dev:.4f} vs 5 standard errors {tol:.4f} ({mc_channels} channels)")

    # Stationary points: zero gradient and exact curvature.
    n6, th6 = 6, 0.15
    scale = n6 * th6 * (1 - 3 * th6)
    worst_g = worst_c = 0.0
    points = landscape.enumerate_stationary_points(n6, theta=th6)
    for sp in points:
        worst_g = max(worst_g, float(np.linalg.norm(expected_rgrad(sp.h0, n6, th6))))
        c, _ = landscape.tangent_min_eig(landscape.expected_rhess(sp.h0, n6, th6), sp.h0)
        want = scale if sp.r == 1 else -2 * scale / sp.r
        worst_c = max(worst_c, abs(c - want))
    rep.add("stationary points have zero gradient", worst_g < 1e-12, 1e-12 - worst_g, f"{len(points)} points")
    rep.add("stationary-point curvature", worst_c < 1e-9, 1e-9 - worst_c, f"max dev {worst_c:.1e}")

    # Region bounds on uniform samples plus points inside each neighborhood.
    params = landscape.LandscapeParams(n6, th6, 5e-4)
    S = rng.standard_normal((samples, n6))
    S /= np.linalg.norm(S, axis=1, keepdims=True)
    near = []
    for sp in [q for q in points if q.r == 1] + points[:: max(1, len(points) // 50)]:
        z = tangent_project(sp.h0, rng.standard_normal(n6))
        h = sp.h0 + 1e-4 / sp.r * z / np.linalg.norm(z)
        near.append(h / np.linalg.norm(h))
    pr = landscape.verify_partition_bounds(np.vstack([S, near]), params, rgrad=expected_rgrad)
    margin = min(v for v in pr.min_margin.values() if np.isfinite(v))
    counts = ", ".join(f"{k.value}={v}" for k, v in pr.counts.items())
    rep.add("region bounds", pr.ok, margin, f"{pr.violations} violations ({counts})")

    # Finite-sample objective: gradient and HVP against finite differences.
    n16, N8 = 16, 8
    gt = random_instance(Lattice((n16,)), N8, 0.2, seed)
    obs = observe(gt)
    p = build_preconditioner(obs)
    obj = Objective(obs, p)
    worst_g = worst_h = 0.0
    for k in range(20):
        h = random_sphere_init(obs.lat, seed + 1000 + k)
        ev = obj.evaluate(h)
        z = tangent_project(h, rng.standard_normal(n16))
        z /= np.linalg.norm(z)
        eps = 1e-5
        hp = (h + eps * z) / np.linalg.norm(h + eps * z)
        hm = (h - eps * z) / np.linalg.norm(h - eps * z)
        fd = (obj.value(hp) - obj.value(hm)) / (2 * eps)
        worst_g = max(worst_g, abs(fd - real_inner(ev.rgrad, z)) / max(abs(fd), ev.rgrad_norm))
        # Curve t -> cos(t) h + sin(t) z stays on the sphere with zero acceleration
        # in the tangent space, so d/dt <rgrad, z(t)> at 0 equals <Hess z, z>.
        def dd(t):
            ht = math.cos(t) * h + math.sin(t) * z
            zt = -math.sin(t) * h + math.cos(t) * z
            return real_inner(obj.evaluate(ht).rgrad, zt)
        fd2 = (dd(eps) - dd(-eps)) / (2 * eps)
        quad = real_inner(z, obj.hvp(h, z, ev))
        worst_h = max(worst_h, abs(fd2 - quad) / max(abs(quad), 1e-3))
    rep.add("gradient vs finite differences", worst_g < 1e-6, 1e-6 - worst_g, f"max rel err {worst_g:.2e}")
    rep.add("Hessian vs finite differences", worst_h < 1e-5, 1e-5 - worst_h, f"max rel err {worst_h:.2e}")

    # Uniform bounds on value, gradient and curvature (random instances, N = 4n).
    n8 = 8
    worst_v = worst_gr = worst_c = math.inf
    for k in range(10):
        gt = random_instance(Lattice((n8,)), 4 * n8, 0.2, seed + 10 + k)
        obs = observe(gt)
        p = build_preconditioner(obs)
        obj = Objective(obs, p)
        for m in range(5):
            h = random_sphere_init(obs.lat, seed + 100 * k + m)
            ev = obj.evaluate(h)
            worst_v = min(worst_v, ev.value + 4 * n8 ** 3, -ev.value)
            worst_gr = min(worst_gr, 16 * n8 ** 3 - float(np.linalg.norm(ev.egrad)))
            z = tangent_project(h, rng.standard_normal(n8))
            z /= np.linalg.norm(z)
            worst_c = min(worst_c, 64 * n8 ** 3 - abs(real_inner(z, obj.hvp(h, z, ev))))
    rep.add("objective within [-4n^3, 0]", worst_v >= 0, worst_v, "10 instances x 5 points")
    rep.add("gradient norm <= 16n^3", worst_gr >= 0, worst_gr)
    rep.add("|curvature| <= 64n^3", worst_c >= 0, worst_c)

    # Sufficient decrease under the small step size.
    worst_d = math.inf
    gamma = 1.0 / (128 * n8 ** 3)
    for k in range(3):
        gt = random_instance(Lattice((n8,)), 4 * n8, 0.2, seed + 50 + k)
        obs = observe(gt)
        obj = Objective(obs, build_preconditioner(obs))
        h = random_sphere_init(obs.lat, seed + 50 + k)
        for _ in range(50):
            ev = obj.evaluate(h)
            h_next = h - gamma * ev.rgrad
            h_next /= np.linalg.norm(h_next)
            bound = -(0.0038 / n8 ** 3) * ev.rgrad_norm ** 2
            worst_d = min(worst_d, bound - (obj.value(h_next) - ev.value))
            h = h_next
    rep.add("sufficient decrease per step", worst_d >= 0, worst_d, "3 instances x 50 steps")

    # Preconditioner reproduces the inverse Gram.
    res = precond_gram_residual(obj.p, obs)
    rep.add("preconditioner Gram residual", res < 1e-10, 1e-10 - res, f"residual {res:.1e}")
    return rep
