"""Manifold gradient descent on the sphere, with optional tangent perturbations."""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fourier import Lattice
from .objective import Evaluation, Objective, tangent_project
from .synthesis import GroundTruthInstance, make_rng

__all__ = [
    "OptimizerConfig",
    "TraceRecord",
    "Trace",
    "PMGD_PRESETS",
    "mgd_step",
    "run",
    "random_sphere_init",
    "tangent_perturbation",
    "practical_schedule",
    "theoretical_schedule",
    "theoretical_iterations",
]

# (radius, tolerance) pairs compared against plain MGD at n=128, N=256,
# theta=0.1 with a perturbation interval of 10 iterations.
PMGD_PRESETS = {
    "D0.04c0.1": (0.04, 0.1),
    "D0.08c0.2": (0.08, 0.2),
    "D0.2c0.5": (0.2, 0.5),
    "D0.4c1": (0.4, 1.0),
}
PMGD_PRESET_INTERVAL = 10

TRACE_HEADER = ("t", "objective", "grad_norm", "perturbed", "accuracy")


@dataclass(frozen=True)
class OptimizerConfig:
    """Parameters of a (perturbed) manifold gradient descent run.

    ``mode="mgd"`` ignores the perturbation fields. In ``"pmgd"`` mode a
    perturbation of norm ``perturb_radius`` is injected whenever the
    Riemannian gradient norm drops below ``grad_tolerance`` and more than
    ``perturb_interval`` iterations have passed since the last one.
    """

    mode: str = "mgd"
    gamma: float = 0.1
    T: int = 100
    perturb_radius: float = 0.0
    perturb_interval: float = PMGD_PRESET_INTERVAL
    grad_tolerance: float = 0.0
    seed: int = 0
    record_every: int = 1
    early_exit_tol: Optional[float] = None
    capped: bool = False

    def __post_init__(self):
        if self.mode not in ("mgd", "pmgd"):
            raise ValueError(f"mode must be 'mgd' or 'pmgd', got {self.mode!r}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.T < 0 or int(self.T) != self.T:
            raise ValueError(f"T must be a non-negative integer, got {self.T}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.mode == "pmgd":
            if not 0 < self.perturb_radius < 1:
                raise ValueError(f"perturb_radius must lie in (0, 1), got {self.perturb_radius}")
            if not self.perturb_interval >= 1:
                raise ValueError(f"perturb_interval must be >= 1, got {self.perturb_interval}")
            if not self.grad_tolerance >= 0:
                raise ValueError(f"grad_tolerance must be >= 0, got {self.grad_tolerance}")

    @classmethod
    def preset(cls, name: str, **overrides) -> "OptimizerConfig":
        """PMGD configuration from one of :data:`PMGD_PRESETS`."""
        try:
            radius, tol = PMGD_PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown PMGD preset {name!r}; choose from {sorted(PMGD_PRESETS)}")
        base = dict(mode="pmgd", perturb_radius=radius, grad_tolerance=tol,
                    perturb_interval=PMGD_PRESET_INTERVAL)
        base.update(overrides)
        return cls(**base)


@dataclass
class TraceRecord:
    t: int
    objective: float
    grad_norm: float
    perturbed: bool
    accuracy: Optional[float] = None


@dataclass
class Trace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def perturbations(self) -> int:
        return sum(r.perturbed for r in self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in self.records:
            acc = "" if r.accuracy is None else repr(float(r.accuracy))
            w.writerow([r.t, repr(r.objective), repr(r.grad_norm), int(r.perturbed), acc])

    @classmethod
    def read_csv(cls, fh) -> "Trace":
        rows = csv.DictReader(fh)
        if tuple(rows.fieldnames or ()) != TRACE_HEADER:
            raise ValueError(f"not a trace CSV: header {rows.fieldnames}")
        return cls([
            TraceRecord(int(r["t"]), float(r["objective"]), float(r["grad_norm"]),
                        bool(int(r["perturbed"])), float(r["accuracy"]) if r["accuracy"] else None)
            for r in rows
        ])


def random_sphere_init(lat, seed: int, field: str = "real") -> np.ndarray:
    """Uniform point on the sphere (``S^(2n-1)`` for complex iterates)."""
    lat = Lattice.coerce(lat)
    rng = make_rng(seed, 3)
    if field == "complex":
        g = rng.standard_normal((2,) + lat.dims)
        h = g[0] + 1j * g[1]
    else:
        h = rng.standard_normal(lat.dims)
    return h / np.linalg.norm(h)


def tangent_perturbation(h, radius: float, rng) -> np.ndarray:
    """Uniform vector of norm ``radius`` in the tangent space at ``h``.

    ``rng`` is a generator or an integer seed.
    """
    if not 0 < radius < 1:
        raise ValueError(f"radius must lie in (0, 1), got {radius}")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng, 4)
    z = rng.standard_normal(np.shape(h))
    if np.iscomplexobj(h):
        z = z + 1j * rng.standard_normal(np.shape(h))
    z = tangent_project(h, z)
    z = tangent_project(h, z)
    return radius * z / np.linalg.norm(z)


def mgd_step(obj: Objective, h, gamma: float, ev: Optional[Evaluation] = None) -> np.ndarray:
    """One retracted step ``normalize(h - gamma * rgrad(h))``."""
    if ev is None:
        ev = obj.evaluate(h)
    step = ev.h - gamma * ev.rgrad
    norm = np.linalg.norm(step)
    if not norm > 0:
        raise FloatingPointError("gradient step landed on the origin")
    return step / norm


def run(
    obj: Objective,
    h0,
    cfg: OptimizerConfig,
    ground_truth: Optional[GroundTruthInstance] = None,
):
    """Run ``cfg.T`` iterations from ``h0``.

    Returns the final iterate and a :class:`Trace` holding one record every
    ``cfg.record_every`` iterations plus one for the final iterate. Each
    record describes the iterate ``h^(t)`` before its update; ``perturbed``
    marks the iterations where a perturbation was injected. When
    ``ground_truth`` is given, records also carry the accuracy metric.
    """
    accuracy = None
    if ground_truth is not None:
        from .recovery import accuracy_metric

        accuracy = functools.partial(accuracy_metric, ground_truth, obj.p)

    rng = make_rng(cfg.seed, 5)
    h = obj.check_point(np.array(h0, copy=True))
    trace = Trace()
    t_perturb = 0
    last_t = -1
    for t in range(cfg.T):
        ev = obj.evaluate(h)
        perturbed = False
        if (
            cfg.mode == "pmgd"
            and ev.rgrad_norm < cfg.grad_tolerance
            and t - t_perturb > cfg.perturb_interval
        ):
            zp = tangent_perturbation(h, cfg.perturb_radius, rng)
            h = math.sqrt(1 - cfg.perturb_radius ** 2) * h + zp
            h /= np.linalg.norm(h)
            t_perturb = t
            perturbed = True
        if t % cfg.record_every == 0:
            trace.records.append(TraceRecord(
                t, ev.value, ev.rgrad_norm, perturbed, None if accuracy is None else accuracy(ev.h)
            ))
            last_t = t
        if perturbed:
            ev = obj.evaluate(h)
        if cfg.early_exit_tol is not None and ev.rgrad_norm < cfg.early_exit_tol:
            break
        h = mgd_step(obj, h, cfg.gamma, ev)
    else:
        t = cfg.T
    if last_t != t:
        ev = obj.evaluate(h)
        trace.records.append(TraceRecord(
            t, ev.value, ev.rgrad_norm, False, None if accuracy is None else accuracy(h)
        ))
    return h, trace


def practical_schedule(ndim: int = 1, **overrides) -> OptimizerConfig:
    """Fixed-step MGD used in the experiments: 100 steps of 0.1 (0.05 for images)."""
    base = dict(mode="mgd", gamma=0.1 if ndim == 1 else 0.05, T=100)
    base.update(overrides)
    return OptimizerConfig(**base)


def _check_theory_params(n, theta, rho):
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not 0 < theta < 1.0 / 3:
        raise ValueError(f"theta must satisfy 0 < theta < 1/3, got theta={theta}")
    if not 0 < rho < 1e-3:
        raise ValueError(f"rho must lie in (0, 1e-3), got {rho}")


def theoretical_iterations(n: int, theta: float, rho: float, xi: float = 700.0) -> float:
    """Iteration count guaranteeing a visit to the strongly convex region."""
    _check_theory_params(n, theta, rho)
    a = theta * (1 - 3 * theta)
    ln = math.log(n)
    return 5000 * n ** 8 / (a ** 2 * rho ** 4) + xi ** 4 * n ** 12 * ln ** 4 / (800 * a ** 4)


def theoretical_schedule(
    n: int,
    theta: float,
    rho: float,
    xi: float = 700.0,
    T_cap: int = 10_000,
    seed: int = 0,
) -> OptimizerConfig:
    """PMGD parameters with provable escape from saddle regions.

    ``xi`` must exceed 640; the iteration count is astronomically large, so
    it is clipped to ``T_cap`` and ``capped`` records whether that happened.
    """
    _check_theory_params(n, theta, rho)
    if not xi > 640:
        raise ValueError(f"xi must exceed 640, got {xi}")
    a = theta * (1 - 3 * theta)
    ln = math.log(n)
    T_full = theoretical_iterations(n, theta, rho, xi)
    return OptimizerConfig(
        mode="pmgd",
        gamma=1.0 / (128 * n ** 3),
        T=int(min(math.ceil(T_full), T_cap)),
        perturb_radius=a ** 2 / (xi ** 2 * n ** 6 * ln ** 2),
        perturb_interval=xi * n ** 3 * ln / (25 * a),
        grad_tolerance=a * rho ** 2 / (2 * n),
        seed=seed,
        capped=T_full > T_cap,
    )

