"""Expected landscape of the objective under Bernoulli-Rademacher channels.

In the rotated coordinates ``h'' = C_f (C_f^T C_f)^(-1/2) h`` the expected
objective depends only on ``h''``, and its Riemannian gradient and Hessian
have the closed forms implemented here. Stationary points are the vectors
whose nonzero entries share one magnitude ``1/sqrt(r)``; those with ``r = 1``
are minima and the rest are strict saddles. The module also classifies
points into the three regions (near a minimum, near a saddle, elsewhere) and
checks the curvature/gradient bounds that hold on each.

Dense matrices are used freely but only for ``n <= 64``.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .fourier import Lattice, dft, idft
from .objective import Objective
from .precondition import Preconditioner
from .synthesis import (
    GroundTruthInstance,
    ObservationSet,
    gen_bernoulli_rademacher_channels,
    spectrum_is_invertible,
)

__all__ = [
    "Region",
    "LandscapeParams",
    "StationaryPoint",
    "expected_egrad",
    "expected_rgrad",
    "expected_ehess",
    "expected_rhess",
    "tangent_basis",
    "tangent_min_eig",
    "rotate_to_canonical",
    "nearest_pattern",
    "classify_region",
    "enumerate_stationary_points",
    "negative_curvature_direction",
    "partition_bounds",
    "verify_partition_bounds",
    "PartitionReport",
    "monte_carlo_expectation_check",
    "MonteCarloReport",
    "region_sweep_rows",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 64


class Region(str, enum.Enum):
    H1 = "H1"  # near a signed shift of the solution: strongly convex
    H2 = "H2"  # near a saddle: negative curvature
    H3 = "H3"  # elsewhere: large gradient


@dataclass(frozen=True)
class LandscapeParams:
    """``n``, ``theta`` and neighborhood tolerance ``rho``.

    ``theta`` must lie in ``(0, 1/3)`` and ``rho`` below 1e-3;
    ``exploratory=True`` admits ``rho`` up to 0.05 for visual sweeps. The
    closed forms hold for any such theta, but the region bounds are only
    guaranteed when ``theta >= 1/n`` (see :attr:`in_theorem_regime`).
    """

    n: int
    theta: float
    rho: float
    exploratory: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if not 0 < self.theta < 1.0 / 3:
            raise ValueError(f"theta must lie in (0, 1/3), got {self.theta}")
        limit = 0.05 if self.exploratory else 1e-3
        if not 0 < self.rho < limit:
            raise ValueError(f"rho must lie in (0, {limit}), got {self.rho}")

    @property
    def in_theorem_regime(self) -> bool:
        return self.theta >= 1.0 / self.n and self.rho < 1e-3

    @property
    def scale(self) -> float:
        """``n theta (1 - 3 theta)``, the common factor of every closed form."""
        return self.n * self.theta * (1 - 3 * self.theta)

    @property
    def gap_constant(self) -> float:
        return self.theta * (1 - 3 * self.theta) * self.rho ** 2 / (2 * self.n)


@dataclass(frozen=True)
class StationaryPoint:
    n: int
    support: tuple
    signs: tuple

    @property
    def r(self) -> int:
        return len(self.support)

    @property
    def h0(self) -> np.ndarray:
        h = np.zeros(self.n)
        h[list(self.support)] = np.array(self.signs, dtype=float) / math.sqrt(self.r)
        return h


def _scale(n, theta):
    return n * theta * (1 - 3 * theta)


def expected_egrad(h, n: int, theta: float) -> np.ndarray:
    """Mean Euclidean gradient ``-n theta (1-3 theta) h^3 - 3 n theta^2 h``."""
    h = np.asarray(h, dtype=float)
    return -_scale(n, theta) * h ** 3 - 3 * n * theta ** 2 * h


def expected_rgrad(h, n: int, theta: float) -> np.ndarray:
    """Mean Riemannian gradient ``n theta (1-3 theta) (||h||_4^4 h - h^3)``."""
    h = np.asarray(h, dtype=float)
    return _scale(n, theta) * (np.sum(h ** 4) * h - h ** 3)


def expected_ehess(h, n: int, theta: float) -> np.ndarray:
    """Mean Euclidean Hessian ``-3n [theta^2 I + theta(1-3 theta) diag(h^2) + 2 theta^2 h h^T]``."""
    h = np.asarray(h, dtype=float)
    return -3 * n * (
        theta ** 2 * np.eye(h.size)
        + theta * (1 - 3 * theta) * np.diag(h ** 2)
        + 2 * theta ** 2 * np.outer(h, h)
    )


def expected_rhess(h, n: int, theta: float) -> np.ndarray:
    """Closed-form mean Riemannian Hessian.

    ``n theta (1-3 theta) [||h||_4^4 I + 2 ||h||_4^4 h h^T - 3 diag(h^2)]``.
    It agrees with the projected form ``P H P - <grad, h> P`` as a quadratic
    form on the tangent space (the two differ only along ``h``).
    """
    h = np.asarray(h, dtype=float)
    if h.size > DENSE_LIMIT:
        raise ValueError(f"dense Hessian limited to n <= {DENSE_LIMIT}")
    q = np.sum(h ** 4)
    return _scale(n, theta) * (q * np.eye(h.size) + 2 * q * np.outer(h, h) - 3 * np.diag(h ** 2))


def tangent_basis(h) -> np.ndarray:
    """Orthonormal basis (columns) of the complement of ``h``."""
    return scipy.linalg.null_space(np.asarray(h, dtype=float).reshape(1, -1))


def tangent_min_eig(M, h):
    """Minimum of ``z^T M z`` over unit ``z`` orthogonal to ``h``, with its minimizer."""
    B = tangent_basis(h)
    vals, vecs = np.linalg.eigh(B.T @ ((M + M.T) / 2) @ B)
    return float(vals[0]), B @ vecs[:, 0]


def rotate_to_canonical(h, f, lat=None) -> np.ndarray:
    """``C_f (C_f^T C_f)^(-1/2) h``: multiply the spectrum by ``F f / |F f|``.

    Raises:
        ValueError: if ``f`` is not invertible.
    """
    lat = Lattice.coerce(np.shape(f) if lat is None else lat)
    if not spectrum_is_invertible(f, lat):
        raise ValueError("signal violates invertibility: a DFT bin of f vanishes")
    F = dft(f, lat)
    out = idft(dft(h, lat) * F / np.abs(F), lat)
    return out.real if np.isrealobj(h) and np.isrealobj(f) else out


def nearest_pattern(h, rho: float):
    """Smallest ``r`` whose (rho, r)-neighborhood contains ``h``, or None.

    For fixed ``r`` the only candidate support is the ``r`` largest entries
    of ``h^2``; the sign pattern is read off ``h``. Returns
    ``(r, support, signs)``.
    """
    sq = np.abs(np.ravel(h)) ** 2
    order = np.argsort(-sq, kind="stable")
    n = sq.size
    for r in range(1, n + 1):
        target = np.zeros(n)
        target[order[:r]] = 1.0 / r
        if np.max(np.abs(sq - target)) <= rho / r:
            support = tuple(sorted(int(i) for i in order[:r]))
            signs = tuple(int(np.sign(np.real(np.ravel(h)[i]))) or 1 for i in support)
            return r, support, signs
    return None


def classify_region(h, gt=None, params: Optional[LandscapeParams] = None, lat=None, rho: Optional[float] = None) -> Region:
    """Region of ``h`` for a ground-truth instance or signal ``gt``.

    ``gt`` may be a :class:`GroundTruthInstance`, a bare signal, or None for
    the delta signal (no rotation). The tolerance comes from ``params.rho``
    unless ``rho`` is given.
    """
    if rho is None:
        if params is None:
            raise ValueError("classify_region needs params or rho")
        rho = params.rho
    if gt is not None:
        f = gt.f if isinstance(gt, GroundTruthInstance) else gt
        lat = gt.lat if isinstance(gt, GroundTruthInstance) else lat
        h = rotate_to_canonical(h, f, lat)
    hit = nearest_pattern(h, rho)
    if hit is None:
        return Region.H3
    return Region.H1 if hit[0] == 1 else Region.H2


def enumerate_stationary_points(
    n: int,
    max_r: Optional[int] = None,
    theta: float = 0.1,
    budget: int = 2_000_000,
) -> list:
    """All sign/support patterns with ``r <= max_r``, antipodes included.

    Each point is checked to have zero expected Riemannian gradient.
    """
    max_r = n if max_r is None else int(max_r)
    if not 1 <= max_r <= n:
        raise ValueError(f"max_r must lie in [1, {n}], got {max_r}")
    count = sum(math.comb(n, r) * 2 ** r for r in range(1, max_r + 1))
    if count > budget:
        raise ValueError(f"{count} stationary points exceed the enumeration budget {budget}")
    points = []
    for r in range(1, max_r + 1):
        for support in itertools.combinations(range(n), r):
            for signs in itertools.product((1, -1), repeat=r):
                sp = StationaryPoint(n, support, signs)
                g = np.linalg.norm(expected_rgrad(sp.h0, n, theta))
                if g >= 1e-12:
                    raise AssertionError(f"pattern {support}/{signs} is not stationary: |grad|={g:.2e}")
                points.append(sp)
    return points


def negative_curvature_direction(sp: StationaryPoint) -> np.ndarray:
    """Unit tangent direction of curvature ``-2 n theta (1-3 theta) / r`` at a saddle."""
    r = sp.r
    if r < 2:
        raise ValueError("minima (r = 1) have no negative curvature direction")
    a = np.full(r, -1.0)
    a[0] = r - 1
    z = np.zeros(sp.n)
    z[list(sp.support)] = a * np.array(sp.signs) / math.sqrt(r * (r - 1))
    return z


def partition_bounds(params: LandscapeParams, r: int = 1) -> dict:
    """Curvature/gradient bounds that hold on each region of the expected landscape."""
    a = params.scale
    s = math.sqrt(params.rho)
    return {
        Region.H1: a * (1 - 24 * s),
        Region.H2: -a * (2 - 24 * s) / r,
        Region.H3: params.theta * (1 - 3 * params.theta) * params.rho ** 2 / params.n,
    }


@dataclass
class PartitionReport:
    samples: int
    counts: dict
    violations: int
    min_margin: dict
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.violations == 0


def verify_partition_bounds(
    samples,
    params: LandscapeParams,
    rgrad: Callable = expected_rgrad,
    rhess: Callable = expected_rhess,
) -> PartitionReport:
    """Check every sample against the bound of its region (signal = delta).

    Margins are positive when the bound holds: curvature minus bound in the
    near-minimum region, bound minus curvature near saddles, and gradient norm
    minus bound elsewhere.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n, theta = params.n, params.theta
    counts = {reg: 0 for reg in Region}
    margins = {reg: math.inf for reg in Region}
    failures = []
    for idx, h in enumerate(samples):
        hit = nearest_pattern(h, params.rho)
        if hit is None:
            reg = Region.H3
            margin = np.linalg.norm(rgrad(h, n, theta)) - partition_bounds(params)[Region.H3]
        else:
            r = hit[0]
            reg = Region.H1 if r == 1 else Region.H2
            curv, _ = tangent_min_eig(rhess(h, n, theta), h)
            bound = partition_bounds(params, r)[reg]
            margin = curv - bound if reg is Region.H1 else bound - curv
        counts[reg] += 1
        margins[reg] = min(margins[reg], float(margin))
        if not margin >= 0:
            failures.append((idx, reg.value, float(margin)))
    return PartitionReport(len(samples), counts, len(failures), margins, failures)


@dataclass
class MonteCarloReport:
    num_channels: int
    mean_egrad: np.ndarray
    mean_rgrad: np.ndarray
    mean_rhess: np.ndarray
    egrad_error: float
    rgrad_error: float
    rhess_error: float
    rgrad_stderr: float


def monte_carlo_expectation_check(
    h,
    n: int,
    theta: float,
    num_channels: int,
    seed: int,
    batch: int = 20000,
) -> MonteCarloReport:
    """Compare sample averages over random channels with the closed forms.

    Uses the objective with ``f = delta`` and ``R = I`` so each channel term
    is ``phi(C_x h)``. Gradient errors are relative 2-norms; the Hessian error
    is the relative spectral norm of the difference between the sample mean
    Riemannian Hessian and the tangent-projected closed form. ``rgrad_stderr``
    is the standard error of the mean Riemannian gradient (in norm), so
    that near-zero expectations can be judged statistically.
    """
    h = np.asarray(h, dtype=float)
    if h.size != n or h.size > DENSE_LIMIT:
        raise ValueError(f"h must be a vector of length n <= {DENSE_LIMIT}")
    lat = Lattice((n,))
    eye = np.eye(n)
    P = eye - np.outer(h, h)
    sum_e = np.zeros(n)
    sum_H = np.zeros((n, n))
    sum_sq = np.zeros(n)
    done = 0
    chunk_id = 0
    while done < num_channels:
        m = min(batch, num_channels - done)
        X = gen_bernoulli_rademacher_channels(lat, m, theta, seed * 1_000_003 + chunk_id)
        chunk_id += 1
        if not np.any(X):
            done += m
            continue
        obj = Objective(ObservationSet(X, lat), Preconditioner.identity(lat))
        # Per-channel gradients for the standard error: C_x^T(-v^3).
        v = obj._forward(h)
        per = np.real(np.fft.ifft(np.conj(np.fft.fft(X)) * np.fft.fft(-(v ** 3))))
        per_r = per - np.outer(per @ h, h)
        sum_sq += np.sum(per_r ** 2, axis=0)
        ev = obj.evaluate(h)
        sum_e += ev.egrad * m
        for k in range(n):
            sum_H[:, k] += obj.euclidean_hvp(h, eye[k], ev) * m
        done += m
    mean_e = sum_e / num_channels
    mean_H = sum_H / num_channels
    mean_r = P @ mean_e
    mean_rH = P @ mean_H @ P - float(h @ mean_e) * P
    var = sum_sq / num_channels - mean_r ** 2
    stderr = float(np.sqrt(np.sum(np.maximum(var, 0.0)) / num_channels))

    e_ref = expected_egrad(h, n, theta)
    r_ref = expected_rgrad(h, n, theta)
    H_ref = P @ expected_rhess(h, n, theta) @ P

    def rel(a, b, ord=None):
        nb = np.linalg.norm(b, ord)
        return float(np.linalg.norm(a - b, ord) / nb) if nb > 0 else float(np.linalg.norm(a - b, ord))

    return MonteCarloReport(
        num_channels, mean_e, mean_r, mean_rH,
        rel(mean_e, e_ref), rel(mean_r, r_ref), rel(mean_rH, H_ref, 2), stderr,
    )


def region_sweep_rows(samples, params: LandscapeParams):
    """Rows ``(h_1..h_n, label, min_curvature, grad_norm)`` for sphere plots."""
    for h in np.atleast_2d(np.asarray(samples, dtype=float)):
        reg = classify_region(h, None, params)
        curv, _ = tangent_min_eig(expected_rhess(h, params.n, params.theta), h)
        g = float(np.linalg.norm(expected_rgrad(h, params.n, params.theta)))
        yield [*map(float, h), reg.value, curv, g]
