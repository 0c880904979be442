"""Signal/channel recovery from a solved filter, and the success metrics.

Given a filter ``h`` with ``C_f R h ~ s * delta_j`` the estimates are

    f_hat = idft(1 / dft(R h)),     x_hat_i = y_i (*) R h,

which equal ``s * S_{-j} f`` and ``s * S_j x_i`` at an exact solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fourier import Lattice, circ_conv, circ_shift, dft, idft
from .precondition import Preconditioner, apply_R
from .synthesis import GroundTruthInstance, ObservationSet

__all__ = [
    "RecoveryResult",
    "Alignment",
    "NonInvertibleIterateError",
    "ACCURACY_THRESHOLD",
    "SPECTRAL_RATIO_THRESHOLD",
    "recover",
    "accuracy_metric",
    "spectral_ratio_metric",
    "align",
]

ACCURACY_THRESHOLD = 0.95
SPECTRAL_RATIO_THRESHOLD = 0.7
SPECTRUM_FLOOR = 1e-10


class NonInvertibleIterateError(ValueError):
    """``R h`` has a (numerically) vanishing DFT bin, so ``f_hat`` is undefined."""


@dataclass
class Alignment:
    sign: int
    shift: object
    channel_errors: np.ndarray
    signal_error: float


@dataclass
class RecoveryResult:
    f_hat: np.ndarray
    x_hat: np.ndarray
    lat: Lattice
    residual: float
    accuracy: Optional[float] = None
    alignment: Optional[Alignment] = None
    meta: dict = field(default_factory=dict)


def _reciprocal_spectrum(g, lat, floor=SPECTRUM_FLOOR):
    G = dft(g, lat)
    mag = np.abs(G)
    k = int(np.argmin(mag))
    if not mag.flat[k] > floor * mag.max():
        bin_ = np.unravel_index(k, lat.dims)
        raise NonInvertibleIterateError(
            f"non-invertible iterate: DFT bin {tuple(int(b) for b in bin_)} of R h has "
            f"magnitude {mag.flat[k]:.3e} (max {mag.max():.3e})"
        )
    return 1.0 / G


def recover(obs: ObservationSet, p: Preconditioner, h, floor: float = SPECTRUM_FLOOR) -> RecoveryResult:
    """Recover ``f_hat`` and every ``x_hat_i`` from the filter ``h``.

    ``residual`` is ``||x_hat (*) f_hat - Y|| / ||Y||``, which vanishes up to
    round-off for any invertible ``R h``.
    """
    lat = obs.lat
    g = apply_R(p, h)
    f_hat = idft(_reciprocal_spectrum(g, lat, floor), lat)
    x_hat = circ_conv(obs.Y, g, lat)
    if np.isrealobj(g):
        f_hat = f_hat.real
    recon = circ_conv(x_hat, f_hat, lat)
    ynorm = np.linalg.norm(obs.Y)
    residual = float(np.linalg.norm(recon - obs.Y) / ynorm) if ynorm > 0 else 0.0
    return RecoveryResult(f_hat=f_hat, x_hat=x_hat, lat=lat, residual=residual)


def accuracy_metric(gt: GroundTruthInstance, p: Preconditioner, h) -> float:
    """``||C_f R h||_inf / ||C_f R h||``: 1 exactly at a signed shifted solution."""
    a = circ_conv(gt.f, apply_R(p, h), gt.lat)
    norm = np.linalg.norm(a)
    return float(np.max(np.abs(a)) / norm) if norm > 0 else 0.0


def spectral_ratio_metric(f_true, f_hat, lat=None) -> float:
    """Peakiness of ``idft(dft(f) / dft(f_hat))``; 1 iff ``f_hat`` is a scaled shift of ``f``."""
    lat = Lattice.coerce(np.shape(f_true) if lat is None else lat)
    q = idft(dft(f_true, lat) * _reciprocal_spectrum(f_hat, lat, 0.0), lat)
    return float(np.max(np.abs(q)) / np.linalg.norm(q))


def align(gt: GroundTruthInstance, result: RecoveryResult) -> Alignment:
    """Resolve the sign/shift ambiguity against the ground truth.

    Picks ``(s, j)`` minimizing ``||f_hat - s * S_{-j} f||`` using one FFT
    cross-correlation; ties go to the smallest shift, then to ``s = +1``.
    Errors are relative: ``||x_hat_i - s S_j x_i|| / ||x_i||`` per channel
    and ``||f_hat - s S_{-j} f|| / ||f||``.
    """
    lat = gt.lat
    # corr[j] = Re <f_hat, S_{-j} f> = Re sum_k conj(f_hat[k]) f[k + j]
    corr = np.real(idft(np.conj(dft(result.f_hat, lat)) * dft(gt.f, lat), lat))
    scores = np.stack([corr, -corr], axis=-1).ravel()
    best = int(np.argmax(scores))
    flat_j, which = divmod(best, 2)
    sign = 1 if which == 0 else -1
    j = np.unravel_index(flat_j, lat.dims)
    j = int(j[0]) if lat.ndim == 1 else tuple(int(v) for v in j)
    neg_j = -j if lat.ndim == 1 else tuple(-v for v in j)

    f_ref = sign * circ_shift(gt.f, neg_j, lat)
    x_ref = sign * circ_shift(gt.X, j, lat)
    axes = tuple(range(1, lat.ndim + 1))
    xnorm = np.sqrt(np.sum(np.abs(gt.X) ** 2, axis=axes))
    diff = np.sqrt(np.sum(np.abs(result.x_hat - x_ref) ** 2, axis=axes))
    with np.errstate(divide="ignore", invalid="ignore"):
        channel_errors = np.where(xnorm > 0, diff / xnorm, np.where(diff > 0, np.inf, 0.0))
    signal_error = float(np.linalg.norm(result.f_hat - f_ref) / np.linalg.norm(gt.f))
    return Alignment(sign, j, channel_errors, signal_error)
