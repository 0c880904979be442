"""Fourier-domain preconditioner ``R = ((1/(theta n N)) sum_i C_yi^H C_yi)^(-1/2)``.

Every ``C_yi^H C_yi`` is circulant with eigenvalues ``|dft(y_i)|^2``, so the
averaged Gram matrix is diagonalized by the DFT and its inverse square root
is a per-frequency scalar. Building ``R`` costs one FFT per channel and
applying it costs two FFTs; no dense matrix is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fourier import Lattice, dft, idft, mirror
from .synthesis import ObservationSet

__all__ = [
    "Preconditioner",
    "RankDeficientError",
    "build_preconditioner",
    "estimate_theta",
    "gram_spectrum",
    "apply_R",
    "precond_gram_residual",
]


class RankDeficientError(ValueError):
    """Some frequency bin carries no energy in any observation."""


@dataclass(frozen=True)
class Preconditioner:
    """Eigenvalues of ``R`` on the DFT grid, plus the theta that produced them."""

    multipliers: np.ndarray
    theta: float
    lat: Lattice
    theta_source: str = "given"

    def __post_init__(self):
        m = np.asarray(self.multipliers, dtype=float)
        if m.shape != self.lat.dims:
            raise ValueError(f"multipliers shape {m.shape} != lattice {self.lat.dims}")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise ValueError("preconditioner multipliers must be positive and finite")
        m.setflags(write=False)
        object.__setattr__(self, "multipliers", m)
        even = np.allclose(m, mirror(m, self.lat), rtol=1e-12, atol=0)
        object.__setattr__(self, "_even", bool(even))

    @property
    def is_even(self) -> bool:
        """True when ``R`` maps real vectors to real vectors."""
        return self._even

    @classmethod
    def identity(cls, lat, theta: float = 1.0) -> "Preconditioner":
        lat = Lattice.coerce(lat)
        return cls(np.ones(lat.dims), theta, lat, "identity")


def estimate_theta(obs: ObservationSet, level: float = 0.1) -> float:
    """Fallback sparsity estimate: fraction of ``|y|`` entries above ``level * max|y|``."""
    a = np.abs(obs.Y)
    top = a.max()
    if top == 0:
        raise RankDeficientError("rank-deficient observations: all observations are zero")
    return float(np.count_nonzero(a > level * top)) / a.size


def gram_spectrum(obs: ObservationSet, theta: float) -> np.ndarray:
    """Eigenvalues ``(1/(theta n N)) sum_i |dft(y_i)_k|^2`` of the averaged Gram."""
    energy = np.sum(np.abs(dft(obs.Y, obs.lat)) ** 2, axis=0)
    return energy / (theta * obs.lat.n * obs.N)


def build_preconditioner(obs: ObservationSet, theta: Optional[float] = None) -> Preconditioner:
    """Build ``R`` from the observations.

    Args:
        obs: Observations; complex fields use ``C^H C``, which only changes
            the conjugation already implied by ``|dft(y)|^2``.
        theta: Sparsity parameter. Defaults to ``obs.theta_hint`` and then to
            :func:`estimate_theta`; the choice is recorded in ``theta_source``.

    Raises:
        RankDeficientError: if any frequency bin has zero total energy.
    """
    source = "given"
    if theta is None and obs.theta_hint is not None:
        theta, source = obs.theta_hint, "hint"
    if theta is None:
        theta, source = estimate_theta(obs), "estimated"
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    gram = gram_spectrum(obs, theta)
    bad = np.flatnonzero(gram.ravel() <= 0)
    if bad.size:
        k = np.unravel_index(bad[0], obs.lat.dims)
        raise RankDeficientError(
            f"rank-deficient observations: frequency bin {tuple(int(v) for v in k)} has zero energy"
        )
    return Preconditioner(gram ** -0.5, float(theta), obs.lat, source)


def apply_R(p: Preconditioner, h) -> np.ndarray:
    """``R h``; real when ``h`` is real and ``R`` is (real observations)."""
    h = p.lat.check(h, "h")
    out = idft(p.multipliers * dft(h, p.lat), p.lat)
    return out.real if np.isrealobj(h) and p.is_even else out


def precond_gram_residual(p: Preconditioner, obs: ObservationSet, theta: Optional[float] = None) -> float:
    """``max_k |m_k^2 * gram_k - 1|``: how far ``R^2`` is from the inverse Gram."""
    gram = gram_spectrum(obs, p.theta if theta is None else theta)
    return float(np.max(np.abs(p.multipliers ** 2 * gram - 1.0)))
