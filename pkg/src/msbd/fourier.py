"""Circular convolution and circulant algebra on 1-D and 2-D lattices.

Conventions used throughout the package:

* Arrays live on a :class:`Lattice`; the trailing ``lat.ndim`` axes of an
  array are the lattice axes and any leading axes are batch axes (for
  example the channel index of a stack of observations).
* Indices are 0-based. An index ``j`` in 1-based modular notation maps to
  ``j - 1`` here, so the first standard basis vector is ``delta[0] = 1``.
* The forward DFT is unnormalized and the inverse carries ``1/n``, so that
  ``dft(circ_conv(x, h)) == dft(x) * dft(h)`` with no extra factors.
* ``circ_conv(x, h)[j] = sum_k x[k] h[(j - k) mod n]``, i.e. ``C_x h`` where
  ``C_x`` is the circulant matrix whose first column is ``x``.
* ``circ_shift(x, j)[k] = x[(k - j) mod n]``.

The FFTs are numpy's (pocketfft), which handle arbitrary lengths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "Lattice",
    "LatticeError",
    "dft",
    "idft",
    "idft_real",
    "circ_conv",
    "circulant_apply",
    "circ_shift",
    "delta",
    "mirror",
    "inner",
]


class LatticeError(ValueError):
    """Raised when an array does not live on the expected lattice."""


@dataclass(frozen=True)
class Lattice:
    """Signal domain: a 1-D ring of length ``n`` or a 2-D torus.

    Args:
        dims: Tuple of positive axis lengths, one entry for 1-D signals and
            two for images.
    """

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (1, 2):
            raise LatticeError(f"lattice must be 1-D or 2-D, got dims={dims}")
        if any(d < 1 for d in dims):
            raise LatticeError(f"lattice dims must be positive, got {dims}")
        if int(np.prod(dims)) < 2:
            raise LatticeError(f"lattice needs at least 2 sites, got {dims}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def coerce(cls, spec: Union["Lattice", int, Sequence[int]]) -> "Lattice":
        """Build a lattice from an int (1-D length), a dims tuple or a lattice."""
        if isinstance(spec, Lattice):
            return spec
        if isinstance(spec, (int, np.integer)):
            return cls((int(spec),))
        return cls(tuple(spec))

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.ndim, 0))

    def check(self, x: np.ndarray, name: str = "array") -> np.ndarray:
        """Return ``x`` as an array, raising if its trailing shape is wrong."""
        x = np.asarray(x)
        if x.shape[x.ndim - self.ndim:] != self.dims or x.ndim < self.ndim:
            raise LatticeError(
                f"{name} has shape {x.shape}, expected trailing dims {self.dims}"
            )
        return x

    def __str__(self):
        return "x".join(str(d) for d in self.dims)


def _lattice_of(x: np.ndarray, lat) -> Lattice:
    if lat is None:
        return Lattice.coerce(np.shape(x))
    return Lattice.coerce(lat)


def dft(x, lat=None) -> np.ndarray:
    """Unnormalized forward DFT over the lattice axes."""
    lat = _lattice_of(x, lat)
    x = lat.check(x)
    return np.fft.fftn(x, axes=lat.axes)


def idft(s, lat=None) -> np.ndarray:
    """Inverse DFT with ``1/n`` normalization; always returns a complex array."""
    lat = _lattice_of(s, lat)
    s = lat.check(s, "spectrum")
    return np.fft.ifftn(s, axes=lat.axes)


def idft_real(s, lat=None, rtol: float = 1e-9) -> np.ndarray:
    """Inverse DFT of a conjugate-symmetric spectrum, returned as real.

    Raises:
        ValueError: if the imaginary residual exceeds ``rtol * ||s|| / sqrt(n)``
            (the scale of the time-domain signal by Parseval).
    """
    lat = _lattice_of(s, lat)
    z = idft(s, lat)
    scale = np.linalg.norm(np.asarray(s)) / np.sqrt(lat.n)
    resid = np.max(np.abs(z.imag)) if z.size else 0.0
    if resid > rtol * max(scale, np.finfo(float).tiny):
        raise ValueError(
            f"spectrum is not conjugate-symmetric: imaginary residual {resid:.3e}"
        )
    return z.real


def _same_field(z: np.ndarray, *inputs) -> np.ndarray:
    if all(np.isrealobj(a) for a in inputs):
        return z.real
    return z


def circ_conv(x, h, lat=None) -> np.ndarray:
    """Circular convolution ``x (*) h`` via FFT; batch axes broadcast."""
    lat = _lattice_of(h if lat is None else x, lat)
    x = lat.check(x, "x")
    h = lat.check(h, "h")
    z = np.fft.ifftn(dft(x, lat) * dft(h, lat), axes=lat.axes)
    return _same_field(z, x, h)


def circulant_apply(x, h, lat=None, adjoint: bool = False) -> np.ndarray:
    """Apply ``C_x`` (or ``C_x^H`` when ``adjoint``) to ``h``.

    For real ``x`` the adjoint is the transpose, whose action is circular
    correlation with ``x``.
    """
    lat = _lattice_of(h if lat is None else x, lat)
    x = lat.check(x, "x")
    h = lat.check(h, "h")
    sx = dft(x, lat)
    if adjoint:
        sx = np.conj(sx)
    z = np.fft.ifftn(sx * dft(h, lat), axes=lat.axes)
    return _same_field(z, x, h)


def circ_shift(x, j, lat=None) -> np.ndarray:
    """Circular shift ``S_j``: ``out[k] = x[k - j]`` along each lattice axis.

    ``j`` is an int for 1-D lattices, or one offset per axis for 2-D.
    """
    lat = _lattice_of(x, lat)
    x = lat.check(x)
    shifts = (int(j),) if np.ndim(j) == 0 else tuple(int(v) for v in j)
    if np.ndim(j) == 0 and lat.ndim > 1:
        raise LatticeError("2-D shifts need one offset per axis")
    if len(shifts) != lat.ndim:
        raise LatticeError(f"expected {lat.ndim} shift offsets, got {len(shifts)}")
    return np.roll(x, shifts, axis=lat.axes)


def delta(lat, index=0, dtype=float) -> np.ndarray:
    """Standard basis vector with a one at ``index`` (0-based, per axis)."""
    lat = Lattice.coerce(lat)
    out = np.zeros(lat.dims, dtype=dtype)
    idx = (int(index),) if np.ndim(index) == 0 else tuple(index)
    if len(idx) == 1 and lat.ndim == 2:
        idx = np.unravel_index(idx[0], lat.dims)
    out[tuple(idx)] = 1
    return out


def mirror(x, lat=None) -> np.ndarray:
    """Index reversal ``out[k] = x[-k mod n]`` on each lattice axis."""
    lat = _lattice_of(x, lat)
    x = lat.check(x)
    return np.roll(np.flip(x, axis=lat.axes), 1, axis=lat.axes)


def inner(a, b) -> complex | float:
    """Hermitian inner product ``<a, b> = sum conj(a) * b`` over all entries."""
    return np.vdot(np.asarray(a).ravel(), np.asarray(b).ravel())
