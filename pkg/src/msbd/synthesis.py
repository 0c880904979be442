"""Ground-truth instances and observations for every experimental regime.

All randomness goes through :func:`make_rng`, which builds a PCG64 generator
from a :class:`numpy.random.SeedSequence` over ``(seed, *keys)``. PCG64 and
SeedSequence are fixed, documented algorithms, so instances are bit-identical
across machines and independent of the order in which they are generated.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .fourier import Lattice, circ_conv, dft, idft, mirror

__all__ = [
    "GroundTruthInstance",
    "ObservationSet",
    "NoiseSpec",
    "NOISE_PRESETS",
    "make_rng",
    "spectrum_is_invertible",
    "gen_bernoulli_rademacher_channels",
    "gen_gaussian_signal",
    "gen_complex_gaussian_signal",
    "gen_conditioned_signal",
    "gen_joint_sparse_complex",
    "gen_sparse_gaussian_channels",
    "gen_template_channels",
    "builtin_pattern",
    "random_instance",
    "observe",
    "embed_linear_conv",
    "condition_number",
]

# Minimum |F f| relative to max |F f| for a signal to count as invertible.
INVERTIBILITY_RTOL = 1e-8
# Regeneration attempts before giving up on an invertible signal.
MAX_REDRAWS = 100

# sigma / sqrt(n * theta) for the named noise levels.
NOISE_PRESETS = {"none": 0.0, "40dB": 0.01, "20dB": 0.1}


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """PCG64 generator keyed by ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass
class GroundTruthInstance:
    """Signal ``f`` and channels ``X`` (shape ``(N, *lat.dims)``)."""

    f: np.ndarray
    X: np.ndarray
    lat: Lattice
    field: str = "real"
    theta: float = 0.1
    seed: int = 0
    kappa: Optional[float] = None
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.lat = Lattice.coerce(self.lat)
        self.f = self.lat.check(self.f, "f")
        self.X = self.lat.check(self.X, "X")
        if self.f.shape != self.lat.dims or self.X.ndim != self.lat.ndim + 1:
            raise ValueError("f must be a single signal and X a stack of channels")
        if self.field not in ("real", "complex"):
            raise ValueError(f"field must be 'real' or 'complex', got {self.field!r}")

    @property
    def N(self) -> int:
        return self.X.shape[0]

    def clean_observations(self) -> np.ndarray:
        return circ_conv(self.X, self.f, self.lat)


@dataclass
class ObservationSet:
    """The measured convolutions; the only input the solver sees."""

    Y: np.ndarray
    lat: Lattice
    field: str = "real"
    theta_hint: Optional[float] = None

    def __post_init__(self):
        self.lat = Lattice.coerce(self.lat)
        self.Y = self.lat.check(self.Y, "Y")
        if self.Y.ndim != self.lat.ndim + 1 or self.Y.shape[0] < 1:
            raise ValueError("Y must be a non-empty stack of N observations")
        if self.field not in ("real", "complex"):
            raise ValueError(f"field must be 'real' or 'complex', got {self.field!r}")
        if self.field == "real" and np.iscomplexobj(self.Y):
            raise ValueError("real-field observations must be real arrays")

    @property
    def N(self) -> int:
        return self.Y.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    @classmethod
    def preset(cls, name: str, n: int, theta: float) -> "NoiseSpec":
        """``sigma = level * sqrt(n * theta)`` for a preset in :data:`NOISE_PRESETS`."""
        try:
            level = NOISE_PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown noise preset {name!r}; choose from {sorted(NOISE_PRESETS)}")
        return cls(level * np.sqrt(n * theta))


def spectrum_is_invertible(f, lat=None, rtol: float = INVERTIBILITY_RTOL) -> bool:
    mag = np.abs(dft(f, lat))
    return bool(mag.min() > rtol * mag.max())


def condition_number(f, lat=None) -> float:
    """Ratio of the largest to the smallest DFT magnitude of ``f``."""
    mag = np.abs(dft(f, lat))
    lo = mag.min()
    return float(mag.max() / lo) if lo > 0 else float("inf")


def _check_theta(theta):
    if not 0 <= theta <= 1:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")


def gen_bernoulli_rademacher_channels(lat, N: int, theta: float, seed: int) -> np.ndarray:
    """Channels with i.i.d. entries: +1 or -1 w.p. theta/2 each, else 0."""
    _check_theta(theta)
    lat = Lattice.coerce(lat)
    u = make_rng(seed, 1).random((int(N),) + lat.dims)
    out = np.zeros(u.shape)
    out[u < theta / 2] = -1.0
    out[(u >= theta / 2) & (u < theta)] = 1.0
    return out


def _redraw(draw, lat, seed):
    for attempt in range(MAX_REDRAWS):
        f = draw(make_rng(seed + attempt, 0))
        if spectrum_is_invertible(f, lat):
            return f
    raise RuntimeError(f"no invertible signal after {MAX_REDRAWS} redraws from seed {seed}")


def gen_gaussian_signal(lat, seed: int) -> np.ndarray:
    """Standard normal signal, redrawn with seed+1, seed+2, ... until invertible."""
    lat = Lattice.coerce(lat)
    return _redraw(lambda rng: rng.standard_normal(lat.dims), lat, seed)


def gen_complex_gaussian_signal(lat, seed: int) -> np.ndarray:
    """CN(0, I) signal: real and imaginary parts N(0, 1/2)."""
    lat = Lattice.coerce(lat)

    def draw(rng):
        z = rng.standard_normal((2,) + lat.dims) * np.sqrt(0.5)
        return z[0] + 1j * z[1]

    return _redraw(draw, lat, seed)


def gen_conditioned_signal(lat, kappa: float, seed: int) -> np.ndarray:
    """Real signal whose DFT gains are uniform on [1, kappa].

    Phases are uniform on [0, 2 pi) and the spectrum is made conjugate
    symmetric; self-mirrored bins (DC and, for even lengths, Nyquist) get
    phase 0. The realized condition number is at most ``kappa``.
    """
    if not kappa >= 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    lat = Lattice.coerce(lat)
    rng = make_rng(seed, 0)
    gains = rng.uniform(1.0, kappa, lat.dims)
    phases = rng.uniform(0.0, 2 * np.pi, lat.dims)
    flat = np.arange(lat.n).reshape(lat.dims)
    partner = mirror(flat, lat)
    lead = flat < partner
    gains = np.where(lead | (flat == partner), gains, mirror(gains, lat))
    phases = np.where(lead, phases, np.where(flat == partner, 0.0, -mirror(phases, lat)))
    return idft(gains * np.exp(1j * phases), lat).real


def gen_joint_sparse_complex(lat, N: int, s: int, seed: int) -> np.ndarray:
    """N complex channels sharing one uniformly random support of size ``s``."""
    lat = Lattice.coerce(lat)
    if not 1 <= s <= lat.n:
        raise ValueError(f"s must lie in [1, {lat.n}], got {s}")
    rng = make_rng(seed, 1)
    support = rng.choice(lat.n, size=int(s), replace=False)
    vals = rng.standard_normal((2, int(N), int(s))) * np.sqrt(0.5)
    out = np.zeros((int(N), lat.n), dtype=complex)
    out[:, support] = vals[0] + 1j * vals[1]
    return out.reshape((int(N),) + lat.dims)


def gen_sparse_gaussian_channels(m: int, N: int, s: int, seed: int) -> np.ndarray:
    """N length-``m`` channels, each with its own random ``s``-support of N(0,1) values."""
    if not 1 <= s <= m:
        raise ValueError(f"s must lie in [1, {m}], got {s}")
    rng = make_rng(seed, 1)
    out = np.zeros((int(N), int(m)))
    for i in range(int(N)):
        out[i, rng.choice(m, size=int(s), replace=False)] = rng.standard_normal(int(s))
    return out


def gen_template_channels(template, N: int, theta: float, seed: int) -> np.ndarray:
    """Sparse random samples of a template image (Bernoulli(theta) mask)."""
    _check_theta(theta)
    template = np.asarray(template, dtype=float)
    mask = make_rng(seed, 1).random((int(N),) + template.shape) < theta
    return mask * template


def builtin_pattern(dims=(64, 64)) -> np.ndarray:
    """Deterministic test image: a disk, a bar and a ring on a textured floor."""
    rows, cols = dims
    yy, xx = np.mgrid[0:rows, 0:cols]
    cy, cx = (rows - 1) / 2, (cols - 1) / 2
    r = np.hypot((yy - cy) / rows, (xx - cx) / cols)
    img = 0.2 + 0.1 * np.cos(2 * np.pi * 3 * xx / cols) * np.cos(2 * np.pi * 2 * yy / rows)
    img += (np.hypot(yy - 0.3 * rows, xx - 0.3 * cols) < 0.12 * min(dims)) * 0.8
    img += ((np.abs(yy - 0.7 * rows) < 0.05 * rows) & (np.abs(xx - cx) < 0.35 * cols)) * 0.6
    img += ((r > 0.3) & (r < 0.36)) * 0.4
    # A faint deterministic dither keeps every DFT bin away from zero.
    img += 0.05 * make_rng(20240601).standard_normal(dims)
    return img


def random_instance(
    lat,
    N: int,
    theta: float,
    seed: int,
    kappa: Optional[float] = None,
) -> GroundTruthInstance:
    """Bernoulli-Rademacher channels with a Gaussian (or kappa-conditioned) signal."""
    lat = Lattice.coerce(lat)
    if kappa is None:
        f = gen_gaussian_signal(lat, seed)
    else:
        f = gen_conditioned_signal(lat, kappa, seed)
    X = gen_bernoulli_rademacher_channels(lat, N, theta, seed)
    return GroundTruthInstance(
        f=f, X=X, lat=lat, field="real", theta=theta, seed=seed,
        kappa=condition_number(f, lat),
    )


def observe(gt: GroundTruthInstance, noise: NoiseSpec = NoiseSpec(), seed: Optional[int] = None) -> ObservationSet:
    """``y_i = x_i (*) f + sigma * eps_i`` with standard (complex) normal noise."""
    Y = gt.clean_observations()
    if noise.sigma > 0:
        rng = make_rng(gt.seed if seed is None else seed, 2)
        if gt.field == "complex":
            eps = rng.standard_normal((2,) + Y.shape) * np.sqrt(0.5)
            Y = Y + noise.sigma * (eps[0] + 1j * eps[1])
        else:
            Y = Y + noise.sigma * rng.standard_normal(Y.shape)
    if gt.field == "real":
        Y = np.real(Y)
    return ObservationSet(Y=Y, lat=gt.lat, field=gt.field, theta_hint=gt.theta)


def embed_linear_conv(x_prime, f_prime, n: int, theta: Optional[float] = None, seed: int = 0) -> GroundTruthInstance:
    """Zero-pad length-m channels and a signal of length at most n-m+1 to length n.

    Circular convolution of the padded pair equals the linear convolution of
    the originals, which fits in n samples.
    """
    x_prime = np.atleast_2d(np.asarray(x_prime))
    f_prime = np.asarray(f_prime)
    m = x_prime.shape[1]
    if m > n:
        raise ValueError(f"channel length m={m} exceeds n={n}")
    if f_prime.ndim != 1 or not 1 <= f_prime.size <= n - m + 1:
        raise ValueError(f"signal length must lie in [1, n-m+1={n - m + 1}], got shape {f_prime.shape}")
    dtype = np.result_type(x_prime, f_prime, float)
    X = np.zeros((x_prime.shape[0], n), dtype=dtype)
    X[:, :m] = x_prime
    f = np.zeros(n, dtype=dtype)
    f[: f_prime.size] = f_prime
    if theta is None:
        theta = max(float(np.count_nonzero(X)) / X.size, 1.0 / n)
    field = "complex" if np.iscomplexobj(X) else "real"
    return GroundTruthInstance(
        f=f, X=X, lat=Lattice((n,)), field=field, theta=theta, seed=seed,
        kappa=condition_number(f), meta={"m": m},
    )
