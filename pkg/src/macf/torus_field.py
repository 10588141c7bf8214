"""Real scalar fields on the unit torus, stored as truncated Fourier coefficients.

Conventions, fixed here once and used by every other module:

  basis         e^{2 pi i k.x} on [0,1)^d, k integer vector
  transform     coeff(k) = (1/N^d) sum_x u(x) e^{-2 pi i k.x}
  Laplacian     multiplier -4 pi^2 |k|^2
  H^s norm      ||u||_{H^s}^2 = sum_k (1 + 4 pi^2 |k|^2)^s |coeff(k)|^2

Coefficients live in numpy fft layout with k_j in {-N/2, ..., N/2-1}.  Fields
are real-valued, so coeff(-k) = conj(coeff(k)) with indices understood mod N;
in particular the Nyquist planes carry real coefficients.  With the 1/N^d
normalisation, discrete Parseval gives ||u||_{L^2}^2 = mean(u(x)^2) exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

FOUR_PI_SQ = 4.0 * np.pi**2

# Sobolev regularity order; any real value is accepted.
SobolevIndex = float

_MAGIC = b"MACF"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SpectralField:
    """A real field on T^d as complex Fourier coefficients in fft layout."""

    dim: int
    grid_size: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.grid_size <= 0 or self.grid_size % 2 != 0:
            raise ValueError(f"grid_size must be positive and even, got {self.grid_size}")
        expected = (self.grid_size,) * self.dim
        if self.coeffs.shape != expected:
            raise ValueError(f"coeffs shape {self.coeffs.shape} != {expected}")

    # Value-like arithmetic; fields are immutable and safe to share.
    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid(self, other)
        return SpectralField(self.dim, self.grid_size, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid(self, other)
        return SpectralField(self.dim, self.grid_size, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.dim, self.grid_size, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.dim, self.grid_size, -self.coeffs)

    def copy(self) -> "SpectralField":
        return SpectralField(self.dim, self.grid_size, self.coeffs.copy())

    @property
    def mean(self) -> float:
        return float(self.coeffs[(0,) * self.dim].real)


def _check_same_grid(f: SpectralField, g: SpectralField) -> None:
    if f.dim != g.dim or f.grid_size != g.grid_size:
        raise ValueError(
            f"grid mismatch: ({f.dim}, {f.grid_size}) vs ({g.dim}, {g.grid_size})"
        )


@lru_cache(maxsize=None)
def _freq(n: int) -> np.ndarray:
    """Integer frequencies of an n-point axis in fft order."""
    return np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)


@lru_cache(maxsize=None)
def _ksq(dim: int, n: int) -> np.ndarray:
    """|k|^2 on the (n,)*dim lattice, fft layout, read-only."""
    f = _freq(n).astype(float)
    grids = np.meshgrid(*([f] * dim), indexing="ij")
    out = sum(g**2 for g in grids)
    out.setflags(write=False)
    return out


def sobolev_weight(dim: int, n: int, s: SobolevIndex) -> np.ndarray:
    """(1 + 4 pi^2 |k|^2)^s on the coefficient lattice."""
    return (1.0 + FOUR_PI_SQ * _ksq(dim, n)) ** s


def grid_points(dim: int, n: int) -> tuple[np.ndarray, ...]:
    """Uniform sample coordinates, meshgrid arrays of shape (n,)*dim."""
    x = np.arange(n) / n
    return tuple(np.meshgrid(*([x] * dim), indexing="ij"))


def to_fourier(samples: np.ndarray) -> SpectralField:
    """Transform N^d uniform real samples into a SpectralField."""
    samples = np.asarray(samples)
    if np.iscomplexobj(samples):
        raise ValueError("samples must be real-valued")
    dim = samples.ndim
    n = samples.shape[0]
    if any(s != n for s in samples.shape):
        raise ValueError(f"samples must be a cube, got shape {samples.shape}")
    if n <= 0 or n % 2 != 0:
        raise ValueError(f"grid size must be positive and even, got {n}")
    coeffs = np.fft.fftn(samples) / n**dim
    return SpectralField(dim, n, coeffs)


def from_fourier(f: SpectralField) -> np.ndarray:
    """Real samples of f on its native N^d grid."""
    return np.fft.ifftn(f.coeffs).real * f.grid_size**f.dim


def constant_field(value: float, dim: int, grid_size: int) -> SpectralField:
    c = np.zeros((grid_size,) * dim, dtype=complex)
    c[(0,) * dim] = value
    return SpectralField(dim, grid_size, c)


def zero_field(dim: int, grid_size: int) -> SpectralField:
    return SpectralField(dim, grid_size, np.zeros((grid_size,) * dim, dtype=complex))


def _pad_axis(arr: np.ndarray, axis: int, n: int, m: int) -> np.ndarray:
    """Embed an n-point axis into m > n points, splitting the Nyquist mode.

    The coefficient at k = -n/2 represents the conjugate pair +-n/2 of the
    coarse real field; half goes to each of the two fine slots so the padded
    spectrum stays Hermitian and band-limited interpolation is exact.
    """
    shape = list(arr.shape)
    shape[axis] = m
    out = np.zeros(shape, dtype=arr.dtype)
    half = n // 2
    sl_in = [slice(None)] * arr.ndim
    sl_out = [slice(None)] * arr.ndim

    sl_in[axis] = slice(0, half)
    sl_out[axis] = slice(0, half)
    out[tuple(sl_out)] = arr[tuple(sl_in)]

    sl_in[axis] = slice(half + 1, n)
    sl_out[axis] = slice(m - half + 1, m)
    out[tuple(sl_out)] = arr[tuple(sl_in)]

    sl_in[axis] = half
    nyq = arr[tuple(sl_in)] * 0.5
    sl_out[axis] = m - half
    out[tuple(sl_out)] = nyq
    sl_out[axis] = half
    out[tuple(sl_out)] += nyq
    return out


def _truncate_axis(arr: np.ndarray, axis: int, m: int, n: int) -> np.ndarray:
    """Project an m-point axis onto n < m points (adjoint of _pad_axis)."""
    shape = list(arr.shape)
    shape[axis] = n
    out = np.zeros(shape, dtype=arr.dtype)
    half = n // 2
    sl_in = [slice(None)] * arr.ndim
    sl_out = [slice(None)] * arr.ndim

    sl_in[axis] = slice(0, half)
    sl_out[axis] = slice(0, half)
    out[tuple(sl_out)] = arr[tuple(sl_in)]

    sl_in[axis] = slice(m - half + 1, m)
    sl_out[axis] = slice(half + 1, n)
    out[tuple(sl_out)] = arr[tuple(sl_in)]

    sl_out[axis] = half
    sl_in[axis] = m - half
    folded = arr[tuple(sl_in)].copy()
    sl_in[axis] = half
    folded += arr[tuple(sl_in)]
    out[tuple(sl_out)] = folded
    return out


def resample_coeffs(coeffs: np.ndarray, n: int, m: int) -> np.ndarray:
    """Map coefficients between lattice sizes n and m, axis by axis."""
    if m == n:
        return coeffs
    out = coeffs
    for axis in range(coeffs.ndim):
        out = _pad_axis(out, axis, n, m) if m > n else _truncate_axis(out, axis, n, m)
    return out


def resample(f: SpectralField, grid_size: int) -> SpectralField:
    """The same field on a finer grid, or its projection onto a coarser one."""
    if grid_size == f.grid_size:
        return f
    return SpectralField(f.dim, grid_size, resample_coeffs(f.coeffs, f.grid_size, grid_size))


def fine_samples(f: SpectralField, factor: float = 2.0) -> np.ndarray:
    """Samples of f on a refined grid (exact band-limited interpolation)."""
    m = 2 * int(np.ceil(factor * f.grid_size / 2))
    c = resample_coeffs(f.coeffs, f.grid_size, m)
    return np.fft.ifftn(c).real * m**f.dim


def dealias_size(n: int) -> int:
    """2/3-rule padded grid size (next even integer >= 3n/2)."""
    return 2 * int(np.ceil(3 * n / 4))


def sobolev_norm(f: SpectralField, s: SobolevIndex) -> float:
    """Fourier-sum Sobolev norm; s = 0 is the L^2 norm."""
    w = sobolev_weight(f.dim, f.grid_size, s)
    return float(np.sqrt(np.sum(w * np.abs(f.coeffs) ** 2)))


def l2_inner(f: SpectralField, g: SpectralField) -> float:
    _check_same_grid(f, g)
    return float(np.sum(f.coeffs * np.conj(g.coeffs)).real)


def l2_distance(f: SpectralField, g: SpectralField) -> float:
    """L^2 distance; fields on different grids are compared on the finer one."""
    if f.grid_size != g.grid_size:
        m = max(f.grid_size, g.grid_size)
        f, g = resample(f, m), resample(g, m)
    return sobolev_norm(f - g, 0.0)


def laplacian(f: SpectralField) -> SpectralField:
    mult = -FOUR_PI_SQ * _ksq(f.dim, f.grid_size)
    return SpectralField(f.dim, f.grid_size, mult * f.coeffs)


def resolvent(f: SpectralField, delta: float) -> SpectralField:
    """(Id - delta*Laplacian)^{-1} f, a contraction in every H^s."""
    if delta < 0:
        raise ValueError(f"resolvent parameter must be >= 0, got {delta}")
    if delta == 0:
        return f
    mult = 1.0 / (1.0 + delta * FOUR_PI_SQ * _ksq(f.dim, f.grid_size))
    return SpectralField(f.dim, f.grid_size, mult * f.coeffs)


def convolve(j: SpectralField, u: SpectralField) -> SpectralField:
    """Spatial convolution j * u, i.e. the coefficient-wise product."""
    _check_same_grid(j, u)
    return SpectralField(u.dim, u.grid_size, j.coeffs * u.coeffs)


def pointwise_apply(
    g: Callable[[np.ndarray], np.ndarray],
    f: SpectralField,
    dealias: bool = True,
) -> SpectralField:
    """Evaluate u -> g(u) pseudo-spectrally.

    With dealias=True the evaluation runs on a 2/3-rule zero-padded grid and
    the result is projected back onto the native band.
    """
    n = f.grid_size
    m = dealias_size(n) if dealias else n
    u = fine_samples(f, m / n) if m != n else from_fourier(f)
    w = np.asarray(g(u), dtype=float)
    if w.shape != u.shape:
        raise ValueError(f"g changed the sample shape: {u.shape} -> {w.shape}")
    bad = ~np.isfinite(w)
    if bad.any():
        idx = np.unravel_index(np.argmax(bad), w.shape)
        raise ValueError(
            f"non-finite value {w[idx]!r} at grid index {idx} "
            f"(x = {tuple(i / m for i in idx)})"
        )
    c = np.fft.fftn(w) / m**f.dim
    return SpectralField(f.dim, n, resample_coeffs(c, m, n))


def multiply(f: SpectralField, g: SpectralField) -> SpectralField:
    """Pointwise product of two fields on their shared native grid."""
    _check_same_grid(f, g)
    prod = from_fourier(f) * from_fourier(g)
    return to_fourier(prod)


def random_field(
    rng: np.random.Generator,
    dim: int,
    grid_size: int,
    decay: float = 1.5,
    amplitude: float = 1.0,
) -> SpectralField:
    """Random real field with power-law spectral decay (1+4pi^2|k|^2)^{-decay/2}."""
    white = rng.standard_normal((grid_size,) * dim)
    c = np.fft.fftn(white) / grid_size**dim
    c *= sobolev_weight(dim, grid_size, -decay / 2.0)
    f = SpectralField(dim, grid_size, c)
    norm = sobolev_norm(f, 0.0)
    if norm > 0:
        f = f * (amplitude / norm)
    return f


@lru_cache(maxsize=None)
def _halfspectrum_order(dim: int, n: int):
    """Lexicographic ordering of the stored half-spectrum.

    Conjugate pairs are identified mod n; a mode is stored when its integer
    frequency tuple is lexicographically >= that of its partner.
    """
    f = _freq(n)
    grids = np.meshgrid(*([f] * dim), indexing="ij")
    freqs = np.stack([g.ravel() for g in grids], axis=1)
    partner = np.where(freqs == -n // 2, -n // 2, -freqs)
    keep = np.zeros(len(freqs), dtype=bool)
    undecided = np.ones(len(freqs), dtype=bool)
    for j in range(dim):
        gt = undecided & (freqs[:, j] > partner[:, j])
        lt = undecided & (freqs[:, j] < partner[:, j])
        keep |= gt
        undecided &= ~(gt | lt)
    keep |= undecided  # self-conjugate modes
    stored = np.nonzero(keep)[0]
    order = np.lexsort(tuple(freqs[stored, j] for j in reversed(range(dim))))
    stored = stored[order]
    partner_flat = np.ravel_multi_index(
        tuple((partner[stored, j]) % n for j in range(dim)), (n,) * dim
    )
    return stored, partner_flat


def save_field(f: SpectralField, path) -> None:
    """Write the binary checkpoint: MACF header + half-spectrum (re, im) f64 pairs."""
    stored, _ = _halfspectrum_order(f.dim, f.grid_size)
    flat = f.coeffs.ravel()[stored]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HBI", _FORMAT_VERSION, f.dim, f.grid_size))
        buf = np.empty((flat.size, 2), dtype="<f8")
        buf[:, 0] = flat.real
        buf[:, 1] = flat.imag
        fh.write(buf.tobytes())


def load_field(path) -> SpectralField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, dim, n = struct.unpack("<HBI", fh.read(7))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        stored, partner = _halfspectrum_order(dim, n)
        raw = np.frombuffer(fh.read(stored.size * 16), dtype="<f8").reshape(-1, 2)
    if raw.shape[0] != stored.size:
        raise ValueError("truncated checkpoint payload")
    vals = raw[:, 0] + 1j * raw[:, 1]
    flat = np.zeros(n**dim, dtype=complex)
    flat[partner] = np.conj(vals)
    flat[stored] = vals
    return SpectralField(dim, n, flat.reshape((n,) * dim))
