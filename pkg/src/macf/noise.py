"""Truncated L^2-cylindrical Wiener increments and the covariance operator.

Every Gaussian draw is a pure function of (seed, replicate, step, mode):
a vectorized counter-based hash (splitmix64 finalizers) feeds Box-Muller.
This makes increments reproducible independently of evaluation order, thread
count and grid layout, so runs at different resolutions can share literally
the same noise: a coarser grid simply uses the subset of modes it resolves.

Spectral convention for an increment over one step of length dt: modes with
|k_j| <= N/2 - 1 are retained (Nyquist planes excluded so every retained pair
(k, -k) is a genuine conjugate pair); the k = 0 coefficient is N(0, dt) real,
every other coefficient has independent real and imaginary parts of variance
dt/2, with coeff(-k) = conj(coeff(k)).  This is unit covariance per real L^2
basis direction on the retained span.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import Mobility, NoiseKernel
from .torus_field import (
    SpectralField,
    _freq,
    convolve,
    from_fourier,
    sobolev_norm,
    to_fourier,
    zero_field,
)

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_TWO_M53 = 2.0**-53


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 arrays (wraparound intended)."""
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
        return x ^ (x >> np.uint64(31))


def _absorb(state, word) -> np.uint64:
    with np.errstate(over="ignore"):
        return _mix(state ^ (np.uint64(word & 0xFFFFFFFFFFFFFFFF) * _GOLDEN))


_GOLDEN3 = np.uint64((0x9E3779B97F4A7C15 * 3) & 0xFFFFFFFFFFFFFFFF)


def _gaussian_pair(seed: int, replicate: int, step: int, mode_id: np.ndarray):
    """Two independent standard normals per mode id, fully keyed."""
    base = _absorb(_absorb(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), replicate), step)
    with np.errstate(over="ignore"):
        h = _mix(base ^ (mode_id * _GOLDEN))
        h1 = _mix(h ^ _GOLDEN)
        h2 = _mix(h ^ _GOLDEN3)
    u1 = ((h1 >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_M53
    u2 = ((h2 >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_M53
    r = np.sqrt(-2.0 * np.log(u1))
    ang = (2.0 * np.pi) * u2
    return r * np.cos(ang), r * np.sin(ang)


def _zigzag(k: np.ndarray) -> np.ndarray:
    """Z -> N, 0,-1,1,-2,2,... -> 0,1,2,3,4,... (grid-size independent)."""
    k = k.astype(np.int64)
    return np.where(k >= 0, 2 * k, -2 * k - 1).astype(np.uint64)


@lru_cache(maxsize=None)
def _mode_tables(dim: int, grid_size: int):
    """Per-lattice-point mode ids, conjugation signs and retention mask.

    Mode ids are keyed on the canonical representative of the conjugate pair
    (the lexicographically larger frequency tuple), so (k, -k) share draws.
    """
    n = grid_size
    f = _freq(n)
    grids = np.meshgrid(*([f] * dim), indexing="ij")
    freqs = np.stack([g.ravel() for g in grids], axis=1)

    retained = np.all(np.abs(freqs) <= n // 2 - 1, axis=1)

    canonical = np.zeros(len(freqs), dtype=bool)
    undecided = np.ones(len(freqs), dtype=bool)
    neg = -freqs
    for j in range(dim):
        gt = undecided & (freqs[:, j] > neg[:, j])
        lt = undecided & (freqs[:, j] < neg[:, j])
        canonical |= gt
        undecided &= ~(gt | lt)
    canonical |= undecided  # k = 0 (Nyquist planes are not retained)

    rep = np.where(canonical[:, None], freqs, neg)
    mode_id = np.zeros(len(freqs), dtype=np.uint64)
    for j in range(dim):
        mode_id = (mode_id << np.uint64(21)) | _zigzag(rep[:, j])

    sign = np.where(canonical, 1.0, -1.0)
    is_zero = np.all(freqs == 0, axis=1)

    shape = (n,) * dim
    return (
        mode_id.reshape(shape),
        sign.reshape(shape),
        retained.reshape(shape),
        is_zero.reshape(shape),
    )


@dataclass(frozen=True)
class NoisePath:
    """Reproducible, refinement-consistent Brownian increments per mode.

    inner_dt is the finest time increment; a coarser run must take substeps
    covering an integer number of these.  master_grid bounds the retained
    mode set so that spatially refined runs stay coupled.
    """

    seed: int
    replicate: int
    dim: int
    master_grid: int
    inner_dt: float
    steps_total: int

    def __post_init__(self):
        if self.inner_dt <= 0:
            raise ValueError(f"inner_dt must be positive, got {self.inner_dt}")
        if self.steps_total < 0:
            raise ValueError(f"steps_total must be >= 0, got {self.steps_total}")

    @property
    def horizon(self) -> float:
        return self.inner_dt * self.steps_total

    def step_index(self, step: int) -> int:
        """Hook for noise-reuse controls; the identity for honest paths."""
        return step


@dataclass(frozen=True)
class ReusedNoisePath(NoisePath):
    """Negative control: the second half of each period replays the first."""

    period: int = 2

    def step_index(self, step: int) -> int:
        half = self.period // 2
        return (step // self.period) * self.period + (step % self.period) % half


def wiener_increment(
    path: NoisePath, start: int, stop: int, grid_size: int
) -> SpectralField:
    """Increment of the truncated cylindrical process over steps [start, stop)."""
    if not (0 <= start <= stop <= path.steps_total):
        raise ValueError(
            f"step range [{start}, {stop}) outside horizon [0, {path.steps_total}]"
        )
    if grid_size > path.master_grid:
        raise ValueError(
            f"grid {grid_size} not resolved by master grid {path.master_grid}"
        )
    out = np.zeros((grid_size,) * path.dim, dtype=complex)
    if stop > start:
        mode_id, imag_factor, real_scale = _increment_tables(path.dim, grid_size, path.inner_dt)
        for step in range(start, stop):
            z1, z2 = _gaussian_pair(
                path.seed, path.replicate, path.step_index(step), mode_id
            )
            out += real_scale * z1 + imag_factor * z2
    return SpectralField(path.dim, grid_size, out)


@lru_cache(maxsize=None)
def _increment_tables(dim: int, grid_size: int, inner_dt: float):
    """Precombined scale arrays: coeff = real_scale * z1 + imag_factor * z2."""
    mode_id, sign, retained, is_zero = _mode_tables(dim, grid_size)
    root_dt = np.sqrt(inner_dt)
    scale = np.where(is_zero, root_dt, root_dt / np.sqrt(2.0)) * retained
    real_scale = scale.astype(float)
    imag_factor = (1j * sign * np.where(is_zero, 0.0, 1.0) * scale).astype(complex)
    real_scale.setflags(write=False)
    imag_factor.setflags(write=False)
    return mode_id, imag_factor, real_scale


def apply_B(
    v: SpectralField, psi: SpectralField, m: Mobility, j: NoiseKernel
) -> SpectralField:
    """Covariance operator B(v) psi = sqrt(2 sigma(v)) (j * psi)."""
    smoothed = convolve(j.as_field(psi.dim, psi.grid_size), psi)
    amp = np.sqrt(2.0 * m.value(from_fourier(v)))
    return to_fourier(amp * from_fourier(smoothed))


def apply_B_adjoint(
    v: SpectralField, phi: SpectralField, m: Mobility, j: NoiseKernel
) -> SpectralField:
    """B(v)* phi = j * (sqrt(2 sigma(v)) phi) (j is real and even)."""
    amp = np.sqrt(2.0 * m.value(from_fourier(v)))
    weighted = to_fourier(amp * from_fourier(phi))
    return convolve(j.as_field(phi.dim, phi.grid_size), weighted)


def hs_trace(v: SpectralField, m: Mobility, j: NoiseKernel) -> float:
    """Tr(B(v) B(v)*) over the grid's modes.

    B(v) e_k = sqrt(2 sigma(v)) j_hat(k) e_k with |e_k| = 1 pointwise, so the
    trace collapses to 2 * integral(sigma(v)) * sum_k |j_hat(k)|^2.
    """
    sigma_mean = float(np.mean(m.value(from_fourier(v))))
    return 2.0 * sigma_mean * float(np.sum(j.spectrum(v.dim, v.grid_size) ** 2))


def martingale_increment_variance(
    v: SpectralField, phi: SpectralField, m: Mobility, j: NoiseKernel
) -> float:
    """Per-unit-time quadratic variation 2 * integral (j * (sqrt(sigma(v)) phi))^2."""
    if m.is_constant:
        smoothed = convolve(j.as_field(phi.dim, phi.grid_size), phi)
        return 2.0 * m.sup_sigma * sobolev_norm(smoothed, 0.0) ** 2
    amp = np.sqrt(m.value(from_fourier(v)))
    weighted = to_fourier(amp * from_fourier(phi))
    smoothed = convolve(j.as_field(phi.dim, phi.grid_size), weighted)
    return 2.0 * sobolev_norm(smoothed, 0.0) ** 2
