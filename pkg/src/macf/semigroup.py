"""Frozen-coefficient generators sigma(v) Lap and their smoothed variants.

For a frozen field v and delta >= 0 the operator is

    A_delta u = sigma(R_delta v) R_delta Lap R_delta u      (delta = 0: sigma(v) Lap u)

acting on H^1.  The module certifies a dissipativity shift m0 empirically
(Rayleigh-Ritz on a low-mode block, refined by gradient ascent with exact
line search, then checked against every probe), solves shifted resolvent
systems with a Krylov iteration preconditioned by the constant-coefficient
resolvent, propagates the semigroup with a Crank-Nicolson IMEX step, and
estimates the smoothing-commutator norm (I - delta Lap)[sigma(R_delta v), R_delta]
on mean-zero L^2 by power iteration (a lower bound on the operator norm).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse.linalg import LinearOperator, lgmres

from .model import Mobility
from .torus_field import (
    FOUR_PI_SQ,
    SpectralField,
    _freq,
    _ksq,
    from_fourier,
    random_field,
    resolvent,
    sobolev_weight,
    to_fourier,
)


@dataclass(frozen=True)
class FrozenOperator:
    """A (delta = 0) or A_delta (delta > 0) with its frozen coefficient field."""

    v: SpectralField
    mobility: Mobility
    delta: float = 0.0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")

    @cached_property
    def sigma_samples(self) -> np.ndarray:
        coeff_field = self.v if self.delta == 0 else resolvent(self.v, self.delta)
        samples = self.mobility.value(from_fourier(coeff_field))
        if np.min(samples) <= 0:
            raise ValueError("frozen mobility must be strictly positive")
        return samples

    @cached_property
    def diffusion_multiplier(self) -> np.ndarray:
        """Symbol of R_delta Lap R_delta (Lap itself when delta = 0)."""
        k2 = _ksq(self.v.dim, self.v.grid_size)
        lap = -FOUR_PI_SQ * k2
        if self.delta == 0:
            return lap
        return lap / (1.0 + self.delta * FOUR_PI_SQ * k2) ** 2

    @property
    def sigma_max(self) -> float:
        return float(np.max(self.sigma_samples))


def apply(op: FrozenOperator, u: SpectralField) -> SpectralField:
    if u.dim != op.v.dim or u.grid_size != op.v.grid_size:
        raise ValueError("operator and field grids do not match")
    smoothed = SpectralField(u.dim, u.grid_size, op.diffusion_multiplier * u.coeffs)
    return to_fourier(op.sigma_samples * from_fourier(smoothed))


def _apply_adjoint_h1(op: FrozenOperator, u: SpectralField) -> SpectralField:
    """H^1 adjoint: W^{-1} D sigma W u with D the diffusion multiplier."""
    w = sobolev_weight(u.dim, u.grid_size, 1.0)
    weighted = SpectralField(u.dim, u.grid_size, w * u.coeffs)
    prod = to_fourier(op.sigma_samples * from_fourier(weighted))
    return SpectralField(u.dim, u.grid_size, op.diffusion_multiplier * prod.coeffs / w)


def h1_inner(f: SpectralField, g: SpectralField) -> float:
    w = sobolev_weight(f.dim, f.grid_size, 1.0)
    return float(np.sum(w * f.coeffs * np.conj(g.coeffs)).real)


def h1_norm(f: SpectralField) -> float:
    return math.sqrt(max(h1_inner(f, f), 0.0))


def _rayleigh(op: FrozenOperator, u: SpectralField, au: SpectralField | None = None) -> float:
    if au is None:
        au = apply(op, u)
    return h1_inner(au, u) / h1_inner(u, u)


@dataclass(frozen=True)
class M0Estimate:
    m0: float
    rayleigh_max: float
    probe_max: float
    analytic_proxy: float
    ascent_steps: int


def _low_mode_basis(dim: int, n: int, kmax: int) -> list[SpectralField]:
    """Real trig basis (1, cos, sin per conjugate pair) with |k_j| <= kmax."""
    f = _freq(n)
    grids = np.meshgrid(*([f] * dim), indexing="ij")
    freqs = np.stack([g.ravel() for g in grids], axis=1)
    flat_idx = np.arange(len(freqs))
    basis = []
    seen = set()
    for idx in flat_idx:
        k = tuple(int(x) for x in freqs[idx])
        if any(abs(c) > kmax for c in k):
            continue
        mk = tuple(-c for c in k)
        if mk in seen:
            continue
        seen.add(k)
        shape = (n,) * dim
        pos = tuple(np.unravel_index(idx, shape))
        if k == mk:  # the constant mode
            c = np.zeros(shape, dtype=complex)
            c[pos] = 1.0
            basis.append(SpectralField(dim, n, c))
            continue
        neg = tuple((-np.array(k)) % n)
        c = np.zeros(shape, dtype=complex)
        c[pos] = 0.5
        c[neg] = 0.5
        basis.append(SpectralField(dim, n, c))  # cos mode
        c = np.zeros(shape, dtype=complex)
        c[pos] = -0.5j
        c[neg] = 0.5j
        basis.append(SpectralField(dim, n, c))  # sin mode
    return basis


def estimate_m0(
    op: FrozenOperator,
    probes: int = 64,
    rng: np.random.Generator | None = None,
    kmax: int = 4,
    ascent_iters: int = 30,
) -> M0Estimate:
    """Smallest shift making (m0 - A) nonnegative on the probe set.

    The maximizer of the symmetrized H^1 Rayleigh quotient is sought by
    Rayleigh-Ritz on a low-mode block, then refined by gradient ascent with
    exact line search; the certificate is the maximum of the quotient over
    the ascent result and all random probes, clamped below by sup sigma.
    """
    if probes < 16:
        raise ValueError(f"need at least 16 probes, got {probes}")
    if rng is None:
        rng = np.random.default_rng(0)
    dim, n = op.v.dim, op.v.grid_size

    basis = _low_mode_basis(dim, n, min(kmax, n // 2 - 1))
    applied = [apply(op, b) for b in basis]
    nb = len(basis)
    a_mat = np.empty((nb, nb))
    g_mat = np.empty((nb, nb))
    for i in range(nb):
        for k in range(i, nb):
            a_ik = h1_inner(applied[k], basis[i])
            a_ki = h1_inner(applied[i], basis[k])
            a_mat[i, k] = a_mat[k, i] = 0.5 * (a_ik + a_ki)
            g_mat[i, k] = g_mat[k, i] = h1_inner(basis[i], basis[k])
    from scipy.linalg import eigh

    vals, vecs = eigh(a_mat, g_mat)
    ritz_val = float(vals[-1])
    coeffs = sum(float(c) * b.coeffs for c, b in zip(vecs[:, -1], basis))
    u = SpectralField(dim, n, coeffs)

    ascent_steps = 0
    rho = _rayleigh(op, u)
    for _ in range(ascent_iters):
        au = apply(op, u)
        sym = 0.5 * (au + _apply_adjoint_h1(op, u))
        r = sym - _rayleigh(op, u, au) * u
        if h1_norm(r) <= 1e-12 * max(1.0, abs(rho)):
            break
        # exact line search on rho(u + alpha r): rational quadratic/quadratic
        ar = apply(op, r)
        sym_r = 0.5 * (ar + _apply_adjoint_h1(op, r))
        suu = h1_inner(sym, u)
        sur = 0.5 * (h1_inner(sym, r) + h1_inner(sym_r, u))
        srr = h1_inner(sym_r, r)
        guu, gur, grr = h1_inner(u, u), h1_inner(r, u), h1_inner(r, r)
        # d/da [(suu + 2a sur + a^2 srr) / (guu + 2a gur + a^2 grr)] = 0
        a2 = sur * grr - srr * gur
        a1 = suu * grr - srr * guu
        a0 = suu * gur - sur * guu
        cands = []
        if abs(a2) > 1e-300:
            disc = a1 * a1 - 4 * a2 * a0
            if disc >= 0:
                cands += [(-a1 + math.sqrt(disc)) / (2 * a2),
                          (-a1 - math.sqrt(disc)) / (2 * a2)]
        elif abs(a1) > 1e-300:
            cands.append(-a0 / a1)
        best_rho, best_u = rho, u
        for alpha in cands:
            cand = u + alpha * r
            denom = h1_inner(cand, cand)
            if denom <= 0:
                continue
            val = _rayleigh(op, cand)
            if val > best_rho:
                best_rho, best_u = val, cand
        if best_rho <= rho + 1e-14 * max(1.0, abs(rho)):
            break
        rho, u = best_rho, best_u * (1.0 / h1_norm(best_u))
        ascent_steps += 1

    probe_max = -math.inf
    for i in range(probes):
        decay = 0.5 + 2.0 * (i % 4) / 3.0
        p = random_field(rng, dim, n, decay=decay)
        probe_max = max(probe_max, _rayleigh(op, p))

    m0 = max(ritz_val, rho, probe_max, op.sigma_max)
    proxy = op.sigma_max + _grad_bound(op)
    return M0Estimate(m0, max(ritz_val, rho), probe_max, proxy, ascent_steps)


def _grad_bound(op: FrozenOperator) -> float:
    """Analytic proxy term ||sigma'||_inf ||v||_{H^2} (Sobolev constant 1)."""
    span = np.linspace(-20, 20, 4001)
    sig1 = float(np.max(np.abs(op.mobility.d1(span))))
    w = sobolev_weight(op.v.dim, op.v.grid_size, 2.0)
    h2 = math.sqrt(float(np.sum(w * np.abs(op.v.coeffs) ** 2)))
    return sig1 * h2


class ResolventNonConvergence(RuntimeError):
    pass


def resolvent_solve(
    op: FrozenOperator,
    m: float,
    f: SpectralField,
    m0: float | None = None,
    tol: float = 1e-8,
    maxiter: int = 10_000,
) -> SpectralField:
    """Solve ((m + m0) I - A) u = f with H^1 residual <= tol * ||f||_{H^1}."""
    if m <= 0:
        raise ValueError(f"m must be positive, got {m}")
    if m0 is None:
        m0 = estimate_m0(op, probes=16).m0
    dim, n = f.dim, f.grid_size
    shape = (n,) * dim
    shift = m + m0
    w_half = np.sqrt(sobolev_weight(dim, n, 1.0))
    sigma_bar = float(np.mean(op.sigma_samples))
    precond = 1.0 / (shift - sigma_bar * op.diffusion_multiplier)

    def matvec(x):
        u = SpectralField(dim, n, (x.reshape(shape)) / w_half)
        au = apply(op, u)
        out = shift * u.coeffs - au.coeffs
        return (w_half * out).ravel()

    def psolve(x):
        return (precond * x.reshape(shape)).ravel()

    size = n**dim
    lin_op = LinearOperator((size, size), matvec=matvec, dtype=complex)
    pre_op = LinearOperator((size, size), matvec=psolve, dtype=complex)
    b = (w_half * f.coeffs).ravel()
    x, info = lgmres(lin_op, b, M=pre_op, rtol=tol * 1e-2, atol=0.0, maxiter=maxiter)
    if info != 0:
        raise ResolventNonConvergence(f"lgmres returned info = {info}")
    u = SpectralField(dim, n, x.reshape(shape) / w_half)
    residual = SpectralField(dim, n, (matvec(x) - b).reshape(shape) / w_half)
    f_norm = h1_norm(f)
    if h1_norm(residual) > tol * max(f_norm, 1e-300):
        raise ResolventNonConvergence(
            f"residual {h1_norm(residual):.3e} above {tol:.1e} * ||f|| = {tol * f_norm:.3e}"
        )
    return u


def evolve(op: FrozenOperator, u0: SpectralField, t: float, steps: int) -> SpectralField:
    """Approximate S(t) u0 by Crank-Nicolson IMEX on the frozen generator.

    The constant-coefficient part sigma_max * D is treated by the trapezoidal
    rule (diagonal solves); the variable-coefficient remainder explicitly,
    with one corrector pass.  For constant sigma this is exact Crank-Nicolson.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if t == 0 or steps == 0:
        return u0
    dim, n = u0.dim, u0.grid_size
    dt = t / steps
    c = op.sigma_max
    d_mult = op.diffusion_multiplier
    denom = 1.0 - 0.5 * dt * c * d_mult
    numer = 1.0 + 0.5 * dt * c * d_mult
    uniform = op.mobility.is_constant

    def correction(coeffs):
        smoothed = from_fourier(SpectralField(dim, n, d_mult * coeffs))
        return to_fourier((op.sigma_samples - c) * smoothed).coeffs

    u = u0.coeffs
    for k in range(steps):
        if uniform:
            u = numer * u / denom
        else:
            c0 = correction(u)
            pred = (numer * u + dt * c0) / denom
            u = (numer * u + 0.5 * dt * (c0 + correction(pred))) / denom
        if not np.all(np.isfinite(u)):
            raise BlowUpInEvolve(k, steps)
    return SpectralField(dim, n, u)


class BlowUpInEvolve(RuntimeError):
    def __init__(self, step: int, steps: int):
        super().__init__(f"semigroup evolution blew up at step {step}/{steps}")


def _commutator_apply(op: FrozenOperator, w: SpectralField) -> SpectralField:
    """(I - delta Lap) [sigma(R_delta v), R_delta] w."""
    delta = op.delta
    sig = op.sigma_samples
    rw = resolvent(w, delta)
    term1 = to_fourier(sig * from_fourier(rw))
    term2 = resolvent(to_fourier(sig * from_fourier(w)), delta)
    comm = term1 - term2
    mult = 1.0 + delta * FOUR_PI_SQ * _ksq(w.dim, w.grid_size)
    return SpectralField(w.dim, w.grid_size, mult * comm.coeffs)


def _commutator_adjoint(op: FrozenOperator, z: SpectralField) -> SpectralField:
    """L^2 adjoint: -[sigma(R_delta v), R_delta] (I - delta Lap) z."""
    delta = op.delta
    sig = op.sigma_samples
    mult = 1.0 + delta * FOUR_PI_SQ * _ksq(z.dim, z.grid_size)
    y = SpectralField(z.dim, z.grid_size, mult * z.coeffs)
    ry = resolvent(y, delta)
    term1 = to_fourier(sig * from_fourier(ry))
    term2 = resolvent(to_fourier(sig * from_fourier(y)), delta)
    return -(term1 - term2)


def _project_mean_zero(f: SpectralField) -> SpectralField:
    c = f.coeffs.copy()
    c[(0,) * f.dim] = 0.0
    return SpectralField(f.dim, f.grid_size, c)


def commutator_norm(
    v: SpectralField,
    mobility: Mobility,
    delta: float,
    probes: int = 8,
    iters: int = 60,
    rng: np.random.Generator | None = None,
) -> float:
    """Power-iteration estimate (lower bound) of the commutator norm on L^2_0."""
    if probes < 8:
        raise ValueError(f"need at least 8 probes, got {probes}")
    if rng is None:
        rng = np.random.default_rng(1)
    op = FrozenOperator(v, mobility, delta)
    best = 0.0
    for _ in range(probes):
        w = _project_mean_zero(random_field(rng, v.dim, v.grid_size, decay=0.0))
        norm = math.sqrt(max(l2_sq(w), 0.0))
        if norm == 0:
            continue
        w = w * (1.0 / norm)
        est = 0.0
        for _ in range(iters):
            cw = _commutator_apply(op, w)
            val = math.sqrt(max(l2_sq(cw), 0.0))
            if val <= 1e-15:
                est = 0.0
                break
            g = _project_mean_zero(_commutator_adjoint(op, cw))
            gnorm = math.sqrt(max(l2_sq(g), 0.0))
            if gnorm <= 1e-300:
                est = val
                break
            new_est = val
            if abs(new_est - est) <= 1e-10 * max(est, 1e-30):
                est = new_est
                break
            est = new_est
            w = g * (1.0 / gnorm)
        best = max(best, est)
    return best


def l2_sq(f: SpectralField) -> float:
    return float(np.sum(np.abs(f.coeffs) ** 2))
