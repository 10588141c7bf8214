"""Potential, mobility and noise kernel, plus the structural-assumption checker.

The default model is W(u) = (u^2-1)^2/4, sigma(u) = 1 + 1/(1+u^2) and
j_hat(k) = (1 + 4 pi^2 |k|^2)^{-3/2}: a double well with quartic growth, a
smooth mobility pinched between 1 and 2, and an H^1 kernel in every d <= 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .torus_field import FOUR_PI_SQ, SpectralField, _ksq

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Potential:
    """W with first and second derivatives, all vectorized over samples."""

    value: ArrayFn
    d1: ArrayFn
    d2: ArrayFn
    convex_radius: float  # K = [-convex_radius, convex_radius]
    descriptor: tuple = ("custom",)
    is_zero: bool = False


@dataclass(frozen=True)
class TruncatedPotential:
    """W matched to its second-order Taylor quadratic beyond |u| = level."""

    base: Potential
    level: float

    def __post_init__(self):
        ell = self.level
        if ell <= 0:
            raise ValueError(f"truncation level must be positive, got {ell}")
        if ell < self.base.convex_radius:
            raise ValueError(
                f"truncation level {ell} lies inside the non-convex region "
                f"[-{self.base.convex_radius}, {self.base.convex_radius}]"
            )
        if not self.base.is_zero and float(self.base.d2(np.asarray(ell))) <= 0:
            raise ValueError(
                f"W''({ell}) = {float(self.base.d2(np.asarray(ell)))} <= 0: "
                "quadratic tail would not be convex"
            )

    def value(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        ell = self.level
        w_ell = float(self.base.value(np.asarray(ell)))
        w1 = float(self.base.d1(np.asarray(ell)))
        w2 = float(self.base.d2(np.asarray(ell)))
        tail = w_ell + w1 * (a - ell) + 0.5 * w2 * (a - ell) ** 2
        return np.where(a <= ell, self.base.value(np.clip(u, -ell, ell)), tail)

    def d1(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        ell = self.level
        w1 = float(self.base.d1(np.asarray(ell)))
        w2 = float(self.base.d2(np.asarray(ell)))
        tail = np.sign(u) * (w1 + w2 * (a - ell))
        return np.where(a <= ell, self.base.d1(np.clip(u, -ell, ell)), tail)

    def d2(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        ell = self.level
        w2 = float(self.base.d2(np.asarray(ell)))
        return np.where(a <= ell, self.base.d2(np.clip(u, -ell, ell)), w2)

    def lipschitz_d1(self, samples: int = 4097) -> float:
        """Global Lipschitz constant of the truncated derivative."""
        u = np.linspace(-self.level, self.level, samples)
        return float(np.max(np.abs(self.d2(u))))


@dataclass(frozen=True)
class Mobility:
    """sigma with derivatives and its uniform bounds; immutable after build."""

    value: ArrayFn
    d1: ArrayFn
    d2: ArrayFn
    inf_sigma: float
    sup_sigma: float
    descriptor: tuple = ("custom",)
    h_closed: Callable[[np.ndarray], np.ndarray] | None = None
    is_constant: bool = False

    def __post_init__(self):
        if self.h_closed is not None:
            # Registered closed forms are cross-checked against quadrature.
            for u in (-3.0, -0.7, 0.4, 1.0, 5.0):
                ref = _h_quad(self, u)
                got = float(self.h_closed(np.asarray(u)))
                if abs(got - ref) > 1e-9 * max(1.0, abs(ref)):
                    raise ValueError(
                        f"closed-form antiderivative disagrees with quadrature "
                        f"at u={u}: {got} vs {ref}"
                    )


@dataclass(frozen=True)
class NoiseKernel:
    """Convolution kernel via its radial spectrum amplitude*(1+4pi^2|k|^2)^{-r}."""

    decay_exponent: float = 1.5
    amplitude: float = 1.0

    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0.0

    def spectrum(self, dim: int, grid_size: int) -> np.ndarray:
        w = 1.0 + FOUR_PI_SQ * _ksq(dim, grid_size)
        return self.amplitude * w ** (-self.decay_exponent)

    def as_field(self, dim: int, grid_size: int) -> SpectralField:
        return SpectralField(dim, grid_size, self.spectrum(dim, grid_size).astype(complex))

    def h1_sum(self, dim: int, grid_size: int) -> float:
        """Truncated proxy for ||j||_{H^1}^2 on the grid's mode set."""
        w = 1.0 + FOUR_PI_SQ * _ksq(dim, grid_size)
        return float(np.sum(w * self.spectrum(dim, grid_size) ** 2))


def double_well_potential() -> Potential:
    return Potential(
        value=lambda u: 0.25 * (u**2 - 1.0) ** 2,
        d1=lambda u: u**3 - u,
        d2=lambda u: 3.0 * u**2 - 1.0,
        convex_radius=1.2,
        descriptor=("double_well",),
    )


def polynomial_potential(coeffs) -> Potential:
    """W as a polynomial, coefficients in ascending powers of u."""
    p = np.polynomial.Polynomial(coeffs)
    p1, p2 = p.deriv(1), p.deriv(2)
    roots = p2.roots()
    real = roots[np.abs(roots.imag) < 1e-12].real if roots.size else np.array([])
    radius = float(np.max(np.abs(real))) * 1.0001 if real.size else 0.0
    return Potential(
        value=lambda u: p(np.asarray(u, dtype=float)),
        d1=lambda u: p1(np.asarray(u, dtype=float)),
        d2=lambda u: p2(np.asarray(u, dtype=float)),
        convex_radius=radius,
        descriptor=("polynomial", tuple(float(c) for c in coeffs)),
        is_zero=not np.any(np.asarray(coeffs)),
    )


def default_mobility() -> Mobility:
    inv_sqrt2 = 1.0 / np.sqrt(2.0)

    def h(u):
        u = np.asarray(u, dtype=float)
        return u - inv_sqrt2 * np.arctan(u * inv_sqrt2)

    return Mobility(
        value=lambda u: 1.0 + 1.0 / (1.0 + np.asarray(u, dtype=float) ** 2),
        d1=lambda u: -2.0 * u / (1.0 + u**2) ** 2,
        d2=lambda u: (6.0 * u**2 - 2.0) / (1.0 + u**2) ** 3,
        inf_sigma=1.0,
        sup_sigma=2.0,
        descriptor=("default",),
        h_closed=h,
    )


def constant_mobility(c: float) -> Mobility:
    if c <= 0:
        raise ValueError(f"mobility must be strictly positive, got {c}")
    return Mobility(
        value=lambda u: np.full_like(np.asarray(u, dtype=float), c),
        d1=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        d2=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        inf_sigma=c,
        sup_sigma=c,
        descriptor=("constant", c),
        h_closed=lambda u: np.asarray(u, dtype=float) / c,
        is_constant=True,
    )


def rational_mobility(num, den) -> Mobility:
    """sigma = p(u)/q(u) from ascending coefficient lists."""
    p = np.polynomial.Polynomial(num)
    q = np.polynomial.Polynomial(den)
    p1, q1 = p.deriv(1), q.deriv(1)
    p2, q2 = p.deriv(2), q.deriv(2)

    def val(u):
        u = np.asarray(u, dtype=float)
        return p(u) / q(u)

    def d1(u):
        u = np.asarray(u, dtype=float)
        return (p1(u) * q(u) - p(u) * q1(u)) / q(u) ** 2

    def d2(u):
        u = np.asarray(u, dtype=float)
        return (
            p2(u) / q(u)
            - (2.0 * p1(u) * q1(u) + p(u) * q2(u)) / q(u) ** 2
            + 2.0 * p(u) * q1(u) ** 2 / q(u) ** 3
        )

    probe = np.linspace(-100, 100, 20001)
    vals = val(probe)
    return Mobility(
        value=val,
        d1=d1,
        d2=d2,
        inf_sigma=float(np.min(vals)),
        sup_sigma=float(np.max(vals)),
        descriptor=("rational", tuple(map(float, num)), tuple(map(float, den))),
    )


def polynomial_mobility(coeffs) -> Mobility:
    return rational_mobility(coeffs, [1.0])


def default_model() -> tuple[Potential, Mobility, NoiseKernel]:
    return double_well_potential(), default_mobility(), NoiseKernel()


def truncate(base: Potential, level: float) -> TruncatedPotential:
    return TruncatedPotential(base, level)


def _h_quad(m: Mobility, u: float) -> float:
    val, err = quad(lambda r: 1.0 / float(m.value(np.asarray(r))), 0.0, u,
                    epsabs=1e-12, epsrel=1e-12, limit=200)
    if err > 1e-8 * max(1.0, abs(val)):
        raise RuntimeError(f"antiderivative quadrature did not converge at u={u}: err={err}")
    return val


def h_antiderivative(m: Mobility, u: float) -> float:
    """h(u) = integral_0^u dr/sigma(r); closed form when registered."""
    if m.h_closed is not None:
        return float(m.h_closed(np.asarray(float(u))))
    return _h_quad(m, float(u))


def h_on_array(m: Mobility, values: np.ndarray) -> np.ndarray:
    """Vectorized h.

    Without a closed form, integrates 1/sigma once along the sorted unique
    values with fixed-order Gauss-Legendre panels (exact to roundoff for the
    smooth mobilities admitted here).
    """
    values = np.asarray(values, dtype=float)
    if m.h_closed is not None:
        return np.asarray(m.h_closed(values), dtype=float)
    flat = values.ravel()
    knots, inverse = np.unique(flat, return_inverse=True)
    knots_ext = np.unique(np.concatenate([knots, [0.0]]))
    nodes, weights = np.polynomial.legendre.leggauss(16)
    a, b = knots_ext[:-1], knots_ext[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * nodes[None, :]
    panel = half * np.sum(weights[None, :] / m.value(pts), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(panel)])
    cum -= cum[np.searchsorted(knots_ext, 0.0)]
    h_knots = cum[np.searchsorted(knots_ext, knots)]
    return h_knots[inverse].reshape(values.shape)


@dataclass(frozen=True)
class AssumptionItem:
    index: int
    name: str
    passed: bool
    constant: float
    witness: float | None = None
    detail: str = ""


@dataclass(frozen=True)
class AssumptionReport:
    items: tuple[AssumptionItem, ...]

    @property
    def passed(self) -> bool:
        return all(it.passed for it in self.items)

    def item(self, index: int) -> AssumptionItem:
        for it in self.items:
            if it.index == index:
                return it
        raise KeyError(index)

    def lines(self) -> list[str]:
        out = []
        for it in self.items:
            status = "PASS" if it.passed else "FAIL"
            msg = f"  [{it.index}] {it.name}: {status} (C = {it.constant:.6g}"
            if it.witness is not None:
                msg += f", witness u = {it.witness:.6g}"
            out.append(msg + ")" + (f" {it.detail}" if it.detail else ""))
        return out


def _growth_stops(u: np.ndarray, ratio: np.ndarray, slack: float = 1.05):
    """True when the ratio has stopped growing toward the sample boundary.

    Splits the range at 90% of max|u|; an outer maximum exceeding the inner
    one by more than `slack` flags unbounded growth, with the witness point.
    """
    finite = np.isfinite(ratio)
    if not finite.all():
        bad = np.argmax(~finite)
        return False, float(np.nanmax(ratio[finite])) if finite.any() else np.inf, float(u[bad])
    cut = 0.9 * np.max(np.abs(u))
    outer = np.abs(u) >= cut
    inner_max = float(np.max(ratio[~outer])) if (~outer).any() else 0.0
    outer_max = float(np.max(ratio[outer])) if outer.any() else 0.0
    overall = float(np.max(ratio))
    if outer_max > slack * max(inner_max, 1e-300):
        witness = float(u[outer][np.argmax(ratio[outer])])
        return False, overall, witness
    return True, overall, None


def check_assumptions(
    p: Potential,
    m: Mobility,
    j: NoiseKernel,
    sample_range: tuple[float, float] = (-20.0, 20.0),
    samples: int = 100_000,
    dim: int = 1,
    grid_size: int = 64,
) -> AssumptionReport:
    """Evaluate every structural condition on a dense sample grid.

    Growth conditions are existential in the constant, so each item reports
    the smallest sampled witness constant; boundedness is judged by whether
    the relevant ratio keeps growing toward the edge of the sample range.
    """
    lo, hi = sample_range
    if not (lo < -p.convex_radius and hi > p.convex_radius):
        raise ValueError("sample_range must cover and exceed the non-convex region")
    u = np.linspace(lo, hi, samples)
    if not np.any(u == 0.0):
        u = np.sort(np.append(u, 0.0))

    items = []

    w = np.asarray(p.value(u), dtype=float)
    w1 = np.asarray(p.d1(u), dtype=float)
    w2 = np.asarray(p.d2(u), dtype=float)
    sig = np.asarray(m.value(u), dtype=float)
    s1 = np.asarray(m.d1(u), dtype=float)
    s2 = np.asarray(m.d2(u), dtype=float)

    # (1) W >= 0 and uniformly convex outside K
    outside = np.abs(u) > p.convex_radius
    min_w = float(np.min(w))
    conv = float(np.min(w2[outside])) if outside.any() else -np.inf
    ok1 = min_w >= 0.0 and conv > 0.0
    witness1 = float(u[np.argmin(w)]) if min_w < 0 else (
        float(u[outside][np.argmin(w2[outside])]) if conv <= 0 else None)
    items.append(AssumptionItem(
        1, "W >= 0, uniformly convex at infinity", ok1,
        1.0 / conv if conv > 0 else np.inf, witness1,
        f"inf W'' outside K = {conv:.6g}"))

    # (2) |W| <= C(|u|^4 + 1)
    ratio = np.abs(w) / (np.abs(u) ** 4 + 1.0)
    ok, c, wit = _growth_stops(u, ratio)
    items.append(AssumptionItem(2, "quartic growth of W", ok, c, wit))

    # (3) |W'| <= C(|u|^3 + 1)
    ratio = np.abs(w1) / (np.abs(u) ** 3 + 1.0)
    ok, c, wit = _growth_stops(u, ratio)
    items.append(AssumptionItem(3, "cubic growth of W'", ok, c, wit))

    # (4) |W''| <= C(sqrt(W) + 1)
    ratio = np.abs(w2) / (np.sqrt(np.maximum(w, 0.0)) + 1.0)
    ok, c, wit = _growth_stops(u, ratio)
    items.append(AssumptionItem(4, "W'' controlled by sqrt(W)", ok, c, wit))

    # (5) 1/C <= sigma <= C
    min_sig = float(np.min(sig))
    max_sig = float(np.max(sig))
    if min_sig <= 0.0:
        items.append(AssumptionItem(
            5, "sigma uniformly strictly positive and bounded", False,
            np.inf, float(u[np.argmin(sig)]), f"min sigma = {min_sig:.6g}"))
    else:
        ok_inv, c_inv, wit_inv = _growth_stops(u, 1.0 / sig)
        ok_up, c_up, wit_up = _growth_stops(u, sig)
        ok5 = ok_inv and ok_up
        items.append(AssumptionItem(
            5, "sigma uniformly strictly positive and bounded", ok5,
            max(max_sig, 1.0 / min_sig),
            wit_inv if not ok_inv else wit_up,
            f"sigma in [{min_sig:.6g}, {max_sig:.6g}] on samples"))

    # (6) sigma', sigma'' bounded
    ok_a, c_a, wit_a = _growth_stops(u, np.abs(s1))
    ok_b, c_b, wit_b = _growth_stops(u, np.abs(s2))
    items.append(AssumptionItem(
        6, "sigma', sigma'' bounded", ok_a and ok_b, max(c_a, c_b),
        wit_a if not ok_a else wit_b))

    # kernel admissibility: the truncated H^1 sum must be stable under N-doubling
    s_n = j.h1_sum(dim, grid_size)
    s_2n = j.h1_sum(dim, 2 * grid_size)
    growth = s_2n / s_n - 1.0 if s_n > 0 else 0.0
    items.append(AssumptionItem(
        7, "kernel H^1 sum stable under mode doubling", growth < 0.01,
        s_2n, None, f"relative increase {growth:.3e} at N={grid_size}->{2*grid_size}"))

    return AssumptionReport(tuple(items))
