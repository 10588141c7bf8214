"""Outer partition with frozen mobility + stabilized IMEX inner integrator.

One run advances du = sigma_i (Lap u - R_eta W_l'(R_eta u)) dt
+ sqrt(2 sigma_i) j * dW on each outer interval, where sigma_i is sigma
evaluated at the previous interval's time-averaged state (the first interval
uses a mollified initial datum).  The inner substep treats the stiff
constant-coefficient part implicitly:

    (I - dt s_max Lap) u+ = u + dt [ s (Lap u - R_eta W_l'(R_eta u))
                                     - s_max Lap u ] + sqrt(2 s) (j * dW)

with s the frozen mobility field and s_max = max s, so the implicit solve is
a diagonal Fourier multiplier.  Runs abort (never clip) when |u| exceeds
10 * ell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diagnostics
from .model import Mobility, NoiseKernel, Potential, TruncatedPotential, truncate
from .noise import NoisePath, wiener_increment
from .torus_field import (
    FOUR_PI_SQ,
    SpectralField,
    _ksq,
    constant_field,
    convolve,
    fine_samples,
    from_fourier,
    grid_points,
    load_field,
    pointwise_apply,
    resample,
    resolvent,
    sobolev_norm,
    to_fourier,
)

BLOWUP_FACTOR = 10.0

NDJSON_KEYS = ("F", "F_le", "willmore", "l2", "h1", "h2")
SERIES_KEYS = NDJSON_KEYS + ("willmore_reg",)


class BlowUpError(RuntimeError):
    def __init__(self, time: float, step: int, max_abs: float):
        super().__init__(
            f"field escaped (|u| = {max_abs:.3g}) at t = {time:.6g}, substep {step}"
        )
        self.time = time
        self.step = step
        self.max_abs = max_abs


@dataclass(frozen=True)
class InitialCondition:
    """Initial datum spec, buildable at any resolution (for refinement runs)."""

    kind: str  # constant | cosine | checkpoint | field
    params: tuple = ()

    def build(self, dim: int, grid_size: int) -> SpectralField:
        if self.kind == "constant":
            (value,) = self.params
            return constant_field(value, dim, grid_size)
        if self.kind == "cosine":
            amplitude, mode, offset = self.params
            x = grid_points(dim, grid_size)[0]
            return to_fourier(offset + amplitude * np.cos(2.0 * np.pi * mode * x))
        if self.kind == "checkpoint":
            (path,) = self.params
            f = load_field(path)
            if f.dim != dim:
                raise ValueError(f"checkpoint dim {f.dim} != configured {dim}")
            return resample(f, grid_size)
        if self.kind == "field":
            (f,) = self.params
            return resample(f, grid_size)
        raise ValueError(f"unknown initial condition kind {self.kind!r}")


@dataclass(frozen=True)
class SchemeConfig:
    dim: int
    grid_size: int
    horizon: float
    outer_steps: int
    inner_substeps: int
    eta: float
    ell: float
    potential: Potential
    mobility: Mobility
    kernel: NoiseKernel
    initial: InitialCondition
    seed: int = 0
    replicate: int = 0

    @property
    def inner_dt(self) -> float:
        return self.horizon / (self.outer_steps * self.inner_substeps)

    @property
    def total_substeps(self) -> int:
        return self.outer_steps * self.inner_substeps

    def validate(self) -> None:
        if self.outer_steps < 1 or self.inner_substeps < 1:
            raise ValueError("outer_steps and inner_substeps must be >= 1")
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.ell <= self.potential.convex_radius:
            raise ValueError(
                f"ell = {self.ell} must exceed the non-convex radius "
                f"{self.potential.convex_radius}"
            )

    def truncated_potential(self) -> TruncatedPotential:
        return truncate(self.potential, self.ell)


def make_path(cfg: SchemeConfig, master_grid: int | None = None,
              steps_total: int | None = None) -> NoisePath:
    steps = steps_total if steps_total is not None else cfg.total_substeps
    return NoisePath(
        seed=cfg.seed,
        replicate=cfg.replicate,
        dim=cfg.dim,
        master_grid=master_grid if master_grid is not None else cfg.grid_size,
        inner_dt=cfg.horizon / steps,
        steps_total=steps,
    )


def mollify_initial(u0: SpectralField, n: int) -> SpectralField:
    """Heat-kernel mollification exp(-4 pi^2 |k|^2 / n): positive, unit mass."""
    if n < 1:
        raise ValueError(f"mollification index must be >= 1, got {n}")
    mult = np.exp(-FOUR_PI_SQ * _ksq(u0.dim, u0.grid_size) / n)
    return SpectralField(u0.dim, u0.grid_size, mult * u0.coeffs)


@dataclass
class SchemeState:
    u: SpectralField
    sigma_samples: np.ndarray
    sigma_max: float
    sigma_uniform: bool
    accum: np.ndarray
    accum_count: int
    outer_index: int
    substep: int
    last_dissipation: float = math.nan  # int sigma (Lap u - reac)^2 at the left endpoint


def _freeze_sigma(v: SpectralField, cfg: SchemeConfig):
    if cfg.mobility.is_constant:
        c = cfg.mobility.sup_sigma
        samples = np.full((cfg.grid_size,) * cfg.dim, c)
        return samples, c, True
    samples = cfg.mobility.value(from_fourier(v))
    smin = float(np.min(samples))
    if smin <= 0:
        raise ValueError(f"frozen mobility not strictly positive: min = {smin}")
    return samples, float(np.max(samples)), False


def initialize(cfg: SchemeConfig, u0: SpectralField | None = None) -> SchemeState:
    cfg.validate()
    if u0 is None:
        u0 = cfg.initial.build(cfg.dim, cfg.grid_size)
    v0 = mollify_initial(u0, cfg.outer_steps)
    samples, smax, uniform = _freeze_sigma(v0, cfg)
    return SchemeState(
        u=u0,
        sigma_samples=samples,
        sigma_max=smax,
        sigma_uniform=uniform,
        accum=np.zeros_like(u0.coeffs),
        accum_count=0,
        outer_index=0,
        substep=0,
    )


def inner_step(state: SchemeState, dW: SpectralField | None, cfg: SchemeConfig) -> SchemeState:
    """One IMEX substep; accumulates the left endpoint into the time average."""
    u = state.u
    dt = cfg.inner_dt
    lap_mult = -FOUR_PI_SQ * _ksq(cfg.dim, cfg.grid_size)
    tp = cfg.truncated_potential()

    lin = lap_mult * u.coeffs
    if not cfg.potential.is_zero:
        reac = resolvent(
            pointwise_apply(tp.d1, resolvent(u, cfg.eta)), cfg.eta
        )
        lin = lin - reac.coeffs

    if state.sigma_uniform:
        drift_coeffs = state.sigma_max * lin
        # Parseval: int lin^2 dx = sum |lin_k|^2
        dissipation = state.sigma_max * float(np.sum(np.abs(lin) ** 2))
    else:
        lin_phys = from_fourier(SpectralField(cfg.dim, cfg.grid_size, lin))
        drift_phys = state.sigma_samples * lin_phys
        drift_coeffs = to_fourier(drift_phys).coeffs
        dissipation = float(np.mean(state.sigma_samples * lin_phys**2))

    rhs = u.coeffs + dt * (drift_coeffs - state.sigma_max * lap_mult * u.coeffs)

    if dW is not None and not cfg.kernel.is_zero:
        smoothed = convolve(cfg.kernel.as_field(cfg.dim, cfg.grid_size), dW)
        if state.sigma_uniform:
            rhs = rhs + math.sqrt(2.0 * state.sigma_max) * smoothed.coeffs
        else:
            amp = np.sqrt(2.0 * state.sigma_samples)
            rhs = rhs + to_fourier(amp * from_fourier(smoothed)).coeffs

    new_coeffs = rhs / (1.0 - dt * state.sigma_max * lap_mult)
    new_u = SpectralField(cfg.dim, cfg.grid_size, new_coeffs)

    return SchemeState(
        u=new_u,
        sigma_samples=state.sigma_samples,
        sigma_max=state.sigma_max,
        sigma_uniform=state.sigma_uniform,
        accum=state.accum + u.coeffs,
        accum_count=state.accum_count + 1,
        outer_index=state.outer_index,
        substep=state.substep + 1,
        last_dissipation=dissipation,
    )


def close_outer_interval(state: SchemeState, cfg: SchemeConfig) -> SchemeState:
    """Refreeze sigma at the completed interval's time average and reset."""
    if state.accum_count != cfg.inner_substeps:
        raise ValueError(
            f"close_outer_interval called mid-interval: accumulator holds "
            f"{state.accum_count} of {cfg.inner_substeps} substeps"
        )
    v = SpectralField(cfg.dim, cfg.grid_size, state.accum / state.accum_count)
    samples, smax, uniform = _freeze_sigma(v, cfg)
    return SchemeState(
        u=state.u,
        sigma_samples=samples,
        sigma_max=smax,
        sigma_uniform=uniform,
        accum=np.zeros_like(state.accum),
        accum_count=0,
        outer_index=state.outer_index + 1,
        substep=state.substep,
        last_dissipation=state.last_dissipation,
    )


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    series: dict[str, np.ndarray]
    fields: list[SpectralField] | None
    sup_F: float
    sup_F_le: float
    sup_h1: float
    int_willmore: float
    int_willmore_reg: float
    freeze_checks: list[tuple[float, float]]  # (|grad v|, interval max |grad u|)

    def ndjson_lines(self) -> list[str]:
        import json

        lines = []
        for i, t in enumerate(self.times):
            rec = {"t": float(t)}
            for key in NDJSON_KEYS:
                rec[key] = float(self.series[key][i])
            lines.append(json.dumps(rec))
        return lines


def _resolve_sample_indices(cfg: SchemeConfig, sample_times) -> dict[int, float]:
    dt = cfg.inner_dt
    total = cfg.total_substeps
    if sample_times is None:
        sample_times = np.linspace(0.0, cfg.horizon, cfg.outer_steps + 1)
    out: dict[int, float] = {}
    for t in np.asarray(sample_times, dtype=float):
        if t < -1e-12 or t > cfg.horizon + 1e-12:
            raise ValueError(f"sample time {t} outside [0, {cfg.horizon}]")
        idx = int(round(t / dt))
        if abs(idx * dt - t) > 1e-9 * max(1.0, cfg.horizon):
            raise ValueError(
                f"sample time {t} is not on the substep grid (dt = {dt})"
            )
        out[min(idx, total)] = idx * dt
    return dict(sorted(out.items()))


def run(
    cfg: SchemeConfig,
    path: NoisePath | None = None,
    sample_times: Sequence[float] | None = None,
    record_fields: bool = False,
    monitor: bool = True,
    series: bool = True,
    u0: SpectralField | None = None,
) -> TrajectoryRecord:
    """Integrate one trajectory; deterministic given (cfg, path).

    monitor=True tracks sup/integral diagnostics at every substep; series=False
    skips scalar diagnostics entirely (checkpoint fields only), which is what
    the large martingale ensembles use.
    """
    cfg.validate()
    if path is None:
        path = make_path(cfg)
    total = cfg.total_substeps
    if path.steps_total % total != 0:
        raise ValueError(
            f"noise path with {path.steps_total} steps cannot drive "
            f"{total} substeps (non-integer refinement ratio)"
        )
    stride = path.steps_total // total
    if abs(path.inner_dt * stride - cfg.inner_dt) > 1e-12 * max(1.0, cfg.inner_dt):
        raise ValueError("noise path horizon does not match the scheme horizon")

    samples = _resolve_sample_indices(cfg, sample_times)
    tp = cfg.truncated_potential()
    state = initialize(cfg, u0=u0)
    has_noise = not cfg.kernel.is_zero

    times: list[float] = []
    trajectory: dict[str, list[float]] = {k: [] for k in SERIES_KEYS}
    fields: list[SpectralField] | None = [] if record_fields else None
    freeze_checks: list[tuple[float, float]] = []

    sup_F = sup_F_le = sup_h1 = -math.inf
    int_w = int_w_reg = 0.0
    prev_w = prev_w_reg = None
    interval_max_grad = 0.0
    guard = BLOWUP_FACTOR * cfg.ell

    def observe(step_idx: int, dissipation: float) -> None:
        nonlocal sup_F, sup_F_le, sup_h1, int_w, int_w_reg, prev_w, prev_w_reg
        nonlocal interval_max_grad
        u = state.u
        t = step_idx * cfg.inner_dt
        want_scalars = monitor or (series and step_idx in samples)
        u_fine = fine_samples(u, 2.0) if want_scalars else from_fourier(u)
        max_abs = float(np.max(np.abs(u_fine)))
        if not np.isfinite(max_abs) or max_abs > guard:
            raise BlowUpError(t, step_idx, max_abs)
        grad_sq = 2.0 * diagnostics.gradient_energy(u)
        interval_max_grad = max(interval_max_grad, math.sqrt(grad_sq))

        if want_scalars:
            f_val = 0.5 * grad_sq + float(np.mean(cfg.potential.value(u_fine)))
            sm_fine = u_fine if cfg.eta == 0 else fine_samples(resolvent(u, cfg.eta), 2.0)
            f_le = 0.5 * grad_sq + float(np.mean(tp.value(sm_fine)))
            w_val = diagnostics.willmore(u, cfg.potential, cfg.mobility)
            w_reg = dissipation
            if math.isnan(w_reg):
                w_reg = diagnostics.regularized_willmore(
                    u, tp, cfg.eta, state.sigma_samples
                )
            sup_F = max(sup_F, f_val)
            sup_F_le = max(sup_F_le, f_le)
            sup_h1 = max(sup_h1, sobolev_norm(u, 1.0))
            if prev_w is not None:
                int_w += 0.5 * (prev_w + w_val) * cfg.inner_dt
                int_w_reg += 0.5 * (prev_w_reg + w_reg) * cfg.inner_dt
            prev_w, prev_w_reg = w_val, w_reg
        if step_idx in samples:
            times.append(t)
            if series:
                trajectory["F"].append(f_val)
                trajectory["F_le"].append(f_le)
                trajectory["willmore"].append(w_val)
                trajectory["willmore_reg"].append(w_reg)
                trajectory["l2"].append(sobolev_norm(u, 0.0))
                trajectory["h1"].append(sobolev_norm(u, 1.0))
                trajectory["h2"].append(sobolev_norm(u, 2.0))
            if record_fields:
                fields.append(u.copy())

    step = 0
    observe(0, math.nan)
    for i in range(cfg.outer_steps):
        interval_max_grad = 0.0
        for _ in range(cfg.inner_substeps):
            dW = (
                wiener_increment(path, step * stride, (step + 1) * stride, cfg.grid_size)
                if has_noise
                else None
            )
            state = inner_step(state, dW, cfg)
            step += 1
            observe(step, state.last_dissipation if monitor else math.nan)
        if i < cfg.outer_steps - 1:
            v_coeffs = state.accum / state.accum_count
            grad_v = math.sqrt(
                FOUR_PI_SQ
                * float(np.sum(_ksq(cfg.dim, cfg.grid_size) * np.abs(v_coeffs) ** 2))
            )
            freeze_checks.append((grad_v, interval_max_grad))
            state = close_outer_interval(state, cfg)

    return TrajectoryRecord(
        times=np.asarray(times),
        series={k: np.asarray(v) for k, v in trajectory.items()},
        fields=fields,
        sup_F=sup_F,
        sup_F_le=sup_F_le,
        sup_h1=sup_h1,
        int_willmore=int_w,
        int_willmore_reg=int_w_reg,
        freeze_checks=freeze_checks,
    )
