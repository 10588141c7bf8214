"""Monte Carlo ensembles, shared-noise refinement and coupling studies,
and the martingale-property statistical tests.

Everything here is a pure function of (configs, seeds, replicate counts):
replicates may evaluate on a thread pool, but aggregation is ordered by
replicate id so reports are independent of the thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .diagnostics import MartingaleSeries, martingale_statistic, uniqueness_metric
from .noise import NoisePath, ReusedNoisePath
from .scheme import (
    BlowUpError,
    SchemeConfig,
    TrajectoryRecord,
    make_path,
    run,
)
from .torus_field import SpectralField, grid_points, l2_distance, resample, to_fourier

AXIS_ATTR = {
    "n": "outer_steps",
    "m": "inner_substeps",
    "eta": "eta",
    "ell": "ell",
    "N": "grid_size",
}

MOMENT_KEYS = ("sup_F", "sup_F_le", "int_willmore", "int_willmore_reg", "sup_h1")


class ExcessiveBlowUps(RuntimeError):
    pass


def _map_replicates(fn, count: int, threads: int = 1):
    if threads <= 1:
        return [fn(r) for r in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


@dataclass(frozen=True)
class ReplicateSummary:
    replicate: int
    sup_F: float
    sup_F_le: float
    int_willmore: float
    int_willmore_reg: float
    sup_h1: float
    blew_up: bool
    blowup_time: float | None = None


@dataclass(frozen=True)
class EnsembleReport:
    replicates: int
    summaries: tuple[ReplicateSummary, ...]
    moments: dict[tuple[str, int], tuple[float, float]]  # (quantity, p) -> (mean, se)
    blowup_count: int

    def csv_lines(self) -> list[str]:
        hdr = "replicate,sup_F,sup_F_le,int_willmore,int_willmore_reg,sup_h1,blew_up"
        lines = [hdr]
        for s in self.summaries:
            lines.append(
                f"{s.replicate},{s.sup_F!r},{s.sup_F_le!r},{s.int_willmore!r},"
                f"{s.int_willmore_reg!r},{s.sup_h1!r},{int(s.blew_up)}"
            )
        return lines


def run_ensemble(
    cfg: SchemeConfig,
    replicates: int,
    threads: int = 1,
    sample_times: Sequence[float] | None = None,
) -> EnsembleReport:
    """Per-replicate sup/integral diagnostics and their p = 1, 2 moments."""
    if replicates < 2:
        raise ValueError(f"need at least 2 replicates, got {replicates}")

    def one(r: int) -> ReplicateSummary:
        c = replace(cfg, replicate=cfg.replicate + r)
        try:
            rec = run(c, sample_times=sample_times, monitor=True)
        except BlowUpError as e:
            return ReplicateSummary(r, math.nan, math.nan, math.nan, math.nan,
                                    math.nan, True, e.time)
        return ReplicateSummary(
            r, rec.sup_F, rec.sup_F_le, rec.int_willmore, rec.int_willmore_reg,
            rec.sup_h1, False,
        )

    summaries = _map_replicates(one, replicates, threads)
    blowups = sum(s.blew_up for s in summaries)
    if blowups > 0.05 * replicates:
        raise ExcessiveBlowUps(
            f"{blowups}/{replicates} replicates blew up (> 5% budget)"
        )
    ok = [s for s in summaries if not s.blew_up]
    moments: dict[tuple[str, int], tuple[float, float]] = {}
    for key in MOMENT_KEYS:
        vals = np.array([getattr(s, key) for s in ok])
        for p in (1, 2):
            x = vals**p
            moments[(key, p)] = (
                float(np.mean(x)),
                float(np.std(x, ddof=1) / math.sqrt(len(x))),
            )
    return EnsembleReport(replicates, tuple(summaries), moments, blowups)


@dataclass(frozen=True)
class CouplingReport:
    label_a: str
    label_b: str
    times: np.ndarray
    l2_series: np.ndarray
    psi_series: np.ndarray

    @property
    def sup_l2(self) -> float:
        return float(np.max(self.l2_series))

    @property
    def sup_psi(self) -> float:
        return float(np.max(self.psi_series))

    @property
    def final_psi(self) -> float:
        return float(self.psi_series[-1])

    def ndjson_lines(self) -> list[str]:
        import json

        return [
            json.dumps({"t": float(t), "l2": float(d), "psi": float(p)})
            for t, d, p in zip(self.times, self.l2_series, self.psi_series)
        ]


def _common_sample_times(cfgs: Sequence[SchemeConfig], max_samples: int = 33) -> np.ndarray:
    g = 0
    for c in cfgs:
        g = math.gcd(g, c.total_substeps)
    stride = max(1, int(math.ceil(g / (max_samples - 1))))
    ks = list(range(0, g, stride)) + [g]
    horizon = cfgs[0].horizon
    return np.array(sorted(set(ks))) * (horizon / g)


def _shared_path(cfgs: Sequence[SchemeConfig]) -> NoisePath:
    steps = 1
    for c in cfgs:
        steps = steps * c.total_substeps // math.gcd(steps, c.total_substeps)
    master = max(c.grid_size for c in cfgs)
    base = cfgs[0]
    return NoisePath(
        seed=base.seed,
        replicate=base.replicate,
        dim=base.dim,
        master_grid=master,
        inner_dt=base.horizon / steps,
        steps_total=steps,
    )


def _compare(rec_a: TrajectoryRecord, rec_b: TrajectoryRecord,
             mobility, label_a: str, label_b: str) -> CouplingReport:
    l2 = np.zeros(len(rec_a.times))
    psi = np.zeros(len(rec_a.times))
    for i, (fa, fb) in enumerate(zip(rec_a.fields, rec_b.fields)):
        m = max(fa.grid_size, fb.grid_size)
        fa2, fb2 = resample(fa, m), resample(fb, m)
        l2[i] = l2_distance(fa2, fb2)
        psi[i] = uniqueness_metric(fa2, fb2, mobility)
    return CouplingReport(label_a, label_b, rec_a.times.copy(), l2, psi)


def refinement_study(
    base: SchemeConfig,
    axis: str,
    levels: Sequence,
    sample_times: Sequence[float] | None = None,
) -> list[CouplingReport]:
    """Run every level with one master noise path; compare consecutive levels."""
    if axis not in AXIS_ATTR:
        raise ValueError(f"unknown refinement axis {axis!r}")
    levels = list(levels)
    if len(levels) < 2:
        raise ValueError("need at least two levels")
    diffs = np.diff(np.asarray(levels, dtype=float))
    if not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ValueError(f"levels must be strictly monotone, got {levels}")

    cfgs = [replace(base, **{AXIS_ATTR[axis]: lv}) for lv in levels]
    for c in cfgs:
        c.validate()
    path = _shared_path(cfgs)
    times = np.asarray(sample_times, dtype=float) if sample_times is not None \
        else _common_sample_times(cfgs)
    records = [
        run(c, path=path, sample_times=times, record_fields=True, monitor=False,
            series=False)
        for c in cfgs
    ]
    reports = []
    for (la, ra), (lb, rb) in zip(
        zip(levels, records), zip(levels[1:], records[1:])
    ):
        reports.append(
            _compare(ra, rb, base.mobility, f"{axis}={la}", f"{axis}={lb}")
        )
    return reports


def _check_same_equation(cfg_a: SchemeConfig, cfg_b: SchemeConfig) -> None:
    if cfg_a.dim != cfg_b.dim or cfg_a.horizon != cfg_b.horizon:
        raise ValueError("coupled runs must share dimension and horizon")
    if (
        cfg_a.potential.descriptor != cfg_b.potential.descriptor
        or cfg_a.mobility.descriptor != cfg_b.mobility.descriptor
        or cfg_a.kernel != cfg_b.kernel
    ):
        raise ValueError("coupled runs must solve the same equation (model differs)")


def coupling_experiment(
    cfg_a: SchemeConfig,
    cfg_b: SchemeConfig,
    sample_times: Sequence[float] | None = None,
) -> CouplingReport:
    """Same noise, different numerics: track the uniqueness metric in time."""
    _check_same_equation(cfg_a, cfg_b)
    if (cfg_a.seed, cfg_a.replicate) != (cfg_b.seed, cfg_b.replicate):
        raise ValueError("coupling requires identical noise keys")
    cfgs = [cfg_a, cfg_b]
    path = _shared_path(cfgs)
    times = np.asarray(sample_times, dtype=float) if sample_times is not None \
        else _common_sample_times(cfgs)
    rec_a = run(cfg_a, path=path, sample_times=times, record_fields=True,
                monitor=False, series=False)
    rec_b = run(cfg_b, path=path, sample_times=times, record_fields=True,
                monitor=False, series=False)
    return _compare(rec_a, rec_b, cfg_a.mobility, "A", "B")


@dataclass(frozen=True)
class SeparationReport:
    shared_sup_psi: np.ndarray
    independent_sup_psi: np.ndarray

    @property
    def ratio(self) -> float:
        return float(np.mean(self.shared_sup_psi) / np.mean(self.independent_sup_psi))


def coupling_separation(
    cfg_a: SchemeConfig,
    cfg_b: SchemeConfig,
    pairs: int = 16,
    baseline_offset: int = 100_000,
    threads: int = 1,
) -> SeparationReport:
    """Shared-noise vs independent-noise sup_t Psi over replicate pairs."""

    def one(r: int):
        a = replace(cfg_a, replicate=cfg_a.replicate + r)
        b = replace(cfg_b, replicate=cfg_b.replicate + r)
        shared = coupling_experiment(a, b).sup_psi
        b_ind = replace(b, replicate=b.replicate + baseline_offset)
        # independent baseline: same marginal laws, unrelated noise
        cfgs = [a, b_ind]
        times = _common_sample_times(cfgs)
        rec_a = run(a, path=_shared_path([a]), sample_times=times,
                    record_fields=True, monitor=False, series=False)
        rec_b = run(b_ind, path=_shared_path([b_ind]), sample_times=times,
                    record_fields=True, monitor=False, series=False)
        indep = _compare(rec_a, rec_b, cfg_a.mobility, "A", "B-indep").sup_psi
        return shared, indep

    out = _map_replicates(one, pairs, threads)
    return SeparationReport(
        shared_sup_psi=np.array([s for s, _ in out]),
        independent_sup_psi=np.array([i for _, i in out]),
    )


@dataclass(frozen=True)
class IntervalZScore:
    t_start: float
    t_end: float
    z_mean: float
    z_var: float


@dataclass(frozen=True)
class MartingaleTestReport:
    replicates: int
    control: str
    degenerate: bool
    intervals: tuple[IntervalZScore, ...]
    threshold: float = 4.0

    @property
    def max_abs_z(self) -> float:
        if not self.intervals:
            return math.nan
        return max(max(abs(z.z_mean), abs(z.z_var)) for z in self.intervals)

    @property
    def passed(self) -> bool:
        return (not self.degenerate) and self.max_abs_z < self.threshold


def default_test_function(dim: int, grid_size: int, mode: int = 1) -> SpectralField:
    x = grid_points(dim, grid_size)[0]
    return to_fourier(np.cos(2.0 * np.pi * mode * x))


def martingale_test(
    cfg: SchemeConfig,
    replicates: int,
    psi: SpectralField | None = None,
    test_times: Sequence[float] | None = None,
    control: str = "none",
    threads: int = 1,
) -> MartingaleTestReport:
    """z-tests for mean-zero increments and for the predicted quadratic variation.

    control="reuse" deliberately replays the first half of each test interval's
    noise in its second half; a correct implementation must then fail the
    variance test.
    """
    if replicates < 100:
        raise ValueError(f"need at least 100 replicates for power, got {replicates}")
    if control not in ("none", "reuse"):
        raise ValueError(f"unknown control {control!r}")
    if cfg.kernel.is_zero:
        return MartingaleTestReport(replicates, control, True, ())

    total = cfg.total_substeps
    dt = cfg.inner_dt
    checkpoints = np.arange(total + 1) * dt
    if psi is None:
        psi = default_test_function(cfg.dim, cfg.grid_size)
    if test_times is None:
        test_times = np.linspace(0.0, cfg.horizon, 5)
    idx = []
    for t in np.asarray(test_times, dtype=float):
        i = int(round(t / dt))
        if abs(i * dt - t) > 1e-9 * max(1.0, cfg.horizon):
            raise ValueError(f"test time {t} not on the substep grid")
        idx.append(i)
    idx = sorted(set(idx))
    if len(idx) < 2:
        raise ValueError("need at least two distinct test times")
    periods = np.diff(idx)
    period = int(periods[0])
    if control == "reuse":
        if not np.all(periods == period):
            raise ValueError("the reuse control needs equally spaced test times")
        if period % 2 != 0:
            raise ValueError("the reuse control needs an even number of substeps per interval")

    def one(r: int):
        c = replace(cfg, replicate=cfg.replicate + r)
        path = make_path(c)
        if control == "reuse":
            path = ReusedNoisePath(
                seed=path.seed, replicate=path.replicate, dim=path.dim,
                master_grid=path.master_grid, inner_dt=path.inner_dt,
                steps_total=path.steps_total, period=period,
            )
        rec = run(c, path=path, sample_times=checkpoints, record_fields=True,
                  monitor=False, series=False)
        ms: MartingaleSeries = martingale_statistic(
            rec.times, rec.fields, psi, cfg.potential, cfg.mobility, cfg.kernel
        )
        d = np.diff(ms.values[idx])
        q = np.diff(ms.qv_predicted[idx])
        return d, q

    out = _map_replicates(one, replicates, threads)
    d_mat = np.stack([d for d, _ in out])  # (replicates, intervals)
    q_mat = np.stack([q for _, q in out])

    scores = []
    for j in range(d_mat.shape[1]):
        d = d_mat[:, j]
        x = d**2 - q_mat[:, j]
        z_mean = float(np.mean(d) / (np.std(d, ddof=1) / math.sqrt(len(d))))
        z_var = float(np.mean(x) / (np.std(x, ddof=1) / math.sqrt(len(x))))
        scores.append(
            IntervalZScore(idx[j] * dt, idx[j + 1] * dt, z_mean, z_var)
        )
    return MartingaleTestReport(replicates, control, False, tuple(scores))
