"""Command-line driver.

Subcommands: simulate, ensemble, converge, couple, mgtest, semigroup,
check-model.  Every run writes a JSON manifest next to its outputs; feeding
the manifest back as --config reproduces the run bit-for-bit.

Exit codes: 0 success, 2 config error, 3 blow-up, 4 FAIL verdict.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    apply_overrides,
    build_kernel,
    build_mobility,
    build_potential,
    build_scheme_config,
    load_raw,
    sample_times,
    threads_from,
    validate,
)
from .experiments import (
    ExcessiveBlowUps,
    coupling_experiment,
    coupling_separation,
    default_test_function,
    martingale_test,
    refinement_study,
    run_ensemble,
)
from .model import check_assumptions
from .scheme import BlowUpError, run
from .semigroup import FrozenOperator, commutator_norm, estimate_m0, evolve
from .torus_field import random_field, sobolev_norm

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_FAIL = 4


def _say(quiet: bool, *args) -> None:
    if not quiet:
        print(*args)


def _verdict(name: str, passed: bool, metric: str, value) -> int:
    print(f"VERDICT {name} {'PASS' if passed else 'FAIL'} {metric}={value}")
    return EXIT_OK if passed else EXIT_FAIL


class _Manifest:
    def __init__(self, command: str, resolved: dict, outdir: Path, seed: int | None):
        self.data = {
            "tool": "macf",
            "version": __version__,
            "command": command,
            "config": resolved,
            "seed_override": seed,
            "outputs": [],
            "timings": {},
            "started_at": time.time(),
        }
        self.outdir = outdir
        outdir.mkdir(parents=True, exist_ok=True)
        self._write()

    def _write(self) -> None:
        with open(self.outdir / "manifest.json", "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)

    def add_output(self, path: Path) -> None:
        self.data["outputs"].append(str(path))

    def finalize(self, **timings) -> None:
        self.data["timings"].update(timings)
        self.data["finished_at"] = time.time()
        self._write()


def _write_lines(path: Path, lines) -> None:
    with open(path, "w") as fh:
        for line in lines:
            fh.write(line + "\n")


def cmd_simulate(resolved, outdir: Path, seed, quiet) -> int:
    cfg = build_scheme_config(resolved, seed)
    times = sample_times(resolved, cfg)
    manifest = _Manifest("simulate", resolved, outdir, seed)
    t0 = time.perf_counter()
    try:
        rec = run(cfg, sample_times=times)
    except BlowUpError as e:
        print(f"blow-up: {e}", file=sys.stderr)
        return EXIT_BLOWUP
    out = outdir / "trajectory.ndjson"
    _write_lines(out, rec.ndjson_lines())
    manifest.add_output(out)
    manifest.finalize(run_seconds=time.perf_counter() - t0)
    _say(quiet, f"wrote {out} ({len(rec.times)} records)")
    return EXIT_OK


def cmd_ensemble(resolved, outdir: Path, seed, quiet) -> int:
    cfg = build_scheme_config(resolved, seed)
    times = sample_times(resolved, cfg)
    replicates = resolved["ensemble"]["replicates"]
    threads = threads_from(resolved)
    manifest = _Manifest("ensemble", resolved, outdir, seed)
    t0 = time.perf_counter()
    try:
        report = run_ensemble(cfg, replicates, threads=threads, sample_times=times)
    except ExcessiveBlowUps as e:
        print(str(e), file=sys.stderr)
        return _verdict("ensemble", False, "blowups", str(e))
    out = outdir / "ensemble.csv"
    _write_lines(out, report.csv_lines())
    manifest.add_output(out)
    manifest.finalize(run_seconds=time.perf_counter() - t0)
    for (key, p), (mean, se) in sorted(report.moments.items()):
        _say(quiet, f"E[{key}^{p}] = {mean:.6g} +- {se:.2g}")
    return _verdict("ensemble", True, "blowups", report.blowup_count)


def cmd_converge(resolved, outdir: Path, seed, quiet) -> int:
    cfg = build_scheme_config(resolved, seed)
    axis = resolved["converge"]["axis"]
    levels = resolved["converge"]["levels"]
    manifest = _Manifest("converge", resolved, outdir, seed)
    t0 = time.perf_counter()
    try:
        reports = refinement_study(cfg, axis, levels)
    except (ValueError, BlowUpError) as e:
        if isinstance(e, BlowUpError):
            print(f"blow-up: {e}", file=sys.stderr)
            return EXIT_BLOWUP
        raise ConfigError("converge", str(e)) from e
    lines = []
    for rep in reports:
        for t, d, p in zip(rep.times, rep.l2_series, rep.psi_series):
            lines.append(json.dumps(
                {"pair": f"{rep.label_a}->{rep.label_b}", "t": float(t),
                 "l2": float(d), "psi": float(p)}))
    out = outdir / "converge.ndjson"
    _write_lines(out, lines)
    manifest.add_output(out)
    manifest.finalize(run_seconds=time.perf_counter() - t0)
    sups = [rep.sup_l2 for rep in reports]
    for rep, s in zip(reports, sups):
        _say(quiet, f"{rep.label_a} -> {rep.label_b}: sup_t L2 distance {s:.6g}")
    decreasing = all(b < a or (a == b == 0.0) for a, b in zip(sups, sups[1:]))
    worst = max((b / a if a > 0 else 0.0) for a, b in zip(sups, sups[1:])) \
        if len(sups) > 1 else 0.0
    return _verdict("converge", decreasing, "max_ratio", f"{worst:.6g}")


def cmd_couple(resolved, outdir: Path, seed, quiet) -> int:
    cfg_a = build_scheme_config(resolved, seed)
    overrides = resolved["couple"]["overrides"]
    resolved_b = apply_overrides(resolved, overrides)
    cfg_b = build_scheme_config(resolved_b, seed)
    pairs = resolved["couple"]["pairs"]
    manifest = _Manifest("couple", resolved, outdir, seed)
    t0 = time.perf_counter()
    if pairs > 1:
        sep = coupling_separation(
            cfg_a, cfg_b, pairs=pairs,
            baseline_offset=resolved["couple"]["baseline_offset"],
            threads=threads_from(resolved),
        )
        out = outdir / "couple.ndjson"
        _write_lines(out, [json.dumps({
            "pair": i, "shared_sup_psi": float(s), "independent_sup_psi": float(b)})
            for i, (s, b) in enumerate(zip(sep.shared_sup_psi, sep.independent_sup_psi))])
        manifest.add_output(out)
        manifest.finalize(run_seconds=time.perf_counter() - t0)
        return _verdict("couple", sep.ratio < 0.1, "ratio", f"{sep.ratio:.6g}")
    report = coupling_experiment(cfg_a, cfg_b)
    out = outdir / "couple.ndjson"
    _write_lines(out, report.ndjson_lines())
    manifest.add_output(out)
    manifest.finalize(run_seconds=time.perf_counter() - t0)
    return _verdict("couple", np.isfinite(report.sup_psi), "sup_psi",
                    f"{report.sup_psi:.6g}")


def cmd_mgtest(resolved, outdir: Path, seed, quiet) -> int:
    cfg = build_scheme_config(resolved, seed)
    sec = resolved["mgtest"]
    psi = default_test_function(cfg.dim, cfg.grid_size, sec["psi_mode"])
    test_times = np.linspace(0.0, cfg.horizon, sec["test_count"])
    manifest = _Manifest("mgtest", resolved, outdir, seed)
    t0 = time.perf_counter()
    report = martingale_test(
        cfg, sec["replicates"], psi=psi, test_times=test_times,
        control=sec["control"], threads=threads_from(resolved),
    )
    lines = ["t_start,t_end,z_mean,z_var"]
    for z in report.intervals:
        lines.append(f"{z.t_start!r},{z.t_end!r},{z.z_mean!r},{z.z_var!r}")
    out = outdir / "mgtest.csv"
    _write_lines(out, lines)
    manifest.add_output(out)
    manifest.finalize(run_seconds=time.perf_counter() - t0)
    if report.degenerate:
        print("VERDICT mgtest PASS degenerate=1 (no noise: not scored)")
        return EXIT_OK
    for z in report.intervals:
        _say(quiet, f"[{z.t_start:.4g}, {z.t_end:.4g}]: "
                    f"z_mean={z.z_mean:+.3f} z_var={z.z_var:+.3f}")
    return _verdict("mgtest", report.passed, "max_abs_z", f"{report.max_abs_z:.3f}")


def cmd_semigroup(resolved, outdir: Path, seed, quiet) -> int:
    cfg = build_scheme_config(resolved, seed)
    sec = resolved["semigroup"]
    v = cfg.initial.build(cfg.dim, cfg.grid_size)
    rng = np.random.default_rng(cfg.seed)
    probes = [random_field(rng, cfg.dim, cfg.grid_size, decay=1.0)
              for _ in range(max(4, sec["probes"] // 4))]
    manifest = _Manifest("semigroup", resolved, outdir, seed)
    t0 = time.perf_counter()
    lines = ["delta,commutator_estimate,m0,max_growth_ratio"]
    estimates = []
    for delta in sec["deltas"]:
        op = FrozenOperator(v, cfg.mobility, float(delta))
        est = commutator_norm(v, cfg.mobility, float(delta),
                              probes=max(8, sec["probes"] // 2))
        m0 = estimate_m0(op, probes=max(16, sec["probes"])).m0
        ratios = []
        for u0 in probes:
            out_f = evolve(op, u0, sec["evolve_time"], sec["evolve_steps"])
            bound = np.exp(m0 * sec["evolve_time"]) * sobolev_norm(u0, 1.0)
            ratios.append(sobolev_norm(out_f, 1.0) / bound)
        estimates.append(est)
        lines.append(f"{delta!r},{est!r},{m0!r},{max(ratios)!r}")
        _say(quiet, f"delta={delta:g}: commutator={est:.4g} m0={m0:.4g} "
                    f"growth={max(ratios):.4g}")
    out = outdir / "semigroup.csv"
    _write_lines(out, lines)
    manifest.add_output(out)
    manifest.finalize(run_seconds=time.perf_counter() - t0)
    decreasing = all(b < a for a, b in zip(estimates, estimates[1:]))
    return _verdict("semigroup", decreasing, "commutator_decreasing",
                    int(decreasing))


def cmd_check_model(resolved, outdir: Path, seed, quiet) -> int:
    potential = build_potential(resolved)
    mobility = build_mobility(resolved)
    kernel = build_kernel(resolved)
    rng = resolved["assumptions"]["range"]
    report = check_assumptions(
        potential, mobility, kernel,
        sample_range=(float(rng[0]), float(rng[1])),
        samples=resolved["assumptions"]["samples"],
    )
    manifest = _Manifest("check-model", resolved, outdir, seed)
    out = outdir / "check_model.txt"
    _write_lines(out, report.lines())
    manifest.add_output(out)
    manifest.finalize()
    for line in report.lines():
        _say(quiet, line)
    n_pass = sum(it.passed for it in report.items)
    return _verdict("check-model", report.passed, "items",
                    f"{n_pass}/{len(report.items)}")


COMMANDS = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "converge": cmd_converge,
    "couple": cmd_couple,
    "mgtest": cmd_mgtest,
    "semigroup": cmd_semigroup,
    "check-model": cmd_check_model,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="macf",
        description="Spectral simulator for a stochastic Allen-Cahn equation "
                    "with mobility and colored noise",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML config or JSON manifest")
        p.add_argument("--out", default="macf_out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override noise.seed")
        p.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        resolved = validate(load_raw(args.config))
        code = COMMANDS[args.command](
            resolved, Path(args.out), args.seed, args.quiet
        )
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"config error at <file>: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())
