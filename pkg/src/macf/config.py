"""TOML config loading, strict validation, and builders for run objects.

Configs use dotted keys via TOML sections ([scheme] N = 128 is scheme.N).
Unknown keys are errors: silent typos in experiment configs are worse than
loud ones.  A JSON run manifest may be passed wherever a config is expected;
its embedded resolved config is used, which reproduces the original run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .model import (
    Mobility,
    NoiseKernel,
    Potential,
    constant_mobility,
    default_mobility,
    double_well_potential,
    polynomial_mobility,
    polynomial_potential,
    rational_mobility,
)
from .scheme import InitialCondition, SchemeConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config error at {key}: {message}")
        self.key = key


# section -> key -> (python type, default); REQUIRED means no default.
REQUIRED = object()

SCHEMA: dict[str, dict[str, tuple]] = {
    "scheme": {
        "d": (int, REQUIRED),
        "N": (int, REQUIRED),
        "T": (float, REQUIRED),
        "n": (int, REQUIRED),
        "m": (int, REQUIRED),
        "eta": (float, 1e-3),
        "ell": (float, 10.0),
    },
    "initial": {
        "kind": (str, "constant"),
        "params": (dict, {}),
        "checkpoint_path": (str, ""),
    },
    "sampling": {
        "times": (list, None),
        "count": (int, None),
    },
    "potential": {
        "kind": (str, "double_well"),
        "params": (list, []),
    },
    "mobility": {
        "kind": (str, "default"),
        "params": (dict, {}),
    },
    "kernel": {
        "r": (float, 1.5),
        "amplitude": (float, 1.0),
    },
    "noise": {
        "seed": (int, 12345),
        "replicate": (int, 0),
    },
    "runtime": {
        "threads": (int, 0),  # 0: use available cores
    },
    "assumptions": {
        "range": (list, [-20.0, 20.0]),
        "samples": (int, 100_000),
    },
    "ensemble": {
        "replicates": (int, 64),
    },
    "converge": {
        "axis": (str, "m"),
        "levels": (list, [4, 8, 16]),
    },
    "couple": {
        "overrides": (dict, {}),
        "pairs": (int, 1),
        "baseline_offset": (int, 100_000),
    },
    "mgtest": {
        "replicates": (int, 200),
        "test_count": (int, 5),
        "psi_mode": (int, 1),
        "control": (str, "none"),
    },
    "semigroup": {
        "deltas": (list, [1e-1, 1e-2, 1e-3, 1e-4]),
        "probes": (int, 16),
        "evolve_time": (float, 0.1),
        "evolve_steps": (int, 64),
        "m_values": (list, [0.1, 1.0, 10.0]),
    },
}


def load_raw(path) -> dict:
    path = Path(path)
    text = path.read_bytes()
    if path.suffix == ".json":
        manifest = json.loads(text)
        if "config" not in manifest:
            raise ConfigError("<manifest>", f"{path} has no embedded config")
        return manifest["config"]
    try:
        return tomllib.loads(text.decode())
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("<file>", f"{path} is not valid TOML: {e}") from e


def validate(raw: dict) -> dict:
    """Check the raw mapping against the schema and fill defaults."""
    out: dict[str, dict[str, Any]] = {}
    for section in raw:
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        if not isinstance(raw[section], dict):
            raise ConfigError(section, "expected a table")
        for key in raw[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
    for section, keys in SCHEMA.items():
        out[section] = {}
        present = raw.get(section, {})
        for key, (typ, default) in keys.items():
            if key in present:
                val = present[key]
                if typ is float and isinstance(val, int) and not isinstance(val, bool):
                    val = float(val)
                if typ is not None and not isinstance(val, typ):
                    raise ConfigError(
                        f"{section}.{key}",
                        f"expected {typ.__name__}, got {type(val).__name__}",
                    )
                out[section][key] = val
            elif default is REQUIRED:
                raise ConfigError(f"{section}.{key}", "missing required key")
            else:
                out[section][key] = default
    return out


def require_section(raw: dict, resolved: dict, section: str) -> None:
    """Fail with the first missing required key of a section (for commands
    whose driving section was omitted entirely)."""
    for key, (_, default) in SCHEMA[section].items():
        if default is REQUIRED and key not in raw.get(section, {}):
            raise ConfigError(f"{section}.{key}", "missing required key")


def build_potential(resolved: dict) -> Potential:
    kind = resolved["potential"]["kind"]
    params = resolved["potential"]["params"]
    if kind == "double_well":
        return double_well_potential()
    if kind == "polynomial":
        if not params:
            raise ConfigError("potential.params", "polynomial needs coefficients")
        return polynomial_potential([float(c) for c in params])
    raise ConfigError("potential.kind", f"unknown potential {kind!r}")


def build_mobility(resolved: dict) -> Mobility:
    kind = resolved["mobility"]["kind"]
    params = resolved["mobility"]["params"]
    if kind == "default":
        return default_mobility()
    if kind == "constant":
        if "value" not in params:
            raise ConfigError("mobility.params", "constant mobility needs value")
        return constant_mobility(float(params["value"]))
    if kind == "polynomial":
        if "coeffs" not in params:
            raise ConfigError("mobility.params", "polynomial mobility needs coeffs")
        return polynomial_mobility([float(c) for c in params["coeffs"]])
    if kind == "rational":
        if "num" not in params or "den" not in params:
            raise ConfigError("mobility.params", "rational mobility needs num and den")
        return rational_mobility(
            [float(c) for c in params["num"]], [float(c) for c in params["den"]]
        )
    raise ConfigError("mobility.kind", f"unknown mobility {kind!r}")


def build_kernel(resolved: dict) -> NoiseKernel:
    k = resolved["kernel"]
    return NoiseKernel(decay_exponent=k["r"], amplitude=k["amplitude"])


def build_initial(resolved: dict) -> InitialCondition:
    sec = resolved["initial"]
    kind = sec["kind"]
    params = sec["params"]
    if kind == "constant":
        return InitialCondition("constant", (float(params.get("value", 0.0)),))
    if kind == "cosine":
        return InitialCondition(
            "cosine",
            (
                float(params.get("amplitude", 0.1)),
                int(params.get("mode", 1)),
                float(params.get("offset", 0.0)),
            ),
        )
    if kind == "checkpoint":
        path = sec["checkpoint_path"] or params.get("checkpoint_path", "")
        if not path:
            raise ConfigError("initial.checkpoint_path", "missing checkpoint path")
        return InitialCondition("checkpoint", (path,))
    raise ConfigError("initial.kind", f"unknown initial condition {kind!r}")


def build_scheme_config(resolved: dict, seed_override: int | None = None) -> SchemeConfig:
    s = resolved["scheme"]
    noise_sec = resolved["noise"]
    seed = seed_override if seed_override is not None else noise_sec["seed"]
    cfg = SchemeConfig(
        dim=s["d"],
        grid_size=s["N"],
        horizon=s["T"],
        outer_steps=s["n"],
        inner_substeps=s["m"],
        eta=s["eta"],
        ell=s["ell"],
        potential=build_potential(resolved),
        mobility=build_mobility(resolved),
        kernel=build_kernel(resolved),
        initial=build_initial(resolved),
        seed=seed,
        replicate=noise_sec["replicate"],
    )
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError("scheme", str(e)) from e
    return cfg


def sample_times(resolved: dict, cfg: SchemeConfig) -> np.ndarray:
    sec = resolved["sampling"]
    if sec["times"] is not None:
        return np.asarray([float(t) for t in sec["times"]])
    count = sec["count"] if sec["count"] is not None else cfg.outer_steps + 1
    if count < 2:
        raise ConfigError("sampling.count", "need at least 2 sample times")
    return np.linspace(0.0, cfg.horizon, count)


def apply_overrides(resolved: dict, overrides: dict) -> dict:
    """Dotted scheme overrides for the coupled run ({n = 64} etc.)."""
    out = json.loads(json.dumps(resolved))  # deep copy of plain data
    for key, val in overrides.items():
        if key not in SCHEMA["scheme"]:
            raise ConfigError(f"couple.overrides.{key}", "not a scheme key")
        out["scheme"][key] = val
    return out


def threads_from(resolved: dict, env: dict | None = None) -> int:
    import os

    env = env if env is not None else os.environ
    if "MACF_THREADS" in env:
        try:
            n = int(env["MACF_THREADS"])
        except ValueError as e:
            raise ConfigError("runtime.threads", f"bad MACF_THREADS: {e}") from e
    else:
        n = resolved["runtime"]["threads"]
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, n)
