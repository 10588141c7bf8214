"""macf: stochastic Allen-Cahn with mobility and colored noise on the torus.

Spectral simulator plus a verification suite for the energy, noise, coupling
and semigroup estimates the construction rests on.
"""

__version__ = "0.1.0"

from .model import (
    Mobility,
    NoiseKernel,
    Potential,
    TruncatedPotential,
    check_assumptions,
    default_model,
    h_antiderivative,
    truncate,
)
from .noise import NoisePath, apply_B, hs_trace, martingale_increment_variance, wiener_increment
from .scheme import (
    BlowUpError,
    InitialCondition,
    SchemeConfig,
    TrajectoryRecord,
    close_outer_interval,
    inner_step,
    make_path,
    mollify_initial,
    run,
)
from .torus_field import (
    SobolevIndex,
    SpectralField,
    convolve,
    from_fourier,
    laplacian,
    load_field,
    pointwise_apply,
    resolvent,
    save_field,
    sobolev_norm,
    to_fourier,
)

__all__ = [
    "BlowUpError",
    "InitialCondition",
    "Mobility",
    "NoiseKernel",
    "NoisePath",
    "Potential",
    "SchemeConfig",
    "SobolevIndex",
    "SpectralField",
    "TrajectoryRecord",
    "TruncatedPotential",
    "apply_B",
    "check_assumptions",
    "close_outer_interval",
    "convolve",
    "default_model",
    "from_fourier",
    "h_antiderivative",
    "hs_trace",
    "inner_step",
    "laplacian",
    "load_field",
    "make_path",
    "martingale_increment_variance",
    "mollify_initial",
    "pointwise_apply",
    "resolvent",
    "run",
    "save_field",
    "sobolev_norm",
    "to_fourier",
    "truncate",
    "wiener_increment",
]
