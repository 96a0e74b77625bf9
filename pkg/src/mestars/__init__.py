"""Sum secrecy rate optimization for a movable-element simultaneously
transmitting and reflecting surface downlink.

The library alternates three blocks: element position ascent under a smoothed
penalty, surface coefficient optimization over lifted Gram matrices, and
transmit beamforming via semidefinite relaxation, all on top of a small dense
interior-point solver. `mestars.ao.run` drives one full optimization;
`mestars.experiments.sweep` runs Monte Carlo comparisons against the
fixed-layout baselines; `mestars.cli` exposes both as commands.
"""

from .config import (
    Beamformer,
    ElementLayout,
    SurfaceCoefficients,
    SystemConfig,
    load_config,
    save_config,
    validate_config,
)
from .channel import sample_geometry
from .rates import rate_report, sum_secrecy_rate

__version__ = "0.1.0"

__all__ = [
    "Beamformer",
    "ElementLayout",
    "SurfaceCoefficients",
    "SystemConfig",
    "load_config",
    "save_config",
    "validate_config",
    "sample_geometry",
    "rate_report",
    "sum_secrecy_rate",
    "__version__",
]
