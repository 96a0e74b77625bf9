"""Shared domain types and validated scenario configuration.

All powers and gains are stored linear-scale (watts / unitless). Config files
use dBm for the power entries and dB for reference gain and Rician factor,
matching how such parameters are usually tabulated; `load_config` converts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

RECEIVERS = ("l_t", "l_r", "e_t", "e_r")
USERS = ("l_t", "l_r")
EVES = ("e_t", "e_r")

# side served by each receiver: transmission half-space or reflection half-space
RECEIVER_SIDE = {"l_t": "t", "e_t": "t", "l_r": "r", "e_r": "r"}


class ConfigError(ValueError):
    pass


def dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts):
    return 10.0 * math.log10(watts) + 30.0


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def linear_to_db(x):
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class SystemConfig:
    """Scenario scalars. Defaults reproduce the desk-scale reference setup."""

    num_bs_antennas: int = 8          # M
    num_elements: int = 12            # N
    wavelength: float = 0.1           # meters
    num_paths: int = 2                # L, shared by every channel
    noise_power_user: float = 1e-12   # watts (-90 dBm)
    noise_power_eve: float = 1e-12    # watts
    max_power: float = 1.0            # watts (30 dBm)
    region_edge: float = 0.25         # meters (2.5 wavelengths)
    min_separation: float = 0.05      # meters (half wavelength)
    rate_floor_user: float = 0.0      # bits/s/Hz
    rate_ceiling_eve: float = 10.0    # bits/s/Hz
    path_loss_exponent: float = 2.2
    reference_gain: float = 1e-3      # linear power gain at 1 m (-30 dB)
    rician_factor: float = 10.0 ** 0.5  # linear (5 dB)
    step_init: float = 10.0           # gradient ascent initial step
    step_shrink: float = 0.9
    smoothing_init: float = 1.0
    smoothing_shrink: float = 0.1
    penalty_init_rho: float = 1e-6
    penalty_init_eta: float = 1e-6
    penalty_scale_rho: float = 10.0
    penalty_scale_eta: float = 10.0
    tol_ao: float = 1e-3              # fractional increase stop, outer loop
    tol_position: float = 1e-5        # absolute increase stop, inner ascent
    tol_passive: float = 1e-5         # fractional increase stop, surface SCA
    tol_active: float = 1e-5          # fractional increase stop, beamformer SCA
    tol_rank: float = 1e-7            # lifted-matrix rank residual target
    max_ao_iters: int = 10
    max_position_iters: int = 30
    max_passive_iters: int = 25
    max_active_iters: int = 30
    rng_seed: int = 0


_INT_FIELDS = {
    "num_bs_antennas", "num_elements", "num_paths",
    "max_ao_iters", "max_position_iters", "max_passive_iters",
    "max_active_iters", "rng_seed",
}

# config-file fields entered in dB scale, with the conversion applied at load
_DB_FIELDS = {
    "noise_power_user": dbm_to_watts,
    "noise_power_eve": dbm_to_watts,
    "max_power": dbm_to_watts,
    "reference_gain": db_to_linear,
    "rician_factor": db_to_linear,
}
_DB_FIELDS_INV = {
    "noise_power_user": watts_to_dbm,
    "noise_power_eve": watts_to_dbm,
    "max_power": watts_to_dbm,
    "reference_gain": linear_to_db,
    "rician_factor": linear_to_db,
}


def validate_config(cfg: SystemConfig) -> SystemConfig:
    """Return cfg unchanged iff every invariant holds, else raise ConfigError
    naming the first violated invariant."""

    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.num_bs_antennas >= 2, f"num_bs_antennas must be >= 2, got {cfg.num_bs_antennas}")
    need(cfg.num_elements >= 2, f"num_elements must be >= 2, got {cfg.num_elements}")
    need(cfg.num_paths >= 1, f"num_paths must be >= 1, got {cfg.num_paths}")
    for name in ("wavelength", "noise_power_user", "noise_power_eve", "max_power",
                 "region_edge", "min_separation", "reference_gain", "rician_factor",
                 "step_init", "smoothing_init", "penalty_init_rho", "penalty_init_eta",
                 "tol_ao", "tol_position", "tol_passive", "tol_active", "tol_rank"):
        v = getattr(cfg, name)
        need(v > 0.0 and math.isfinite(v), f"{name} must be strictly positive, got {v}")
    need(0.0 < cfg.step_shrink < 1.0,
         f"step_shrink must lie in (0, 1), got {cfg.step_shrink}")
    need(0.0 < cfg.smoothing_shrink < 1.0,
         f"smoothing_shrink must lie in (0, 1), got {cfg.smoothing_shrink}")
    need(cfg.penalty_scale_rho > 1.0,
         f"penalty_scale_rho must exceed 1, got {cfg.penalty_scale_rho}")
    need(cfg.penalty_scale_eta > 1.0,
         f"penalty_scale_eta must exceed 1, got {cfg.penalty_scale_eta}")
    need(cfg.min_separation < cfg.region_edge,
         f"min_separation {cfg.min_separation} must be smaller than region_edge "
         f"{cfg.region_edge} (no feasible layout otherwise)")
    need(cfg.rate_floor_user >= 0.0,
         f"rate_floor_user must be nonnegative, got {cfg.rate_floor_user}")
    need(cfg.rate_ceiling_eve > 0.0,
         f"rate_ceiling_eve must be strictly positive, got {cfg.rate_ceiling_eve}")
    need(cfg.path_loss_exponent > 0.0,
         f"path_loss_exponent must be strictly positive, got {cfg.path_loss_exponent}")
    for name in ("max_ao_iters", "max_position_iters", "max_passive_iters", "max_active_iters"):
        need(getattr(cfg, name) >= 1, f"{name} must be >= 1")
    return cfg


def parse_kv_file(path) -> dict:
    """Flat key = value file (UTF-8, # comments) to an ordered string dict.
    Duplicate keys and lines without '=' are errors."""
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key in entries:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            entries[key] = val.strip()
    return entries


def config_from_entries(entries, where="<config>", **overrides) -> SystemConfig:
    """Build a validated SystemConfig from string entries keyed by field name.
    Power entries are dBm, reference_gain and rician_factor are dB; overrides
    are already-converted values applied last."""
    known = {f.name for f in fields(SystemConfig)}
    values = {}
    for key, val in entries.items():
        if key not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            if key in _INT_FIELDS:
                values[key] = int(val)
            else:
                x = float(val)
                values[key] = _DB_FIELDS[key](x) if key in _DB_FIELDS else x
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {val!r}") from exc
    values.update(overrides)
    return validate_config(SystemConfig(**values))


def load_config(path, **overrides) -> SystemConfig:
    """Parse a flat key = value file (UTF-8, # comments). Keys match the
    SystemConfig field names; unknown keys are errors. Power entries are dBm,
    reference_gain and rician_factor are dB."""
    return config_from_entries(parse_kv_file(path), where=str(path), **overrides)


def save_config(cfg: SystemConfig, path):
    """Write cfg in the load_config file format (dB-scale power entries)."""
    lines = []
    for f in fields(SystemConfig):
        v = getattr(cfg, f.name)
        if f.name in _DB_FIELDS_INV:
            v = _DB_FIELDS_INV[f.name](v)
        lines.append(f"{f.name} = {v!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def cmatrix(entries) -> np.ndarray:
    """Validated complex matrix: 2-D complex128, finite, column-major storage,
    frozen after construction."""
    a = np.array(entries, dtype=np.complex128, order="F")
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    a.flags.writeable = False
    return a


def _frozen_real(a, shape_hint):
    arr = np.array(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{shape_hint} entries must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ElementLayout:
    """Surface element positions (2 x N, meters, columns r_n = [x_n, y_n]^T)
    plus the fixed BS antenna positions (2 x M).

    Region and separation feasibility depend on the scenario; use
    `layout_violations` to check against a config. The position optimizer only
    guarantees the separation constraint at termination, so construction does
    not enforce it.
    """

    me_positions: np.ndarray
    bs_positions: np.ndarray

    def __post_init__(self):
        me = _frozen_real(self.me_positions, "me_positions")
        bs = _frozen_real(self.bs_positions, "bs_positions")
        if me.ndim != 2 or me.shape[0] != 2:
            raise ValueError(f"me_positions must be 2 x N, got {me.shape}")
        if bs.ndim != 2 or bs.shape[0] != 2:
            raise ValueError(f"bs_positions must be 2 x M, got {bs.shape}")
        object.__setattr__(self, "me_positions", me)
        object.__setattr__(self, "bs_positions", bs)

    @property
    def num_elements(self):
        return self.me_positions.shape[1]


def bs_array_positions(cfg: SystemConfig) -> np.ndarray:
    """Fixed BS array: half-wavelength-spaced linear array along x, centered."""
    m = np.arange(cfg.num_bs_antennas, dtype=float)
    x = (m - (cfg.num_bs_antennas - 1) / 2.0) * (cfg.wavelength / 2.0)
    return np.vstack([x, np.zeros_like(x)])


def min_pairwise_distance(positions: np.ndarray) -> float:
    n = positions.shape[1]
    if n < 2:
        return math.inf
    diff = positions[:, :, None] - positions[:, None, :]
    d = np.sqrt((diff ** 2).sum(axis=0))
    iu = np.triu_indices(n, k=1)
    return float(d[iu].min())


def layout_violations(layout: ElementLayout, cfg: SystemConfig,
                      region_tol=0.0, sep_tol=1e-9) -> list[str]:
    """List of violated placement constraints; empty when feasible."""
    out = []
    half = cfg.region_edge / 2.0
    if np.abs(layout.me_positions).max() > half + region_tol:
        out.append(f"element outside region (|coord| max "
                   f"{np.abs(layout.me_positions).max():.6g} > {half:.6g})")
    dmin = min_pairwise_distance(layout.me_positions)
    if dmin < cfg.min_separation - sep_tol:
        out.append(f"pairwise separation {dmin:.6g} below {cfg.min_separation:.6g}")
    return out


@dataclass(frozen=True)
class SurfaceCoefficients:
    """Energy-splitting amplitudes and phases of the surface.

    beta_t[n] + beta_r[n] = 1 holds exactly: beta_t is stored and beta_r
    derived. Phases live in [0, 2pi). The derived vectors q_t, q_r have
    entries sqrt(beta) * exp(j theta), so |q_t[n]|^2 + |q_r[n]|^2 = 1.
    """

    beta_t: np.ndarray
    theta_t: np.ndarray
    theta_r: np.ndarray

    def __post_init__(self):
        bt = _frozen_real(self.beta_t, "beta_t")
        tt = _frozen_real(self.theta_t, "theta_t")
        tr = _frozen_real(self.theta_r, "theta_r")
        if not (bt.shape == tt.shape == tr.shape) or bt.ndim != 1:
            raise ValueError("beta_t, theta_t, theta_r must be equal-length vectors")
        if np.any(bt < 0.0) or np.any(bt > 1.0):
            raise ValueError("beta_t entries must lie in [0, 1]")
        twopi = 2.0 * math.pi
        if np.any(tt < 0.0) or np.any(tt >= twopi) or np.any(tr < 0.0) or np.any(tr >= twopi):
            raise ValueError("phases must lie in [0, 2pi)")
        object.__setattr__(self, "beta_t", bt)
        object.__setattr__(self, "theta_t", tt)
        object.__setattr__(self, "theta_r", tr)

    @property
    def beta_r(self):
        return 1.0 - self.beta_t

    @property
    def q_t(self):
        return np.sqrt(self.beta_t) * np.exp(1j * self.theta_t)

    @property
    def q_r(self):
        return np.sqrt(self.beta_r) * np.exp(1j * self.theta_r)

    def q(self, side):
        if side == "t":
            return self.q_t
        if side == "r":
            return self.q_r
        raise ValueError(f"unknown side {side!r}")


def even_split_coefficients(n: int) -> SurfaceCoefficients:
    return SurfaceCoefficients(np.full(n, 0.5), np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class Beamformer:
    """BS transmit beamforming matrix, M x 2 complex; column 0 serves l_t,
    column 1 serves l_r."""

    W: np.ndarray

    def __post_init__(self):
        w = np.array(self.W, dtype=np.complex128, order="F")
        if w.ndim != 2 or w.shape[1] != 2:
            raise ValueError(f"W must be M x 2, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("W entries must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "W", w)

    def column(self, user):
        return self.W[:, USERS.index(user)]

    @property
    def total_power(self):
        return float(np.sum(np.abs(self.W) ** 2))


def check_beamformer_power(bf: Beamformer, cfg: SystemConfig, tol=1e-9):
    if bf.total_power > cfg.max_power + tol:
        raise ValueError(f"beamformer power {bf.total_power:.12g} exceeds budget "
                         f"{cfg.max_power:.12g}")
    return bf


def other_user(user):
    return "l_r" if user == "l_t" else "l_t"
