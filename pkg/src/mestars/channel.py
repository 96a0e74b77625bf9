"""Field-response channel model.

Samples one realization of the path geometry (angles, complex path gains,
node distances) and assembles the BS-to-surface and surface-to-receiver
channel responses as functions of the element positions. Under the plane-wave
assumption only the per-path phases depend on the positions, through the
field response vectors (FRVs); angles and gain amplitudes stay fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import RECEIVERS, RECEIVER_SIDE, ElementLayout, SystemConfig, bs_array_positions

BS_LOCATION = np.array([-50.0, -5.0, 10.0])  # meters, surface reference at origin
NODE_SQUARE_EDGE = 35.0                      # meters, user/eve placement square
MIN_NODE_DISTANCE = 1.0                      # meters, keeps path loss below unit gain


@dataclass(frozen=True)
class PathGeometry:
    """One channel realization.

    bs_aod / stars_aoa: (L, 2) arrays of (elevation, azimuth) in radians for
    the BS-to-surface link. stars_aod[k]: (L, 2) per receiver. sigma_bs is the
    L x L diagonal path-response matrix of the BS link; sigma_user[k] the
    length-L path response row toward receiver k. receiver_side flags which
    coefficient vector (transmission or reflection) serves each receiver.
    """

    wavelength: float
    bs_aod: np.ndarray
    stars_aoa: np.ndarray
    stars_aod: dict
    sigma_bs: np.ndarray
    sigma_user: dict
    d_bs: float
    d_user: dict
    receiver_side: dict

    @property
    def num_paths(self):
        return self.bs_aod.shape[0]


def path_variances(cfg: SystemConfig, distance: float) -> np.ndarray:
    """Per-path gain variances at the given link distance.

    Total mean power is reference_gain * d^-alpha; the Rician factor splits it
    between the single LoS path and the L-1 NLoS paths. With L = 1 everything
    is LoS.
    """
    total = cfg.reference_gain * distance ** (-cfg.path_loss_exponent)
    L = cfg.num_paths
    if L == 1:
        return np.array([total])
    kappa = cfg.rician_factor
    v = np.empty(L)
    v[0] = total * kappa / (kappa + 1.0)
    v[1:] = total / ((kappa + 1.0) * (L - 1))
    return v


def _cn_samples(rng, variances):
    std = np.sqrt(np.asarray(variances) / 2.0)
    return std * (rng.standard_normal(len(variances)) + 1j * rng.standard_normal(len(variances)))


def sample_geometry(cfg: SystemConfig, rng_seed) -> PathGeometry:
    """Draw one geometry realization, deterministic in rng_seed.

    Node placement: BS fixed at BS_LOCATION, users and eavesdroppers uniform
    in the 35 m square centered at the origin (rejecting draws closer than
    1 m to the surface). All AoA/AoD angles i.i.d. uniform on [-pi/2, pi/2].
    Path gains circularly-symmetric Gaussian with `path_variances`.
    """
    rng = np.random.default_rng(rng_seed)
    L = cfg.num_paths
    d_bs = float(np.linalg.norm(BS_LOCATION))

    def draw_angles(count):
        return rng.uniform(-math.pi / 2.0, math.pi / 2.0, size=(count, 2))

    d_user = {}
    for k in RECEIVERS:
        while True:
            xy = rng.uniform(-NODE_SQUARE_EDGE / 2.0, NODE_SQUARE_EDGE / 2.0, size=2)
            d = float(np.hypot(xy[0], xy[1]))
            if d >= MIN_NODE_DISTANCE:
                d_user[k] = d
                break

    bs_aod = draw_angles(L)
    stars_aoa = draw_angles(L)
    stars_aod = {k: draw_angles(L) for k in RECEIVERS}

    sigma_bs = np.diag(_cn_samples(rng, path_variances(cfg, d_bs)))
    sigma_user = {k: _cn_samples(rng, path_variances(cfg, d_user[k])) for k in RECEIVERS}

    return PathGeometry(
        wavelength=cfg.wavelength,
        bs_aod=bs_aod,
        stars_aoa=stars_aoa,
        stars_aod=stars_aod,
        sigma_bs=sigma_bs,
        sigma_user=sigma_user,
        d_bs=d_bs,
        d_user=d_user,
        receiver_side=dict(RECEIVER_SIDE),
    )


def _frv(position, angles, wavelength):
    # phase advance per path: x cos(theta) sin(phi) + y sin(theta)
    theta = angles[:, 0]
    phi = angles[:, 1]
    rho = position[0] * np.cos(theta) * np.sin(phi) + position[1] * np.sin(theta)
    return np.exp(1j * (2.0 * math.pi / wavelength) * rho)


def frv_bs(t_m, geom: PathGeometry) -> np.ndarray:
    """FRV of a BS antenna at planar position t_m (length-L, unit modulus)."""
    return _frv(np.asarray(t_m, dtype=float), geom.bs_aod, geom.wavelength)


def frv_stars_incident(r_n, geom: PathGeometry) -> np.ndarray:
    """FRV of a surface element toward the BS (incident channel)."""
    return _frv(np.asarray(r_n, dtype=float), geom.stars_aoa, geom.wavelength)


def frv_stars_user(r_n, k, geom: PathGeometry) -> np.ndarray:
    """FRV of a surface element toward receiver k."""
    if k not in geom.stars_aod:
        raise KeyError(f"unknown receiver id {k!r}; expected one of {RECEIVERS}")
    return _frv(np.asarray(r_n, dtype=float), geom.stars_aod[k], geom.wavelength)


def bs_field_matrix(layout: ElementLayout, geom: PathGeometry) -> np.ndarray:
    """E: L x M matrix of BS antenna FRVs (constant for a fixed array)."""
    return np.column_stack([frv_bs(layout.bs_positions[:, m], geom)
                            for m in range(layout.bs_positions.shape[1])])


def incident_field_matrix(layout: ElementLayout, geom: PathGeometry) -> np.ndarray:
    """F_in: L x N matrix of element FRVs toward the BS."""
    return np.column_stack([frv_stars_incident(layout.me_positions[:, n], geom)
                            for n in range(layout.num_elements)])


def user_field_matrix(layout: ElementLayout, k, geom: PathGeometry) -> np.ndarray:
    """F_k: L x N matrix of element FRVs toward receiver k."""
    return np.column_stack([frv_stars_user(layout.me_positions[:, n], k, geom)
                            for n in range(layout.num_elements)])


def bs_stars_channel(layout: ElementLayout, geom: PathGeometry) -> np.ndarray:
    """H(R) = F_in(R)^H Sigma_BS E, shape N x M."""
    f_in = incident_field_matrix(layout, geom)
    e = bs_field_matrix(layout, geom)
    return f_in.conj().T @ geom.sigma_bs @ e


def stars_user_channel(layout: ElementLayout, k, geom: PathGeometry) -> np.ndarray:
    """h_k(R) = sigma_{S,k} F_k(R), returned as a length-N vector."""
    return geom.sigma_user[k] @ user_field_matrix(layout, k, geom)


def default_layout_grid(cfg: SystemConfig, shrink=0.05) -> ElementLayout:
    """Deterministic start layout: uniform grid over the region shrunk by
    `shrink` so the boundary-free reparametrization stays finite."""
    n = cfg.num_elements
    nx = math.ceil(math.sqrt(n))
    ny = math.ceil(n / nx)
    half = cfg.region_edge / 2.0 * (1.0 - shrink)
    xs = np.linspace(-half, half, nx) if nx > 1 else np.array([0.0])
    ys = np.linspace(-half, half, ny) if ny > 1 else np.array([0.0])
    pts = [(x, y) for y in ys for x in xs][:n]
    return ElementLayout(np.array(pts).T, bs_array_positions(cfg))


# geometry snapshot serialization (versioned text format)

_GEOM_MAGIC = "geom-v1"


def save_geometry(geom: PathGeometry, path):
    lines = [_GEOM_MAGIC,
             f"wavelength {geom.wavelength!r}",
             f"d_bs {geom.d_bs!r}",
             f"num_paths {geom.num_paths}"]
    for o in range(geom.num_paths):
        g = geom.sigma_bs[o, o]
        lines.append(f"bs_path {o} {geom.bs_aod[o, 0]!r} {geom.bs_aod[o, 1]!r} "
                     f"{geom.stars_aoa[o, 0]!r} {geom.stars_aoa[o, 1]!r} "
                     f"{g.real!r} {g.imag!r}")
    for k in RECEIVERS:
        lines.append(f"receiver {k} {geom.receiver_side[k]} {geom.d_user[k]!r}")
        for p in range(geom.num_paths):
            g = geom.sigma_user[k][p]
            lines.append(f"user_path {k} {p} {geom.stars_aod[k][p, 0]!r} "
                         f"{geom.stars_aod[k][p, 1]!r} {g.real!r} {g.imag!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_geometry(path) -> PathGeometry:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != _GEOM_MAGIC:
        raise ValueError(f"not a {_GEOM_MAGIC} snapshot: {path}")
    scalars = {}
    bs_rows = {}
    user_meta = {}
    user_rows = {k: {} for k in RECEIVERS}
    for ln in lines[1:]:
        parts = ln.split()
        tag = parts[0]
        if tag in ("wavelength", "d_bs"):
            scalars[tag] = float(parts[1])
        elif tag == "num_paths":
            scalars[tag] = int(parts[1])
        elif tag == "bs_path":
            bs_rows[int(parts[1])] = [float(v) for v in parts[2:]]
        elif tag == "receiver":
            user_meta[parts[1]] = (parts[2], float(parts[3]))
        elif tag == "user_path":
            user_rows[parts[1]][int(parts[2])] = [float(v) for v in parts[3:]]
        else:
            raise ValueError(f"unknown record {tag!r} in {path}")
    L = scalars["num_paths"]
    bs_aod = np.zeros((L, 2))
    stars_aoa = np.zeros((L, 2))
    sigma_bs = np.zeros((L, L), dtype=complex)
    for o in range(L):
        th_b, ph_b, th_s, ph_s, re, im = bs_rows[o]
        bs_aod[o] = (th_b, ph_b)
        stars_aoa[o] = (th_s, ph_s)
        sigma_bs[o, o] = complex(re, im)
    stars_aod = {}
    sigma_user = {}
    d_user = {}
    side = {}
    for k in RECEIVERS:
        side[k], d_user[k] = user_meta[k]
        aod = np.zeros((L, 2))
        sig = np.zeros(L, dtype=complex)
        for p in range(L):
            th, ph, re, im = user_rows[k][p]
            aod[p] = (th, ph)
            sig[p] = complex(re, im)
        stars_aod[k] = aod
        sigma_user[k] = sig
    return PathGeometry(
        wavelength=scalars["wavelength"],
        bs_aod=bs_aod,
        stars_aoa=stars_aoa,
        stars_aod=stars_aod,
        sigma_bs=sigma_bs,
        sigma_user=sigma_user,
        d_bs=scalars["d_bs"],
        d_user=d_user,
        receiver_side=side,
    )
