"""Achievable-rate and secrecy-rate evaluation.

Rate convention: the coefficient vector serving receiver k is the one for
k's side (transmission or reflection), and the surface multiplies the channel
by sqrt(beta_n) exp(j theta_n) per element. We evaluate the effective power
|sum_n q[n] h_k[n] (H w)[n]|^2 with q[n] = sqrt(beta) exp(j theta), which is
exactly |h_k Theta H w|^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import EVES, USERS, Beamformer, ElementLayout, SurfaceCoefficients, other_user
from .channel import (PathGeometry, bs_field_matrix, bs_stars_channel, frv_stars_incident,
                      frv_stars_user, stars_user_channel)


def effective_channel(layout: ElementLayout, k, geom: PathGeometry) -> np.ndarray:
    """V_k(R) = diag(h_k(R)) H(R), shape N x M."""
    h = stars_user_channel(layout, k, geom)
    H = bs_stars_channel(layout, geom)
    return h[:, None] * H


def _surface_row(k, coeffs: SurfaceCoefficients, geom: PathGeometry):
    return coeffs.q(geom.receiver_side[k])


def effective_power(k, k_l, layout, coeffs, W: Beamformer, geom) -> float:
    """|h_k Theta H w_{k_l}|^2 via the effective channel."""
    v = effective_channel(layout, k, geom)
    amp = _surface_row(k, coeffs, geom) @ (v @ W.column(k_l))
    return float(np.abs(amp) ** 2)


def effective_power_decomposed(k, k_l, layout, coeffs, W: Beamformer, geom) -> float:
    """Same power through the per-element decomposition
    |sum_n x_{n,k} F_k(r_n) y_{k_l}|^2 with x_{n,k} = q[n] sigma_{S,k},
    y_{k_l} = Sigma_BS E w_{k_l} and F_k(r_n) = f_k(r_n) f_in(r_n)^H."""
    q = _surface_row(k, coeffs, geom)
    e = bs_field_matrix(layout, geom)
    y = geom.sigma_bs @ e @ W.column(k_l)
    sigma_k = geom.sigma_user[k]
    total = 0.0 + 0.0j
    for n in range(layout.num_elements):
        r_n = layout.me_positions[:, n]
        f_k = frv_stars_user(r_n, k, geom)
        f_in = frv_stars_incident(r_n, geom)
        x_n = q[n] * sigma_k
        total += x_n @ (np.outer(f_k, f_in.conj()) @ y)
    return float(np.abs(total) ** 2)


def user_rate(k_l, layout, coeffs, W, geom, cfg) -> float:
    """log2(1 + signal / (cross-stream interference + noise)) at user k_l."""
    sig = effective_power(k_l, k_l, layout, coeffs, W, geom)
    intf = effective_power(k_l, other_user(k_l), layout, coeffs, W, geom)
    return math.log2(1.0 + sig / (intf + cfg.noise_power_user))


def eve_rate(k_e, k_l, layout, coeffs, W, geom, cfg) -> float:
    """Wiretap rate of eavesdropper k_e on the stream intended for k_l."""
    sig = effective_power(k_e, k_l, layout, coeffs, W, geom)
    intf = effective_power(k_e, other_user(k_l), layout, coeffs, W, geom)
    return math.log2(1.0 + sig / (intf + cfg.noise_power_eve))


def secrecy_rate(k_l, layout, coeffs, W, geom, cfg) -> float:
    """[user rate minus the best eavesdropper's wiretap rate]+."""
    r = user_rate(k_l, layout, coeffs, W, geom, cfg)
    worst = max(eve_rate(k_e, k_l, layout, coeffs, W, geom, cfg) for k_e in EVES)
    return max(r - worst, 0.0)


@dataclass(frozen=True)
class RateReport:
    user_rate: dict
    eve_rate: dict
    secrecy_rate: dict
    sum_secrecy: float


def rate_report(layout, coeffs, W, geom, cfg) -> RateReport:
    ur = {k_l: user_rate(k_l, layout, coeffs, W, geom, cfg) for k_l in USERS}
    er = {(k_e, k_l): eve_rate(k_e, k_l, layout, coeffs, W, geom, cfg)
          for k_e in EVES for k_l in USERS}
    sr = {k_l: max(ur[k_l] - max(er[(k_e, k_l)] for k_e in EVES), 0.0) for k_l in USERS}
    return RateReport(ur, er, sr, float(sum(sr.values())))


def sum_secrecy_rate(layout, coeffs, W, geom, cfg) -> float:
    return rate_report(layout, coeffs, W, geom, cfg).sum_secrecy
