"""Alternating optimization driver.

Repeats the three block solvers in a fixed order (element positions ->
surface coefficients -> transmit beamforming) until the exact sum secrecy
rate stops improving. Every stage output is accepted only if the exact rate
does not fall more than a small slack below the incumbent; otherwise the
incumbent block is kept, which makes the objective history monotone even
when a lifted-matrix extraction loses a little optimality.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import active as active_mod
from . import passive as passive_mod
from . import positions as positions_mod
from . import rates
from .config import (
    EVES,
    USERS,
    Beamformer,
    ElementLayout,
    SurfaceCoefficients,
    SystemConfig,
    even_split_coefficients,
    layout_violations,
    min_pairwise_distance,
)
from .channel import PathGeometry, default_layout_grid

# exact-rate slack for accepting a stage update and for the history invariant
MONOTONE_SLACK = 1e-6

STAGES = ("positions", "passive", "active")

# largest sweep-move multiple tried by the post-sweep extrapolation
EXTRAP_KAPPA_MAX = 64.0

# post-sweep extrapolation passes per round; each pass refreshes the ray
# direction after an accepted jump
EXTRAP_CYCLES = 4


def _aligned_columns(ref, mat):
    """mat with each column rotated by the global phase closest to ref.
    Beamformer columns carry an arbitrary global phase, so differences are
    meaningful only after alignment."""
    out = np.array(mat, dtype=np.complex128)
    for k in range(out.shape[1]):
        ip = np.vdot(out[:, k], ref[:, k])
        a = abs(ip)
        if a > 0.0:
            out[:, k] *= ip / a
    return out


def _aligned_vector(ref, vec):
    """vec rotated by the global phase closest to ref. The rates are
    invariant to a common phase shift of either coefficient vector, so the
    shift is a null direction that must not enter extrapolation moves."""
    ip = np.vdot(vec, ref)
    a = abs(ip)
    return vec * (ip / a) if a > 0.0 else vec


def _wrapped_phase(angles):
    twopi = 2.0 * math.pi
    t = np.mod(angles, twopi)
    t[t >= twopi] = 0.0
    return t


def _extrapolate(layout, coeffs, W, start, kappa, cfg, stages, support):
    """State continuing the last sweep displacement by the factor kappa,
    projected back into the box/power/unit-split sets. Returns None when the
    pairwise separation constraint rejects the move."""
    layout_s, coeffs_s, W_s = start
    new_layout = layout
    if "positions" in stages:
        half = cfg.region_edge / 2.0
        R = layout.me_positions + kappa * (layout.me_positions
                                           - layout_s.me_positions)
        R = np.clip(R, -half, half)
        if min_pairwise_distance(R) < cfg.min_separation:
            return None
        new_layout = ElementLayout(me_positions=R,
                                   bs_positions=layout.bs_positions)
    new_coeffs = coeffs
    if "passive" in stages:
        qt = coeffs.q_t + kappa * (coeffs.q_t
                                   - _aligned_vector(coeffs.q_t, coeffs_s.q_t))
        qr = coeffs.q_r + kappa * (coeffs.q_r
                                   - _aligned_vector(coeffs.q_r, coeffs_s.q_r))
        power = np.abs(qt) ** 2 + np.abs(qr) ** 2
        power[power < 1e-300] = 1.0
        new_coeffs = SurfaceCoefficients(
            beta_t=np.clip(np.abs(qt) ** 2 / power, 0.0, 1.0),
            theta_t=_wrapped_phase(np.angle(qt)),
            theta_r=_wrapped_phase(np.angle(qr)))
        if support is not None:
            new_coeffs = passive_mod.apply_support(new_coeffs, support)
    new_W = W
    if "active" in stages:
        Wx = W.W + kappa * (W.W - _aligned_columns(W.W, W_s.W))
        tot = float(np.sum(np.abs(Wx) ** 2))
        if tot > cfg.max_power:
            Wx = Wx * math.sqrt(cfg.max_power / tot)
        new_W = Beamformer(W=Wx)
    return new_layout, new_coeffs, new_W


def _ray_extrapolation(layout, coeffs, W, start, g_cur, geom, cfg, stages,
                       support, rate_floor):
    """Greedy search along the sweep displacement ray with doubling kappa.
    Block sweeps contract geometrically near a joint optimum, so continuing
    the sweep move recovers most of the remaining tail in one jump. Only
    feasible states that improve the exact rate are accepted, which keeps
    the objective history monotone."""
    floor = cfg.rate_floor_user if rate_floor is None else rate_floor

    def value_at(kappa):
        cand = _extrapolate(layout, coeffs, W, start, kappa, cfg, stages,
                            support)
        if cand is None:
            return None, -math.inf
        rep = rates.rate_report(cand[0], cand[1], cand[2], geom, cfg)
        worst = {u: max(rep.eve_rate[(ev, u)] for ev in EVES) for u in USERS}
        if any(rep.user_rate[u] < floor - 1e-9 for u in USERS) or \
                any(worst[u] > cfg.rate_ceiling_eve + 1e-9 for u in USERS):
            return None, -math.inf
        g_ex = sum(max(0.0, rep.user_rate[u] - worst[u]) for u in USERS)
        return cand, g_ex

    best = None
    g_best = g_cur
    kappa = 1.0
    while kappa <= EXTRAP_KAPPA_MAX:
        cand, g_ex = value_at(kappa)
        if cand is None or g_ex <= g_best:
            break
        best, g_best = cand, g_ex
        kappa *= 2.0
    if best is None:
        # the full move overshoots on cleanup rounds; a fraction of it can
        # still help
        for kappa in (0.5, 0.25):
            cand, g_ex = value_at(kappa)
            if cand is not None and g_ex > g_best:
                best, g_best = cand, g_ex
                break
    return best, g_best


@dataclass
class AoState:
    """Final solution triple plus the convergence record of the run."""

    layout: ElementLayout
    coeffs: SurfaceCoefficients
    beamformer: Beamformer
    iteration: int
    objective_history: list
    stage_seconds: dict
    status: str
    max_sdp_gap: float
    rank_residuals: dict
    rank_ratios: dict

    @property
    def objective(self) -> float:
        return self.objective_history[-1] if self.objective_history else math.nan


def constraint_residuals(layout, coeffs, W, geom, cfg, rate_floor=None):
    """Signed residuals of the problem constraints; <= 0 means satisfied.

    Keys: region (coordinate overhang, m), separation (distance shortfall,
    m), power (budget overrun, W), beta_sum (unit-split error), rate_floor
    (worst user shortfall, bits), rate_ceiling (worst eavesdropper overrun,
    bits).
    """
    floor = cfg.rate_floor_user if rate_floor is None else rate_floor
    half = cfg.region_edge / 2.0
    rep = rates.rate_report(layout, coeffs, W, geom, cfg)
    worst_eve = {
        u: max(rep.eve_rate[(ev, u)] for ev in EVES) for u in USERS
    }
    return {
        "region": float(np.abs(layout.me_positions).max() - half),
        "separation": float(cfg.min_separation
                            - min_pairwise_distance(layout.me_positions)),
        "power": float(W.total_power - cfg.max_power),
        "beta_sum": float(np.abs(coeffs.beta_t + coeffs.beta_r - 1.0).max()),
        "rate_floor": float(max(floor - rep.user_rate[u] for u in USERS)),
        "rate_ceiling": float(max(worst_eve[u] - cfg.rate_ceiling_eve
                                  for u in USERS)),
    }


def _exact(layout, coeffs, W, geom, cfg):
    return rates.sum_secrecy_rate(layout, coeffs, W, geom, cfg)


def run(geom: PathGeometry, cfg: SystemConfig, *, layout_init=None,
        coeffs_init=None, w_init=None, support=None, rate_floor=None,
        stages=STAGES, log_path=None, trace_dir=None) -> AoState:
    """Alternate the enabled stages from the given (or default) starting
    point. Returns the best-so-far state when a stage reports failure; the
    status string then names the stage and iteration."""
    for st in stages:
        if st not in STAGES:
            raise ValueError(f"unknown stage {st!r}")
    layout = layout_init if layout_init is not None else default_layout_grid(cfg)
    coeffs = coeffs_init if coeffs_init is not None else \
        even_split_coefficients(cfg.num_elements)
    if support is not None:
        coeffs = passive_mod.apply_support(coeffs, support)

    stage_seconds = {st: 0.0 for st in STAGES}
    max_gap = 0.0
    rank_residuals = {}
    rank_ratios = {}
    status = "max_iters"

    if w_init is not None:
        W = w_init
    else:
        try:
            W = active_mod.initial_beamformer(layout, coeffs, geom, cfg,
                                              rate_floor=rate_floor)
        except active_mod.InfeasibleStart:
            # retry without the rate floor; the floor re-enters through the
            # subproblem constraints once the optimizers take over
            try:
                W = active_mod.initial_beamformer(layout, coeffs, geom, cfg,
                                                  rate_floor=0.0)
            except active_mod.InfeasibleStart as exc:
                empty = Beamformer(W=np.zeros((cfg.num_bs_antennas, 2),
                                              dtype=np.complex128))
                return AoState(layout, coeffs, empty, 0, [],
                               stage_seconds, f"init_infeasible:{exc}",
                               0.0, {}, {})

    g = _exact(layout, coeffs, W, geom, cfg)
    history = [g]
    log_records = []
    iteration = 0
    prev_start = None

    for tau in range(1, cfg.max_ao_iters + 1):
        iteration = tau
        g_iter_start = g
        round_start = (layout, coeffs, W)
        stage_obj = {}
        failure = None

        if "positions" in stages:
            t0 = time.perf_counter()
            trace_path = None
            if trace_dir is not None:
                trace_path = f"{trace_dir}/positions_iter{tau:02d}.csv"
            pres = positions_mod.optimize_positions(
                layout, coeffs, W, geom, cfg, rate_floor=rate_floor,
                trace_path=trace_path)
            stage_seconds["positions"] += time.perf_counter() - t0
            g_cand = _exact(pres.layout, coeffs, W, geom, cfg)
            if pres.feasible and g_cand >= g - MONOTONE_SLACK:
                layout = pres.layout
                g = max(g, g_cand)
            stage_obj["positions"] = g

        if failure is None and "passive" in stages:
            t0 = time.perf_counter()
            bres = passive_mod.optimize_passive(
                layout, W, geom, cfg, coeffs, support=support,
                rate_floor=rate_floor)
            stage_seconds["passive"] += time.perf_counter() - t0
            max_gap = max(max_gap, bres.max_duality_gap)
            if bres.status != "ok":
                failure = f"stage_failure:passive:iter{tau}:{bres.status}"
            else:
                rank_residuals = bres.rank_residuals
                g_cand = _exact(layout, bres.coeffs, W, geom, cfg)
                if g_cand >= g - MONOTONE_SLACK:
                    coeffs = bres.coeffs
                    g = max(g, g_cand)
            stage_obj["passive"] = g

        if failure is None and "active" in stages:
            t0 = time.perf_counter()
            ares = active_mod.optimize_active(
                layout, coeffs, geom, cfg, W, rate_floor=rate_floor)
            stage_seconds["active"] += time.perf_counter() - t0
            max_gap = max(max_gap, ares.max_duality_gap)
            if ares.status != "ok":
                failure = f"stage_failure:active:iter{tau}:{ares.status}"
            else:
                rank_ratios = ares.rank_ratios
                g_cand = _exact(layout, coeffs, ares.beamformer, geom, cfg)
                if g_cand >= g - MONOTONE_SLACK:
                    W = ares.beamformer
                    g = max(g, g_cand)
            stage_obj["active"] = g

        if failure is None:
            # ray anchors: the sweep move, refreshed after each accepted
            # jump, then the two-round move, which tracks the coupled valley
            # axis across jump/cleanup alternation
            for _ in range(EXTRAP_CYCLES):
                moved = False
                for anchor in (round_start, prev_start):
                    if anchor is None:
                        continue
                    cand, g_ex = _ray_extrapolation(
                        layout, coeffs, W, anchor, g, geom, cfg, stages,
                        support, rate_floor)
                    if cand is not None:
                        layout, coeffs, W = cand
                        g = g_ex
                        stage_obj["extrapolation"] = g
                        moved = True
                if not moved:
                    break
            prev_start = round_start

        history.append(g)
        log_records.append({
            "tau": tau,
            "objective": g,
            "stage_objectives": stage_obj,
            "rank_residuals": dict(rank_residuals),
            "rank_ratios": dict(rank_ratios),
            "constraint_residuals": constraint_residuals(
                layout, coeffs, W, geom, cfg, rate_floor=rate_floor),
        })

        if failure is not None:
            status = failure
            break
        frac = (g - g_iter_start) / max(abs(g_iter_start), 1e-12)
        if frac < cfg.tol_ao:
            status = "converged"
            break

    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            for rec in log_records:
                fh.write(json.dumps(rec) + "\n")

    return AoState(layout=layout, coeffs=coeffs, beamformer=W,
                   iteration=iteration, objective_history=history,
                   stage_seconds=stage_seconds, status=status,
                   max_sdp_gap=max_gap, rank_residuals=rank_residuals,
                   rank_ratios=rank_ratios)
