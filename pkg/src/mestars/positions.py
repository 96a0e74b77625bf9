"""Element position optimization.

Two-layer penalty framework: positions are reparametrized through tanh so the
region bound can never be violated, inequality constraints (pairwise
separation, user rate floors, eavesdropper rate ceilings) enter through a
log-sum-exp smoothed hinge penalty, and the smoothed objective is maximized
by Armijo-backtracking gradient ascent. The outer layer raises the penalty
weight and sharpens the smoothing until the constraints hold.

The rate gradients are analytic: with the per-element power decomposition,
each power is |T|^2 for a phasor total T, and d|T|^2/dx = 2 Re(conj(T) dT/dx)
with dT/dx assembled from the per-path angle derivatives. The phasor sum
includes element n's own contribution (treating it as constant drops the
self-interaction term and fails finite-difference checks for L > 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import (EVES, RECEIVERS, USERS, Beamformer, ElementLayout, SurfaceCoefficients,
                     SystemConfig, other_user)
from .channel import PathGeometry, bs_field_matrix

ARMIJO_DELTA = 1e-4
ALPHA_MIN = 1e-12
MAX_OUTER_ROUNDS = 20
SEP_TOL = 1e-9
RATE_TOL = 1e-6


@dataclass(frozen=True)
class PenaltyState:
    rho: float
    mu: float


def lse_penalty(f, mu):
    """mu * log(1 + exp(f/mu)), overflow-guarded smooth hinge."""
    return mu * np.logaddexp(0.0, np.asarray(f, dtype=float) / mu)


def logistic_weights(f, mu):
    """exp(f/mu) / (1 + exp(f/mu)) computed without overflow."""
    return 0.5 * (1.0 + np.tanh(np.asarray(f, dtype=float) / (2.0 * mu)))


def to_unconstrained(R, region_edge):
    """Inverse reparametrization artanh(2 R / A), clipped strictly inside."""
    z = np.clip(2.0 * np.asarray(R, dtype=float) / region_edge, -1.0 + 1e-12, 1.0 - 1e-12)
    return np.arctanh(z)


def to_region(r_dot, region_edge):
    """R = (A/2) tanh(r_dot); always strictly inside the region."""
    return (region_edge / 2.0) * np.tanh(r_dot)


def _pair_indices(n):
    return [(a, b) for a in range(n) for b in range(a + 1, n)]


class PositionObjective:
    """Smoothed objective and analytic gradient for fixed surface
    coefficients, beamformer, and geometry."""

    def __init__(self, layout: ElementLayout, coeffs: SurfaceCoefficients,
                 W: Beamformer, geom: PathGeometry, cfg: SystemConfig,
                 rate_floor=None):
        self.cfg = cfg
        self.geom = geom
        self.bs_positions = layout.bs_positions
        self.n = cfg.num_elements
        self.rate_floor = cfg.rate_floor_user if rate_floor is None else rate_floor
        self.tpl = 2.0 * math.pi / geom.wavelength

        e = bs_field_matrix(layout, geom)
        self.y = {u: geom.sigma_bs @ e @ W.column(u) for u in USERS}

        # per-path phase direction coefficients: cos(theta) sin(phi) for x,
        # sin(theta) for y
        def dirs(angles):
            return (np.cos(angles[:, 0]) * np.sin(angles[:, 1]), np.sin(angles[:, 0]))

        self.gin_x, self.gin_y = dirs(geom.stars_aoa)
        self.gk_x = {}
        self.gk_y = {}
        self.sigma = {}
        self.qvec = {}
        for k in RECEIVERS:
            self.gk_x[k], self.gk_y[k] = dirs(geom.stars_aod[k])
            self.sigma[k] = geom.sigma_user[k]
            self.qvec[k] = coeffs.q(geom.receiver_side[k])
        self.pairs = _pair_indices(self.n)

    # phasor assembly ------------------------------------------------------

    def _phasors(self, R):
        x = R[0][:, None]
        y = R[1][:, None]
        phi_in = self.tpl * (x * self.gin_x[None, :] + y * self.gin_y[None, :])
        vexp = np.exp(-1j * phi_in)                      # (N, L)
        vsum = {u: vexp @ self.y[u] for u in USERS}      # (N,)
        uexp = {}
        usum = {}
        for k in RECEIVERS:
            phi_k = self.tpl * (x * self.gk_x[k][None, :] + y * self.gk_y[k][None, :])
            ue = np.exp(1j * phi_k) * self.sigma[k][None, :] * self.qvec[k][:, None]
            uexp[k] = ue                                 # (N, L)
            usum[k] = ue.sum(axis=1)
        return vexp, vsum, uexp, usum

    def powers(self, R):
        """|T|^2 for every (receiver, stream) pair, plus the totals."""
        _, vsum, _, usum = self._phasors(R)
        T = {(k, u): (usum[k] * vsum[u]).sum() for k in RECEIVERS for u in USERS}
        return {key: float(np.abs(t) ** 2) for key, t in T.items()}, T

    # rate evaluation ------------------------------------------------------

    def _rates_from_powers(self, a):
        cfg = self.cfg
        ur = {}
        for u in USERS:
            ur[u] = math.log2(1.0 + a[(u, u)] / (a[(u, other_user(u))] + cfg.noise_power_user))
        er = {}
        for ke in EVES:
            for u in USERS:
                er[(ke, u)] = math.log2(
                    1.0 + a[(ke, u)] / (a[(ke, other_user(u))] + cfg.noise_power_eve))
        return ur, er

    def constraint_values(self, R, a=None):
        """Ordered constraint vector f: element pairs (lexicographic), then
        user rate floors, then (eve, user) rate ceilings."""
        if a is None:
            a, _ = self.powers(R)
        ur, er = self._rates_from_powers(a)
        f = []
        for i, j in self.pairs:
            f.append(self.cfg.min_separation - float(np.linalg.norm(R[:, i] - R[:, j])))
        for u in USERS:
            f.append(self.rate_floor - ur[u])
        for ke in EVES:
            for u in USERS:
                f.append(er[(ke, u)] - self.cfg.rate_ceiling_eve)
        return np.array(f), ur, er

    def value_parts(self, r_dot, state: PenaltyState):
        """(G, g, penalty term) at the reparametrized point."""
        R = to_region(r_dot, self.cfg.region_edge)
        a, _ = self.powers(R)
        f, ur, er = self.constraint_values(R, a)
        g = 0.0
        for u in USERS:
            g += max(ur[u] - max(er[(ke, u)] for ke in EVES), 0.0)
        penalty = state.rho * float(lse_penalty(f, state.mu).sum())
        return g - penalty, g, penalty

    def value(self, r_dot, state):
        return self.value_parts(r_dot, state)[0]

    # gradient -------------------------------------------------------------

    def _power_gradients(self, R):
        """d|T|^2/dx_n, d|T|^2/dy_n for every (receiver, stream) pair."""
        vexp, vsum, uexp, usum = self._phasors(R)
        gv_x = {u: vexp @ (self.gin_x * self.y[u]) for u in USERS}
        gv_y = {u: vexp @ (self.gin_y * self.y[u]) for u in USERS}
        a = {}
        da = {}
        for k in RECEIVERS:
            gu_x = uexp[k] @ self.gk_x[k]
            gu_y = uexp[k] @ self.gk_y[k]
            for u in USERS:
                s = usum[k] * vsum[u]
                T = s.sum()
                bx = self.tpl * (gu_x * vsum[u] - usum[k] * gv_x[u])
                by = self.tpl * (gu_y * vsum[u] - usum[k] * gv_y[u])
                a[(k, u)] = float(np.abs(T) ** 2)
                da[(k, u)] = np.vstack([
                    -2.0 * np.imag(np.conj(T) * bx),
                    -2.0 * np.imag(np.conj(T) * by),
                ])
        return a, da

    def _rate_gradients(self, a, da):
        ln2 = math.log(2.0)

        def quotient(sig_key, int_key, noise):
            s = a[sig_key]
            i = a[int_key] + noise
            num = da[sig_key] * i - s * da[int_key]
            return num / (ln2 * (s + i) * i)

        dur = {u: quotient((u, u), (u, other_user(u)), self.cfg.noise_power_user)
               for u in USERS}
        der = {(ke, u): quotient((ke, u), (ke, other_user(u)), self.cfg.noise_power_eve)
               for ke in EVES for u in USERS}
        return dur, der

    def gradient(self, r_dot, state: PenaltyState):
        """Gradient of the smoothed objective in the unconstrained variables."""
        cfg = self.cfg
        R = to_region(r_dot, cfg.region_edge)
        a, da = self._power_gradients(R)
        ur, er = self._rates_from_powers(a)
        dur, der = self._rate_gradients(a, da)

        grad = np.zeros_like(R)
        for u in USERS:
            # subgradient conventions: zero when clamped; ties toward e_t
            worst = "e_t" if er[("e_t", u)] >= er[("e_r", u)] else "e_r"
            if ur[u] - er[(worst, u)] > 0.0:
                grad += dur[u] - der[(worst, u)]

        f, _, _ = self.constraint_values(R, a)
        lam = logistic_weights(f, state.mu)
        idx = 0
        pen = np.zeros_like(R)
        for i, j in self.pairs:
            diff = R[:, i] - R[:, j]
            dist = float(np.linalg.norm(diff))
            if dist < 1e-12:
                unit = np.array([1.0, 0.0])  # deterministic push for coincident pair
            else:
                unit = diff / dist
            pen[:, i] += lam[idx] * (-unit)
            pen[:, j] += lam[idx] * unit
            idx += 1
        for u in USERS:
            pen += lam[idx] * (-dur[u])
            idx += 1
        for ke in EVES:
            for u in USERS:
                pen += lam[idx] * der[(ke, u)]
                idx += 1
        grad -= state.rho * pen

        # chain rule through R = (A/2) tanh(r_dot)
        return grad * (cfg.region_edge / 2.0) * (1.0 - np.tanh(r_dot) ** 2)


def smoothed_objective(r_dot, objective: PositionObjective, state: PenaltyState):
    return objective.value(r_dot, state)


def gradient(r_dot, objective: PositionObjective, state: PenaltyState):
    return objective.gradient(r_dot, state)


def armijo_step(r_dot, grad, alpha_init, value_fn, shrink, delta=ARMIJO_DELTA,
                alpha_min=ALPHA_MIN):
    """Backtracking ascent step: largest alpha in {alpha_init * shrink^i}
    satisfying the sufficient-increase test; (r_dot, 0.0) signals a stall."""
    g0 = value_fn(r_dot)
    gnorm2 = float(np.sum(grad ** 2))
    alpha = alpha_init
    while alpha > alpha_min:
        cand = r_dot + alpha * grad
        if value_fn(cand) >= g0 + delta * alpha * gnorm2:
            return cand, alpha
        alpha *= shrink
    return r_dot, 0.0


@dataclass(frozen=True)
class InnerRound:
    steps: int
    converged: bool
    final_value: float


@dataclass(frozen=True)
class PositionResult:
    layout: ElementLayout
    feasible: bool
    rounds: tuple
    trace: tuple  # rows (round, iteration, G, g, penalty, alpha)


def _feasible(objective, R, cfg):
    f, ur, er = objective.constraint_values(R)
    npairs = len(objective.pairs)
    pair_ok = bool(np.all(f[:npairs] <= SEP_TOL))
    user_ok = all(ur[u] >= objective.rate_floor - RATE_TOL for u in USERS)
    eve_ok = all(er[(ke, u)] <= cfg.rate_ceiling_eve + RATE_TOL for ke in EVES for u in USERS)
    return pair_ok and user_ok and eve_ok, float(np.max(f))


def _exact_value(obj, R):
    _, ur, er = obj.constraint_values(R)
    return sum(max(0.0, ur[u] - max(er[(e, u)] for e in EVES)) for u in USERS)


def optimize_positions(layout: ElementLayout, coeffs, W, geom, cfg,
                       rate_floor=None, trace_path=None) -> PositionResult:
    """Run the two-layer framework from the given layout; returns the new
    layout, flagged infeasible if the outer loop hits its cap with constraints
    still violated (best-found layout is returned in that case). Feasible
    rounds keep sharpening the smoothing until the exact objective stalls,
    so one call harvests the whole ascent instead of leaving a smoothing-bias
    tail for later calls."""
    obj = PositionObjective(layout, coeffs, W, geom, cfg, rate_floor=rate_floor)
    r_dot = to_unconstrained(layout.me_positions, cfg.region_edge)
    state = PenaltyState(cfg.penalty_init_rho, cfg.smoothing_init)

    rounds = []
    trace = []
    best_R = to_region(r_dot, cfg.region_edge)
    best_viol = math.inf
    exact_prev = -math.inf
    feasible_R = None

    for outer in range(MAX_OUTER_ROUNDS):
        g_prev = obj.value(r_dot, state)
        steps = 0
        converged = False
        alpha_start = cfg.step_init
        for it in range(cfg.max_position_iters):
            grad = obj.gradient(r_dot, state)
            r_dot, alpha = armijo_step(r_dot, grad, alpha_start,
                                       lambda rd: obj.value(rd, state),
                                       cfg.step_shrink)
            g_cur, g_part, pen_part = obj.value_parts(r_dot, state)
            steps += 1
            trace.append((outer, it, g_cur, g_part, pen_part, alpha))
            if alpha == 0.0 or abs(g_cur - g_prev) <= cfg.tol_position:
                converged = True
                break
            # restart the backtrack just above the last accepted step
            alpha_start = min(cfg.step_init, alpha / cfg.step_shrink ** 2)
            g_prev = g_cur
        rounds.append(InnerRound(steps, converged, obj.value(r_dot, state)))

        R = to_region(r_dot, cfg.region_edge)
        ok, viol = _feasible(obj, R, cfg)
        if viol < best_viol:
            best_viol = viol
            best_R = R
        if ok:
            feasible_R = R
            exact_cur = _exact_value(obj, R)
            if exact_cur - exact_prev <= cfg.tol_position:
                if trace_path is not None:
                    _write_trace(trace_path, trace)
                return PositionResult(ElementLayout(R, layout.bs_positions),
                                      True, tuple(rounds), tuple(trace))
            exact_prev = exact_cur
            state = PenaltyState(state.rho,
                                 state.mu * cfg.smoothing_shrink)
        else:
            state = PenaltyState(state.rho * cfg.penalty_scale_rho,
                                 state.mu * cfg.smoothing_shrink)

    if trace_path is not None:
        _write_trace(trace_path, trace)
    if feasible_R is not None:
        return PositionResult(ElementLayout(feasible_R, layout.bs_positions),
                              True, tuple(rounds), tuple(trace))
    return PositionResult(ElementLayout(best_R, layout.bs_positions), False,
                          tuple(rounds), tuple(trace))


def _write_trace(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("round,iteration,G,g,penalty,alpha\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]!r},{r[3]!r},{r[4]!r},{r[5]!r}\n")
