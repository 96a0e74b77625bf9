"""Transmit beamforming via lifted semidefinite relaxation.

Each user's precoding vector is lifted to an M x M Hermitian PSD Gram
matrix, making every received power linear in the variables. Natural-log
slack variables split the rates: convex-exponential sides go through the
cut-based solver, concave sides get tangent upper bounds refreshed per
iteration. The rank-one constraint is simply dropped; with rank-one
surface coefficients the relaxation returns numerically rank-one blocks,
so the vectors are recovered from the principal eigenpair.

Powers inside the subproblem are expressed in receiver-noise units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import sdp
from .config import EVES, USERS, RECEIVER_SIDE, Beamformer, other_user
from .rates import effective_channel

LN2 = math.log(2.0)
SDP_TOL = 1e-8
CUT_TOL = sdp.CUT_TOL
RANK_RATIO_LIMIT = 1e-4


class RankOneViolation(RuntimeError):
    """Lifted block is not numerically rank one; carries the eigenvalue
    ratio that failed the check."""

    def __init__(self, ratio):
        super().__init__(f"lifted beamformer block has eigenvalue ratio "
                         f"{ratio:.3e} > {RANK_RATIO_LIMIT:.0e}")
        self.ratio = ratio


class InfeasibleStart(RuntimeError):
    pass


def build_quadratic_matrices(layout, coeffs, geom):
    """Rank-one Hermitian M x M matrices, one per receiver: the trace
    against a lifted beamformer reproduces that stream's received power."""
    mats = {}
    for k in USERS + EVES:
        V = effective_channel(layout, k, geom)
        r = coeffs.q(RECEIVER_SIDE[k]) @ V
        mats[k] = np.outer(r.conj(), r)
    return mats


def _noise(cfg, receiver):
    return cfg.noise_power_user if receiver in USERS else cfg.noise_power_eve


def scaled_quadratic_matrices(layout, coeffs, geom, cfg):
    mats = build_quadratic_matrices(layout, coeffs, geom)
    return {k: mat / _noise(cfg, k) for k, mat in mats.items()}


def lifted_powers(w_blocks, smats):
    return {(k, u): sdp.trace_dot(smats[k], w_blocks[u])
            for k in smats for u in USERS}


@dataclass(frozen=True)
class ActiveSlacks:
    """Natural-log slack values keyed by user or (eavesdropper, user)."""
    a: dict
    b: dict
    c: dict
    d: dict


def slacks_from_lifted(w_blocks, smats):
    p = lifted_powers(w_blocks, smats)
    a, b, c, d = {}, {}, {}, {}
    for u in USERS:
        ub = other_user(u)
        intf = max(p[(u, ub)], 0.0) + 1.0
        a[u] = math.log(max(p[(u, u)], 0.0) + intf)
        b[u] = math.log(intf)
    for ev in EVES:
        for u in USERS:
            ub = other_user(u)
            intf = max(p[(ev, ub)], 0.0) + 1.0
            c[(ev, u)] = math.log(max(p[(ev, u)], 0.0) + intf)
            d[(ev, u)] = math.log(intf)
    return ActiveSlacks(a, b, c, d)


def lifted_objective(w_blocks, smats):
    """Unclamped sum secrecy rate of the lifted powers."""
    p = lifted_powers(w_blocks, smats)
    total = 0.0
    for u in USERS:
        ub = other_user(u)
        ru = (math.log2(max(p[(u, u)], 0.0) + max(p[(u, ub)], 0.0) + 1.0)
              - math.log2(max(p[(u, ub)], 0.0) + 1.0))
        re = max(
            math.log2(max(p[(ev, u)], 0.0) + max(p[(ev, ub)], 0.0) + 1.0)
            - math.log2(max(p[(ev, ub)], 0.0) + 1.0)
            for ev in EVES
        )
        total += ru - re
    return total


@dataclass
class ActiveStep:
    w_blocks: dict
    slacks: ActiveSlacks
    objective: float
    duality_gap: float
    status: str


def sca_subproblem(w_blocks, slacks, smats, cfg, rate_floor=None):
    """One convexified subproblem around the incumbent lifted blocks."""
    m = next(iter(smats.values())).shape[0]
    floor = cfg.rate_floor_user if rate_floor is None else rate_floor

    prob = sdp.SdpProblem()
    for u in USERS:
        prob.add_psd_block(f"W_{u}", m)
    obj_scalars = {}
    for u in USERS:
        for name in ("A", "B"):
            prob.add_scalar(f"{name}_{u}")
        prob.add_scalar(f"t_{u}")
        obj_scalars[f"t_{u}"] = 1.0
    for ev in EVES:
        for u in USERS:
            for name in ("C", "D"):
                prob.add_scalar(f"{name}_{ev}_{u}")
    prob.set_objective(maximize=True, scalar_terms=obj_scalars)

    eye = np.eye(m)
    prob.add_constraint(block_terms={f"W_{u}": eye for u in USERS},
                        sense="<=", rhs=cfg.max_power)

    cones = []
    seeds = []
    for u in USERS:
        ub = other_user(u)
        bt = slacks.b[u]
        ebt = math.exp(bt)
        prob.add_constraint(block_terms={f"W_{ub}": smats[u]},
                            scalar_terms={f"B_{u}": -ebt},
                            sense="<=", rhs=ebt * (1.0 - bt) - 1.0)
        prob.add_constraint(scalar_terms={f"A_{u}": -1.0, f"B_{u}": 1.0},
                            sense="<=", rhs=-floor * LN2)
        cones.append(sdp.ExpConstraint(
            scalar=f"A_{u}", base=math.e,
            block_terms={f"W_{u}": smats[u], f"W_{ub}": smats[u]},
            const=1.0))
        seeds.append(slacks.a[u])
    for ev in EVES:
        for u in USERS:
            ub = other_user(u)
            ct = slacks.c[(ev, u)]
            ect = math.exp(ct)
            prob.add_constraint(
                block_terms={f"W_{u}": smats[ev], f"W_{ub}": smats[ev]},
                scalar_terms={f"C_{ev}_{u}": -ect},
                sense="<=", rhs=ect * (1.0 - ct) - 1.0)
            prob.add_constraint(
                scalar_terms={f"C_{ev}_{u}": 1.0, f"D_{ev}_{u}": -1.0},
                sense="<=", rhs=cfg.rate_ceiling_eve * LN2)
            prob.add_constraint(
                scalar_terms={f"t_{u}": LN2, f"A_{u}": -1.0, f"B_{u}": 1.0,
                              f"C_{ev}_{u}": 1.0, f"D_{ev}_{u}": -1.0},
                sense="<=", rhs=0.0)
            cones.append(sdp.ExpConstraint(
                scalar=f"D_{ev}_{u}", base=math.e,
                block_terms={f"W_{ub}": smats[ev]},
                const=1.0))
            seeds.append(slacks.d[(ev, u)])

    sol, max_gap = sdp.solve_with_exp_cuts(prob, cones, seeds,
                                           tol=SDP_TOL, cut_tol=CUT_TOL)
    w_new = {u: sol.block_values[f"W_{u}"] for u in USERS}
    sv = sol.scalar_values
    slacks_new = ActiveSlacks(
        a={u: sv[f"A_{u}"] for u in USERS},
        b={u: sv[f"B_{u}"] for u in USERS},
        c={(ev, u): sv[f"C_{ev}_{u}"] for ev in EVES for u in USERS},
        d={(ev, u): sv[f"D_{ev}_{u}"] for ev in EVES for u in USERS},
    )
    return ActiveStep(w_new, slacks_new, sol.objective, max_gap, sol.status)


def project_power(w_blocks, max_power):
    """Scale both lifted blocks onto the power budget when residual solver
    infeasibility leaves the trace sum above it; PSD is preserved."""
    tr = sum(float(np.real(np.trace(w_blocks[u]))) for u in USERS)
    if tr <= max_power:
        return dict(w_blocks)
    c = max_power / tr
    return {u: c * w_blocks[u] for u in USERS}


def reduce_rank_one(w_blocks, smats):
    """Rank-one reduction w = W h / sqrt(h^H W h) with h the user's own
    effective channel direction. The user's signal power is preserved
    exactly; the transmit power and every other receiver's quadratic form
    cannot increase (Cauchy-Schwarz against the PSD block). The interior
    point can return the center of a degenerate optimal face, which need
    not be rank one; this maps it to a rank-one solution of equal quality."""
    out = {}
    for u in USERS:
        herm = 0.5 * (w_blocks[u] + w_blocks[u].conj().T)
        ev, U = np.linalg.eigh(smats[u])
        h = U[:, -1]
        wh = herm @ h
        denom = float(np.real(np.vdot(h, wh)))
        if denom <= 1e-300:
            out[u] = herm
            continue
        w = wh / math.sqrt(denom)
        out[u] = np.outer(w, w.conj())
    return out


def rank_ratio(mat):
    ev = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))
    top = float(ev[-1])
    if top <= 0.0:
        return 0.0
    second = float(ev[-2]) if ev.size > 1 else 0.0
    return max(second, 0.0) / top


def recover_beamformer(w_mat):
    """Principal-eigenpair readout; requires the block to be numerically
    rank one."""
    herm = 0.5 * (w_mat + w_mat.conj().T)
    ev, U = np.linalg.eigh(herm)
    top = float(ev[-1])
    if top <= 1e-300:
        return np.zeros(w_mat.shape[0], dtype=np.complex128)
    ratio = max(float(ev[-2]), 0.0) / top if ev.size > 1 else 0.0
    if ratio > RANK_RATIO_LIMIT:
        raise RankOneViolation(ratio)
    return math.sqrt(top) * U[:, -1]


def initial_beamformer(layout, coeffs, geom, cfg, rate_floor=None):
    """Feasible warm start: each stream steered at its user's effective
    channel with an equal power split, scaled down until the eavesdropper
    ceilings hold. Raises InfeasibleStart if the user rate floor cannot be
    met by any scaling."""
    floor = cfg.rate_floor_user if rate_floor is None else rate_floor
    smats = scaled_quadratic_matrices(layout, coeffs, geom, cfg)
    m = next(iter(smats.values())).shape[0]
    cols = []
    for u in USERS:
        V = effective_channel(layout, u, geom)
        r = coeffs.q(RECEIVER_SIDE[u]) @ V
        nrm = np.linalg.norm(r)
        direction = (r.conj() / nrm) if nrm > 1e-30 else np.ones(m) / math.sqrt(m)
        cols.append(math.sqrt(cfg.max_power / 2.0) * direction)
    W = np.column_stack(cols)

    def rates(scale):
        blocks = {u: np.outer(scale * W[:, i], (scale * W[:, i]).conj())
                  for i, u in enumerate(USERS)}
        p = lifted_powers(blocks, smats)
        user, eve = {}, {}
        for u in USERS:
            ub = other_user(u)
            user[u] = (math.log2(p[(u, u)] + p[(u, ub)] + 1.0)
                       - math.log2(p[(u, ub)] + 1.0))
            eve[u] = max(
                math.log2(p[(ev, u)] + p[(ev, ub)] + 1.0)
                - math.log2(p[(ev, ub)] + 1.0)
                for ev in EVES
            )
        return user, eve

    scale = 1.0
    for _ in range(60):
        user, eve = rates(scale)
        if max(eve.values()) <= cfg.rate_ceiling_eve + 1e-9:
            break
        scale *= 0.5
    user, eve = rates(scale)
    if max(eve.values()) > cfg.rate_ceiling_eve + 1e-9:
        raise InfeasibleStart("eavesdropper ceiling unreachable by power scaling")
    if min(user.values()) < floor - 1e-9:
        raise InfeasibleStart("user rate floor unreachable at the scaled start")
    return Beamformer(W=scale * W)


@dataclass
class ActiveResult:
    beamformer: Beamformer
    w_blocks: dict
    objective_trace: list
    rank_ratios: dict
    max_duality_gap: float
    iterations: int
    converged: bool
    status: str


def optimize_active(layout, coeffs, geom, cfg, init, *, rate_floor=None,
                    trace_path=None):
    """SCA until the surrogate's fractional increase stalls, then rank-one
    recovery of both blocks. On a rank violation the initial beamformer is
    returned with a failure status."""
    smats = scaled_quadratic_matrices(layout, coeffs, geom, cfg)
    w_blocks = {u: np.outer(init.column(u), init.column(u).conj()) for u in USERS}
    trace_rows = []
    max_gap = 0.0
    iterations = 0
    converged = False
    status = "ok"
    g_prev = lifted_objective(w_blocks, smats)
    for _ in range(cfg.max_active_iters):
        slacks = slacks_from_lifted(w_blocks, smats)
        step = sca_subproblem(w_blocks, slacks, smats, cfg, rate_floor=rate_floor)
        iterations += 1
        if step.status not in ("optimal", "near_optimal"):
            status = f"sdp_{step.status}"
            break
        max_gap = max(max_gap, step.duality_gap)
        w_blocks = project_power(step.w_blocks, cfg.max_power)
        g_new = lifted_objective(w_blocks, smats)
        ratios = {u: rank_ratio(w_blocks[u]) for u in USERS}
        trace_rows.append((iterations - 1, g_new, ratios["l_t"], ratios["l_r"],
                           step.duality_gap))
        frac = (g_new - g_prev) / max(abs(g_prev), 1e-12)
        g_prev = g_new
        if frac < cfg.tol_active:
            converged = True
            break
    ratios = {u: rank_ratio(w_blocks[u]) for u in USERS}
    if status == "ok" and max(ratios.values()) > RANK_RATIO_LIMIT:
        cand = reduce_rank_one(w_blocks, smats)
        g_cand = lifted_objective(cand, smats)
        if g_cand >= g_prev - 1e-6:
            w_blocks = cand
            ratios = {u: rank_ratio(cand[u]) for u in USERS}
            iterations += 1
            trace_rows.append((iterations - 1, g_cand, ratios["l_t"],
                               ratios["l_r"], 0.0))
    try:
        cols = [recover_beamformer(w_blocks[u]) for u in USERS]
        beamformer = Beamformer(W=np.column_stack(cols))
    except RankOneViolation as exc:
        status = f"rank_violation:{exc.ratio:.3e}"
        beamformer = init
    if trace_path is not None:
        _write_trace(trace_path, trace_rows)
    return ActiveResult(beamformer=beamformer, w_blocks=w_blocks,
                        objective_trace=trace_rows, rank_ratios=ratios,
                        max_duality_gap=max_gap, iterations=iterations,
                        converged=converged, status=status)


def _write_trace(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,objective,rank_ratio_lt,rank_ratio_lr,duality_gap\n")
        for row in rows:
            fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r},{row[4]!r}\n")
