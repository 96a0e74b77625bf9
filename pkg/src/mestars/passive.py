"""Surface coefficient optimization over lifted Gram matrices.

The per-element transmission/reflection coefficients are lifted to Hermitian
PSD matrices Phi_t, Phi_r (outer products of the coefficient vectors), which
turns every received power into a trace against a fixed rank-one matrix.
Rates are handled with slack variables: the convex-exponential sides
(2**x <= affine) go to the cut-based solver, the concave sides get
first-order tangent upper bounds refreshed each iteration. A penalty
Tr(Phi) - lambda_max(Phi), linearized at the incumbent principal
eigenvector, drives the blocks back to rank one; the penalty weight grows
geometrically in an outer loop until the residual is negligible, after
which coefficient vectors are read off the principal eigenpair.

All powers are expressed in units of the receiver noise power, which keeps
the semidefinite subproblems well scaled (physical received powers sit many
orders of magnitude below 1 W).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import sdp
from .config import (
    EVES,
    USERS,
    RECEIVER_SIDE,
    SurfaceCoefficients,
    other_user,
)
from .rates import effective_channel

LN2 = math.log(2.0)
SIDES = ("t", "r")
INIT_MIX = 1e-6
MAX_PENALTY_ROUNDS = 12
SDP_TOL = 1e-8
CUT_TOL = sdp.CUT_TOL


def build_rate_matrices(layout, W, geom):
    """Rank-one Hermitian N x N matrices, one per (receiver, stream): the
    trace against the lifted coefficient matrix reproduces the received
    stream power of the rates module."""
    mats = {}
    for k in USERS + EVES:
        V = effective_channel(layout, k, geom)
        for u in USERS:
            c = np.conj(V @ W.column(u))
            mats[(k, u)] = np.outer(c, c.conj())
    return mats


def _noise(cfg, receiver):
    return cfg.noise_power_user if receiver in USERS else cfg.noise_power_eve


def scaled_rate_matrices(layout, W, geom, cfg):
    mats = build_rate_matrices(layout, W, geom)
    return {key: mat / _noise(cfg, key[0]) for key, mat in mats.items()}


def apply_support(coeffs, support):
    """Coefficients with each element's energy budget forced fully to one
    side, for the split-surface configuration (index sets support["t"] and
    support["r"] partition the elements). Phases are kept."""
    beta_t = np.zeros(coeffs.beta_t.size)
    beta_t[np.asarray(support["t"], dtype=int)] = 1.0
    return SurfaceCoefficients(beta_t=beta_t, theta_t=coeffs.theta_t,
                               theta_r=coeffs.theta_r)


def lifted_from_coefficients(coeffs, support=None, mix=INIT_MIX):
    """Strictly PSD warm start near the rank-one lift of the coefficients.
    The identity admixture is split so the per-element diagonal budget
    still sums to one exactly."""
    n = coeffs.beta_t.size
    phi = {}
    for side in SIDES:
        q = coeffs.q(side)
        if support is None:
            phi[side] = (1.0 - mix) * np.outer(q, q.conj()) + (mix / 2.0) * np.eye(n)
        else:
            idx = np.asarray(support[side], dtype=int)
            qs = q[idx]
            block = (1.0 - mix) * np.outer(qs, qs.conj()) + mix * np.eye(idx.size)
            full = np.zeros((n, n), dtype=np.complex128)
            full[np.ix_(idx, idx)] = block
            phi[side] = full
    return phi


def lifted_powers(phi, smats):
    """Noise-normalized stream powers Tr(H Phi) keyed by (receiver, stream)."""
    return {key: sdp.trace_dot(mat, phi[RECEIVER_SIDE[key[0]]])
            for key, mat in smats.items()}


@dataclass(frozen=True)
class PassiveSlacks:
    """Auxiliary variables of the lifted subproblem (base-2 logs and the two
    linear aides), keyed by user or (eavesdropper, user)."""
    a: dict
    b: dict
    c: dict
    d: dict
    e: dict
    f: dict


def slacks_from_lifted(phi, smats):
    """Tight slack values at a lifted incumbent; exactly feasible, so they
    serve as Taylor points and cut seeds."""
    p = lifted_powers(phi, smats)
    a, b, c = {}, {}, {}
    d, e, f = {}, {}, {}
    for u in USERS:
        ub = other_user(u)
        intf = max(p[(u, ub)], 0.0) + 1.0
        total = max(p[(u, u)], 0.0) + intf
        a[u] = math.log2(total)
        c[u] = intf
        b[u] = math.log2(intf)
    for ev in EVES:
        for u in USERS:
            ub = other_user(u)
            intf = max(p[(ev, ub)], 0.0) + 1.0
            total = max(p[(ev, u)], 0.0) + intf
            f[(ev, u)] = total
            d[(ev, u)] = math.log2(total)
            e[(ev, u)] = math.log2(intf)
    return PassiveSlacks(a, b, c, d, e, f)


def rank_residual(mat):
    """Tr(X) - lambda_max(X); zero iff a PSD matrix is rank one."""
    ev = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))
    return float(np.real(np.trace(mat)) - ev[-1])


def renormalize_diagonals(phi):
    """Congruence rescaling making diag(phi_t) + diag(phi_r) exactly one
    elementwise, absorbing residual solver infeasibility; PSD is preserved.
    Elements with (numerically) no mass on either side are left alone."""
    s = np.real(np.diag(phi["t"]) + np.diag(phi["r"]))
    d = np.where(s > 1e-6, 1.0 / np.sqrt(np.where(s > 0, s, 1.0)), 1.0)
    scale = np.outer(d, d)
    return {side: scale * phi[side] for side in SIDES}


def lifted_objective(phi, smats, eta):
    """Penalized surrogate value: unclamped sum secrecy rate of the lifted
    powers minus eta times the rank residuals."""
    p = lifted_powers(phi, smats)
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
    return total - eta * sum(rank_residual(phi[s]) for s in SIDES)


@dataclass
class PassiveStep:
    phi: dict
    slacks: PassiveSlacks
    objective: float
    duality_gap: float
    status: str


def sca_subproblem(phi, slacks, eta, smats, cfg, support=None, rate_floor=None):
    """One convexified subproblem around the incumbent: tangent upper bounds
    on the concave slack relations, cut loops on the exponential sides, and
    the linearized rank penalty in the objective."""
    n = next(iter(smats.values())).shape[0]
    floor = cfg.rate_floor_user if rate_floor is None else rate_floor
    idx = {side: (np.arange(n) if support is None
                  else np.asarray(support[side], dtype=int))
           for side in SIDES}

    def restrict(key):
        sub_idx = idx[RECEIVER_SIDE[key[0]]]
        return smats[key][np.ix_(sub_idx, sub_idx)]

    prob = sdp.SdpProblem()
    for side in SIDES:
        prob.add_psd_block(f"phi_{side}", idx[side].size)

    obj_blocks = {}
    for side in SIDES:
        sub_phi = phi[side][np.ix_(idx[side], idx[side])]
        w, U = np.linalg.eigh(0.5 * (sub_phi + sub_phi.conj().T))
        x = U[:, -1]
        obj_blocks[f"phi_{side}"] = -eta * (np.eye(idx[side].size) - np.outer(x, x.conj()))

    obj_scalars = {}
    for u in USERS:
        for name in ("A", "B", "C"):
            prob.add_scalar(f"{name}_{u}")
        prob.add_scalar(f"t_{u}")
        obj_scalars[f"t_{u}"] = 1.0
    for ev in EVES:
        for u in USERS:
            for name in ("D", "E", "F"):
                prob.add_scalar(f"{name}_{ev}_{u}")
    prob.set_objective(maximize=True, block_terms=obj_blocks, scalar_terms=obj_scalars)

    if support is None:
        for i in range(n):
            unit = np.zeros((n, n))
            unit[i, i] = 1.0
            prob.add_constraint(block_terms={"phi_t": unit, "phi_r": unit},
                                sense="==", rhs=1.0)
    else:
        for side in SIDES:
            for i in range(idx[side].size):
                unit = np.zeros((idx[side].size, idx[side].size))
                unit[i, i] = 1.0
                prob.add_constraint(block_terms={f"phi_{side}": unit},
                                    sense="==", rhs=1.0)

    cones = []
    seeds = []
    for u in USERS:
        ub = other_user(u)
        side = RECEIVER_SIDE[u]
        prob.add_constraint(block_terms={f"phi_{side}": restrict((u, ub))},
                            scalar_terms={f"C_{u}": -1.0}, sense="<=", rhs=-1.0)
        ct = slacks.c[u]
        prob.add_constraint(
            scalar_terms={f"B_{u}": -1.0, f"C_{u}": 1.0 / (ct * LN2)},
            sense="<=", rhs=1.0 / LN2 - math.log2(ct))
        prob.add_constraint(scalar_terms={f"A_{u}": -1.0, f"B_{u}": 1.0},
                            sense="<=", rhs=-floor)
        cones.append(sdp.ExpConstraint(
            scalar=f"A_{u}", base=2.0,
            block_terms={f"phi_{side}": restrict((u, u)) + restrict((u, ub))},
            const=1.0))
        seeds.append(slacks.a[u])
    for ev in EVES:
        side = RECEIVER_SIDE[ev]
        for u in USERS:
            ub = other_user(u)
            prob.add_constraint(
                block_terms={f"phi_{side}": restrict((ev, u)) + restrict((ev, ub))},
                scalar_terms={f"F_{ev}_{u}": -1.0}, sense="<=", rhs=-1.0)
            ft = slacks.f[(ev, u)]
            prob.add_constraint(
                scalar_terms={f"D_{ev}_{u}": -1.0, f"F_{ev}_{u}": 1.0 / (ft * LN2)},
                sense="<=", rhs=1.0 / LN2 - math.log2(ft))
            prob.add_constraint(
                scalar_terms={f"D_{ev}_{u}": 1.0, f"E_{ev}_{u}": -1.0},
                sense="<=", rhs=cfg.rate_ceiling_eve)
            prob.add_constraint(
                scalar_terms={f"t_{u}": 1.0, f"A_{u}": -1.0, f"B_{u}": 1.0,
                              f"D_{ev}_{u}": 1.0, f"E_{ev}_{u}": -1.0},
                sense="<=", rhs=0.0)
            cones.append(sdp.ExpConstraint(
                scalar=f"E_{ev}_{u}", base=2.0,
                block_terms={f"phi_{side}": restrict((ev, ub))},
                const=1.0))
            seeds.append(slacks.e[(ev, u)])

    sol, max_gap = sdp.solve_with_exp_cuts(prob, cones, seeds,
                                           tol=SDP_TOL, cut_tol=CUT_TOL)

    phi_new = {}
    for side in SIDES:
        block = sol.block_values[f"phi_{side}"]
        if support is None:
            phi_new[side] = block
        else:
            full = np.zeros((n, n), dtype=np.complex128)
            full[np.ix_(idx[side], idx[side])] = block
            phi_new[side] = full
    sv = sol.scalar_values
    slacks_new = PassiveSlacks(
        a={u: sv[f"A_{u}"] for u in USERS},
        b={u: sv[f"B_{u}"] for u in USERS},
        c={u: sv[f"C_{u}"] for u in USERS},
        d={(ev, u): sv[f"D_{ev}_{u}"] for ev in EVES for u in USERS},
        e={(ev, u): sv[f"E_{ev}_{u}"] for ev in EVES for u in USERS},
        f={(ev, u): sv[f"F_{ev}_{u}"] for ev in EVES for u in USERS},
    )
    return PassiveStep(phi_new, slacks_new, sol.objective, max_gap, sol.status)


def extract_coefficients(phi_t, phi_r, support=None):
    """Principal-eigenpair readout with per-element renormalization so the
    transmission/reflection magnitudes split each element's unit budget
    exactly; phases mapped to [0, 2pi)."""
    n = phi_t.shape[0]
    q = {}
    for side, mat in (("t", phi_t), ("r", phi_r)):
        w, U = np.linalg.eigh(0.5 * (mat + mat.conj().T))
        q[side] = math.sqrt(max(float(w[-1]), 0.0)) * U[:, -1]
    two_pi = 2.0 * math.pi
    mag_t = np.abs(q["t"]) ** 2
    mag_r = np.abs(q["r"]) ** 2
    total = mag_t + mag_r
    beta_t = np.where(total > 1e-300, mag_t / np.where(total > 0, total, 1.0), 0.5)
    if support is not None:
        beta_t = np.zeros(n)
        beta_t[np.asarray(support["t"], dtype=int)] = 1.0
    theta_t = np.mod(np.angle(q["t"]), two_pi)
    theta_r = np.mod(np.angle(q["r"]), two_pi)
    return SurfaceCoefficients(beta_t=beta_t, theta_t=theta_t, theta_r=theta_r)


@dataclass
class PassiveResult:
    coeffs: SurfaceCoefficients
    phi: dict
    objective_trace: list
    rank_residuals: dict
    max_duality_gap: float
    eta_final: float
    converged: bool
    iterations: int
    status: str


def optimize_passive(layout, W, geom, cfg, init, *, support=None,
                     rate_floor=None, trace_path=None):
    """Inner SCA at fixed penalty weight until the surrogate stalls, outer
    weight escalation until both blocks are numerically rank one, then
    coefficient extraction. Trace rows record (round, iteration, objective,
    rank residuals, eta)."""
    smats = scaled_rate_matrices(layout, W, geom, cfg)
    phi = lifted_from_coefficients(init, support=support)
    eta = cfg.penalty_init_eta
    trace_rows = []
    max_gap = 0.0
    iterations = 0
    converged = False
    status = "ok"
    resid = {side: rank_residual(phi[side]) for side in SIDES}
    for outer in range(MAX_PENALTY_ROUNDS):
        g_prev = lifted_objective(phi, smats, eta)
        for inner in range(cfg.max_passive_iters):
            slacks = slacks_from_lifted(phi, smats)
            step = sca_subproblem(phi, slacks, eta, smats, cfg,
                                  support=support, rate_floor=rate_floor)
            iterations += 1
            if step.status not in ("optimal", "near_optimal"):
                status = f"sdp_{step.status}"
                break
            max_gap = max(max_gap, step.duality_gap)
            phi = renormalize_diagonals(step.phi)
            g_new = lifted_objective(phi, smats, eta)
            resid = {side: rank_residual(phi[side]) for side in SIDES}
            trace_rows.append((outer, inner, g_new,
                               resid["t"], resid["r"], eta))
            frac = (g_new - g_prev) / max(abs(g_prev), 1e-12)
            g_prev = g_new
            if frac < cfg.tol_passive:
                break
        if status != "ok":
            break
        if max(resid.values()) < cfg.tol_rank:
            converged = True
            break
        eta *= cfg.penalty_scale_eta
    coeffs = extract_coefficients(phi["t"], phi["r"], support=support)
    if trace_path is not None:
        _write_trace(trace_path, trace_rows)
    return PassiveResult(coeffs=coeffs, phi=phi, objective_trace=trace_rows,
                         rank_residuals=resid, max_duality_gap=max_gap,
                         eta_final=eta, converged=converged,
                         iterations=iterations, status=status)


def _write_trace(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("round,iteration,objective,rank_residual_t,rank_residual_r,eta\n")
        for row in rows:
            fh.write(f"{row[0]},{row[1]},{row[2]!r},{row[3]!r},{row[4]!r},{row[5]!r}\n")
