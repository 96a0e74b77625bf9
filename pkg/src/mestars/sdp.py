"""Small dense semidefinite programming.

Primal-dual interior-point solver (HKM direction, Mehrotra predictor-
corrector, fraction-to-boundary 0.98, infeasible start) for problems mixing
Hermitian PSD matrix blocks, free real scalars, and linear equality or
inequality constraints. Complex Hermitian blocks are embedded as real
symmetric blocks of twice the dimension; the embedding halves traces, which
is compensated when the data matrices are realified.

Convex-exponential constraints (base**x <= affine) are not part of the
interior-point core: `solve_with_exp_cuts` outer-approximates them with
supporting-hyperplane cuts refined until the worst violation is below a
tolerance. Cuts are tangent to the exponential, so the cut set is a
relaxation that tightens monotonically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 120
CUT_TOL = 1e-4
MAX_CUT_ROUNDS = 40


class SdpError(RuntimeError):
    pass


def _as_block_matrix(mat, dim, is_complex, what):
    a = np.asarray(mat)
    if a.shape != (dim, dim):
        raise ValueError(f"{what}: expected {dim}x{dim}, got {a.shape}")
    if is_complex:
        a = a.astype(np.complex128)
        herm_err = np.linalg.norm(a - a.conj().T)
        if herm_err > 1e-10 * (1.0 + np.linalg.norm(a)):
            raise ValueError(f"{what}: matrix is not Hermitian (error {herm_err:.3g})")
        return 0.5 * (a + a.conj().T)
    a = a.astype(np.float64)
    sym_err = np.linalg.norm(a - a.T)
    if sym_err > 1e-10 * (1.0 + np.linalg.norm(a)):
        raise ValueError(f"{what}: matrix is not symmetric (error {sym_err:.3g})")
    return 0.5 * (a + a.T)


@dataclass
class _Constraint:
    block_terms: dict
    scalar_terms: dict
    sense: str
    rhs: float


class SdpProblem:
    """Incrementally built problem: PSD blocks, free scalars, one linear
    objective, and linear constraints over trace terms and scalars."""

    def __init__(self):
        self.blocks = {}          # name -> (dim, is_complex)
        self.block_order = []
        self.scalars = []
        self.maximize = True
        self.obj_blocks = {}
        self.obj_scalars = {}
        self.obj_const = 0.0
        self.constraints = []

    def add_psd_block(self, name, dim, complex_=True):
        if name in self.blocks:
            raise ValueError(f"duplicate block {name!r}")
        if dim < 1:
            raise ValueError("block dimension must be >= 1")
        self.blocks[name] = (dim, complex_)
        self.block_order.append(name)
        return name

    def add_scalar(self, name):
        if name in self.scalars:
            raise ValueError(f"duplicate scalar {name!r}")
        self.scalars.append(name)
        return name

    def set_objective(self, maximize=True, block_terms=None, scalar_terms=None, const=0.0):
        self.maximize = maximize
        self.obj_blocks = dict(block_terms or {})
        self.obj_scalars = dict(scalar_terms or {})
        self.obj_const = float(const)

    def add_constraint(self, block_terms=None, scalar_terms=None, sense="==", rhs=0.0):
        if sense not in ("==", "<=", ">="):
            raise ValueError(f"bad sense {sense!r}")
        self.constraints.append(_Constraint(dict(block_terms or {}),
                                            dict(scalar_terms or {}),
                                            sense, float(rhs)))


@dataclass
class SdpSolution:
    block_values: dict
    scalar_values: dict
    objective: float
    duality_gap: float
    status: str
    iterations: int
    primal_err: float = 0.0
    dual_err: float = 0.0


def trace_dot(a, x) -> float:
    """Tr(a x) for Hermitian/symmetric a against a matching matrix."""
    return float(np.real(np.vdot(np.asarray(a), np.asarray(x))))


def affine_value(block_terms, scalar_terms, const, sol: SdpSolution) -> float:
    v = float(const)
    for name, mat in (block_terms or {}).items():
        v += trace_dot(mat, sol.block_values[name])
    for name, coeff in (scalar_terms or {}).items():
        v += coeff * sol.scalar_values[name]
    return v


# real symmetric embedding of complex Hermitian data; the 0.5 keeps
# <realify(A), embed(X)> equal to Tr(A X)
def _realify_data(h):
    re = h.real
    im = h.imag
    m = 0.5 * np.block([[re, -im], [im, re]])
    return 0.5 * (m + m.T)


def _unrealify(xr, d):
    p = xr[:d, :d]
    r = xr[d:, d:]
    s = xr[d:, :d]
    xc = 0.5 * (p + r) + 0.5j * (s - s.T)
    return 0.5 * (xc + xc.conj().T)


class _Compiled:
    def __init__(self, problem: SdpProblem):
        self.problem = problem
        sign = -1.0 if problem.maximize else 1.0

        self.block_names = list(problem.block_order)
        self.dims = []
        self.is_complex = []
        for name in self.block_names:
            d, cx = problem.blocks[name]
            self.dims.append(2 * d if cx else d)
            self.is_complex.append(cx)
        self.scalar_names = list(problem.scalars)
        nb = len(self.block_names)
        f = len(self.scalar_names)

        rows = []
        senses = []
        for c in problem.constraints:
            rows.append(c)
            senses.append(c.sense)
        m = len(rows)
        self.m = m
        self.f = f

        def embed(name, mat):
            idx = self.block_names.index(name)
            d, cx = problem.blocks[name]
            checked = _as_block_matrix(mat, d, cx, f"matrix for block {name!r}")
            return _realify_data(checked) if cx else checked

        self.C = []
        for bi, name in enumerate(self.block_names):
            n = self.dims[bi]
            cmat = np.zeros((n, n))
            if name in problem.obj_blocks:
                cmat = sign * embed(name, problem.obj_blocks[name])
            self.C.append(cmat)
        self.c_f = np.zeros(f)
        for name, coeff in problem.obj_scalars.items():
            self.c_f[self.scalar_names.index(name)] = sign * coeff

        self.A = [np.zeros((m, self.dims[bi], self.dims[bi])) for bi in range(nb)]
        self.F = np.zeros((m, f))
        self.b = np.zeros(m)
        self.ineq = np.zeros(m, dtype=bool)
        for i, c in enumerate(rows):
            flip = -1.0 if c.sense == ">=" else 1.0
            for name, mat in c.block_terms.items():
                bi = self.block_names.index(name)
                self.A[bi][i] = flip * embed(name, mat)
            for name, coeff in c.scalar_terms.items():
                self.F[i, self.scalar_names.index(name)] = flip * coeff
            self.b[i] = flip * c.rhs
            self.ineq[i] = c.sense in ("<=", ">=")
        # per-row Jacobi scaling; mixed-magnitude rows (penalty traces,
        # exponential-cone cuts) otherwise wreck the Schur conditioning
        scale2 = np.zeros(m)
        for bi in range(nb):
            scale2 += np.einsum("ikl,ikl->i", self.A[bi], self.A[bi])
        scale2 += np.einsum("ij,ij->i", self.F, self.F)
        row_scale = np.sqrt(scale2)
        row_scale[row_scale < 1e-300] = 1.0
        for bi in range(nb):
            self.A[bi] /= row_scale[:, None, None]
        self.F /= row_scale[:, None]
        self.b /= row_scale
        self.row_scale = row_scale

        self.n_ineq = int(self.ineq.sum())
        self.slack_rows = np.flatnonzero(self.ineq)
        self.nu = sum(self.dims) + self.n_ineq


def _max_step_psd(x, dx):
    # sup alpha with x + alpha dx psd, via eigenvalues of L^-1 dx L^-T
    if not (np.isfinite(x).all() and np.isfinite(dx).all()):
        return 0.0
    try:
        L = np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        w = np.linalg.eigvalsh(x)
        shift = max(0.0, -w.min()) + 1e-14 * max(1.0, abs(w.max()))
        L = np.linalg.cholesky(x + shift * np.eye(x.shape[0]))
    Li = np.linalg.inv(L)
    w = Li @ dx @ Li.T
    if not np.isfinite(w).all():
        return 0.0
    lam = np.linalg.eigvalsh(0.5 * (w + w.T)).min()
    if lam >= -1e-14:
        return math.inf
    return -1.0 / lam


def _is_pd(x):
    try:
        np.linalg.cholesky(0.5 * (x + x.T))
        return True
    except np.linalg.LinAlgError:
        return False


def _max_step_vec(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return math.inf
    return float(np.min(-v[neg] / dv[neg]))


def solve(problem: SdpProblem, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> SdpSolution:
    """Interior-point solve; deterministic for fixed inputs. Status is
    'optimal' when the relative duality gap and scaled residuals fall below
    tol, 'max_iter' or 'infeasible' otherwise (best iterate returned)."""
    comp = _Compiled(problem)
    nb = len(comp.block_names)
    m, f = comp.m, comp.f
    if m == 0:
        raise SdpError("problem has no constraints")

    # infeasible start: scaled multiples of the identity
    bscale = 1.0 + float(np.max(np.abs(comp.b))) if m else 1.0
    cscale = 1.0
    for cmat in comp.C:
        if cmat.size:
            cscale = max(cscale, float(np.linalg.norm(cmat)))
    ascale = 1.0
    for bi in range(nb):
        for i in range(m):
            ascale = max(ascale, float(np.linalg.norm(comp.A[bi][i])))
    x0 = 10.0 * max(1.0, bscale)
    z0 = 10.0 * max(1.0, cscale, ascale)
    X = [x0 * np.eye(n) for n in comp.dims]
    Z = [z0 * np.eye(n) for n in comp.dims]
    s = np.full(comp.n_ineq, x0)
    zs = np.full(comp.n_ineq, z0)
    y = np.zeros(m)
    u = np.zeros(f)

    fe = comp.F
    slack_rows = comp.slack_rows
    status = "max_iter"
    it = 0
    relgap = math.inf
    perr = math.inf
    derr = math.inf

    # best iterate by the acceptance merit; late iterations near a degenerate
    # face can drift away from an already-good point, so the best one wins
    def merit_of(rg, pe, de):
        return max(rg / (10.0 * tol), pe / (100.0 * tol), de / (10.0 * tol))

    best_merit = math.inf
    best_snap = None
    stall = 0

    def primal_value():
        v = sum(trace_dot(comp.C[bi], X[bi]) for bi in range(nb))
        return v + float(comp.c_f @ u)

    for it in range(1, max_iter + 1):
        ax = np.zeros(m)
        for bi in range(nb):
            ax += np.einsum("ikl,kl->i", comp.A[bi], X[bi])
        ax[slack_rows] += s
        ax += fe @ u
        rp = comp.b - ax
        Rd = []
        for bi in range(nb):
            Rd.append(comp.C[bi] - np.tensordot(y, comp.A[bi], axes=1) - Z[bi])
        rds = -y[slack_rows] - zs
        rf = comp.c_f - fe.T @ y

        gap = sum(trace_dot(X[bi], Z[bi]) for bi in range(nb)) + float(s @ zs)
        mu = gap / comp.nu

        pobj = primal_value()
        dobj = float(comp.b @ y)
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        perr = float(np.linalg.norm(rp)) / (1.0 + float(np.linalg.norm(comp.b)))
        derr = max([float(np.linalg.norm(r)) for r in Rd] + [0.0]) / (1.0 + cscale)
        if comp.n_ineq:
            derr = max(derr, float(np.linalg.norm(rds)) / (1.0 + cscale))
        if f:
            derr = max(derr, float(np.linalg.norm(rf)) / (1.0 + float(np.linalg.norm(comp.c_f))))

        m_cur = merit_of(relgap, perr, derr)
        if m_cur < best_merit:
            best_merit = m_cur
            best_snap = ([x.copy() for x in X], y.copy(), u.copy(),
                         relgap, perr, derr)
            stall = 0
        else:
            stall += 1
            if stall >= 15:
                status = "max_iter"
                break

        if relgap <= tol and perr <= tol and derr <= tol:
            status = "optimal"
            break
        iterate_scale = max(float(np.abs(X[bi]).max()) for bi in range(nb))
        if (perr > 1e8 or not math.isfinite(mu)
                or iterate_scale > 1e12 * max(x0, z0)
                or not math.isfinite(pobj)):
            status = "infeasible"
            break

        try:
            Zinv = [np.linalg.inv(Z[bi]) for bi in range(nb)]
        except np.linalg.LinAlgError:
            # the dual block can reach an exactly singular point on a
            # degenerate face; stop and fall back to the best iterate
            status = "max_iter"
            break
        for bi in range(nb):
            Zinv[bi] = 0.5 * (Zinv[bi] + Zinv[bi].T)

        # Schur complement M_ij = sum_b Tr(A_i X A_j Z^-1) + slack diagonal
        M = np.zeros((m, m))
        for bi in range(nb):
            Ab = comp.A[bi]
            for j in range(m):
                if not Ab[j].any():
                    continue
                Gj = Zinv[bi] @ Ab[j] @ X[bi]
                M[:, j] += np.einsum("ikl,kl->i", Ab, Gj)
        M = 0.5 * (M + M.T)
        if comp.n_ineq:
            M[slack_rows, slack_rows] += s / zs

        K = np.zeros((m + f, m + f))
        K[:m, :m] = M
        if f:
            K[:m, m:] = fe
            K[m:, :m] = fe.T

        def newton(sigma_mu, corr_blocks, corr_s):
            h = rp.copy()
            for bi in range(nb):
                rhs_mat = X[bi] - sigma_mu * Zinv[bi] + X[bi] @ Rd[bi] @ Zinv[bi]
                if corr_blocks is not None:
                    rhs_mat = rhs_mat + corr_blocks[bi] @ Zinv[bi]
                h += np.einsum("ikl,kl->i", comp.A[bi], rhs_mat)
            if comp.n_ineq:
                hs = -sigma_mu / zs + s + s * rds / zs
                if corr_s is not None:
                    hs += corr_s / zs
                h[slack_rows] += hs
            rhs = np.concatenate([h, rf]) if f else h
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            rhs_norm = float(np.linalg.norm(rhs))
            floor = 1e-13 * (1.0 + rhs_norm)

            def residual(v):
                return float(np.linalg.norm(rhs - K @ v))

            best_res = residual(sol)
            for _ in range(3):
                if best_res <= floor:
                    break
                try:
                    cand = sol + np.linalg.solve(K, rhs - K @ sol)
                except np.linalg.LinAlgError:
                    break
                res = residual(cand)
                if res >= best_res:
                    break
                sol, best_res = cand, res
            if best_res > 100.0 * floor:
                # near kappa ~ 1/eps the float64 residual is rounding noise;
                # extended-precision residuals recover a few more digits
                K128 = K.astype(np.longdouble)
                rhs128 = rhs.astype(np.longdouble)
                sol128 = sol.astype(np.longdouble)
                r128 = rhs128 - K128 @ sol128
                res128 = float(np.linalg.norm(r128.astype(np.float64)))
                for _ in range(4):
                    if res128 <= floor:
                        break
                    try:
                        corr = np.linalg.solve(K, r128.astype(np.float64))
                    except np.linalg.LinAlgError:
                        break
                    cand = sol128 + corr
                    cr = rhs128 - K128 @ cand
                    cres = float(np.linalg.norm(cr.astype(np.float64)))
                    if cres >= res128:
                        break
                    sol128, r128, res128 = cand, cr, cres
                if res128 < best_res:
                    sol, best_res = sol128.astype(np.float64), res128
            if best_res > 1e-9 * (1.0 + rhs_norm):
                # pivoted solves go blind on a nearly singular saddle system;
                # the equilibrated min-norm direction stays bounded
                d = np.sqrt(np.maximum(np.abs(K).max(axis=1), 1e-12))
                Keq = K / d[:, None] / d[None, :]
                cand = np.linalg.lstsq(Keq, rhs / d, rcond=1e-13)[0] / d
                res = residual(cand)
                if res < best_res:
                    sol, best_res = cand, res
            dy = sol[:m]
            du = sol[m:] if f else np.zeros(0)
            dZ = []
            dX = []
            # overflow during divergence is caught by finiteness guards
            with np.errstate(over="ignore", invalid="ignore"):
                for bi in range(nb):
                    dz = Rd[bi] - np.tensordot(dy, comp.A[bi], axes=1)
                    dx = sigma_mu * Zinv[bi] - X[bi] - (X[bi] @ dz) @ Zinv[bi]
                    if corr_blocks is not None:
                        dx -= corr_blocks[bi] @ Zinv[bi]
                    dx = 0.5 * (dx + dx.T)
                    dZ.append(dz)
                    dX.append(dx)
            if comp.n_ineq:
                dzs = rds - dy[slack_rows]
                ds = sigma_mu / zs - s - s * dzs / zs
                if corr_s is not None:
                    ds -= corr_s / zs
            else:
                dzs = np.zeros(0)
                ds = np.zeros(0)
            return dX, dZ, ds, dzs, dy, du

        dXa, dZa, dsa, dzsa, dya, dua = newton(0.0, None, None)
        ap = 1.0
        ad = 1.0
        for bi in range(nb):
            ap = min(ap, _max_step_psd(X[bi], dXa[bi]))
            ad = min(ad, _max_step_psd(Z[bi], dZa[bi]))
        if comp.n_ineq:
            ap = min(ap, _max_step_vec(s, dsa))
            ad = min(ad, _max_step_vec(zs, dzsa))
        gap_aff = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            for bi in range(nb):
                gap_aff += trace_dot(X[bi] + ap * dXa[bi], Z[bi] + ad * dZa[bi])
            if comp.n_ineq:
                gap_aff += float((s + ap * dsa) @ (zs + ad * dzsa))
        if not math.isfinite(gap_aff):
            status = "infeasible"
            break
        mu_aff = max(gap_aff / comp.nu, 0.0)
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.1

        corr_blocks = [dXa[bi] @ dZa[bi] for bi in range(nb)]
        corr_s = dsa * dzsa if comp.n_ineq else None
        # floating point can defeat the boundary estimate; backtrack until
        # the updated iterates factor
        def primal_ok(a, dX, ds):
            if comp.n_ineq and np.any(s + a * ds <= 0.0):
                return False
            return all(_is_pd(X[bi] + a * dX[bi]) for bi in range(nb))

        def dual_ok(a, dZ, dzs):
            if comp.n_ineq and np.any(zs + a * dzs <= 0.0):
                return False
            return all(_is_pd(Z[bi] + a * dZ[bi]) for bi in range(nb))

        def cone_steps(dX, dZ, ds, dzs):
            ap = math.inf
            ad = math.inf
            for bi in range(nb):
                ap = min(ap, _max_step_psd(X[bi], dX[bi]))
                ad = min(ad, _max_step_psd(Z[bi], dZ[bi]))
            if comp.n_ineq:
                ap = min(ap, _max_step_vec(s, ds))
                ad = min(ad, _max_step_vec(zs, dzs))
            ap = min(1.0, 0.98 * ap)
            ad = min(1.0, 0.98 * ad)
            while ap > 1e-14 and not primal_ok(ap, dX, ds):
                ap *= 0.5
            while ad > 1e-14 and not dual_ok(ad, dZ, dzs):
                ad *= 0.5
            return ap, ad

        dX, dZ, ds, dzs, dy, du = newton(sigma * mu, corr_blocks, corr_s)
        ap, ad = cone_steps(dX, dZ, ds, dzs)
        if ap < 1e-12 and ad < 1e-12:
            # the corrector direction can jam against the cone boundary on
            # degenerate faces; a pure centering step usually restores progress
            dX, dZ, ds, dzs, dy, du = newton(mu, None, None)
            ap, ad = cone_steps(dX, dZ, ds, dzs)
        if ap < 1e-12 and ad < 1e-12:
            status = "max_iter"
            break

        for bi in range(nb):
            X[bi] = 0.5 * ((X[bi] + ap * dX[bi]) + (X[bi] + ap * dX[bi]).T)
            Z[bi] = 0.5 * ((Z[bi] + ad * dZ[bi]) + (Z[bi] + ad * dZ[bi]).T)
        if comp.n_ineq:
            s = s + ap * ds
            zs = zs + ad * dzs
        y = y + ad * dy
        u = u + ap * du

    if status == "max_iter" and best_snap is not None \
            and best_merit < merit_of(relgap, perr, derr):
        X, y, u, relgap, perr, derr = best_snap

    # steps can stall just short of tol when the active rows are nearly
    # dependent (degenerate faces, clustered cuts); the iterate is still
    # usable, and callers repair residual infeasibility on structured rows
    if status == "max_iter" and relgap < 10 * tol and derr < 10 * tol and perr < 100 * tol:
        status = "near_optimal"

    sign = -1.0 if problem.maximize else 1.0
    block_values = {}
    for bi, name in enumerate(comp.block_names):
        if comp.is_complex[bi]:
            d = problem.blocks[name][0]
            block_values[name] = _unrealify(X[bi], d)
        else:
            block_values[name] = 0.5 * (X[bi] + X[bi].T)
    scalar_values = {name: float(u[si]) for si, name in enumerate(comp.scalar_names)}
    objective = sign * primal_value() + problem.obj_const
    return SdpSolution(block_values, scalar_values, objective, relgap, status, it,
                       perr, derr)


@dataclass
class ExpConstraint:
    """base**scalar <= affine(block_terms, scalar_terms, const)."""
    scalar: str
    base: float
    block_terms: dict = field(default_factory=dict)
    scalar_terms: dict = field(default_factory=dict)
    const: float = 0.0


def _tangent_constraint(cone: ExpConstraint, x0: float) -> _Constraint:
    # base**x0 (1 + ln(base) (x - x0)) <= affine, linear in all variables
    lb = math.log(cone.base)
    v0 = cone.base ** x0
    scalar_terms = {k: -c for k, c in cone.scalar_terms.items()}
    scalar_terms[cone.scalar] = scalar_terms.get(cone.scalar, 0.0) + v0 * lb
    block_terms = {k: -np.asarray(v) for k, v in cone.block_terms.items()}
    rhs = cone.const + v0 * (lb * x0 - 1.0)
    return _Constraint(block_terms, scalar_terms, "<=", float(rhs))


def _spaced_tangents(cone, points, cut_tol):
    """Thin a tangent-point list so neighbors stay at least
    sqrt(2 cut_tol / f'') apart, preferring the newest points. Between two
    kept tangents the envelope then sags below the curve by at most
    f'' d^2 / 8 = cut_tol / 4, so dropping the points in between never lets
    a later solution violate the cone by more than cut_tol."""
    lb = math.log(cone.base)
    kept = []
    for t in reversed(points):
        fpp = cone.base ** t * lb * lb
        delta = math.sqrt(2.0 * cut_tol / max(fpp, 1e-300))
        if all(abs(t - q) >= min(delta,
                                 math.sqrt(2.0 * cut_tol
                                           / (cone.base ** q * lb * lb)))
               for q in kept):
            kept.append(t)
    kept.reverse()
    return kept


def solve_with_exp_cuts(problem: SdpProblem, cones, seeds, tol=DEFAULT_TOL,
                        cut_tol=CUT_TOL, max_rounds=MAX_CUT_ROUNDS,
                        max_iter=DEFAULT_MAX_ITER):
    """Solve with supporting-hyperplane outer approximation of the
    exponential constraints, seeded at the given scalar values. Returns
    (solution, max duality gap over all interior-point calls). A solution
    that exhausts max_rounds with a cut still violated is downgraded to
    status 'cut_limit'.

    All tangent gradients of one cone lie in a two-dimensional family (a
    fixed affine part plus the slope on the cone scalar), so clustered
    tangent points make the active rows numerically dependent and wreck the
    interior-point endgame. Tangents are therefore kept spaced by the
    curvature-scaled gap of _spaced_tangents: close-together points collapse
    onto the most recent one, which relaxes the envelope by at most
    cut_tol / 4 and hence cannot reopen enough room for a cycle."""
    max_gap = 0.0
    sol = None
    base_rows = list(problem.constraints)
    points = [list() for _ in cones]
    for ci, seed in enumerate(seeds):
        points[ci].append(seed)
    for _ in range(max_rounds):
        problem.constraints = base_rows.copy()
        for ci, cone in enumerate(cones):
            points[ci] = _spaced_tangents(cone, points[ci], cut_tol)
            for t in points[ci]:
                problem.constraints.append(_tangent_constraint(cone, t))
        sol = solve(problem, tol=tol, max_iter=max_iter)
        if sol.status not in ("optimal", "near_optimal"):
            return sol, max_gap
        max_gap = max(max_gap, sol.duality_gap)
        worst = 0.0
        for ci, cone in enumerate(cones):
            xv = sol.scalar_values[cone.scalar]
            lin = affine_value(cone.block_terms, cone.scalar_terms, cone.const, sol)
            viol = cone.base ** xv - lin
            if viol <= cut_tol:
                continue
            worst = max(worst, viol)
            points[ci].append(xv)
        if worst <= cut_tol:
            return sol, max_gap
    return replace(sol, status="cut_limit"), max_gap


# plain-text dump/load for regression fixtures

_SDP_MAGIC = "sdp-v1"


def _write_matrix(fh, mat):
    a = np.asarray(mat)
    cx = np.iscomplexobj(a)
    fh.write(f"matrix {a.shape[0]} {'complex' if cx else 'real'}\n")
    for row in a:
        if cx:
            fh.write(" ".join(f"{float(v.real)!r} {float(v.imag)!r}" for v in row) + "\n")
        else:
            fh.write(" ".join(f"{float(v)!r}" for v in row) + "\n")


def _read_matrix(lines, pos):
    head = lines[pos].split()
    if head[0] != "matrix":
        raise ValueError(f"expected matrix record, got {lines[pos]!r}")
    dim = int(head[1])
    cx = head[2] == "complex"
    rows = []
    for r in range(dim):
        vals = [float(v) for v in lines[pos + 1 + r].split()]
        if cx:
            rows.append([complex(vals[2 * i], vals[2 * i + 1]) for i in range(dim)])
        else:
            rows.append(vals)
    return np.array(rows), pos + 1 + dim


def save_problem(problem: SdpProblem, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_SDP_MAGIC + "\n")
        fh.write(f"maximize {int(problem.maximize)}\n")
        fh.write(f"objective_const {problem.obj_const!r}\n")
        for name in problem.block_order:
            d, cx = problem.blocks[name]
            fh.write(f"block {name} {d} {int(cx)}\n")
        for name in problem.scalars:
            fh.write(f"scalar {name}\n")
        for name, mat in problem.obj_blocks.items():
            fh.write(f"obj_block {name}\n")
            _write_matrix(fh, mat)
        for name, coeff in problem.obj_scalars.items():
            fh.write(f"obj_scalar {name} {coeff!r}\n")
        for c in problem.constraints:
            fh.write(f"constraint {c.sense} {c.rhs!r}\n")
            for name, mat in c.block_terms.items():
                fh.write(f"c_block {name}\n")
                _write_matrix(fh, mat)
            for name, coeff in c.scalar_terms.items():
                fh.write(f"c_scalar {name} {coeff!r}\n")
            fh.write("end\n")


def load_problem(path) -> SdpProblem:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if lines[0] != _SDP_MAGIC:
        raise ValueError(f"not an {_SDP_MAGIC} file: {path}")
    p = SdpProblem()
    pos = 1
    current = None
    while pos < len(lines):
        parts = lines[pos].split()
        tag = parts[0]
        if tag == "maximize":
            p.maximize = bool(int(parts[1]))
            pos += 1
        elif tag == "objective_const":
            p.obj_const = float(parts[1])
            pos += 1
        elif tag == "block":
            p.add_psd_block(parts[1], int(parts[2]), complex_=bool(int(parts[3])))
            pos += 1
        elif tag == "scalar":
            p.add_scalar(parts[1])
            pos += 1
        elif tag == "obj_block":
            mat, pos = _read_matrix(lines, pos + 1)
            p.obj_blocks[parts[1]] = mat
        elif tag == "obj_scalar":
            p.obj_scalars[parts[1]] = float(parts[2])
            pos += 1
        elif tag == "constraint":
            current = _Constraint({}, {}, parts[1], float(parts[2]))
            pos += 1
        elif tag == "c_block":
            mat, pos = _read_matrix(lines, pos + 1)
            current.block_terms[parts[1]] = mat
        elif tag == "c_scalar":
            current.scalar_terms[parts[1]] = float(parts[2])
            pos += 1
        elif tag == "end":
            p.constraints.append(current)
            current = None
            pos += 1
        else:
            raise ValueError(f"unknown record {tag!r}")
    return p
