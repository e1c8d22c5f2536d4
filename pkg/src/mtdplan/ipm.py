"""Primal-dual interior point solver exploiting the voxelwise block structure.

The LP solved is ``min c.x  s.t.  A x >= b,  lower <= x <= upper`` with
finite lower bounds throughout.  Each Mehrotra predictor-corrector
iteration reduces the Newton equations to the symmetric augmented system

    ( -Dx  A^T ) (dx)   (r1)
    (  A   Ds  ) (dy) = (r2)

with positive diagonals Dx (variable complementarity products) and Ds
(row-slack complementarity products).  Partitioned by voxelwise
dependence and rearranged so all voxel-sized blocks sit in one quadrant,
that quadrant is

    ( -D2   A22^T )            ( -D2   0     I    )
    ( A22   D4    )     =      (  0    D41   0    ) ,   A22 = [0 I]^T,
                               (  I    0     D42  )

whose inverse has the same sparsity and is formed explicitly from the
diagonals alone; applying it is elementwise scaling and adding of
vectors.  The Newton system is then solved through the Schur complement
of that quadrant, whose order is that of the trajectory-sized top-left
quadrant, so each iteration costs O(voxels) plus one small factorization.

The iteration stops once primal and dual residuals are below the
feasibility tolerance and the duality gap - which is expressed in the
same Gy-weighted scale as the objective - certifies the objective value
to within the dose tolerance (default 1 cGy).
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .formulation import BlockLP

_STEP_FLOOR = 1e-13


@dataclass
class SolverSettings:
    dose_tolerance_gy: float = 0.01
    max_iterations: int = 200
    step_fraction: float = 0.995
    feasibility_tolerance: float = 1e-8
    regularization: float = 1e-10
    dense_schur_max_order: int = 5000
    centering_power: float = 3.0       # Mehrotra sigma = (mu_aff/mu)**power
    log_kkt: bool = False              # retain per-iteration systems (tests)

    def __post_init__(self):
        if self.dose_tolerance_gy <= 0:
            raise ValueError("dose_tolerance_gy must be > 0")
        if not (0.0 < self.step_fraction < 1.0):
            raise ValueError("step_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class KKTSystem:
    """One augmented Newton system in the four-block partition.

    ``d1``/``d2`` hold the variable complementarity diagonals for the
    trajectory-sized and voxelwise columns, ``d3``/``d4`` the slack
    diagonals for the corresponding row groups; ``num_zero_rows`` splits
    ``d4`` conformally with A22 = [0 I]^T.
    """

    a11: sp.csr_matrix
    a12: sp.csr_matrix
    a21: sp.csr_matrix
    a22: sp.csr_matrix
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    d4: np.ndarray
    num_zero_rows: int
    rhs: np.ndarray | None = None

    @property
    def n1(self) -> int:
        return self.a11.shape[1]

    @property
    def n2(self) -> int:
        return self.a22.shape[1]

    @property
    def m1(self) -> int:
        return self.a11.shape[0]

    @property
    def m2(self) -> int:
        return self.a21.shape[0]

    @property
    def order(self) -> int:
        return self.n1 + self.n2 + self.m1 + self.m2

    def assemble(self) -> sp.csr_matrix:
        """Full augmented matrix in the original (x1, x2, y1, y2) ordering."""
        n1, n2, m1, m2 = self.n1, self.n2, self.m1, self.m2
        blocks = [
            [-sp.diags(self.d1) if n1 else None, None, self.a11.T, self.a21.T],
            [None, -sp.diags(self.d2) if n2 else None, self.a12.T, self.a22.T],
            [self.a11, self.a12, sp.diags(self.d3) if m1 else None, None],
            [self.a21, self.a22, None, sp.diags(self.d4) if m2 else None],
        ]
        return sp.bmat(blocks, format="csr")


@dataclass(frozen=True)
class Rearrangement:
    """Permutation concentrating voxelwise components in one quadrant."""

    perm: np.ndarray
    top_order: int      # n1 + m1, of the order of the bixel count
    bottom_order: int   # n2 + m2, voxel-sized

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv


def rearrange_kkt(system: KKTSystem) -> Rearrangement:
    """Permutation taking (x1, x2, y1, y2) to (x1, y1, x2, y2).

    Applying it symmetrically to the assembled matrix yields the 2x2
    super-block form whose bottom-right quadrant carries every voxelwise
    component.
    """
    n1, n2, m1, m2 = system.n1, system.n2, system.m1, system.m2
    perm = np.concatenate([
        np.arange(n1),                                    # x1
        n1 + n2 + np.arange(m1),                          # y1
        n1 + np.arange(n2),                               # x2
        n1 + n2 + m1 + np.arange(m2),                     # y2
    ])
    return Rearrangement(perm=perm, top_order=n1 + m1, bottom_order=n2 + m2)


@dataclass(frozen=True)
class QuadrantInverse:
    """Explicit inverse of the voxelwise quadrant [[-D2, A22^T], [A22, D4]].

    With A22 = [0 I]^T the quadrant splits into the decoupled max/min-dose
    diagonal D41 and independent 2x2 pairs [[-d2_i, 1], [1, d42_i]] whose
    determinant -(1 + d2_i*d42_i) never vanishes for positive diagonals.
    Application costs one multiply-add per component.
    """

    xx: np.ndarray   # x2 <- x2 rhs   ( -d42/e )
    xr: np.ndarray   # x2 <- eta-row rhs, also eta-row <- x2 ( 1/e )
    rr: np.ndarray   # eta-row <- eta-row rhs ( d2/e )
    aa: np.ndarray   # max/min rows ( 1/d41 )

    def apply(self, rx2: np.ndarray, ry_zero: np.ndarray, ry_eta: np.ndarray):
        dx2 = self.xx * rx2 + self.xr * ry_eta
        dy_zero = self.aa * ry_zero
        dy_eta = self.xr * rx2 + self.rr * ry_eta
        return dx2, dy_zero, dy_eta

    def to_matrix(self) -> sp.csr_matrix:
        """Dense-structure sparse form, ordered (x2, zero rows, eta rows)."""
        n2 = self.xx.size
        mz = self.aa.size
        size = 2 * n2 + mz
        rows, cols, vals = [], [], []
        for i in range(n2):
            rows += [i, i, n2 + mz + i, n2 + mz + i]
            cols += [i, n2 + mz + i, i, n2 + mz + i]
            vals += [self.xx[i], self.xr[i], self.xr[i], self.rr[i]]
        for i in range(mz):
            rows.append(n2 + i)
            cols.append(n2 + i)
            vals.append(self.aa[i])
        return sp.csr_matrix((vals, (rows, cols)), shape=(size, size))


def invert_voxelwise_quadrant(d2: np.ndarray, d4: np.ndarray, num_zero_rows: int) -> QuadrantInverse:
    """Closed-form inverse of the voxelwise quadrant from its diagonals."""
    d2 = np.asarray(d2, dtype=float)
    d4 = np.asarray(d4, dtype=float)
    d41 = d4[:num_zero_rows]
    d42 = d4[num_zero_rows:]
    if d42.shape != d2.shape:
        raise ValueError("eta-row diagonal must be conformal with D2")
    assert np.all(d2 > 0) and np.all(d4 > 0), "complementarity diagonals must be positive"
    e = 1.0 + d2 * d42
    return QuadrantInverse(xx=-d42 / e, xr=1.0 / e, rr=d2 / e, aa=1.0 / d41)


class _SchurFactorization:
    """Factorization of one augmented system, reusable across right-hand sides."""

    def __init__(self, system: KKTSystem, dense_max_order: int = 5000):
        self.system = system
        n1, n2, m1 = system.n1, system.n2, system.m1
        mz = system.num_zero_rows
        self.quadrant = invert_voxelwise_quadrant(system.d2, system.d4, mz)
        a21_zero = system.a21[:mz]
        a21_eta = system.a21[mz:]
        self.a21_zero = a21_zero.tocsr()
        self.a21_eta = a21_eta.tocsr()

        # Schur complement S = TL - TR * Qinv * BL, assembled blockwise:
        #   C11 = A21z^T (1/D41) A21z + A21e^T (D2/e) A21e
        #   C12 = A21e^T (1/e) A12^T,  C21 = C12^T,  C22 = A12 (-D42/e) A12^T
        q = self.quadrant
        c11 = (self.a21_zero.T @ sp.diags(q.aa) @ self.a21_zero
               + self.a21_eta.T @ sp.diags(q.rr) @ self.a21_eta) if system.m2 else None
        c12 = (self.a21_eta.T @ sp.diags(q.xr) @ system.a12.T) if n2 else None
        c22 = (system.a12 @ sp.diags(q.xx) @ system.a12.T) if n2 else None

        s11 = -sp.diags(system.d1) - (c11 if c11 is not None else 0)
        s12 = system.a11.T - (c12 if c12 is not None else 0)
        s21 = system.a11 - (c12.T if c12 is not None else 0)
        s22 = sp.diags(system.d3) - (c22 if c22 is not None else 0)
        schur = sp.bmat([[s11, s12], [s21, s22]], format="csc")

        self.order = n1 + m1
        self.regularized = False
        if self.order <= dense_max_order:
            dense = schur.toarray()
            lu = self._try_dense(dense)
            if lu is None:
                self.regularized = True
                bump = 1e-8 * (1.0 + np.abs(dense).max())
                dense[np.arange(n1), np.arange(n1)] -= bump
                dense[n1 + np.arange(m1), n1 + np.arange(m1)] += bump
                lu = self._try_dense(dense)
                if lu is None:
                    raise scipy.linalg.LinAlgError("Schur complement is singular")
            self._lu = lu
            self._solve = lambda rhs: scipy.linalg.lu_solve(self._lu, rhs)
        else:
            try:
                self._splu = spla.splu(schur)
            except RuntimeError:
                self.regularized = True
                bump = 1e-8 * (1.0 + abs(schur).max())
                reg = sp.diags(np.concatenate([-np.full(n1, bump), np.full(m1, bump)]))
                self._splu = spla.splu((schur + reg).tocsc())
            self._solve = lambda rhs: self._splu.solve(rhs)

    @staticmethod
    def _try_dense(dense: np.ndarray):
        """LU-factor, returning None on singular/non-finite factors."""
        if not np.all(np.isfinite(dense)):
            return None
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lu, piv = scipy.linalg.lu_factor(dense)
        diag = np.abs(np.diag(lu))
        scale = np.abs(dense).max() + 1.0
        if not np.all(np.isfinite(lu)) or np.any(diag <= 1e-300 * scale):
            return None
        return lu, piv

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve the full augmented system for one (x1, x2, y1, y2) rhs."""
        system = self.system
        n1, n2, m1 = system.n1, system.n2, system.m1
        mz = system.num_zero_rows
        rx1 = rhs[:n1]
        rx2 = rhs[n1:n1 + n2]
        ry1 = rhs[n1 + n2:n1 + n2 + m1]
        ry2 = rhs[n1 + n2 + m1:]
        ry_zero = ry2[:mz]
        ry_eta = ry2[mz:]

        # top rhs minus TR * Qinv * bottom rhs
        qx2, qy_zero, qy_eta = self.quadrant.apply(rx2, ry_zero, ry_eta)
        g_x1 = rx1 - (self.a21_zero.T @ qy_zero + self.a21_eta.T @ qy_eta)
        g_y1 = ry1 - (system.a12 @ qx2)

        top = self._solve(np.concatenate([g_x1, g_y1]))
        dx1 = top[:n1]
        dy1 = top[n1:]

        # bottom solve: Qinv * (bottom rhs - BL * top)
        ux2 = rx2 - (system.a12.T @ dy1)
        uy_zero = ry_zero - (self.a21_zero @ dx1)
        uy_eta = ry_eta - (self.a21_eta @ dx1)
        dx2, dy_zero, dy_eta = self.quadrant.apply(ux2, uy_zero, uy_eta)
        return np.concatenate([dx1, dx2, dy1, dy_zero, dy_eta])


def schur_solve(system: KKTSystem, rhs: np.ndarray, dense_max_order: int = 5000):
    """One-shot structured solve of the augmented system.

    Returns ``(delta, info)`` where ``info`` carries the relative
    residual of the unreduced system and whether a regularized fallback
    factorization was needed.
    """
    rhs = np.asarray(rhs, dtype=float)
    fact = _SchurFactorization(system, dense_max_order=dense_max_order)
    delta = fact.solve(rhs)
    full = system.assemble()
    residual = np.linalg.norm(full @ delta - rhs) / max(np.linalg.norm(rhs), 1e-300)
    return delta, {"relative_residual": float(residual), "regularized": fact.regularized}


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    primal_residual: float
    dual_residual: float
    gap_gy: float
    mu: float
    step_primal: float
    step_dual: float
    sigma: float


@dataclass(frozen=True)
class DualSolution:
    y: np.ndarray   # row duals (>= rows)
    z: np.ndarray   # lower-bound duals
    w: np.ndarray   # upper-bound duals (zero where the bound is infinite)


@dataclass
class SolveResult:
    status: str  # "converged" | "iteration_limit" | "infeasible" | "numerical_failure"
    x: np.ndarray
    dual: DualSolution
    slack: np.ndarray
    objective: float
    gap_gy: float
    primal_residual: float
    dual_residual: float
    iterations: int
    history: list[IterationRecord] = field(default_factory=list)
    kkt_log: list = field(default_factory=list)
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def duality_gap_in_dose(lp: BlockLP, x: np.ndarray, dual: DualSolution) -> float:
    """Primal-minus-dual objective in the Gy-weighted objective scale."""
    finite_up = np.isfinite(lp.upper)
    dual_obj = (float(np.dot(lp.rhs(), dual.y))
                + float(np.dot(lp.lower, dual.z))
                - float(np.dot(lp.upper[finite_up], dual.w[finite_up])))
    return float(np.dot(lp.objective_vector, x)) - dual_obj


def _max_step(values: np.ndarray, deltas: np.ndarray) -> float:
    """Largest step keeping values + step*deltas nonnegative."""
    shrinking = deltas < 0
    if not np.any(shrinking):
        return 1.0
    return float(np.min(values[shrinking] / -deltas[shrinking]))


def solve(lp: BlockLP, settings: SolverSettings | None = None) -> SolveResult:
    """Solve a block-partitioned LP with the structured interior point method."""
    settings = settings or SolverSettings()
    n1, n2 = lp.n1, lp.n2
    m1, m2 = lp.m1, lp.m2
    n = n1 + n2
    m = m1 + m2
    A = lp.matrix()
    b = lp.rhs()
    c = lp.objective_vector
    lower = lp.lower
    upper = lp.upper
    finite_up = np.isfinite(upper)
    n_up = int(np.count_nonzero(finite_up))

    def make_system(dx: np.ndarray, ds: np.ndarray) -> KKTSystem:
        return KKTSystem(a11=lp.a11, a12=lp.a12, a21=lp.a21, a22=lp.a22,
                         d1=dx[:n1], d2=dx[n1:], d3=ds[:m1], d4=ds[m1:],
                         num_zero_rows=lp.num_zero_rows)

    # Least-squares starting point: damped min-norm solves of A x ~ b and
    # A^T y ~ c through the same structured factorization (unit diagonals),
    # then shifted strictly inside the box / positive orthant.
    ones_fact = _SchurFactorization(make_system(np.ones(n), np.ones(m)),
                                    dense_max_order=settings.dense_schur_max_order)
    sol_b = ones_fact.solve(np.concatenate([np.zeros(n), b]))
    x_ls = sol_b[:n]
    sol_c = ones_fact.solve(np.concatenate([c, np.zeros(m)]))
    y_ls = sol_c[n:]

    span = upper - lower
    margin = 0.1 * (1.0 + np.abs(x_ls))
    margin = np.where(np.isfinite(span), np.minimum(margin, 0.25 * span), margin)
    x = np.clip(x_ls, lower + margin, np.where(finite_up, upper - margin, np.inf))

    z_hat = c - A.T @ y_ls
    dz = 0.1 * (1.0 + float(np.mean(np.abs(z_hat))))
    z = np.maximum(z_hat, 0.0) + dz
    w = np.where(finite_up, np.maximum(-z_hat, 0.0) + dz, 0.0)
    s_hat = A @ x - b
    ds_shift = 0.1 * (1.0 + float(np.mean(np.abs(s_hat))))
    s = np.maximum(s_hat, ds_shift)
    y = np.maximum(y_ls, 0.0) + 0.1 * (1.0 + float(np.mean(np.abs(y_ls))))

    b_scale = 1.0 + float(np.max(np.abs(b))) if m else 1.0
    c_scale = 1.0 + float(np.max(np.abs(c)))
    history: list[IterationRecord] = []
    kkt_log: list = []

    def current_gap() -> float:
        dual_obj = (float(np.dot(b, y)) + float(np.dot(lower, z))
                    - float(np.dot(upper[finite_up], w[finite_up])))
        return float(np.dot(c, x)) - dual_obj

    def result(status: str, message: str = "") -> SolveResult:
        rp = b - A @ x + s
        rd = c - A.T @ y - z + w
        return SolveResult(status=status, x=x.copy(),
                           dual=DualSolution(y=y.copy(), z=z.copy(), w=w.copy()),
                           slack=s.copy(), objective=float(np.dot(c, x)),
                           gap_gy=current_gap(),
                           primal_residual=float(np.max(np.abs(rp))) / b_scale,
                           dual_residual=float(np.max(np.abs(rd))) / c_scale,
                           iterations=len(history), history=history,
                           kkt_log=kkt_log, message=message)

    def safe_up_gap(xv: np.ndarray) -> np.ndarray:
        """upper - x on bounded components, 1 elsewhere (never touched)."""
        return np.where(finite_up, np.where(finite_up, upper, 0.0) - xv, 1.0)

    x_shift = x - lower
    up_gap = safe_up_gap(x)
    sigma = 0.0
    alpha_p = alpha_d = 0.0
    for iteration in range(settings.max_iterations):
        rp = b - A @ x + s                    # A x - s = b residual
        rd = c - A.T @ y - z + w              # A^T y + z - w = c residual
        comp = float(np.dot(x_shift, z) + np.dot(s, y)
                     + np.dot(up_gap[finite_up], w[finite_up]))
        mu = comp / (n + m + n_up)
        gap = current_gap()
        rel_p = float(np.max(np.abs(rp))) / b_scale
        rel_d = float(np.max(np.abs(rd))) / c_scale
        history.append(IterationRecord(iteration=iteration, primal_residual=rel_p,
                                       dual_residual=rel_d, gap_gy=gap, mu=mu,
                                       step_primal=alpha_p, step_dual=alpha_d,
                                       sigma=sigma))

        if rel_p <= settings.feasibility_tolerance and rel_d <= settings.feasibility_tolerance \
                and gap <= settings.dose_tolerance_gy:
            return result("converged")
        if not np.isfinite(mu) or not np.isfinite(gap):
            return result("numerical_failure", "non-finite iterate")
        # Dual objective running away while the primal residual refuses to
        # drop is the standard certificate pattern for an infeasible primal.
        dual_obj = float(np.dot(c, x)) - gap
        if iteration >= 10 and rel_p > 1e3 * settings.feasibility_tolerance \
                and dual_obj > 1e10 * (b_scale + c_scale):
            return result("infeasible", "dual objective diverging with primal residual stalled")

        dx_diag = z / x_shift + np.where(finite_up, w / up_gap, 0.0) \
            + settings.regularization
        ds_diag = s / y + settings.regularization
        system = make_system(dx_diag, ds_diag)
        try:
            fact = _SchurFactorization(system, dense_max_order=settings.dense_schur_max_order)
        except (scipy.linalg.LinAlgError, RuntimeError, ValueError) as exc:
            return result("numerical_failure", f"factorization failed: {exc}")

        def newton_rhs(rc_xz, rc_xw, rc_sy):
            r1 = rd - rc_xz / x_shift + np.where(finite_up, rc_xw / up_gap, 0.0)
            r2 = rp + rc_sy / y
            return np.concatenate([r1, r2])

        def directions(rc_xz, rc_xw, rc_sy):
            rhs = newton_rhs(rc_xz, rc_xw, rc_sy)
            delta = fact.solve(rhs)
            ddx = delta[:n]
            ddy = delta[n:]
            dds = A @ ddx - rp
            ddz = (rc_xz - z * ddx) / x_shift
            ddw = np.where(finite_up, (rc_xw + w * ddx) / up_gap, 0.0)
            if settings.log_kkt:
                kkt_log.append((system, rhs, delta))
            return ddx, ddy, dds, ddz, ddw

        # predictor (affine scaling)
        rc_xz = -x_shift * z
        rc_xw = np.where(finite_up, -up_gap * w, 0.0)
        rc_sy = -s * y
        try:
            dx_a, dy_a, ds_a, dz_a, dw_a = directions(rc_xz, rc_xw, rc_sy)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            return result("numerical_failure", f"predictor solve failed: {exc}")

        ap = min(1.0, _max_step(x_shift, dx_a), _max_step(s, ds_a),
                 _max_step(up_gap[finite_up], -dx_a[finite_up]) if n_up else 1.0)
        ad = min(1.0, _max_step(z, dz_a), _max_step(y, dy_a),
                 _max_step(w[finite_up], dw_a[finite_up]) if n_up else 1.0)
        mu_aff = (np.dot(x_shift + ap * dx_a, z + ad * dz_a)
                  + np.dot(s + ap * ds_a, y + ad * dy_a)
                  + (np.dot(up_gap[finite_up] - ap * dx_a[finite_up],
                            w[finite_up] + ad * dw_a[finite_up]) if n_up else 0.0)) \
            / (n + m + n_up)
        sigma = float(np.clip((max(mu_aff, 0.0) / mu) ** settings.centering_power, 0.0, 0.999)) \
            if mu > 0 else 0.0

        # corrector (centering + second order)
        rc_xz = sigma * mu - x_shift * z - dx_a * dz_a
        rc_xw = np.where(finite_up, sigma * mu - up_gap * w + dx_a * dw_a, 0.0)
        rc_sy = sigma * mu - s * y - ds_a * dy_a
        try:
            dx_c, dy_c, ds_c, dz_c, dw_c = directions(rc_xz, rc_xw, rc_sy)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            return result("numerical_failure", f"corrector solve failed: {exc}")

        theta = settings.step_fraction
        alpha_p = min(1.0, theta * _max_step(x_shift, dx_c), theta * _max_step(s, ds_c),
                      theta * _max_step(up_gap[finite_up], -dx_c[finite_up]) if n_up else 1.0)
        alpha_d = min(1.0, theta * _max_step(z, dz_c), theta * _max_step(y, dy_c),
                      theta * _max_step(w[finite_up], dw_c[finite_up]) if n_up else 1.0)
        if alpha_p < _STEP_FLOOR and alpha_d < _STEP_FLOOR:
            return result("numerical_failure", "step sizes collapsed")

        x = x + alpha_p * dx_c
        s = s + alpha_p * ds_c
        y = y + alpha_d * dy_c
        z = z + alpha_d * dz_c
        w = np.where(finite_up, w + alpha_d * dw_c, 0.0)
        x_shift = x - lower
        up_gap = safe_up_gap(x)
        if np.any(x_shift <= 0) or np.any(s <= 0) or np.any(z <= 0) or np.any(y <= 0) \
                or (n_up and np.any(up_gap[finite_up] <= 0)) \
                or (n_up and np.any(w[finite_up] <= 0)):
            return result("numerical_failure", "lost strict positivity")

    return result("iteration_limit", "iteration limit reached before convergence")


def write_iteration_log(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "primal_residual", "dual_residual",
                         "gap_gy", "mu", "step_primal", "step_dual", "sigma"])
        for rec in history:
            writer.writerow([rec.iteration, repr(rec.primal_residual), repr(rec.dual_residual),
                             repr(rec.gap_gy), repr(rec.mu), repr(rec.step_primal),
                             repr(rec.step_dual), repr(rec.sigma)])


def time_newton_solve(system: KKTSystem, rhs: np.ndarray, repeats: int = 3,
                      dense_max_order: int = 5000) -> float:
    """Best-of-``repeats`` wall time of one full structured Newton solve."""
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fact = _SchurFactorization(system, dense_max_order=dense_max_order)
        fact.solve(rhs)
        best = min(best, time.perf_counter() - start)
    return best
