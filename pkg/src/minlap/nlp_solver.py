"""Primal-dual interior-point solver for sparse nonlinear programs.

Solves   min f(x)   s.t.  cl <= c(x) <= cu,  lb <= x <= ub

with a monotone (Fiacco-McCormick) barrier strategy, a filter line search
with second-order corrections, inertia-corrected sparse LDL^T KKT solves and
a damped Gauss-Newton feasibility restoration. Inequality rows get slack
variables so the internal problem has only equality rows plus variable
bounds. Automatic gradient-based objective/row scaling is applied at the
initial point.

The module also provides a finite-difference derivative checker and an
external-backend adapter (scipy trust-constr) behind the same interface.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .sparse_ldl import LdlFactorization

INF_BOUND = 1.0e19


# ----------------------------------------------------------------- options


@dataclass(frozen=True)
class SolverOptions:
    """Options for the built-in interior-point solver."""

    tol: float = 1.0e-6
    acceptable_tol: float = 1.0e-4
    max_iter: int = 3000
    mu_init: float = 0.1
    mu_min: float = 1.0e-11
    barrier_strategy: str = "monotone"
    line_search: str = "filter"
    bound_push: float = 1.0e-2
    warm_bound_push: float = 1.0e-8
    warm_start: "WarmStartPayload | None" = None
    max_soc: int = 4
    keep_log: bool = True
    # dual regularization delta_c = dual_reg_coeff * mu**dual_reg_power keeps
    # multipliers of locally redundant rows from drifting
    dual_reg_coeff: float = 1.0e-8
    dual_reg_power: float = 0.25
    # once near-feasible, recompute equality multipliers by damped least
    # squares whenever they have drifted beyond this size (0 disables)
    recalc_multiplier_threshold: float = 1.0e3
    acceptable_iter: int = 15

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("need at least one iteration")
        if self.barrier_strategy != "monotone":
            raise ValueError("only the monotone barrier strategy is available")
        if self.line_search != "filter":
            raise ValueError("only the filter line search is available")


@dataclass(frozen=True)
class WarmStartPayload:
    """Primal/dual state packaged from a previous solve on the same structure."""

    x: np.ndarray
    slacks: np.ndarray
    lam: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray


@dataclass
class IterationRecord:
    """One line of the solve log."""

    iteration: int
    objective: float
    theta: float
    phi: float
    theta_after: float
    phi_after: float
    dual_inf: float
    mu: float
    alpha_primal: float
    alpha_dual: float
    ls_trials: int
    soc_steps: int
    delta_w: float
    mode: str

    def format(self) -> str:
        return (f"{self.iteration:4d}  f={self.objective:+.8e}  "
                f"theta={self.theta:8.2e}  dual={self.dual_inf:8.2e}  "
                f"mu={self.mu:7.1e}  a_pri={self.alpha_primal:7.1e}  "
                f"a_du={self.alpha_dual:7.1e}  ls={self.ls_trials}  "
                f"{self.mode}")


@dataclass
class SolverResult:
    """Outcome of a solve. Multipliers are in the problem's own row units."""

    status: str
    x: np.ndarray
    lam: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    slacks: np.ndarray
    objective: float
    kkt_error: float
    constraint_violation: float
    dual_infeasibility: float
    complementarity: float
    iterations: int
    wall_time: float
    message: str = ""
    log: list = field(default_factory=list)

    @property
    def equality_multipliers(self) -> np.ndarray:
        return self.lam[self._eq_mask] if self._eq_mask is not None else self.lam

    @property
    def inequality_multipliers(self) -> np.ndarray:
        return self.lam[~self._eq_mask] if self._eq_mask is not None else self.lam

    _eq_mask: np.ndarray | None = None


def warm_start_from(result: SolverResult) -> WarmStartPayload:
    """Package a previous solution for reuse on a same-structure problem."""
    if result.status not in ("optimal", "acceptable"):
        raise ValueError(
            f"cannot warm start from a solve with status {result.status!r}")
    return WarmStartPayload(
        x=result.x.copy(), slacks=result.slacks.copy(),
        lam=result.lam.copy(), z_lower=result.z_lower.copy(),
        z_upper=result.z_upper.copy())


# ------------------------------------------------------------ entry points


def solve(problem, options: SolverOptions | None = None,
          backend: str = "builtin") -> SolverResult:
    """Solve an NlpProblem with the chosen backend."""
    options = options or SolverOptions()
    if backend == "builtin":
        return _InteriorPoint(problem, options).run()
    if backend == "external":
        return _solve_external(problem, options)
    raise ValueError(f"unknown backend {backend!r}")


# ------------------------------------------------------- interior-point core


class _InteriorPoint:
    # filter line-search constants
    GAMMA_THETA = 1.0e-5
    GAMMA_PHI = 1.0e-5
    S_THETA = 1.1
    S_PHI = 2.3
    ETA_PHI = 1.0e-4
    KAPPA_SOC = 0.99
    DELTA_SWITCH = 1.0
    TAU_MIN = 0.99
    KAPPA_MU = 0.2
    THETA_MU = 1.5
    S_MAX = 100.0

    def __init__(self, problem, options: SolverOptions):
        self.p = problem
        self.o = options
        self.n = problem.n
        self.m = problem.m

        cl, cu = problem.cl, problem.cu
        self.eq_mask = (cu - cl) <= 1.0e-12
        # equality rows tagged as relaxable complementarity products are
        # handled as inequalities whose band [cl-eps, cl+eps] shrinks with mu
        meta = getattr(problem, "meta", None)
        relax = meta.get("relaxable_eq_rows") if isinstance(meta, dict) \
            else None
        self.relax_rows = np.asarray(relax, dtype=np.int64) \
            if relax is not None else np.zeros(0, dtype=np.int64)
        if np.any(~self.eq_mask[self.relax_rows]):
            raise ValueError("relaxable rows must be equality rows")
        self.eq_mask[self.relax_rows] = False
        self.ineq_idx = np.flatnonzero(~self.eq_mask)
        self.mI = self.ineq_idx.size
        self.nX = self.n + self.mI
        self.slack_of_row = np.full(self.m, -1, dtype=np.int64)
        self.slack_of_row[self.ineq_idx] = np.arange(self.mI)

        self._init_scaling()
        xl = np.where(problem.lb <= -INF_BOUND, -np.inf, problem.lb)
        xu = np.where(problem.ub >= INF_BOUND, np.inf, problem.ub)
        scl = self.sigma_c[self.ineq_idx] * cl[self.ineq_idx]
        scu = self.sigma_c[self.ineq_idx] * cu[self.ineq_idx]
        scl = np.where(cl[self.ineq_idx] <= -INF_BOUND, -np.inf, scl)
        scu = np.where(cu[self.ineq_idx] >= INF_BOUND, np.inf, scu)
        self.XL = np.concatenate([xl, scl])
        self.XU = np.concatenate([xu, scu])
        self.relax_slots = self.n + self.slack_of_row[self.relax_rows]
        self.relax_center = self.sigma_c[self.relax_rows] * cl[self.relax_rows]
        self.hasL = np.isfinite(self.XL)
        self.hasU = np.isfinite(self.XU)
        self.hasL[self.relax_slots] = True
        self.hasU[self.relax_slots] = True
        self.rhs_eq = self.sigma_c * np.where(self.eq_mask, cl, 0.0)

        self._build_kkt_pattern()

    def _relax_eps(self, mu):
        return max(self.o.tol, 10.0 * mu)

    def _set_relax_band(self, X, mu, zL=None, zU=None):
        """Shrink the complementarity band with mu, re-seed the slacks on the
        actual row values and refresh their bound multipliers."""
        if not self.relax_slots.size:
            return X, zL, zU
        eps = self._relax_eps(mu)
        slots = self.relax_slots
        self.XL[slots] = self.relax_center - eps
        self.XU[slots] = self.relax_center + eps
        X = X.copy()
        c_rows = self.sigma_c[self.relax_rows] \
            * self.p.constraints(X[:self.n])[self.relax_rows]
        X[slots] = np.clip(c_rows, self.relax_center - 0.99 * eps,
                           self.relax_center + 0.99 * eps)
        if zL is not None:
            zL = zL.copy()
            zU = zU.copy()
            zL[slots] = np.clip(mu / (X[slots] - self.XL[slots]), 1e-8, 1e8)
            zU[slots] = np.clip(mu / (self.XU[slots] - X[slots]), 1e-8, 1e8)
        return X, zL, zU

    # ------------------------------------------------------------- scaling

    def _init_scaling(self):
        x0 = np.clip(self.p.x0, self.p.lb, self.p.ub)
        g0 = self.p.gradient(x0)
        gmax = np.abs(g0).max() if g0.size else 0.0
        self.sigma_f = min(1.0, self.S_MAX / max(gmax, 1.0e-8))
        J0 = self.p.jacobian(x0).tocsc()
        self._jac_indptr = J0.indptr.copy()
        self._jac_indices = J0.indices.copy()
        row_norm = np.zeros(self.m)
        np.maximum.at(row_norm, J0.indices, np.abs(J0.data))
        self.sigma_c = np.minimum(1.0, self.S_MAX / np.maximum(row_norm, 1.0e-8))

    # --------------------------------------------------------- evaluations

    def _eval_f(self, x):
        return self.sigma_f * self.p.objective(x)

    def _eval_grad(self, x):
        g = np.zeros(self.nX)
        g[:self.n] = self.sigma_f * self.p.gradient(x)
        return g

    def _eval_g(self, X):
        x = X[:self.n]
        c = self.p.constraints(x)
        g = self.sigma_c * c - self.rhs_eq
        g[self.ineq_idx] -= X[self.n:]
        return g

    def _eval_jac(self, x):
        J = self.p.jacobian(x).tocsc()
        return J

    def _jac_T_lam(self, J, lam):
        out = np.zeros(self.nX)
        out[:self.n] = J.T @ (self.sigma_c * lam)
        out[self.n:] = -lam[self.ineq_idx]
        return out

    # ------------------------------------------------------- KKT machinery

    def _build_kkt_pattern(self):
        n, nX, m = self.n, self.nX, self.m
        hr = np.asarray(self.p.hess_rows, dtype=np.int64)
        hc = np.asarray(self.p.hess_cols, dtype=np.int64)
        # jacobian entries in the problem's fixed CSC order
        jc = np.repeat(np.arange(n, dtype=np.int64),
                       np.diff(self._jac_indptr))
        jr = self._jac_indices.astype(np.int64)
        self._jac_rows_csc = jr
        self._jac_sigma = None  # filled after sigma_c known (it is)
        parts = [
            (hr, hc),                                            # hessian
            (np.arange(nX, dtype=np.int64),
             np.arange(nX, dtype=np.int64)),                     # X diagonal
            (jc, nX + jr),                                       # J^T (x cols)
            (self.n + np.arange(self.mI, dtype=np.int64),
             nX + self.ineq_idx),                                # slack cols
            (nX + np.arange(m, dtype=np.int64),
             nX + np.arange(m, dtype=np.int64)),                 # lambda diag
        ]
        rows = np.concatenate([p[0] for p in parts])
        cols = np.concatenate([p[1] for p in parts])
        sizes = [p[0].size for p in parts]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        order = np.lexsort((rows, cols))
        rs, cs = rows[order], cols[order]
        boundary = np.ones(order.size, dtype=bool)
        boundary[1:] = (rs[1:] != rs[:-1]) | (cs[1:] != cs[:-1])
        starts = np.flatnonzero(boundary)
        group_id = np.cumsum(boundary) - 1
        slot_of = np.empty(order.size, dtype=np.int64)
        slot_of[order] = group_id
        self._kkt_rows = rs[starts]
        self._kkt_cols = cs[starts]
        self._kkt_slots = [slot_of[offsets[i]:offsets[i + 1]]
                           for i in range(len(parts))]
        self._kkt_nnz = self._kkt_rows.size
        self._ldl = LdlFactorization(nX + m, self._kkt_rows, self._kkt_cols)
        self._kkt_dim = nX + m

    def _assemble_kkt(self, hess_data, sigma_diag, jac_data, delta_w, delta_c):
        # delta_c may be a scalar or a per-row array
        data = np.zeros(self._kkt_nnz)
        np.add.at(data, self._kkt_slots[0], hess_data)
        np.add.at(data, self._kkt_slots[1], sigma_diag + delta_w)
        np.add.at(data, self._kkt_slots[2],
                  self.sigma_c[self._jac_rows_csc] * jac_data)
        np.add.at(data, self._kkt_slots[3], -np.ones(self.mI))
        np.add.at(data, self._kkt_slots[4], -(np.zeros(self.m) + delta_c))
        return data

    def _kkt_matrix(self, data):
        K = sps.csc_matrix((data, (self._kkt_rows, self._kkt_cols)),
                           shape=(self._kkt_dim, self._kkt_dim))
        return K + K.T - sps.diags(K.diagonal())

    def _solve_kkt(self, K_full, rhs):
        d = self._ldl.solve(rhs)
        # a couple of iterative-refinement sweeps for the regularized system
        for _ in range(3):
            r = rhs - K_full @ d
            if np.abs(r).max() <= 1.0e-10 * max(1.0, np.abs(rhs).max()):
                break
            d = d + self._ldl.solve(r)
        return d

    # ----------------------------------------------------------- barrier


    def _barrier_terms(self, X):
        dL = np.where(self.hasL, X - self.XL, 1.0)
        dU = np.where(self.hasU, self.XU - X, 1.0)
        return dL, dU

    def _phi(self, X, f, mu):
        dL, dU = self._barrier_terms(X)
        if np.any(dL <= 0.0) or np.any(dU <= 0.0):
            return np.inf
        out = f
        if np.any(self.hasL):
            out -= mu * np.sum(np.log(dL[self.hasL]))
        if np.any(self.hasU):
            out -= mu * np.sum(np.log(dU[self.hasU]))
        return out

    def _grad_phi(self, X, grad_f, mu):
        dL, dU = self._barrier_terms(X)
        g = grad_f.copy()
        g[self.hasL] -= mu / dL[self.hasL]
        g[self.hasU] += mu / dU[self.hasU]
        return g

    def _kkt_error(self, X, lam, zL, zU, grad_f, J, g, mu):
        dL, dU = self._barrier_terms(X)
        r_dual = grad_f + self._jac_T_lam(J, lam)
        r_dual[self.hasL] -= zL[self.hasL]
        r_dual[self.hasU] += zU[self.hasU]
        comp = 0.0
        if np.any(self.hasL):
            comp = max(comp, np.abs(zL[self.hasL] * dL[self.hasL] - mu).max())
        if np.any(self.hasU):
            comp = max(comp, np.abs(zU[self.hasU] * dU[self.hasU] - mu).max())
        z_sum = np.sum(zL[self.hasL]) + np.sum(zU[self.hasU])
        n_mult = int(np.sum(self.hasL) + np.sum(self.hasU))
        s_d = max(self.S_MAX,
                  (np.abs(lam).sum() + z_sum) / max(1, self.m + n_mult)) / self.S_MAX
        s_c = max(self.S_MAX, z_sum / max(1, n_mult)) / self.S_MAX
        dual_inf = np.abs(r_dual).max() if r_dual.size else 0.0
        theta_inf = np.abs(g).max() if g.size else 0.0
        err = max(dual_inf / s_d, theta_inf, comp / s_c)
        return err, dual_inf, theta_inf, comp

    # -------------------------------------------------------------- start


    def _initial_point(self):
        o = self.o
        warm = o.warm_start
        if warm is not None:
            if (warm.x.shape != (self.n,) or warm.lam.shape != (self.m,)
                    or warm.slacks.shape != (self.mI,)
                    or warm.z_lower.shape != (self.nX,)
                    or warm.z_upper.shape != (self.nX,)):
                raise ValueError("warm-start payload does not match the "
                                 "problem dimensions")
            X = np.concatenate([warm.x, warm.slacks])
            lam = warm.lam.copy()
            zL = np.where(self.hasL, np.maximum(warm.z_lower,
                                                o.warm_bound_push), 0.0)
            zU = np.where(self.hasU, np.maximum(warm.z_upper,
                                                o.warm_bound_push), 0.0)
            # where the previous solution violates the current bounds the
            # warm information is wrong: re-enter those coordinates with a
            # moderate push (well inside, but without manufacturing large
            # constraint violations) and let the barrier renegotiate them
            viol = (self.hasL & (X <= self.XL)) | (self.hasU & (X >= self.XU))
            push = np.where(viol, np.sqrt(o.warm_bound_push),
                            o.warm_bound_push)
        else:
            x = np.clip(self.p.x0, self.p.lb, self.p.ub)
            c0 = self.sigma_c * self.p.constraints(x)
            s0 = c0[self.ineq_idx]
            X = np.concatenate([x, s0])
            push = np.full(self.nX, o.bound_push)
            lam = np.zeros(self.m)
            zL = np.where(self.hasL, 1.0, 0.0)
            zU = np.where(self.hasU, 1.0, 0.0)
        # push strictly inside the box
        both = self.hasL & self.hasU
        low_only = self.hasL & ~self.hasU
        up_only = self.hasU & ~self.hasL
        XL, XU = self.XL, self.XU
        pL = np.zeros(self.nX)
        pU = np.zeros(self.nX)
        pL[low_only] = push[low_only] * np.maximum(1.0, np.abs(XL[low_only]))
        pU[up_only] = push[up_only] * np.maximum(1.0, np.abs(XU[up_only]))
        width = np.where(both, XU - XL, 1.0)
        pL[both] = np.minimum(push[both] * np.maximum(1.0, np.abs(XL[both])),
                              0.25 * width[both])
        pU[both] = np.minimum(push[both] * np.maximum(1.0, np.abs(XU[both])),
                              0.25 * width[both])
        X = np.where(self.hasL, np.maximum(X, XL + pL), X)
        X = np.where(self.hasU, np.minimum(X, XU - pU), X)

        if warm is not None:
            dL, dU = self._barrier_terms(X)
            comps = []
            if np.any(self.hasL):
                comps.append(zL[self.hasL] * dL[self.hasL])
            if np.any(self.hasU):
                comps.append(zU[self.hasU] * dU[self.hasU])
            if comps:
                # median: inactive bounds of wide boxes have tiny multipliers
                # against huge distances and would swamp a mean
                mu = float(np.median(np.concatenate(comps)))
            else:
                mu = o.tol
            mu = min(max(mu, o.tol / 10.0), o.mu_init)
        else:
            mu = o.mu_init
        return X, lam, zL, zU, mu

    # ---------------------------------------------------------------- run

    def run(self) -> SolverResult:
        t_start = time.perf_counter()
        o = self.o
        try:
            return self._run_inner(t_start)
        except FloatingPointError:
            return self._failed("diverged", "floating-point failure",
                                t_start)

    def _failed(self, status, message, t_start, X=None, lam=None,
                zL=None, zU=None, iters=0, log=None):
        n = self.n
        x = X[:n] if X is not None else np.clip(self.p.x0, self.p.lb,
                                                self.p.ub)
        try:
            obj = self.p.objective(x)
        except Exception:
            obj = np.nan
        res = SolverResult(
            status=status, x=x,
            lam=(self.sigma_c * lam / self.sigma_f) if lam is not None
            else np.zeros(self.m),
            z_lower=(zL / self.sigma_f) if zL is not None else np.zeros(self.nX),
            z_upper=(zU / self.sigma_f) if zU is not None else np.zeros(self.nX),
            slacks=X[n:].copy() if X is not None else np.zeros(self.mI),
            objective=float(obj), kkt_error=np.inf,
            constraint_violation=np.inf, dual_infeasibility=np.inf,
            complementarity=np.inf, iterations=iters,
            wall_time=time.perf_counter() - t_start,
            message=message, log=log or [])
        res._eq_mask = self.eq_mask
        return res

    def _run_inner(self, t_start):
        o = self.o
        n, nX, m = self.n, self.nX, self.m
        X, lam, zL, zU, mu = self._initial_point()
        X, zL, zU = self._set_relax_band(X, mu, zL, zU)
        x = X[:n]
        f = self._eval_f(x)
        g = self._eval_g(X)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            return self._failed("diverged",
                                "objective or constraints not finite at the "
                                "initial point", t_start, X, lam, zL, zU)
        grad_f = self._eval_grad(x)
        J = self._eval_jac(x)

        theta0 = np.abs(g).sum()
        theta_max = 1.0e4 * max(1.0, theta0)
        theta_min = 1.0e-4 * max(1.0, theta0)
        filt = [(theta_max, -np.inf)]

        log: list[IterationRecord] = []
        delta_w_last = 0.0
        status = "max-iter"
        message = ""
        it = 0
        stall_count = 0
        acceptable_run = 0
        refresh_cooldown = 0
        dual_stall = 0
        f_prev = np.inf
        dual_inf = np.inf

        while True:
            # drifted multipliers of redundant rows block the dual polish;
            # once near-feasible, re-estimate them by damped least squares.
            # Triggered by runaway multipliers, and also by dual cycling: a
            # degenerate active set can spin the multipliers forever while
            # the primals sit still at a feasible point
            refresh_cooldown -= 1
            near_feasible = self.m == 0 or \
                np.abs(g).max() <= max(1.0e-4, 100.0 * o.tol)
            if near_feasible and dual_inf > 1.0e2 * o.tol \
                    and abs(f - f_prev) <= 1.0e-7 * max(1.0, abs(f)):
                dual_stall += 1
            else:
                dual_stall = 0
            f_prev = f
            if (self.m > 0 and o.recalc_multiplier_threshold > 0
                    and refresh_cooldown <= 0 and near_feasible
                    and (np.abs(lam).max() > o.recalc_multiplier_threshold
                         or dual_stall >= 5)):
                lam_new = self._lsq_multipliers(grad_f, J, zL, zU)
                if lam_new is not None and \
                        (np.abs(lam_new).max() < np.abs(lam).max()
                         or dual_stall >= 5):
                    lam = lam_new
                refresh_cooldown = 5
                dual_stall = 0

            err0, dual_inf, theta_inf, comp0 = self._kkt_error(
                X, lam, zL, zU, grad_f, J, g, 0.0)
            if self.relax_rows.size:
                # optimality is judged against the original equality rows,
                # not the relaxed band
                c_int = self.sigma_c[self.relax_rows] \
                    * self.p.constraints(x)[self.relax_rows]
                extra = float(np.abs(c_int - self.relax_center).max())
                theta_inf = max(theta_inf, extra)
                err0 = max(err0, extra)
            if err0 <= o.tol:
                status = "optimal"
                message = "KKT error below tolerance"
                break
            acceptable_run = acceptable_run + 1 if err0 <= o.acceptable_tol \
                else 0
            if acceptable_run >= o.acceptable_iter:
                status = "acceptable"
                message = "stayed below the acceptable tolerance"
                break
            if it >= o.max_iter:
                status = "acceptable" if err0 <= o.acceptable_tol else "max-iter"
                message = "iteration limit reached"
                break

            # barrier update (monotone): tighten once the inner problem is solved
            err_mu, _, _, _ = self._kkt_error(X, lam, zL, zU, grad_f, J, g, mu)
            mu_enter = mu
            while mu > o.mu_min and err_mu <= 10.0 * mu:
                mu = max(o.tol / 10.0,
                         min(self.KAPPA_MU * mu, mu ** self.THETA_MU))
                filt = [(theta_max, -np.inf)]
                err_mu, _, _, _ = self._kkt_error(X, lam, zL, zU, grad_f,
                                                  J, g, mu)
                if mu == o.tol / 10.0:
                    break
            if mu != mu_enter and self.relax_slots.size:
                X, zL, zU = self._set_relax_band(X, mu, zL, zU)
                g = self._eval_g(X)
            tau = max(self.TAU_MIN, 1.0 - mu)

            dL, dU = self._barrier_terms(X)
            sigma_diag = np.zeros(nX)
            sigma_diag[self.hasL] += zL[self.hasL] / dL[self.hasL]
            sigma_diag[self.hasU] += zU[self.hasU] / dU[self.hasU]

            lam_problem = self.sigma_c * lam
            hess_data = self.p.hessian(x, lam_problem, self.sigma_f)

            grad_phi = self._grad_phi(X, grad_f, mu)
            rhs = np.concatenate([
                -(grad_f + self._jac_T_lam(J, lam)
                  - np.where(self.hasL, mu / dL, 0.0)
                  + np.where(self.hasU, mu / dU, 0.0)),
                -g])

            # inertia-corrected factorization; a small always-on dual
            # regularization keeps multipliers of locally redundant rows
            # (e.g. a complementarity row shadowing an active bound) bounded
            delta_w = 0.0
            delta_c = o.dual_reg_coeff * max(mu, 1e-12) ** o.dual_reg_power
            attempt = 0
            while True:
                data = self._assemble_kkt(hess_data, sigma_diag,
                                          J.data, delta_w, delta_c)
                npos, nneg, nzero = self._ldl.factor(data)
                if (npos, nneg, nzero) == (nX, m, 0) and self._ldl.factor_ok:
                    break
                attempt += 1
                if delta_w == 0.0:
                    delta_w = 1.0e-4 if delta_w_last == 0.0 \
                        else max(1.0e-20, delta_w_last / 3.0)
                else:
                    delta_w *= 8.0
                if delta_w > 1.0e40 or attempt > 60:
                    return self._failed(
                        "diverged", "KKT inertia correction failed",
                        t_start, X, lam, zL, zU, it, log)
            if delta_w > 0.0:
                delta_w_last = delta_w
            K_full = self._kkt_matrix(data)
            d = self._solve_kkt(K_full, rhs)
            dX = d[:nX]
            dlam = d[nX:]

            dzL = np.where(self.hasL, (mu - zL * dX) / dL - zL, 0.0)
            dzU = np.where(self.hasU, (mu + zU * dX) / dU - zU, 0.0)

            # fraction-to-boundary step limits
            alpha_max = self._max_step(X, dX, tau)
            alpha_z = min(self._max_dual_step(zL, dzL, tau),
                          self._max_dual_step(zU, dzU, tau))

            theta_k = np.abs(g).sum()
            phi_k = self._phi(X, f, mu)
            dphi = float(grad_phi @ dX)

            accepted, X_new, f_new, g_new, alpha, trials, soc_steps, ftype = \
                self._line_search(X, dX, f, g, theta_k, phi_k, dphi, mu,
                                  alpha_max, filt, theta_min,
                                  K_full, rhs, tau)

            restore_ok = None
            if not accepted and theta_k > 1.0e2 * o.tol:
                # genuinely infeasible point: try feasibility restoration;
                # the target honours the filter so the returned point cannot
                # bounce straight back into a blocked region
                restore_ok, X_res, f_res, g_res = self._restore(
                    X, mu, theta_k, filt)
                if not restore_ok and \
                        theta_k > max(np.sqrt(o.tol), 1.0e4 * o.tol):
                    return self._failed(
                        "infeasible", "line search and restoration failed",
                        t_start, X, lam, zL, zU, it, log)

            if restore_ok:
                X_new, f_new, g_new = X_res, f_res, g_res
                filt = [(theta_max, -np.inf)]
                alpha = 0.0
                alpha_z = 0.0
                trials = 0
                soc_steps = 0
                mode = "restore"
                # the slacks may have jumped; pull their multipliers back
                # into the barrier-compatible band
                dLn, dUn = self._barrier_terms(X_new)
                kap = 1.0e10
                zL = np.where(self.hasL,
                              np.clip(zL, mu / (kap * dLn), kap * mu / dLn),
                              0.0)
                zU = np.where(self.hasU,
                              np.clip(zU, mu / (kap * dUn), kap * mu / dUn),
                              0.0)
            elif not accepted:
                # stationarity stall at an (almost) feasible point, or a
                # restoration that could not improve on it: refresh the
                # multipliers, recentre the slacks and retry
                stall_count += 1
                if stall_count >= 4:
                    status = "acceptable" if err0 <= o.acceptable_tol \
                        else "diverged"
                    message = "no acceptable step at a feasible point"
                    break
                lam_new = self._lsq_multipliers(grad_f, J, zL, zU)
                if lam_new is not None:
                    lam = lam_new
                filt = [(theta_max, -np.inf)]
                X_new = self._reseed_slacks(X)
                f_new = f
                g_new = self._eval_g(X_new)
                alpha = alpha_z = 0.0
                trials = 0
                soc_steps = 0
                mode = "refresh"
            else:
                stall_count = 0
                lam = lam + alpha * dlam
                zL = zL + alpha_z * dzL
                zU = zU + alpha_z * dzU
                # keep multipliers compatible with the barrier (IPOPT k_Sigma)
                dLn, dUn = self._barrier_terms(X_new)
                kap = 1.0e10
                zL = np.where(self.hasL,
                              np.clip(zL, mu / (kap * dLn), kap * mu / dLn),
                              0.0)
                zU = np.where(self.hasU,
                              np.clip(zU, mu / (kap * dUn), kap * mu / dUn),
                              0.0)
                mode = "f-type" if ftype else "h-type"
                if not ftype:
                    filt.append(((1.0 - self.GAMMA_THETA) * theta_k,
                                 phi_k - self.GAMMA_PHI * theta_k))

            theta_after = np.abs(g_new).sum()
            phi_after = self._phi(X_new, f_new, mu)
            if o.keep_log:
                log.append(IterationRecord(
                    iteration=it, objective=f_new / self.sigma_f,
                    theta=theta_k, phi=phi_k,
                    theta_after=theta_after, phi_after=phi_after,
                    dual_inf=dual_inf, mu=mu,
                    alpha_primal=alpha, alpha_dual=alpha_z,
                    ls_trials=trials, soc_steps=soc_steps,
                    delta_w=delta_w, mode=mode))

            X, f, g = X_new, f_new, g_new
            x = X[:n]
            grad_f = self._eval_grad(x)
            J = self._eval_jac(x)
            it += 1
            if not (np.isfinite(f) and np.all(np.isfinite(g))):
                return self._failed("diverged", "iterate became non-finite",
                                    t_start, X, lam, zL, zU, it, log)

        err0, dual_inf, theta_inf, comp0 = self._kkt_error(
            X, lam, zL, zU, grad_f, J, g, 0.0)
        if self.relax_rows.size:
            c_int = self.sigma_c[self.relax_rows] \
                * self.p.constraints(X[:n])[self.relax_rows]
            extra = float(np.abs(c_int - self.relax_center).max())
            theta_inf = max(theta_inf, extra)
            err0 = max(err0, extra)
        res = SolverResult(
            status=status, x=X[:n].copy(),
            lam=self.sigma_c * lam / self.sigma_f,
            z_lower=zL / self.sigma_f, z_upper=zU / self.sigma_f,
            slacks=X[n:].copy(),
            objective=float(self.p.objective(X[:n])),
            kkt_error=float(err0),
            constraint_violation=float(theta_inf),
            dual_infeasibility=float(dual_inf),
            complementarity=float(comp0),
            iterations=it,
            wall_time=time.perf_counter() - t_start,
            message=message, log=log)
        res._eq_mask = self.eq_mask
        return res

    # ------------------------------------------------------- step limits

    @staticmethod
    def _max_step_for(vals, dirs, tau):
        neg = dirs < 0.0
        if not np.any(neg):
            return 1.0
        return float(min(1.0, np.min(-tau * vals[neg] / dirs[neg])))

    def _max_step(self, X, dX, tau):
        dL, dU = self._barrier_terms(X)
        aL = self._max_step_for(dL[self.hasL], dX[self.hasL], tau)
        aU = self._max_step_for(dU[self.hasU], -dX[self.hasU], tau)
        return min(aL, aU)

    def _max_dual_step(self, z, dz, tau):
        active = z > 0.0
        return self._max_step_for(z[active], dz[active], tau)

    # -------------------------------------------------------- line search

    def _filter_ok(self, filt, theta, phi):
        for th_f, ph_f in filt:
            if theta >= th_f and phi >= ph_f:
                return False
        return True

    def _try_point(self, X_new, mu):
        x_new = X_new[:self.n]
        f_new = self._eval_f(x_new)
        g_new = self._eval_g(X_new)
        if not (np.isfinite(f_new) and np.all(np.isfinite(g_new))):
            return None
        theta = np.abs(g_new).sum()
        phi = self._phi(X_new, f_new, mu)
        if not np.isfinite(phi):
            return None
        return f_new, g_new, theta, phi

    def _accepts(self, alpha, dphi, theta_k, phi_k, theta_new, phi_new,
                 theta_min, filt):
        """Returns (accepted, is_f_type)."""
        if theta_new > 1.0e2 * max(1.0, theta_k):
            # the phi-descent arm below would admit steps whose violation
            # explodes by orders of magnitude; cap the growth per step so the
            # dynamics stay inside the region the model linearization covers
            return False, False
        if not self._filter_ok(filt, theta_new, phi_new):
            return False, False
        switching = (dphi < 0.0 and
                     alpha * (-dphi) ** self.S_PHI >
                     self.DELTA_SWITCH * theta_k ** self.S_THETA)
        if theta_k <= theta_min and switching:
            if phi_new <= phi_k + self.ETA_PHI * alpha * dphi:
                return True, True
            return False, False
        if (theta_new <= (1.0 - self.GAMMA_THETA) * theta_k
                or phi_new <= phi_k - self.GAMMA_PHI * theta_k):
            return True, False
        if switching and phi_new <= phi_k + self.ETA_PHI * alpha * dphi:
            return True, True
        return False, False

    def _line_search(self, X, dX, f, g, theta_k, phi_k, dphi, mu,
                     alpha_max, filt, theta_min, K_full, rhs, tau):
        alpha = alpha_max
        alpha_min = 1.0e-13
        trials = 0
        while alpha >= alpha_min and trials < 60:
            trials += 1
            X_new = X + alpha * dX
            out = self._try_point(X_new, mu)
            if out is not None:
                f_new, g_new, theta_new, phi_new = out
                ok, ftype = self._accepts(alpha, dphi, theta_k, phi_k,
                                          theta_new, phi_new, theta_min, filt)
                if ok:
                    return True, X_new, f_new, g_new, alpha, trials, 0, ftype
                # second-order correction on the first rejected full trial
                if trials == 1 and theta_new >= theta_k:
                    soc = self._second_order_correction(
                        X, dX, alpha, g_new, mu, theta_k, phi_k, dphi,
                        theta_min, filt, K_full, rhs, tau)
                    if soc is not None:
                        return soc
            alpha *= 0.5
        return False, X, f, g, 0.0, trials, 0, False

    def _second_order_correction(self, X, dX, alpha_first, g_trial, mu,
                                 theta_k, phi_k, dphi, theta_min, filt,
                                 K_full, rhs, tau):
        nX = self.nX
        g_soc = alpha_first * self._eval_g(X) + g_trial
        theta_old_soc = theta_k
        for p_soc in range(1, self.o.max_soc + 1):
            rhs_soc = rhs.copy()
            rhs_soc[nX:] = -g_soc
            d_soc = self._solve_kkt(K_full, rhs_soc)[:nX]
            alpha_soc = self._max_step(X, d_soc, tau)
            X_new = X + alpha_soc * d_soc
            out = self._try_point(X_new, mu)
            if out is None:
                return None
            f_new, g_new, theta_new, phi_new = out
            ok, ftype = self._accepts(alpha_first, dphi, theta_k, phi_k,
                                      theta_new, phi_new, theta_min, filt)
            if ok:
                return True, X_new, f_new, g_new, alpha_first, 1, p_soc, ftype
            if theta_new > self.KAPPA_SOC * theta_old_soc:
                return None
            theta_old_soc = theta_new
            g_soc = alpha_soc * g_soc + g_new
        return None

    # --------------------------------------------- multiplier re-estimation

    def _lsq_multipliers(self, grad_f, J, zL, zU):
        """Damped least-squares equality multipliers at the current point."""
        nX, m = self.nX, self.m
        zero_hess = np.zeros(len(self.p.hess_rows))
        data = self._assemble_kkt(zero_hess, np.ones(nX), J.data, 0.0, 1.0e-8)
        self._ldl.factor(data)
        if not self._ldl.factor_ok:
            return None
        r = grad_f.copy()
        r[self.hasL] -= zL[self.hasL]
        r[self.hasU] += zU[self.hasU]
        rhs = np.concatenate([-r, np.zeros(m)])
        lam = self._ldl.solve(rhs)[nX:]
        return lam if np.all(np.isfinite(lam)) else None

    # -------------------------------------------------------- restoration

    def _reseed_slacks(self, X, push=1.0e-4):
        """Project the slack variables onto the current constraint values,
        strictly inside their boxes. Slacks carry no objective weight, so
        the move is always admissible; it removes slacks pinned on a bound,
        which otherwise collapse the fraction-to-boundary step."""
        if self.mI == 0:
            return X
        X = X.copy()
        c = self.sigma_c * self.p.constraints(X[:self.n])
        s = c[self.ineq_idx]
        lo = self.XL[self.n:]
        hi = self.XU[self.n:]
        hasL = self.hasL[self.n:]
        hasU = self.hasU[self.n:]
        both = hasL & hasU
        mL = np.zeros(self.mI)
        mU = np.zeros(self.mI)
        mL[hasL] = push * np.maximum(1.0, np.abs(lo[hasL]))
        mU[hasU] = push * np.maximum(1.0, np.abs(hi[hasU]))
        width = np.where(both, hi - lo, 1.0)
        np.minimum(mL, 0.25 * width, out=mL, where=both)
        np.minimum(mU, 0.25 * width, out=mU, where=both)
        lo_in = np.where(hasL, lo + mL, -np.inf)
        hi_in = np.where(hasU, hi - mU, np.inf)
        X[self.n:] = np.clip(s, lo_in, hi_in)
        return X

    def _restore(self, X, mu, theta_enter, filt=None):
        """l1 feasibility restoration with elastic row slacks.

        After re-seeding the ordinary slacks, minimizes

            rho*sum(p + n) + zeta/2 ||X - X_R||^2   s.t. g(X) = p - n,
            p, n >= 0, X inside its box,

        with a log barrier on p, n and the box. The elastics absorb any row
        residual immediately, so progress never dies against a variable
        pinned on a bound. p and n are eliminated through their stationarity
        conditions p = mu_r/(rho - lam), n = mu_r/(rho + lam), which reduces
        the Newton system to the ordinary KKT matrix with the per-row dual
        regularization D = (p^2 + n^2)/mu_r. Returns (success, X, f, g)."""
        nX, m = self.nX, self.m
        target = max(0.1 * theta_enter, 10.0 * self.o.tol)

        def acceptable(theta_v, X_v, f_v):
            # a restored point must not land inside a filter-blocked region,
            # or the caller would bounce straight back here; beyond that a
            # solid reduction of the violation is enough
            if theta_v <= target:
                return True
            if filt is not None and theta_v <= 0.9 * theta_enter:
                return self._filter_ok(filt, theta_v,
                                       self._phi(X_v, f_v, mu))
            return False

        X_rs = self._reseed_slacks(X)
        g = self._eval_g(X_rs)
        theta = float(np.abs(g).sum())
        moved = not np.array_equal(X_rs, X)
        f_rs = self._eval_f(X_rs[:self.n])
        if acceptable(theta, X_rs, f_rs):
            if moved:
                return True, X_rs, f_rs, g
            # nothing changed and nothing left to fix here: bail out so the
            # caller does not loop on a restoration that cannot help
            return False, X, np.nan, g
        if m == 0:
            return False, X, np.nan, g
        X = X_rs if theta < theta_enter else X.copy()
        X_R = X.copy()

        # rho = 1 keeps the elastic compliance D = mu_r/(rho -+ lam)^2 of
        # order mu_r; a large rho would harden the rows back into exactly
        # the projection whose step length collapsed in the first place
        rho = 1.0
        mu_floor = max(mu, self.o.tol / 10.0)
        mu_r = max(mu_floor, min(1.0e-2, float(np.abs(g).max())))
        zeta = 1.0e-6
        lam = np.zeros(m)
        zero_hess = np.zeros(len(self.p.hess_rows))
        tau = 0.99
        delta_w = 0.0

        def merit(Xv, theta_v, mu_v):
            dL, dU = self._barrier_terms(Xv)
            if np.any(dL <= 0.0) or np.any(dU <= 0.0):
                return np.inf
            out = rho * theta_v \
                + 0.5 * zeta * float((Xv - X_R) @ (Xv - X_R))
            if np.any(self.hasL):
                out -= mu_v * np.sum(np.log(dL[self.hasL]))
            if np.any(self.hasU):
                out -= mu_v * np.sum(np.log(dU[self.hasU]))
            return out

        X_best = X
        theta_best = theta
        for _ in range(60):
            g = self._eval_g(X)
            theta = float(np.abs(g).sum())
            if theta < theta_best:
                X_best, theta_best = X, theta
            f_cur = self._eval_f(X[:self.n])
            if acceptable(theta, X, f_cur):
                return True, X, f_cur, g
            lam = np.clip(lam, -0.9 * rho, 0.9 * rho)
            p = mu_r / (rho - lam)
            q = mu_r / (rho + lam)
            J = self._eval_jac(X[:self.n])
            dL, dU = self._barrier_terms(X)
            xdiag = np.full(nX, zeta)
            xdiag[self.hasL] += mu_r / dL[self.hasL] ** 2
            xdiag[self.hasU] += mu_r / dU[self.hasU] ** 2
            D = (p * p + q * q) / mu_r
            r_dual = self._jac_T_lam(J, lam) + zeta * (X - X_R)
            r_dual[self.hasL] -= mu_r / dL[self.hasL]
            r_dual[self.hasU] += mu_r / dU[self.hasU]
            rhs = np.concatenate([-r_dual, -(g - p + q)])
            factor_ok = False
            for _ in range(20):
                data = self._assemble_kkt(zero_hess, xdiag + delta_w,
                                          J.data, 0.0, D)
                npos, _, nzero = self._ldl.factor(data)
                if npos == nX and nzero == 0 and self._ldl.factor_ok:
                    factor_ok = True
                    break
                delta_w = 1.0e-6 if delta_w == 0.0 else delta_w * 10.0
            if not factor_ok:
                break
            d = self._ldl.solve(rhs)
            dX, dlam = d[:nX], d[nX:]
            dp = p * p / mu_r * dlam
            dq = -q * q / mu_r * dlam
            alpha = min(self._max_step(X, dX, tau),
                        self._max_step_for(p, dp, tau),
                        self._max_step_for(q, dq, tau))
            m0 = merit(X, theta, mu_r)
            accepted = False
            theta_new = theta
            for _ in range(25):
                X_t = X + alpha * dX
                g_t = self._eval_g(X_t)
                theta_t = float(np.abs(g_t).sum())
                m_t = merit(X_t, theta_t, mu_r)
                if np.isfinite(m_t) and m_t <= m0 - 1.0e-8 * alpha:
                    X = X_t
                    lam = lam + alpha * dlam
                    theta_new = theta_t
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                delta_w *= 0.2
                if delta_w < 1.0e-12:
                    delta_w = 0.0
                if theta_new > 0.95 * theta and mu_r > mu_floor:
                    # elastics too loose to force further violation decrease
                    mu_r = max(mu_floor, 0.2 * mu_r)
            elif mu_r > mu_floor:
                mu_r = max(mu_floor, 0.2 * mu_r)
            elif zeta > 1.0e-10:
                zeta *= 0.1
            else:
                break
        # the merit function changes whenever mu_r shrinks, so the final
        # iterate need not carry the smallest violation seen: hand back the
        # best one
        g = self._eval_g(X_best)
        theta = float(np.abs(g).sum())
        f_out = self._eval_f(X_best[:self.n])
        if acceptable(theta, X_best, f_out):
            return True, X_best, f_out, g
        return False, X_best, np.nan, g


# ------------------------------------------------------- derivative checker


@dataclass
class DerivativeReport:
    """Outcome of the finite-difference comparison."""

    max_gradient_error: float
    max_jacobian_error: float
    gradient_entries_checked: int
    jacobian_entries_checked: int
    bad_gradient: list  # (index, analytic, fd, err)
    bad_jacobian: list  # (row, col, analytic, fd, err)

    @property
    def ok(self) -> bool:
        return not self.bad_gradient and not self.bad_jacobian

    def max_error(self) -> float:
        return max(self.max_gradient_error, self.max_jacobian_error)


def _color_columns(n, rows, cols, m):
    """Greedy structurally-orthogonal column grouping for compressed FD."""
    rows_of_col = [[] for _ in range(n)]
    for r, c in zip(rows, cols):
        rows_of_col[int(c)].append(int(r))
    color_rows: list[np.ndarray] = []
    color_of = np.full(n, -1, dtype=np.int64)
    for c in range(n):
        rr = rows_of_col[c]
        placed = False
        for k, used in enumerate(color_rows):
            if not used[rr].any():
                used[rr] = True
                color_of[c] = k
                placed = True
                break
        if not placed:
            used = np.zeros(m, dtype=bool)
            used[rr] = True
            color_rows.append(used)
            color_of[c] = len(color_rows) - 1
    return color_of, len(color_rows)


def check_derivatives(problem, point, perturbation: float = 1.0e-4,
                      tol: float = 1.0e-6,
                      check_gradient: bool = True) -> DerivativeReport:
    """Compare the declared gradient/Jacobian against central differences.

    Steps are scaled per variable: h_j = perturbation * max(1, |x_j|); the
    error metric is |a - b| / max(1, |a|, |b|). Jacobian columns are grouped
    into structurally orthogonal sets so the whole check needs only a few
    hundred constraint evaluations.
    """
    if perturbation <= 0.0:
        raise ValueError("perturbation must be positive")
    x = np.asarray(point, dtype=float)
    n, m = problem.n, problem.m
    h = perturbation * np.maximum(1.0, np.abs(x))

    bad_grad = []
    max_g_err = 0.0
    checked_g = 0
    if check_gradient:
        g = problem.gradient(x)
        for j in range(n):
            e = np.zeros(n)
            e[j] = h[j]
            fd = (problem.objective(x + e) - problem.objective(x - e)) / (2 * h[j])
            err = abs(g[j] - fd) / max(1.0, abs(g[j]), abs(fd))
            checked_g += 1
            if err > max_g_err:
                max_g_err = err
            if err > tol:
                bad_grad.append((j, float(g[j]), float(fd), float(err)))

    rows = np.asarray(problem.jac_rows)
    cols = np.asarray(problem.jac_cols)
    J = problem.jacobian(x).tocsc()
    analytic = np.asarray(J[rows, cols]).ravel() if rows.size else np.zeros(0)
    color_of, n_colors = _color_columns(n, rows, cols, m)
    entry_color = color_of[cols] if cols.size else np.zeros(0, dtype=np.int64)
    bad_jac = []
    max_j_err = 0.0
    for k in range(n_colors):
        members = np.flatnonzero(color_of == k)
        w = np.zeros(n)
        w[members] = h[members]
        fd = (problem.constraints(x + w) - problem.constraints(x - w)) / 2.0
        sel = np.flatnonzero(entry_color == k)
        a = analytic[sel]
        b = fd[rows[sel]] / h[cols[sel]]
        err = np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a),
                                                         np.abs(b)))
        if err.size:
            max_j_err = max(max_j_err, float(err.max()))
        for i in np.flatnonzero(err > tol):
            bad_jac.append((int(rows[sel[i]]), int(cols[sel[i]]),
                            float(a[i]), float(b[i]), float(err[i])))
    return DerivativeReport(
        max_gradient_error=float(max_g_err),
        max_jacobian_error=float(max_j_err),
        gradient_entries_checked=checked_g,
        jacobian_entries_checked=int(rows.size),
        bad_gradient=bad_grad, bad_jacobian=bad_jac)


# --------------------------------------------------------- external backend


def _solve_external(problem, options: SolverOptions) -> SolverResult:
    """Adapter for scipy's trust-constr as a drop-in external backend."""
    from scipy.optimize import Bounds, NonlinearConstraint, minimize

    t0 = time.perf_counter()
    x0 = np.clip(problem.x0, problem.lb, problem.ub)
    if options.warm_start is not None:
        if options.warm_start.x.shape != (problem.n,):
            raise ValueError("warm-start payload does not match the "
                             "problem dimensions")
        x0 = np.clip(options.warm_start.x, problem.lb, problem.ub)
    constraint = NonlinearConstraint(
        problem.constraints, problem.cl, problem.cu,
        jac=lambda x: problem.jacobian(x))
    res = minimize(
        problem.objective, x0, jac=problem.gradient,
        method="trust-constr",
        bounds=Bounds(problem.lb, problem.ub),
        constraints=[constraint],
        options={"maxiter": options.max_iter, "gtol": options.tol,
                 "xtol": 1e-12, "verbose": 0})
    c = problem.constraints(res.x)
    viol = float(np.max(np.maximum(np.maximum(problem.cl - c,
                                              c - problem.cu), 0.0),
                        initial=0.0))
    ok = res.status in (1, 2) and viol <= max(1e-6, options.tol * 100)
    lam = np.zeros(problem.m)
    if res.v:
        lam = np.asarray(res.v[0], dtype=float)
    mI = int(np.sum((problem.cu - problem.cl) > 1e-12))
    out = SolverResult(
        status="optimal" if ok else "max-iter",
        x=np.asarray(res.x, dtype=float), lam=lam,
        z_lower=np.zeros(problem.n + mI), z_upper=np.zeros(problem.n + mI),
        slacks=np.zeros(mI),
        objective=float(res.fun), kkt_error=float(res.optimality),
        constraint_violation=viol,
        dual_infeasibility=float(res.optimality), complementarity=0.0,
        iterations=int(res.niter), wall_time=time.perf_counter() - t0,
        message=str(res.message), log=[])
    out._eq_mask = (problem.cu - problem.cl) <= 1e-12
    return out
