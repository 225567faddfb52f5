"""Direct collocation transcription of the continuous OCP to a sparse NLP.

Decision layout (cyclic closed track, d interior points per interval):
per interval k the block [x_k (5), Xc_k1..Xc_kd (5 each), u_k (4), E_k (1)],
where x_k is the state at node k, Xc_kj the state at the j-th collocation
point, u_k the piecewise-constant controls of interval k and E_k the
cumulative energy at node k+1. Fixed-start problems append a terminal state
block x_N. All decision variables are scaled to order one; evaluators map to
physical units internally.

Constraint rows per interval: 5d collocation residuals, 5 continuity rows
(wrapping on cyclic problems), 1 energy-chain row, h1/h2 at the node, four
friction-ellipse rows plus the traction-power row at the node, and the four
actuator-rate rows tied to the predecessor interval. The energy budget is a
plain upper bound on the last E variable. g3-g7 are variable bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from . import vehicle_model as vm
from .codegen import A_DYN, A_EHAT, A_LAG, B_LAG, N_Y, build_blocks
from .ocp_core import ContinuousOcp, equality_scales, inequality_scales
from .track_model import Track, frenet_to_cartesian

BIG = 1.0e20


class TranscriptionError(ValueError):
    """Raised when grid, track and configuration are inconsistent."""


class ExtractionError(RuntimeError):
    """Raised when a solver result is unfit for trajectory extraction."""


# ------------------------------------------------------------------- scheme


@dataclass(frozen=True)
class Grid:
    """Discretization grid for the transcription."""

    n_intervals: int
    ds: float
    d: int = 2
    scheme: str = "legendre"  # legendre | radau | trapezoidal

    def __post_init__(self):
        if self.n_intervals < 2:
            raise ValueError("need at least two intervals")
        if self.ds <= 0.0:
            raise ValueError("ds must be positive")
        if self.scheme not in ("legendre", "radau", "trapezoidal"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme != "trapezoidal" and self.d < 1:
            raise ValueError("need d >= 1 interior collocation points")

    @staticmethod
    def from_track(track: Track, d: int = 2, scheme: str = "legendre") -> "Grid":
        n = track.n_nodes if track.closed else track.n_nodes - 1
        return Grid(n_intervals=n, ds=track.ds, d=d, scheme=scheme)


@dataclass(frozen=True)
class CollocationScheme:
    """Lagrange-basis coefficients on the interval [0, 1].

    tau: the d interior (or endpoint, for Radau) collocation points;
    C[r, j]: derivative of basis polynomial r at point tau_j;
    D[r]: basis polynomial r evaluated at 1 (endpoint extrapolation);
    B[r]: integral of basis polynomial r over [0, 1] (quadrature weights).
    Basis polynomials interpolate over {0} union tau.
    """

    tau: np.ndarray
    C: np.ndarray
    D: np.ndarray
    B: np.ndarray


def collocation_points(d: int, scheme: str) -> np.ndarray:
    """Collocation points on (0, 1]."""
    if scheme == "legendre":
        nodes, _ = np.polynomial.legendre.leggauss(d)
        return 0.5 * (nodes + 1.0)
    if scheme == "radau":
        if d == 1:
            return np.array([1.0])
        from scipy.special import roots_jacobi
        interior, _ = roots_jacobi(d - 1, 1.0, 0.0)
        return np.concatenate([0.5 * (interior + 1.0), [1.0]])
    raise ValueError(f"no collocation points for scheme {scheme!r}")


def collocation_coeffs(d: int, scheme: str) -> CollocationScheme:
    tau = collocation_points(d, scheme)
    pts = np.concatenate([[0.0], tau])
    n = pts.size
    C = np.zeros((n, d))
    D = np.zeros(n)
    B = np.zeros(n)
    for r in range(n):
        poly = np.poly1d([1.0])
        for q in range(n):
            if q != r:
                poly *= np.poly1d([1.0, -pts[q]]) / (pts[r] - pts[q])
        D[r] = poly(1.0)
        dpoly = poly.deriv()
        for j in range(d):
            C[r, j] = dpoly(tau[j])
        B[r] = poly.integ()(1.0)
    return CollocationScheme(tau=tau, C=C, D=D, B=B)


# ------------------------------------------------------------- NLP problem


@dataclass
class NlpProblem:
    """Sparse NLP in scaled variables, consumed by the solver backends.

    Constraint rows satisfy cl <= c(x) <= cu (cl == cu for equalities).
    jacobian(x) returns a CSC matrix with a fixed sparsity pattern;
    hessian(x, lam, obj_factor) returns the upper-triangle data aligned with
    hess_rows/hess_cols for the Lagrangian obj_factor*f + lam.c.
    """

    n: int
    m: int
    lb: np.ndarray
    ub: np.ndarray
    cl: np.ndarray
    cu: np.ndarray
    x0: np.ndarray
    objective: callable
    gradient: callable
    constraints: callable
    jacobian: callable
    jac_rows: np.ndarray
    jac_cols: np.ndarray
    hessian: callable
    hess_rows: np.ndarray
    hess_cols: np.ndarray
    meta: dict = field(default_factory=dict, repr=False)


class _CooAccumulator:
    """Collects COO entries: constant values plus named dynamic fill groups."""

    def __init__(self):
        self.rows: list = []
        self.cols: list = []
        self.const: list = []   # baseline values (dynamic slots hold 0)
        self.groups: dict = {}  # name -> (positions, factors)

    def add_const(self, rows, cols, vals):
        rows = np.atleast_1d(rows)
        cols = np.atleast_1d(cols)
        vals = np.broadcast_to(np.atleast_1d(np.asarray(vals, dtype=float)),
                               rows.shape)
        self.rows.extend(rows.tolist())
        self.cols.extend(cols.tolist())
        self.const.extend(vals.tolist())

    def add_dynamic(self, name, rows, cols, factors):
        """Reserve slots whose values are factors * (per-eval source values)."""
        rows_nd = np.asarray(rows)
        factors = np.broadcast_to(np.asarray(factors, dtype=float),
                                  rows_nd.shape).ravel()
        rows = rows_nd.ravel()
        cols = np.asarray(cols).ravel()
        start = len(self.rows)
        self.rows.extend(rows.tolist())
        self.cols.extend(cols.tolist())
        self.const.extend([0.0] * rows.size)
        self.groups[name] = (np.arange(start, start + rows.size), factors)

    def finalize(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        const = np.asarray(self.const, dtype=float)
        order = np.lexsort((rows, cols))
        r_s, c_s = rows[order], cols[order]
        boundary = np.ones(order.size, dtype=bool)
        boundary[1:] = (r_s[1:] != r_s[:-1]) | (c_s[1:] != c_s[:-1])
        starts = np.flatnonzero(boundary)
        u_rows, u_cols = r_s[starts], c_s[starts]
        return {
            "order": order, "starts": starts,
            "rows": u_rows, "cols": u_cols,
            "const": const, "groups": self.groups,
        }


def _reduce(layout, data):
    return np.add.reduceat(data[layout["order"]], layout["starts"])


# ------------------------------------------------------------ transcription


def transcribe(ocp: ContinuousOcp, grid: Grid) -> NlpProblem:
    """Transcribe the continuous OCP on the given grid into an NlpProblem."""
    track, p, cfg = ocp.track, ocp.params, ocp.config
    expected = track.n_nodes if track.closed else track.n_nodes - 1
    if grid.n_intervals != expected:
        raise TranscriptionError(
            f"grid has {grid.n_intervals} intervals but the track implies {expected}"
        )
    if abs(grid.ds - track.ds) > 1e-9 * max(track.ds, 1.0):
        raise TranscriptionError("grid ds does not match the track spacing")
    if cfg.boundary == "cyclic" and not track.closed:
        raise TranscriptionError("cyclic boundary mode needs a closed track")
    if grid.scheme == "trapezoidal":
        problem = _transcribe_trapezoidal(ocp, grid)
    else:
        problem = _transcribe_collocation(ocp, grid)
    problem.x0 = guess_into(problem)
    return problem


def _state_bounds(ocp, s_positions):
    """(lb, ub) state boxes, (M, 5), with the corridor bound on n."""
    cfg, p, track = ocp.config, ocp.params, ocp.track
    m_pts = s_positions.size
    lb = np.empty((m_pts, 5))
    ub = np.empty((m_pts, 5))
    lb[:, 0], ub[:, 0] = cfg.v_min, cfg.v_max
    lb[:, 1], ub[:, 1] = -cfg.beta_max, cfg.beta_max
    lb[:, 2], ub[:, 2] = -cfg.psidot_max, cfg.psidot_max
    lb[:, 4], ub[:, 4] = -cfg.xi_max, cfg.xi_max
    half = 0.5 * p.vehicle_width
    for i, s in enumerate(s_positions):
        w_r, w_l = track.width_at(float(s))
        lb[i, 3] = -(w_r - half)
        ub[i, 3] = w_l - half
    return lb, ub


def _control_bounds(p):
    lb = np.array([0.0, p.F_b_min, p.delta_min, -BIG])
    ub = np.array([p.F_d_max, 0.0, p.delta_max, BIG])
    return lb, ub


def _transcribe_collocation(ocp: ContinuousOcp, grid: Grid) -> NlpProblem:
    track, p, cfg = ocp.track, ocp.params, ocp.config
    N, d, ds = grid.n_intervals, grid.d, grid.ds
    cyclic = cfg.boundary == "cyclic"
    sch = collocation_coeffs(d, grid.scheme)
    block_a, block_b = build_blocks(p)
    f_r = cfg.energy.f_r

    # ------------------------------------------------- variable indexing
    W = 5 + 5 * d + 4 + 1
    n_vars = N * W + (0 if cyclic else 5)
    x_idx = np.empty((N + 1, 5), dtype=np.int64)
    for k in range(N):
        x_idx[k] = k * W + np.arange(5)
    x_idx[N] = x_idx[0] if cyclic else N * W + np.arange(5)
    c_idx = np.empty((N, d, 5), dtype=np.int64)
    u_idx = np.empty((N, 4), dtype=np.int64)
    e_idx = np.empty(N, dtype=np.int64)
    for k in range(N):
        for j in range(d):
            c_idx[k, j] = k * W + 5 + 5 * j + np.arange(5)
        u_idx[k] = k * W + 5 + 5 * d + np.arange(4)
        e_idx[k] = k * W + 5 + 5 * d + 4

    sx = cfg.scaling.state_scale()
    su = cfg.scaling.control_scale()
    se = cfg.scaling.energy
    var_scale = np.empty(n_vars)
    for k in range(N):
        var_scale[x_idx[k]] = sx
        for j in range(d):
            var_scale[c_idx[k, j]] = sx
        var_scale[u_idx[k]] = su
        var_scale[e_idx[k]] = se
    if not cyclic:
        var_scale[x_idx[N]] = sx

    # curvature and arc positions at nodes and collocation points
    s_nodes = track.s_grid[:N]
    kappa_nodes = track.kappa[:N]
    s_c = s_nodes[:, None] + sch.tau[None, :] * ds  # (N, d)
    kappa_c = np.empty_like(s_c)
    for k in range(N):
        for j in range(d):
            kappa_c[k, j] = track.kappa_at(s_c[k, j])

    # ------------------------------------------------------------- bounds
    lb = np.full(n_vars, -BIG)
    ub = np.full(n_vars, BIG)
    xlb, xub = _state_bounds(ocp, s_nodes)
    for k in range(N):
        lb[x_idx[k]], ub[x_idx[k]] = xlb[k], xub[k]
    clb, cub = _state_bounds(ocp, s_c.ravel())
    clb = clb.reshape(N, d, 5)
    cub = cub.reshape(N, d, 5)
    for k in range(N):
        for j in range(d):
            lb[c_idx[k, j]], ub[c_idx[k, j]] = clb[k, j], cub[k, j]
    ulb, uub = _control_bounds(p)
    for k in range(N):
        lb[u_idx[k]], ub[u_idx[k]] = ulb, uub
    lb[e_idx] = -BIG
    ub[e_idx] = BIG
    if cfg.energy.enabled:
        ub[e_idx[N - 1]] = cfg.energy.budget_j
    if not cyclic:
        s_term = track.s_grid[N] if not track.closed else track.total_length
        xlb_t, xub_t = _state_bounds(ocp, np.array([s_term]))
        lb[x_idx[N]], ub[x_idx[N]] = xlb_t[0], xub_t[0]
        x_fix = np.asarray(cfg.fixed_initial_state, dtype=float)
        lb[x_idx[0]] = x_fix
        ub[x_idx[0]] = x_fix
    lb_scaled = lb / var_scale
    ub_scaled = ub / var_scale

    # --------------------------------------------------------- row layout
    rows_per_interval = 5 * d + 5 + 1 + 2 + 5
    n_rate_pairs = N if cyclic else N - 1
    m_rows = N * rows_per_interval + 4 * n_rate_pairs
    colloc_rows = np.empty((N, d, 5), dtype=np.int64)
    cont_rows = np.empty((N, 5), dtype=np.int64)
    energy_rows = np.empty(N, dtype=np.int64)
    h1_rows = np.empty(N, dtype=np.int64)
    h2_rows = np.empty(N, dtype=np.int64)
    g1_rows = np.empty((N, 4), dtype=np.int64)
    g2_rows = np.empty(N, dtype=np.int64)
    rate_rows = np.empty((n_rate_pairs, 4), dtype=np.int64)
    r = 0
    for k in range(N):
        for j in range(d):
            colloc_rows[k, j] = r + np.arange(5)
            r += 5
        cont_rows[k] = r + np.arange(5)
        r += 5
        energy_rows[k] = r
        r += 1
        h1_rows[k], h2_rows[k] = r, r + 1
        r += 2
        g1_rows[k] = r + np.arange(4)
        r += 4
        g2_rows[k] = r
        r += 1
    for i in range(n_rate_pairs):
        rate_rows[i] = r + np.arange(4)
        r += 4
    assert r == m_rows
    # rate pair i links (left, right) control intervals
    if cyclic:
        rate_left = np.arange(-1, N - 1) % N
        rate_right = np.arange(N)
    else:
        rate_left = np.arange(N - 1)
        rate_right = np.arange(1, N)

    h_scales = equality_scales(p)
    g_scales = inequality_scales(p)
    row_scale = np.empty(m_rows)
    for k in range(N):
        for j in range(d):
            row_scale[colloc_rows[k, j]] = 1.0 / sx
        row_scale[cont_rows[k]] = 1.0 / sx
        row_scale[energy_rows[k]] = 1.0 / se
        row_scale[h1_rows[k]] = 1.0 / h_scales[0]
        row_scale[h2_rows[k]] = 1.0 / h_scales[1]
        row_scale[g1_rows[k]] = 1.0  # dimensionless by construction
        row_scale[g2_rows[k]] = 1.0 / g_scales[1]
    L_typ = 1.0 / cfg.scaling.v
    rate_bounds = np.array([
        p.F_d_max / p.T_d, p.F_b_min / p.T_b,
        p.delta_max / p.T_delta, p.delta_min / p.T_delta,
    ])
    rate_scale = 1.0 / (np.abs(rate_bounds) * ds * L_typ)
    for i in range(n_rate_pairs):
        row_scale[rate_rows[i]] = rate_scale

    cl = np.zeros(m_rows)
    cu = np.zeros(m_rows)
    ineq_rows = np.concatenate([g1_rows.ravel(), g2_rows, rate_rows.ravel()])
    cl[ineq_rows] = -BIG
    cu[ineq_rows] = 0.0
    h2_sign = 1.0
    if cfg.h2_mode == "relaxed":
        # F_d * (-F_b) <= eps instead of F_d * F_b = 0
        h2_sign = -1.0
        cl[h2_rows] = -BIG
        cu[h2_rows] = cfg.h2_eps / h_scales[1]

    # --------------------------------------------------- jacobian pattern
    acc = _CooAccumulator()
    maskA = block_a.jac_mask
    maskB = block_b.jac_mask
    y_cols = np.empty((N, N_Y), dtype=np.int64)  # block-B y layout per node
    for k in range(N):
        y_cols[k, :5] = x_idx[k]
        y_cols[k, 5:] = u_idx[k]

    # collocation rows: ds * dF/dy at the point, minus C couplings
    a_dyn_entries = np.argwhere(maskA[:5])  # (i_out, i_in)
    rowsA = np.empty((N, d, a_dyn_entries.shape[0]), dtype=np.int64)
    colsA = np.empty_like(rowsA)
    facA = np.empty(rowsA.shape)
    for k in range(N):
        for j in range(d):
            ycols = np.concatenate([c_idx[k, j], u_idx[k]])
            for e, (i_out, i_in) in enumerate(a_dyn_entries):
                rr = colloc_rows[k, j, i_out]
                cc = ycols[i_in]
                rowsA[k, j, e] = rr
                colsA[k, j, e] = cc
                facA[k, j, e] = ds * row_scale[rr] * var_scale[cc]
    acc.add_dynamic("A_dyn", rowsA, colsA, facA)
    for k in range(N):
        for j in range(d):
            for i in range(5):
                rr = colloc_rows[k, j, i]
                acc.add_const(rr, x_idx[k][i],
                              -sch.C[0, j] * row_scale[rr] * var_scale[x_idx[k][i]])
                for rbasis in range(d):
                    cc = c_idx[k, rbasis][i]
                    acc.add_const(rr, cc,
                                  -sch.C[rbasis + 1, j] * row_scale[rr] * var_scale[cc])

    # continuity rows: x_{k+1} - sum_r D_r X_r
    for k in range(N):
        for i in range(5):
            rr = cont_rows[k, i]
            cc_next = x_idx[k + 1][i]
            acc.add_const(rr, cc_next, row_scale[rr] * var_scale[cc_next])
            acc.add_const(rr, x_idx[k][i],
                          -sch.D[0] * row_scale[rr] * var_scale[x_idx[k][i]])
            for rbasis in range(d):
                cc = c_idx[k, rbasis][i]
                acc.add_const(rr, cc,
                              -sch.D[rbasis + 1] * row_scale[rr] * var_scale[cc])

    # energy rows: E_k - E_{k-1} - ds * sum_j B_j ehat(Xc_kj, u_k)
    a_e_entries = np.flatnonzero(maskA[A_EHAT])
    rowsE = np.empty((N, d, a_e_entries.size), dtype=np.int64)
    colsE = np.empty_like(rowsE)
    facE = np.empty(rowsE.shape)
    for k in range(N):
        rr = energy_rows[k]
        acc.add_const(rr, e_idx[k], row_scale[rr] * var_scale[e_idx[k]])
        if k > 0:
            acc.add_const(rr, e_idx[k - 1],
                          -row_scale[rr] * var_scale[e_idx[k - 1]])
        for j in range(d):
            ycols = np.concatenate([c_idx[k, j], u_idx[k]])
            for e, i_in in enumerate(a_e_entries):
                cc = ycols[i_in]
                rowsE[k, j, e] = rr
                colsE[k, j, e] = cc
                facE[k, j, e] = -ds * sch.B[j + 1] * row_scale[rr] * var_scale[cc]
    acc.add_dynamic("A_ehat", rowsE, colsE, facE)

    # node rows: h1, h2, g1 x4, g2 from block B
    b_out_rows = [h1_rows, h2_rows, g1_rows[:, 0], g1_rows[:, 1],
                  g1_rows[:, 2], g1_rows[:, 3], g2_rows]
    b_signs = [1.0, h2_sign, 1.0, 1.0, 1.0, 1.0, 1.0]
    b_entries = np.argwhere(maskB[:7])
    rowsB = np.empty((N, b_entries.shape[0]), dtype=np.int64)
    colsB = np.empty_like(rowsB)
    facB = np.empty(rowsB.shape)
    for k in range(N):
        for e, (i_out, i_in) in enumerate(b_entries):
            rr = b_out_rows[i_out][k]
            cc = y_cols[k, i_in]
            rowsB[k, e] = rr
            colsB[k, e] = cc
            facB[k, e] = b_signs[i_out] * row_scale[rr] * var_scale[cc]
    acc.add_dynamic("B_node", rowsB, colsB, facB)

    # rate rows: du parts (constant) and the -bound*ds*grad L(x_left) part
    rate_u_comp = np.array([0, 1, 2, 2])
    rate_u_sign = np.array([1.0, -1.0, 1.0, -1.0])
    c_rate = ds * np.array([
        -p.F_d_max / p.T_d, p.F_b_min / p.T_b,
        -p.delta_max / p.T_delta, p.delta_min / p.T_delta,
    ])
    lag_cols = np.flatnonzero(maskB[B_LAG][:5])
    rowsR = np.empty((n_rate_pairs, 4, lag_cols.size), dtype=np.int64)
    colsR = np.empty_like(rowsR)
    facR = np.empty(rowsR.shape)
    for i in range(n_rate_pairs):
        kl, kr = rate_left[i], rate_right[i]
        for q in range(4):
            rr = rate_rows[i, q]
            comp = rate_u_comp[q]
            acc.add_const(rr, u_idx[kr][comp],
                          rate_u_sign[q] * row_scale[rr] * var_scale[u_idx[kr][comp]])
            acc.add_const(rr, u_idx[kl][comp],
                          -rate_u_sign[q] * row_scale[rr] * var_scale[u_idx[kl][comp]])
            for e, i_in in enumerate(lag_cols):
                cc = x_idx[kl][i_in]
                rowsR[i, q, e] = rr
                colsR[i, q, e] = cc
                facR[i, q, e] = c_rate[q] * row_scale[rr] * var_scale[cc]
    acc.add_dynamic("R_lag", rowsR, colsR, facR)

    jac_layout = acc.finalize()
    jac_nnz = jac_layout["rows"].size
    csc = sps.csc_matrix(
        (np.zeros(jac_nnz), (jac_layout["rows"], jac_layout["cols"])),
        shape=(m_rows, n_vars),
    )
    csc.sort_indices()
    # map unique COO order to the CSC data order
    probe = np.arange(1.0, jac_nnz + 1.0)
    test = sps.csc_matrix((probe, (jac_layout["rows"], jac_layout["cols"])),
                          shape=(m_rows, n_vars))
    test.sort_indices()
    csc_perm = (test.data - 1.0).astype(np.int64)

    # -------------------------------------------------- objective gradient
    lag_cols_a = np.flatnonzero(maskA[A_LAG])
    grad_pos = np.empty((N, d, lag_cols_a.size), dtype=np.int64)
    grad_fac = np.empty(grad_pos.shape)
    for k in range(N):
        for j in range(d):
            ycols = np.concatenate([c_idx[k, j], u_idx[k]])
            for e, i_in in enumerate(lag_cols_a):
                cc = ycols[i_in]
                grad_pos[k, j, e] = cc
                grad_fac[k, j, e] = ds * sch.B[j + 1] * var_scale[cc]

    # ----------------------------------------------------- hessian layout
    hacc = _CooAccumulator()
    ha_rows, ha_cols = block_a.hess_rows, block_a.hess_cols
    rowsHA = np.empty((N, d, ha_rows.size), dtype=np.int64)
    colsHA = np.empty_like(rowsHA)
    facHA = np.empty(rowsHA.shape)
    for k in range(N):
        for j in range(d):
            ycols = np.concatenate([c_idx[k, j], u_idx[k]])
            gi = ycols[ha_rows]
            gj = ycols[ha_cols]
            lo = np.minimum(gi, gj)
            hi = np.maximum(gi, gj)
            rowsHA[k, j] = lo
            colsHA[k, j] = hi
            facHA[k, j] = var_scale[gi] * var_scale[gj]
    hacc.add_dynamic("HA", rowsHA, colsHA, facHA)
    hb_rows, hb_cols = block_b.hess_rows, block_b.hess_cols
    rowsHB = np.empty((N, hb_rows.size), dtype=np.int64)
    colsHB = np.empty_like(rowsHB)
    facHB = np.empty(rowsHB.shape)
    for k in range(N):
        gi = y_cols[k, hb_rows]
        gj = y_cols[k, hb_cols]
        rowsHB[k] = np.minimum(gi, gj)
        colsHB[k] = np.maximum(gi, gj)
        facHB[k] = var_scale[gi] * var_scale[gj]
    hacc.add_dynamic("HB", rowsHB, colsHB, facHB)
    hess_layout = hacc.finalize()

    # per-node sigma_L bookkeeping for the rate rows: node k is the left
    # node of rate pair i with rate_left[i] == k
    node_rate_rows = np.full((N, 4), -1, dtype=np.int64)
    for i in range(n_rate_pairs):
        node_rate_rows[rate_left[i]] = rate_rows[i]
    has_rate = node_rate_rows[:, 0] >= 0

    colloc_scale = np.empty((N, d, 5))
    for k in range(N):
        for j in range(d):
            colloc_scale[k, j] = row_scale[colloc_rows[k, j]]
    energy_scale_rows = row_scale[energy_rows]
    b_row_scale = np.stack([row_scale[rows] for rows in b_out_rows], axis=1)
    b_row_scale = b_row_scale * np.asarray(b_signs)[None, :]
    rate_row_scale = np.where(has_rate[:, None],
                              row_scale[np.maximum(node_rate_rows, 0)], 0.0)

    kappa_c_flat = kappa_c.ravel()
    f_r_flat = np.full(kappa_c_flat.shape, f_r)
    tauB = sch.B[1:]

    meta = {
        "N": N, "d": d, "ds": ds, "scheme": grid.scheme, "cyclic": cyclic,
        "x_idx": x_idx, "c_idx": c_idx, "u_idx": u_idx, "e_idx": e_idx,
        "var_scale": var_scale, "row_scale": row_scale,
        "kappa_nodes": kappa_nodes, "kappa_c": kappa_c,
        "s_nodes": s_nodes, "s_c": s_c, "tau": sch.tau, "tauB": tauB,
        "colloc_rows": colloc_rows, "cont_rows": cont_rows,
        "energy_rows": energy_rows, "h1_rows": h1_rows, "h2_rows": h2_rows,
        "g1_rows": g1_rows, "g2_rows": g2_rows, "rate_rows": rate_rows,
        "rate_left": rate_left, "rate_right": rate_right,
        "ocp": ocp, "grid": grid, "f_r": f_r,
        # the drive/brake exclusion rows are a complementarity product; a
        # solver may relax them with a vanishing band during its homotopy
        "relaxable_eq_rows": h2_rows if cfg.h2_mode == "equality" else
        np.zeros(0, dtype=np.int64),
    }

    def eval_blocks(z):
        xp = z * var_scale
        xn = xp[x_idx[:N]]                       # (N, 5)
        xc = xp[c_idx]                           # (N, d, 5)
        uu = xp[u_idx]                           # (N, 4)
        ee = xp[e_idx]                           # (N,)
        x_term = xp[x_idx[N]]                    # terminal state (or node 0)
        cargs = [xc[:, :, i].ravel() for i in range(5)]
        uc = np.repeat(uu, d, axis=0)
        cargs += [uc[:, i] for i in range(4)]
        nargs = [xn[:, i] for i in range(5)] + [uu[:, i] for i in range(4)]
        return cargs, nargs, xn, xc, uu, ee, x_term

    def objective(z):
        cargs = eval_blocks(z)[0]
        vals = block_a.value(*cargs, kappa_c_flat, f_r_flat)
        lag = vals[A_LAG].reshape(N, d)
        return float(ds * np.sum(lag * tauB[None, :]))

    def gradient(z):
        cargs = eval_blocks(z)[0]
        ja = block_a.jac(*cargs, kappa_c_flat, f_r_flat)
        gl = ja[A_LAG]                            # (9, N*d)
        g = np.zeros(n_vars)
        vals = (gl[lag_cols_a].T.reshape(N, d, lag_cols_a.size) * grad_fac)
        np.add.at(g, grad_pos.ravel(), vals.ravel())
        return g

    def constraints(z):
        cargs, nargs, xn, xc, uu, ee, x_term = eval_blocks(z)
        va = block_a.value(*cargs, kappa_c_flat, f_r_flat)
        vb = block_b.value(*nargs, kappa_nodes)
        c = np.zeros(m_rows)
        dyn = va[A_DYN].T.reshape(N, d, 5)
        x_all = np.concatenate([xn[:, None, :], xc], axis=1)  # (N, d+1, 5)
        resid = ds * dyn - np.einsum("rj,kri->kji", sch.C, x_all)
        c[colloc_rows.ravel()] = (resid * colloc_scale).ravel()
        x_next = np.vstack([xn[1:], xn[:1]]) if cyclic \
            else np.vstack([xn[1:], x_term[None, :]])
        cont = x_next - np.einsum("r,kri->ki", sch.D, x_all)
        c[cont_rows.ravel()] = (cont / sx[None, :]).ravel()
        ehat = va[A_EHAT].reshape(N, d)
        q = ds * np.sum(ehat * tauB[None, :], axis=1)
        e_prev = np.concatenate([[0.0], ee[:-1]])
        c[energy_rows] = (ee - e_prev - q) * energy_scale_rows
        for i_out, rows in enumerate(b_out_rows):
            c[rows] = vb[i_out] * row_scale[rows] * b_signs[i_out]
        lag_nodes = vb[B_LAG]
        du = uu[rate_right][:, rate_u_comp] - uu[rate_left][:, rate_u_comp]
        rate_val = (rate_u_sign[None, :] * du
                    + c_rate[None, :] * lag_nodes[rate_left][:, None])
        c[rate_rows.ravel()] = (rate_val * row_scale[rate_rows]).ravel()
        return c

    def jacobian(z):
        cargs, nargs = eval_blocks(z)[:2]
        ja = block_a.jac(*cargs, kappa_c_flat, f_r_flat)
        jb = block_b.jac(*nargs, kappa_nodes)
        data = jac_layout["const"].copy()
        pos, fac = jac_layout["groups"]["A_dyn"]
        sel = ja[a_dyn_entries[:, 0], a_dyn_entries[:, 1]]  # (nnz, N*d)
        data[pos] = sel.T.reshape(N, d, -1).ravel() * fac
        pos, fac = jac_layout["groups"]["A_ehat"]
        sel = ja[A_EHAT, a_e_entries]
        data[pos] = sel.T.reshape(N, d, -1).ravel() * fac
        pos, fac = jac_layout["groups"]["B_node"]
        sel = jb[b_entries[:, 0], b_entries[:, 1]]
        data[pos] = sel.T.ravel() * fac
        pos, fac = jac_layout["groups"]["R_lag"]
        sel = jb[B_LAG, lag_cols]                 # (nnz, N)
        left_vals = sel.T[rate_left]              # (pairs, nnz)
        data[pos] = np.repeat(left_vals[:, None, :], 4, axis=1).ravel() * fac
        vals = _reduce(jac_layout, data)
        out = csc.copy()
        out.data = vals[csc_perm]
        return out

    def hessian(z, lam, obj_factor):
        cargs, nargs = eval_blocks(z)[:2]
        lam_colloc = (lam[colloc_rows] * colloc_scale * ds)  # (N, d, 5)
        lam_e = -lam[energy_rows][:, None] * energy_scale_rows[:, None] \
            * ds * tauB[None, :]                              # (N, d)
        sig_l = obj_factor * ds * tauB                        # (d,)
        mult_a = [lam_colloc[:, :, i].ravel() for i in range(5)]
        mult_a.append(lam_e.ravel())
        mult_a.append(np.tile(sig_l, N))
        hv_a = block_a.hess(*cargs, kappa_c_flat, f_r_flat, *mult_a)

        lam_b = [lam[rows] * b_row_scale[:, i]
                 for i, rows in enumerate(b_out_rows)]
        lam_rate = np.where(has_rate[:, None],
                            lam[np.maximum(node_rate_rows, 0)], 0.0)
        sig_l_b = np.sum(lam_rate * rate_row_scale * c_rate[None, :], axis=1)
        lam_b.append(sig_l_b)
        hv_b = block_b.hess(*nargs, kappa_nodes, *lam_b)

        data = hess_layout["const"].copy()
        pos, fac = hess_layout["groups"]["HA"]
        data[pos] = hv_a.T.reshape(N, d, -1).ravel() * fac
        pos, fac = hess_layout["groups"]["HB"]
        data[pos] = hv_b.T.ravel() * fac
        return _reduce(hess_layout, data)

    x0 = np.clip(np.zeros(n_vars), lb_scaled, ub_scaled)
    problem = NlpProblem(
        n=n_vars, m=m_rows,
        lb=lb_scaled, ub=ub_scaled, cl=cl, cu=cu, x0=x0,
        objective=objective, gradient=gradient, constraints=constraints,
        jacobian=jacobian,
        jac_rows=jac_layout["rows"], jac_cols=jac_layout["cols"],
        hessian=hessian,
        hess_rows=hess_layout["rows"], hess_cols=hess_layout["cols"],
        meta=meta,
    )
    return problem


# -------------------------------------------------------------- trapezoidal


def _transcribe_trapezoidal(ocp: ContinuousOcp, grid: Grid) -> NlpProblem:
    """First-order fallback: trapezoidal integration, no interior points."""
    track, p, cfg = ocp.track, ocp.params, ocp.config
    N, ds = grid.n_intervals, grid.ds
    cyclic = cfg.boundary == "cyclic"
    block_a, block_b = build_blocks(p)
    f_r = cfg.energy.f_r

    W = 5 + 4 + 1
    n_vars = N * W + (0 if cyclic else 5)
    x_idx = np.empty((N + 1, 5), dtype=np.int64)
    u_idx = np.empty((N, 4), dtype=np.int64)
    e_idx = np.empty(N, dtype=np.int64)
    for k in range(N):
        x_idx[k] = k * W + np.arange(5)
        u_idx[k] = k * W + 5 + np.arange(4)
        e_idx[k] = k * W + 9
    x_idx[N] = x_idx[0] if cyclic else N * W + np.arange(5)

    sx = cfg.scaling.state_scale()
    su = cfg.scaling.control_scale()
    se = cfg.scaling.energy
    var_scale = np.empty(n_vars)
    for k in range(N):
        var_scale[x_idx[k]] = sx
        var_scale[u_idx[k]] = su
        var_scale[e_idx[k]] = se
    if not cyclic:
        var_scale[x_idx[N]] = sx

    s_nodes = track.s_grid[:N]
    kappa_nodes = track.kappa[:N]
    if cyclic:
        kappa_next = np.roll(kappa_nodes, -1)
    elif track.closed:
        kappa_next = np.concatenate([track.kappa[1:N], track.kappa[:1]])
    else:
        kappa_next = track.kappa[1:N + 1]

    lb = np.full(n_vars, -BIG)
    ub = np.full(n_vars, BIG)
    xlb, xub = _state_bounds(ocp, s_nodes)
    for k in range(N):
        lb[x_idx[k]], ub[x_idx[k]] = xlb[k], xub[k]
    ulb, uub = _control_bounds(p)
    for k in range(N):
        lb[u_idx[k]], ub[u_idx[k]] = ulb, uub
    if cfg.energy.enabled:
        ub[e_idx[N - 1]] = cfg.energy.budget_j
    if not cyclic:
        s_term = track.s_grid[N] if not track.closed else track.total_length
        xlb_t, xub_t = _state_bounds(ocp, np.array([s_term]))
        lb[x_idx[N]], ub[x_idx[N]] = xlb_t[0], xub_t[0]
        x_fix = np.asarray(cfg.fixed_initial_state, dtype=float)
        lb[x_idx[0]] = x_fix
        ub[x_idx[0]] = x_fix
    lb_scaled, ub_scaled = lb / var_scale, ub / var_scale

    rows_per_interval = 5 + 1 + 2 + 5
    n_rate_pairs = N if cyclic else N - 1
    m_rows = N * rows_per_interval + 4 * n_rate_pairs
    dyn_rows = np.empty((N, 5), dtype=np.int64)
    energy_rows = np.empty(N, dtype=np.int64)
    h1_rows = np.empty(N, dtype=np.int64)
    h2_rows = np.empty(N, dtype=np.int64)
    g1_rows = np.empty((N, 4), dtype=np.int64)
    g2_rows = np.empty(N, dtype=np.int64)
    rate_rows = np.empty((n_rate_pairs, 4), dtype=np.int64)
    r = 0
    for k in range(N):
        dyn_rows[k] = r + np.arange(5)
        r += 5
        energy_rows[k] = r
        r += 1
        h1_rows[k], h2_rows[k] = r, r + 1
        r += 2
        g1_rows[k] = r + np.arange(4)
        r += 4
        g2_rows[k] = r
        r += 1
    for i in range(n_rate_pairs):
        rate_rows[i] = r + np.arange(4)
        r += 4
    if cyclic:
        rate_left = np.arange(-1, N - 1) % N
        rate_right = np.arange(N)
    else:
        rate_left = np.arange(N - 1)
        rate_right = np.arange(1, N)

    h_scales = equality_scales(p)
    g_scales = inequality_scales(p)
    row_scale = np.empty(m_rows)
    for k in range(N):
        row_scale[dyn_rows[k]] = 1.0 / sx
        row_scale[energy_rows[k]] = 1.0 / se
        row_scale[h1_rows[k]] = 1.0 / h_scales[0]
        row_scale[h2_rows[k]] = 1.0 / h_scales[1]
        row_scale[g1_rows[k]] = 1.0
        row_scale[g2_rows[k]] = 1.0 / g_scales[1]
    L_typ = 1.0 / cfg.scaling.v
    c_rate = ds * np.array([
        -p.F_d_max / p.T_d, p.F_b_min / p.T_b,
        -p.delta_max / p.T_delta, p.delta_min / p.T_delta,
    ])
    rate_bounds = np.array([
        p.F_d_max / p.T_d, p.F_b_min / p.T_b,
        p.delta_max / p.T_delta, p.delta_min / p.T_delta,
    ])
    rate_scale = 1.0 / (np.abs(rate_bounds) * ds * L_typ)
    for i in range(n_rate_pairs):
        row_scale[rate_rows[i]] = rate_scale

    cl = np.zeros(m_rows)
    cu = np.zeros(m_rows)
    ineq_rows = np.concatenate([g1_rows.ravel(), g2_rows, rate_rows.ravel()])
    cl[ineq_rows] = -BIG
    h2_sign = 1.0
    if cfg.h2_mode == "relaxed":
        h2_sign = -1.0
        cl[h2_rows] = -BIG
        cu[h2_rows] = cfg.h2_eps / h_scales[1]

    maskA = block_a.jac_mask
    maskB = block_b.jac_mask
    y_cols = np.empty((N, N_Y), dtype=np.int64)
    y_cols_next = np.empty((N, N_Y), dtype=np.int64)
    for k in range(N):
        y_cols[k, :5] = x_idx[k]
        y_cols[k, 5:] = u_idx[k]
        y_cols_next[k, :5] = x_idx[k + 1]
        y_cols_next[k, 5:] = u_idx[k]

    acc = _CooAccumulator()
    a_dyn_entries = np.argwhere(maskA[:5])
    for tag, cols_of in (("A0_dyn", y_cols), ("A1_dyn", y_cols_next)):
        rowsD = np.empty((N, a_dyn_entries.shape[0]), dtype=np.int64)
        colsD = np.empty_like(rowsD)
        facD = np.empty(rowsD.shape)
        for k in range(N):
            for e, (i_out, i_in) in enumerate(a_dyn_entries):
                rr = dyn_rows[k, i_out]
                cc = cols_of[k, i_in]
                rowsD[k, e] = rr
                colsD[k, e] = cc
                facD[k, e] = -0.5 * ds * row_scale[rr] * var_scale[cc]
        acc.add_dynamic(tag, rowsD, colsD, facD)
    for k in range(N):
        for i in range(5):
            rr = dyn_rows[k, i]
            acc.add_const(rr, x_idx[k + 1][i],
                          row_scale[rr] * var_scale[x_idx[k + 1][i]])
            acc.add_const(rr, x_idx[k][i],
                          -row_scale[rr] * var_scale[x_idx[k][i]])

    a_e_entries = np.flatnonzero(maskA[A_EHAT])
    for tag, cols_of in (("A0_e", y_cols), ("A1_e", y_cols_next)):
        rowsE = np.empty((N, a_e_entries.size), dtype=np.int64)
        colsE = np.empty_like(rowsE)
        facE = np.empty(rowsE.shape)
        for k in range(N):
            rr = energy_rows[k]
            for e, i_in in enumerate(a_e_entries):
                cc = cols_of[k, i_in]
                rowsE[k, e] = rr
                colsE[k, e] = cc
                facE[k, e] = -0.5 * ds * row_scale[rr] * var_scale[cc]
        acc.add_dynamic(tag, rowsE, colsE, facE)
    for k in range(N):
        rr = energy_rows[k]
        acc.add_const(rr, e_idx[k], row_scale[rr] * var_scale[e_idx[k]])
        if k > 0:
            acc.add_const(rr, e_idx[k - 1],
                          -row_scale[rr] * var_scale[e_idx[k - 1]])

    b_out_rows = [h1_rows, h2_rows, g1_rows[:, 0], g1_rows[:, 1],
                  g1_rows[:, 2], g1_rows[:, 3], g2_rows]
    b_signs = [1.0, h2_sign, 1.0, 1.0, 1.0, 1.0, 1.0]
    b_entries = np.argwhere(maskB[:7])
    rowsB = np.empty((N, b_entries.shape[0]), dtype=np.int64)
    colsB = np.empty_like(rowsB)
    facB = np.empty(rowsB.shape)
    for k in range(N):
        for e, (i_out, i_in) in enumerate(b_entries):
            rr = b_out_rows[i_out][k]
            cc = y_cols[k, i_in]
            rowsB[k, e] = rr
            colsB[k, e] = cc
            facB[k, e] = b_signs[i_out] * row_scale[rr] * var_scale[cc]
    acc.add_dynamic("B_node", rowsB, colsB, facB)

    rate_u_comp = np.array([0, 1, 2, 2])
    rate_u_sign = np.array([1.0, -1.0, 1.0, -1.0])
    lag_cols = np.flatnonzero(maskB[B_LAG][:5])
    rowsR = np.empty((n_rate_pairs, 4, lag_cols.size), dtype=np.int64)
    colsR = np.empty_like(rowsR)
    facR = np.empty(rowsR.shape)
    for i in range(n_rate_pairs):
        kl, kr = rate_left[i], rate_right[i]
        for q in range(4):
            rr = rate_rows[i, q]
            comp = rate_u_comp[q]
            acc.add_const(rr, u_idx[kr][comp],
                          rate_u_sign[q] * row_scale[rr] * var_scale[u_idx[kr][comp]])
            acc.add_const(rr, u_idx[kl][comp],
                          -rate_u_sign[q] * row_scale[rr] * var_scale[u_idx[kl][comp]])
            for e, i_in in enumerate(lag_cols):
                cc = x_idx[kl][i_in]
                rowsR[i, q, e] = rr
                colsR[i, q, e] = cc
                facR[i, q, e] = c_rate[q] * row_scale[rr] * var_scale[cc]
    acc.add_dynamic("R_lag", rowsR, colsR, facR)

    jac_layout = acc.finalize()
    jac_nnz = jac_layout["rows"].size
    csc = sps.csc_matrix(
        (np.zeros(jac_nnz), (jac_layout["rows"], jac_layout["cols"])),
        shape=(m_rows, n_vars))
    csc.sort_indices()
    probe = np.arange(1.0, jac_nnz + 1.0)
    test = sps.csc_matrix((probe, (jac_layout["rows"], jac_layout["cols"])),
                          shape=(m_rows, n_vars))
    test.sort_indices()
    csc_perm = (test.data - 1.0).astype(np.int64)

    lag_cols_a = np.flatnonzero(maskA[A_LAG])
    grad_pos = [np.empty((N, lag_cols_a.size), dtype=np.int64),
                np.empty((N, lag_cols_a.size), dtype=np.int64)]
    grad_fac = [np.empty((N, lag_cols_a.size)),
                np.empty((N, lag_cols_a.size))]
    for side, cols_of in enumerate((y_cols, y_cols_next)):
        for k in range(N):
            for e, i_in in enumerate(lag_cols_a):
                cc = cols_of[k, i_in]
                grad_pos[side][k, e] = cc
                grad_fac[side][k, e] = 0.5 * ds * var_scale[cc]

    hacc = _CooAccumulator()
    ha_rows, ha_cols = block_a.hess_rows, block_a.hess_cols
    for tag, cols_of in (("HA0", y_cols), ("HA1", y_cols_next)):
        rowsH = np.empty((N, ha_rows.size), dtype=np.int64)
        colsH = np.empty_like(rowsH)
        facH = np.empty(rowsH.shape)
        for k in range(N):
            gi = cols_of[k, ha_rows]
            gj = cols_of[k, ha_cols]
            rowsH[k] = np.minimum(gi, gj)
            colsH[k] = np.maximum(gi, gj)
            facH[k] = var_scale[gi] * var_scale[gj]
        hacc.add_dynamic(tag, rowsH, colsH, facH)
    hb_rows, hb_cols = block_b.hess_rows, block_b.hess_cols
    rowsHB = np.empty((N, hb_rows.size), dtype=np.int64)
    colsHB = np.empty_like(rowsHB)
    facHB = np.empty(rowsHB.shape)
    for k in range(N):
        gi = y_cols[k, hb_rows]
        gj = y_cols[k, hb_cols]
        rowsHB[k] = np.minimum(gi, gj)
        colsHB[k] = np.maximum(gi, gj)
        facHB[k] = var_scale[gi] * var_scale[gj]
    hacc.add_dynamic("HB", rowsHB, colsHB, facHB)
    hess_layout = hacc.finalize()

    node_rate_rows = np.full((N, 4), -1, dtype=np.int64)
    for i in range(n_rate_pairs):
        node_rate_rows[rate_left[i]] = rate_rows[i]
    has_rate = node_rate_rows[:, 0] >= 0
    b_row_scale = np.stack([row_scale[rows] for rows in b_out_rows], axis=1)
    b_row_scale = b_row_scale * np.asarray(b_signs)[None, :]
    rate_row_scale = np.where(has_rate[:, None],
                              row_scale[np.maximum(node_rate_rows, 0)], 0.0)
    dyn_scale = row_scale[dyn_rows]              # (N, 5)
    energy_scale_rows = row_scale[energy_rows]
    f_r_nodes = np.full(N, f_r)

    meta = {
        "N": N, "d": 0, "ds": ds, "scheme": "trapezoidal", "cyclic": cyclic,
        "x_idx": x_idx, "u_idx": u_idx, "e_idx": e_idx,
        "var_scale": var_scale, "row_scale": row_scale,
        "kappa_nodes": kappa_nodes, "kappa_next": kappa_next,
        "s_nodes": s_nodes,
        "energy_rows": energy_rows, "h1_rows": h1_rows, "h2_rows": h2_rows,
        "g1_rows": g1_rows, "g2_rows": g2_rows, "rate_rows": rate_rows,
        "rate_left": rate_left, "rate_right": rate_right,
        "ocp": ocp, "grid": grid, "f_r": f_r,
        # the drive/brake exclusion rows are a complementarity product; a
        # solver may relax them with a vanishing band during its homotopy
        "relaxable_eq_rows": h2_rows if cfg.h2_mode == "equality" else
        np.zeros(0, dtype=np.int64),
    }

    def unpack(z):
        xp = z * var_scale
        xn = xp[x_idx[:N]]
        uu = xp[u_idx]
        ee = xp[e_idx]
        x_term = xp[x_idx[N]]
        return xn, uu, ee, x_term

    def node_args(z):
        xn, uu, ee, x_term = unpack(z)
        x_next = np.vstack([xn[1:], xn[:1]]) if cyclic \
            else np.vstack([xn[1:], x_term[None, :]])
        args0 = [xn[:, i] for i in range(5)] + [uu[:, i] for i in range(4)]
        args1 = [x_next[:, i] for i in range(5)] + [uu[:, i] for i in range(4)]
        return args0, args1, xn, x_next, uu, ee

    def objective(z):
        args0, args1, *_ = node_args(z)
        l0 = block_a.value(*args0, kappa_nodes, f_r_nodes)[A_LAG]
        l1 = block_a.value(*args1, kappa_next, f_r_nodes)[A_LAG]
        return float(0.5 * ds * np.sum(l0 + l1))

    def gradient(z):
        args0, args1, *_ = node_args(z)
        g = np.zeros(n_vars)
        for side, (args, kap) in enumerate(((args0, kappa_nodes),
                                            (args1, kappa_next))):
            ja = block_a.jac(*args, kap, f_r_nodes)
            vals = ja[A_LAG][lag_cols_a].T * grad_fac[side]
            np.add.at(g, grad_pos[side].ravel(), vals.ravel())
        return g

    def constraints(z):
        args0, args1, xn, x_next, uu, ee = node_args(z)
        va0 = block_a.value(*args0, kappa_nodes, f_r_nodes)
        va1 = block_a.value(*args1, kappa_next, f_r_nodes)
        vb = block_b.value(*args0, kappa_nodes)
        c = np.zeros(m_rows)
        resid = x_next - xn - 0.5 * ds * (va0[A_DYN].T + va1[A_DYN].T)
        c[dyn_rows.ravel()] = (resid * dyn_scale).ravel()
        q = 0.5 * ds * (va0[A_EHAT] + va1[A_EHAT])
        e_prev = np.concatenate([[0.0], ee[:-1]])
        c[energy_rows] = (ee - e_prev - q) * energy_scale_rows
        for i_out, rows in enumerate(b_out_rows):
            c[rows] = vb[i_out] * row_scale[rows] * b_signs[i_out]
        lag_nodes = vb[B_LAG]
        du = uu[rate_right][:, rate_u_comp] - uu[rate_left][:, rate_u_comp]
        rate_val = (rate_u_sign[None, :] * du
                    + c_rate[None, :] * lag_nodes[rate_left][:, None])
        c[rate_rows.ravel()] = (rate_val * row_scale[rate_rows]).ravel()
        return c

    def jacobian(z):
        args0, args1, *_ = node_args(z)
        ja0 = block_a.jac(*args0, kappa_nodes, f_r_nodes)
        ja1 = block_a.jac(*args1, kappa_next, f_r_nodes)
        jb = block_b.jac(*args0, kappa_nodes)
        data = jac_layout["const"].copy()
        for tag, ja in (("A0_dyn", ja0), ("A1_dyn", ja1)):
            pos, fac = jac_layout["groups"][tag]
            sel = ja[a_dyn_entries[:, 0], a_dyn_entries[:, 1]]
            data[pos] = sel.T.ravel() * fac
        for tag, ja in (("A0_e", ja0), ("A1_e", ja1)):
            pos, fac = jac_layout["groups"][tag]
            sel = ja[A_EHAT, a_e_entries]
            data[pos] = sel.T.ravel() * fac
        pos, fac = jac_layout["groups"]["B_node"]
        sel = jb[b_entries[:, 0], b_entries[:, 1]]
        data[pos] = sel.T.ravel() * fac
        pos, fac = jac_layout["groups"]["R_lag"]
        sel = jb[B_LAG, lag_cols]
        left_vals = sel.T[rate_left]
        data[pos] = np.repeat(left_vals[:, None, :], 4, axis=1).ravel() * fac
        vals = _reduce(jac_layout, data)
        out = csc.copy()
        out.data = vals[csc_perm]
        return out

    def hessian(z, lam, obj_factor):
        args0, args1, *_ = node_args(z)
        data = hess_layout["const"].copy()
        for tag, args, kap in (("HA0", args0, kappa_nodes),
                               ("HA1", args1, kappa_next)):
            lam_dyn = -0.5 * ds * lam[dyn_rows] * dyn_scale  # (N, 5)
            lam_e = -0.5 * ds * lam[energy_rows] * energy_scale_rows
            sig = np.full(N, 0.5 * ds * obj_factor)
            mult = [lam_dyn[:, i] for i in range(5)] + [lam_e, sig]
            hv = block_a.hess(*args, kap, f_r_nodes, *mult)
            pos, fac = hess_layout["groups"][tag]
            data[pos] = hv.T.ravel() * fac
        lam_b = [lam[rows] * b_row_scale[:, i]
                 for i, rows in enumerate(b_out_rows)]
        lam_rate = np.where(has_rate[:, None],
                            lam[np.maximum(node_rate_rows, 0)], 0.0)
        sig_l_b = np.sum(lam_rate * rate_row_scale * c_rate[None, :], axis=1)
        lam_b.append(sig_l_b)
        hv_b = block_b.hess(*args0, kappa_nodes, *lam_b)
        pos, fac = hess_layout["groups"]["HB"]
        data[pos] = hv_b.T.ravel() * fac
        return _reduce(hess_layout, data)

    x0 = np.clip(np.zeros(n_vars), lb_scaled, ub_scaled)
    return NlpProblem(
        n=n_vars, m=m_rows,
        lb=lb_scaled, ub=ub_scaled, cl=cl, cu=cu, x0=x0,
        objective=objective, gradient=gradient, constraints=constraints,
        jacobian=jacobian,
        jac_rows=jac_layout["rows"], jac_cols=jac_layout["cols"],
        hessian=hessian,
        hess_rows=hess_layout["rows"], hess_cols=hess_layout["cols"],
        meta=meta,
    )


# ------------------------------------------------------------ initial guess


def initial_guess(ocp: ContinuousOcp, grid: Grid, v0: float = 20.0,
                  a_y_max: float = 14.0, mode: str = "oracle") -> np.ndarray:
    """Physically plausible starting point, returned in scaled variables.

    Both modes guess the centerline (n = xi = beta = 0, psidot = kappa*v,
    kinematic steering) with the lateral-transfer control matched to the
    steady state and energy accumulated with the transcription quadrature.
    mode="oracle" takes the speed and drive/brake split from the point-mass
    forward-backward profile, so braking zones are roughly in place from the
    start; mode="corner-cap" caps v0 by sqrt(a_y_max/|kappa|) per node and
    never brakes.
    """
    problem = transcribe(ocp, grid)
    return guess_into(problem, v0=v0, a_y_max=a_y_max, mode=mode)


def _oracle_profile(meta, p, cfg):
    """Point-mass node speeds for the guess, clipped into the speed box."""
    from .pointmass_oracle import forward_backward_profile, \
        pointmass_from_vehicle

    N, ds = meta["N"], meta["ds"]
    pm = pointmass_from_vehicle(p)
    if meta["cyclic"]:
        kappa = meta["kappa_nodes"]
        closed = True
        v_start = None
    else:
        ocp = meta["ocp"]
        track = ocp.track
        kap_t = float(track.kappa_at(track.total_length)) if track.closed \
            else float(track.kappa[N])
        kappa = np.concatenate([meta["kappa_nodes"], [kap_t]])
        closed = False
        v_start = None
        if cfg.fixed_initial_state is not None:
            v_start = float(cfg.fixed_initial_state[0])
    prof = forward_backward_profile(kappa, ds, pm, closed=closed,
                                    v_start=v_start)
    return np.clip(prof.v, cfg.v_min, cfg.v_max), pm, closed


def guess_into(problem: NlpProblem, v0: float = 20.0,
               a_y_max: float = 14.0, mode: str = "oracle") -> np.ndarray:
    if mode not in ("oracle", "corner-cap"):
        raise ValueError(f"unknown guess mode {mode!r}")
    meta = problem.meta
    ocp: ContinuousOcp = meta["ocp"]
    track, p, cfg = ocp.track, ocp.params, ocp.config
    N, d, ds = meta["N"], meta["d"], meta["ds"]
    var_scale = meta["var_scale"]
    f_r = meta["f_r"]
    block_a, _ = build_blocks(p)

    def corner_cap(kappa):
        kap = np.abs(np.asarray(kappa, dtype=float))
        with np.errstate(divide="ignore"):
            cap = np.sqrt(np.where(kap > 1e-12, a_y_max / np.maximum(kap, 1e-12),
                                   np.inf))
        v = np.minimum(v0, cap)
        v = np.maximum(v, cfg.v_min)
        return v

    kappa_nodes = meta["kappa_nodes"]
    xp = np.zeros(problem.n)
    x_idx, u_idx, e_idx = meta["x_idx"], meta["u_idx"], meta["e_idx"]

    if mode == "oracle":
        from .pointmass_oracle import profile_forces
        v_base, pm, closed = _oracle_profile(meta, p, cfg)

        def speeds_and_forces(scale):
            v = np.clip(v_base * scale, cfg.v_min, cfg.v_max)
            f_d, f_b = profile_forces(v, ds, pm.slope_at(v.size), pm,
                                      closed=closed)
            v_nodes = v[:N]
            v_term = v[0] if meta["cyclic"] else v[N]
            return (v_nodes, v_term, np.clip(f_d, 0.0, p.F_d_max),
                    np.clip(f_b, p.F_b_min, 0.0))
    else:
        v_cap = corner_cap(kappa_nodes)

        def speeds_and_forces(scale):
            v_nodes = np.maximum(v_cap * scale, cfg.v_min)
            v_term = v_nodes[0] if meta["cyclic"] else v_nodes[-1]
            v_next = np.roll(v_nodes, -1) if meta["cyclic"] else \
                np.concatenate([v_nodes[1:], [v_term]])
            a_profile = (v_next**2 - v_nodes**2) / (2.0 * ds)
            f_d = np.clip(p.drag(v_nodes) + p.rolling_force()
                          + p.m * a_profile, 0.0, p.F_d_max)
            return v_nodes, v_term, f_d, np.zeros(N)

    def gamma_at(v, kap):
        return p.m * (v * kap * v) * p.h_cog / p.tw_mean

    def fill(v_nodes, v_term, f_d_all, f_b_all):
        """Write the guess into xp; returns the accumulated lap energy."""
        for k in range(N):
            v = v_nodes[k]
            kap = kappa_nodes[k]
            xp[x_idx[k]] = [v, 0.0, kap * v, 0.0, 0.0]
            xp[u_idx[k]] = [f_d_all[k], f_b_all[k], math.atan(p.l * kap),
                            gamma_at(v, kap)]
        if not meta["cyclic"]:
            kap_t = float(track.kappa_at(track.total_length)) if track.closed \
                else float(track.kappa[N])
            xp[x_idx[N]] = [v_term, 0.0, kap_t * v_term, 0.0, 0.0]
            if cfg.fixed_initial_state is not None:
                xp[x_idx[0]] = np.asarray(cfg.fixed_initial_state, dtype=float)

        if d > 0:
            kappa_c = meta["kappa_c"]
            c_idx = meta["c_idx"]
            tau = meta["tau"]
            v_next_nodes = np.roll(v_nodes, -1) if meta["cyclic"] else \
                np.concatenate([v_nodes[1:], [v_term]])
            for k in range(N):
                for j in range(d):
                    v = float(v_nodes[k]
                              + tau[j] * (v_next_nodes[k] - v_nodes[k]))
                    xp[c_idx[k, j]] = [v, 0.0, kappa_c[k, j] * v, 0.0, 0.0]

        # energy by forward accumulation of the same quadrature
        e_cum = 0.0
        for k in range(N):
            u_k = xp[u_idx[k]]
            if d > 0:
                tauB = meta["tauB"]
                q = 0.0
                for j in range(d):
                    y = xp[meta["c_idx"][k, j]]
                    va = block_a.value(*y, *u_k, meta["kappa_c"][k, j], f_r)
                    q += ds * tauB[j] * float(va[A_EHAT])
            else:
                y0 = xp[x_idx[k]]
                y1 = xp[x_idx[k + 1]]
                va0 = block_a.value(*y0, *u_k, meta["kappa_nodes"][k], f_r)
                va1 = block_a.value(*y1, *u_k, meta["kappa_next"][k], f_r)
                q = 0.5 * ds * float(va0[A_EHAT] + va1[A_EHAT])
            e_cum += q
            xp[e_idx[k]] = e_cum
        return e_cum

    # slow the profile down until the guess respects the energy budget, so
    # the energy states do not start the solve pinned on their upper bound
    budget = cfg.energy.budget_j if cfg.energy.enabled else math.inf
    scale = 1.0
    for _ in range(10):
        e_end = fill(*speeds_and_forces(scale))
        if not math.isfinite(budget) or e_end <= 0.97 * budget:
            break
        scale *= max(0.5, math.sqrt(0.9 * budget / max(e_end, 1.0e-9)))

    z = xp / var_scale
    return np.clip(z, problem.lb, problem.ub)


# --------------------------------------------------------------- extraction


@dataclass(frozen=True)
class Trajectory:
    """Optimized trajectory sampled at the grid nodes.

    Arrays have one row per node plus a closing row (s = S) repeating node 0
    on cyclic laps. stage_states/stage_kappa keep the interior collocation
    states so integrals can be re-evaluated with the exact same quadrature.
    """

    s: np.ndarray
    states: np.ndarray     # (n_rows, 5)
    controls: np.ndarray   # (n_rows, 4)
    power: np.ndarray      # F_d*v, W
    energy: np.ndarray     # cumulative, J
    time: np.ndarray       # cumulative, s
    x: np.ndarray
    y: np.ndarray
    lap_time: float
    energy_total: float
    closed: bool
    ds: float
    stage_states: np.ndarray | None
    stage_kappa: np.ndarray | None
    stage_weights: np.ndarray | None
    controls_per_interval: np.ndarray | None

    @property
    def n_nodes(self) -> int:
        return self.s.size


_OK_STATUSES = ("optimal", "acceptable")


def extract_solution(problem: NlpProblem, result, track: Track) -> Trajectory:
    """Unpack a solver result into a Trajectory (refused for failed solves)."""
    status = getattr(result, "status", "unknown")
    if status not in _OK_STATUSES:
        raise ExtractionError(
            f"cannot extract a trajectory from a solve with status {status!r}"
        )
    z = np.asarray(result.x, dtype=float)
    if z.shape != (problem.n,):
        raise ExtractionError(
            f"primal vector has length {z.size}, problem has {problem.n} variables"
        )
    meta = problem.meta
    ocp: ContinuousOcp = meta["ocp"]
    N, d, ds = meta["N"], meta["d"], meta["ds"]
    cyclic = meta["cyclic"]
    f_r = meta["f_r"]
    block_a, _ = build_blocks(ocp.params)

    xp = z * meta["var_scale"]
    xn = xp[meta["x_idx"][:N]]
    uu = xp[meta["u_idx"]]
    ee = xp[meta["e_idx"]]

    if d > 0:
        xc = xp[meta["c_idx"]]
        cargs = [xc[:, :, i].ravel() for i in range(5)]
        uc = np.repeat(uu, d, axis=0)
        cargs += [uc[:, i] for i in range(4)]
        va = block_a.value(*cargs, meta["kappa_c"].ravel(),
                           np.full(N * d, f_r))
        lag = va[A_LAG].reshape(N, d)
        dt = ds * lag @ meta["tauB"]
        stage_states = xc
        stage_kappa = meta["kappa_c"]
        stage_weights = meta["tauB"]
    else:
        x_next = np.vstack([xn[1:], xn[:1]]) if cyclic \
            else np.vstack([xn[1:], xp[meta["x_idx"][N]][None, :]])
        args0 = [xn[:, i] for i in range(5)] + [uu[:, i] for i in range(4)]
        args1 = [x_next[:, i] for i in range(5)] + [uu[:, i] for i in range(4)]
        l0 = block_a.value(*args0, meta["kappa_nodes"], np.full(N, f_r))[A_LAG]
        l1 = block_a.value(*args1, meta["kappa_next"], np.full(N, f_r))[A_LAG]
        dt = 0.5 * ds * (l0 + l1)
        stage_states = stage_kappa = stage_weights = None

    t = np.concatenate([[0.0], np.cumsum(dt)])
    lap_time = float(t[-1])
    e_full = np.concatenate([[0.0], ee])

    if cyclic:
        states = np.vstack([xn, xn[:1]])
        controls = np.vstack([uu, uu[:1]])
        s = np.concatenate([meta["s_nodes"], [track.total_length]])
    else:
        x_term = xp[meta["x_idx"][N]]
        states = np.vstack([xn, x_term[None, :]])
        controls = np.vstack([uu, uu[-1:]])
        s = track.s_grid
    power = controls[:, 0] * states[:, 0]
    if track.closed:
        pts = frenet_to_cartesian(track, states[:-1, 3])
        pts = np.vstack([pts, pts[:1]])
    else:
        pts = frenet_to_cartesian(track, states[:, 3])
    xcart, ycart = pts[:, 0], pts[:, 1]
    return Trajectory(
        s=s, states=states, controls=controls, power=power,
        energy=e_full, time=t, x=xcart, y=ycart,
        lap_time=lap_time, energy_total=float(e_full[-1]),
        closed=track.closed, ds=ds,
        stage_states=stage_states, stage_kappa=stage_kappa,
        stage_weights=stage_weights,
        controls_per_interval=uu,
    )


def time_from_stages(traj: Trajectory) -> float:
    """Re-evaluate the lap time from the stored stage states by quadrature."""
    if traj.stage_states is None:
        raise ValueError("trajectory carries no stage states")
    xc = traj.stage_states
    n, d, _ = xc.shape
    v, beta, nn, xi = xc[:, :, 0], xc[:, :, 1], xc[:, :, 3], xc[:, :, 4]
    lag = (1.0 - nn * traj.stage_kappa) / (v * np.cos(xi + beta))
    return float(traj.ds * np.sum(lag @ traj.stage_weights))
