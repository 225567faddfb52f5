"""Symbolic derivative generation for the transcribed NLP.

The transcription evaluates two kinds of nonlinear blocks, both functions of
a 9-vector y = (v, beta, psidot, n, xi, F_d, F_b, delta, gamma):

  Block A (per collocation point): the five space-domain state derivatives,
  the energy integrand and the time Lagrangian, parameterized by the local
  curvature and the recuperation factor.

  Block B (per node): the equalities h1, h2, the four friction-ellipse rows
  (one per wheel, in smooth squared form), the traction-power row g2, and
  the Lagrangian L (whose gradient/curvature the actuator-rate rows need).

Values, dense-block Jacobians and multiplier-contracted Hessians are built
once per vehicle with sympy, shared-subexpression compiled to vectorized
numpy callables, and cached. Sparsity masks come from symbolic zeros, so the
declared pattern is always a superset of the true nonzeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .vehicle_model import VehicleParams

N_Y = 9  # (v, beta, psidot, n, xi, F_d, F_b, delta, gamma)
N_A_OUT = 7  # 5 dynamics + energy integrand + Lagrangian
N_B_OUT = 8  # h1, h2, 4x g1, g2, L

A_DYN = slice(0, 5)
A_EHAT = 5
A_LAG = 6
B_H1, B_H2 = 0, 1
B_G1 = slice(2, 6)
B_G2 = 6
B_LAG = 7

_cache: dict = {}


@dataclass(frozen=True)
class Block:
    """Compiled evaluators for one block.

    value(*args) -> (n_out, M); jac(*args) -> (n_out, n_y, M);
    hess(*args, multipliers...) -> (n_hess_entries, M) for the upper-triangle
    entries listed in hess_rows/hess_cols.
    """

    n_out: int
    value: callable
    jac: callable
    hess: callable
    jac_mask: np.ndarray   # (n_out, N_Y) bool, structural nonzeros
    hess_rows: np.ndarray  # upper-triangle structural nonzeros, i <= j
    hess_cols: np.ndarray


def _stacked(args, exprs):
    """Lambdify a list of expressions into one vectorized stacked callable."""
    fn = sp.lambdify(args, list(exprs), modules="numpy", cse=True)

    def wrapped(*vals):
        arrs = [np.asarray(v, dtype=float) for v in vals]
        shape = np.broadcast_shapes(*[a.shape for a in arrs])
        out = fn(*arrs)
        return np.stack([
            np.broadcast_to(np.asarray(o, dtype=float), shape) for o in out
        ])

    return wrapped


def _symbolic_model(p: VehicleParams):
    """The double-track model as sympy expressions of y, kappa, f_r.

    Mirrors vehicle_model.dynamics / wheel loads / tire forces exactly, with
    the lateral load transfer taken from the control gamma.
    """
    v, beta, psidot, n, xi = sp.symbols("v beta psidot n xi", real=True)
    F_d, F_b, delta, gamma = sp.symbols("F_d F_b delta gamma", real=True)
    kappa, f_r = sp.symbols("kappa f_r", real=True)
    y = (v, beta, psidot, n, xi, F_d, F_b, delta, gamma)

    drag = sp.Rational(1, 2) * p.rho_a * p.A * p.c_w * v**2
    down = sp.Rational(1, 2) * p.rho_a * p.A * p.c_l * v**2
    roll = p.m * p.g * p.c_r
    a_x = (F_d + F_b - drag - roll) / p.m

    dxl = p.m * a_x * p.h_cog / p.l
    front = p.m * p.g * p.l_r / p.l + p.aero_split_front * down - dxl
    rear = p.m * p.g * p.l_f / p.l + (1.0 - p.aero_split_front) * down + dxl
    fz = [
        front / 2 - p.k_roll * gamma,          # fl
        front / 2 + p.k_roll * gamma,          # fr
        rear / 2 - (1.0 - p.k_roll) * gamma,   # rl
        rear / 2 + (1.0 - p.k_roll) * gamma,   # rr
    ]

    v_lat_f = v * sp.sin(beta) + p.l_f * psidot
    v_lat_r = -v * sp.sin(beta) + p.l_r * psidot
    v_lon = v * sp.cos(beta)
    alphas = [
        delta - sp.atan2(v_lat_f, v_lon - p.tw_f / 2 * psidot),
        delta - sp.atan2(v_lat_f, v_lon + p.tw_f / 2 * psidot),
        sp.atan2(v_lat_r, v_lon - p.tw_r / 2 * psidot),
        sp.atan2(v_lat_r, v_lon + p.tw_r / 2 * psidot),
    ]

    bb = p.brake_balance
    fx = [
        bb * F_b / 2,
        bb * F_b / 2,
        F_d / 2 + (1.0 - bb) * F_b / 2,
        F_d / 2 + (1.0 - bb) * F_b / 2,
    ]
    tires = (p.tire_front, p.tire_front, p.tire_rear, p.tire_rear)
    fy, grip = [], []
    for tire, z, alpha in zip(tires, fz, alphas):
        mu_z = tire.mu * (1.0 - tire.eps_mu * (z - tire.F_z0))
        b_a = tire.B * alpha
        arg = b_a - tire.E * (b_a - sp.atan(b_a))
        fy.append(mu_z * z * sp.sin(tire.C * sp.atan(arg)))
        grip.append(mu_z * z)

    L = (1 - n * kappa) / (v * sp.cos(xi + beta))
    cb, sb = sp.cos(beta), sp.sin(beta)
    cdb, sdb = sp.cos(delta - beta), sp.sin(delta - beta)
    cd, sd = sp.cos(delta), sp.sin(delta)
    f_resist = drag + roll
    f_par = ((fx[2] + fx[3]) * cb + (fx[0] + fx[1]) * cdb
             + (fy[2] + fy[3]) * sb - (fy[0] + fy[1]) * sdb
             - f_resist * cb)
    f_perp = (-(fx[2] + fx[3]) * sb + (fx[0] + fx[1]) * sdb
              + (fy[2] + fy[3]) * cb + (fy[0] + fy[1]) * cdb
              + f_resist * sb)
    moment = ((fx[3] - fx[2]) * p.tw_r / 2 - (fy[2] + fy[3]) * p.l_r
              + ((fx[1] - fx[0]) * cd + (fy[0] - fy[1]) * sd) * p.tw_f / 2
              + ((fy[0] + fy[1]) * cd + (fx[0] + fx[1]) * sd) * p.l_f)

    dyn = [
        L * f_par / p.m,
        L * (-psidot + f_perp / (p.m * v)),
        L * moment / p.I_z,
        L * v * sp.sin(xi + beta),
        L * psidot - kappa,
    ]
    ehat = (F_d + f_r * F_b) * v * L

    h1 = gamma - p.m * (v * psidot) * p.h_cog / p.tw_mean
    h2 = F_d * F_b
    g1 = [
        (fx_w**2 + fy_w**2 - grip_w**2) / (tire.mu * tire.F_z0) ** 2
        for fx_w, fy_w, grip_w, tire in zip(fx, fy, grip, tires)
    ]
    g2 = F_d * v - p.P_max

    return {
        "y": y, "kappa": kappa, "f_r": f_r,
        "dyn": dyn, "ehat": ehat, "L": L,
        "h1": h1, "h2": h2, "g1": g1, "g2": g2,
    }


def _build_block(exprs, y, extra_args):
    """Compile value/jacobian/contracted-hessian callables for one block."""
    n_out = len(exprs)
    args = list(y) + list(extra_args)
    value = _stacked(args, exprs)

    jac_exprs, jac_mask = [], np.zeros((n_out, N_Y), dtype=bool)
    for i, e in enumerate(exprs):
        for j, yj in enumerate(y):
            d = sp.diff(e, yj)
            jac_mask[i, j] = d is not sp.S.Zero
            jac_exprs.append(d)
    jac_flat = _stacked(args, jac_exprs)

    def jac(*vals):
        out = jac_flat(*vals)
        return out.reshape(n_out, N_Y, *out.shape[1:])

    lam = sp.symbols(f"lam0:{n_out}", real=True)
    scalar = sum(li * ei for li, ei in zip(lam, exprs))
    hess_rows, hess_cols, hess_exprs = [], [], []
    grads = [sp.diff(scalar, yj) for yj in y]
    for i in range(N_Y):
        for j in range(i, N_Y):
            d = sp.diff(grads[i], y[j])
            if d is not sp.S.Zero:
                hess_rows.append(i)
                hess_cols.append(j)
                hess_exprs.append(d)
    hess = _stacked(args + list(lam), hess_exprs)
    return Block(
        n_out=n_out, value=value, jac=jac, hess=hess,
        jac_mask=jac_mask,
        hess_rows=np.array(hess_rows, dtype=np.int64),
        hess_cols=np.array(hess_cols, dtype=np.int64),
    )


def build_blocks(params: VehicleParams):
    """(Block A, Block B) for a vehicle, memoized on the parameter set."""
    if params in _cache:
        return _cache[params]
    m = _symbolic_model(params)
    y, kappa, f_r = m["y"], m["kappa"], m["f_r"]
    block_a = _build_block(m["dyn"] + [m["ehat"], m["L"]], y, (kappa, f_r))
    block_b = _build_block(
        [m["h1"], m["h2"], *m["g1"], m["g2"], m["L"]], y, (kappa,)
    )
    _cache[params] = (block_a, block_b)
    return block_a, block_b
