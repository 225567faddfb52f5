"""Generated kernels must agree with the reference numeric model."""

import numpy as np
import pytest

from minlap import codegen as cg
from minlap import vehicle_model as vm


@pytest.fixture(scope="module")
def blocks():
    return cg.build_blocks(vm.VehicleParams())


@pytest.fixture(scope="module")
def params():
    return vm.VehicleParams()


def _random_points(rng, n):
    """Admissible-ish state/control samples away from model singularities."""
    v = rng.uniform(8.0, 60.0, n)
    beta = rng.uniform(-0.15, 0.15, n)
    psidot = rng.uniform(-0.8, 0.8, n)
    nn = rng.uniform(-2.0, 2.0, n)
    xi = rng.uniform(-0.3, 0.3, n)
    f_d = rng.uniform(0.0, 7000.0, n)
    f_b = rng.uniform(-8000.0, 0.0, n)
    delta = rng.uniform(-0.25, 0.25, n)
    gamma = rng.uniform(-3000.0, 3000.0, n)
    kappa = rng.uniform(-0.03, 0.03, n)
    return v, beta, psidot, nn, xi, f_d, f_b, delta, gamma, kappa


def test_block_a_matches_numeric_dynamics(blocks, params):
    block_a, _ = blocks
    rng = np.random.default_rng(11)
    pts = _random_points(rng, 40)
    f_r = np.full(40, 0.4)
    vals = block_a.value(*pts, f_r)
    for i in range(40):
        x = vm.StateVector(*[pts[j][i] for j in range(5)])
        u = vm.ControlVector(*[pts[j][i] for j in range(5, 9)])
        kap = pts[9][i]
        dx = vm.dynamics(x, u, kap, params)
        lag = vm.lagrangian(x.v, x.beta, x.xi, x.n, kap)
        ehat = (u.F_d + 0.4 * u.F_b) * x.v * lag
        assert np.allclose(vals[cg.A_DYN, i], dx, rtol=0, atol=1e-10 * max(1, np.abs(dx).max()))
        assert vals[cg.A_EHAT, i] == pytest.approx(ehat, rel=1e-12, abs=1e-12)
        assert vals[cg.A_LAG, i] == pytest.approx(lag, rel=1e-12)


def test_block_b_matches_numeric_constraints(blocks, params):
    _, block_b = blocks
    rng = np.random.default_rng(12)
    pts = _random_points(rng, 40)
    vals = block_b.value(*pts)
    for i in range(40):
        x = vm.StateVector(*[pts[j][i] for j in range(5)])
        u = vm.ControlVector(*[pts[j][i] for j in range(5, 9)])
        pi = vm.lateral_transfer(x, params)
        assert vals[cg.B_H1, i] == pytest.approx(u.gamma - pi, rel=1e-12, abs=1e-9)
        assert vals[cg.B_H2, i] == pytest.approx(u.F_d * u.F_b, rel=1e-12, abs=1e-9)
        assert vals[cg.B_G2, i] == pytest.approx(u.F_d * x.v - params.P_max,
                                                 rel=1e-12, abs=1e-6)
        assert vals[cg.B_LAG, i] == pytest.approx(
            vm.lagrangian(x.v, x.beta, x.xi, x.n, pts[9][i]), rel=1e-12)


def test_block_b_ellipse_sign_matches_utilization(blocks, params):
    """The squared ellipse residual and the utilization ratio agree in sign
    wherever every wheel carries positive load."""
    _, block_b = blocks
    rng = np.random.default_rng(13)
    pts = _random_points(rng, 200)
    vals = block_b.value(*pts)
    checked = 0
    for i in range(200):
        x = vm.StateVector(*[pts[j][i] for j in range(5)])
        u = vm.ControlVector(*[pts[j][i] for j in range(5, 9)])
        a_x = vm.longitudinal_acceleration(x, u, params)
        # same load path as the dynamics: gamma is the lateral transfer
        loads = vm._loads_from_transfer(x, u.gamma, a_x, params)
        f_z = loads.as_array()
        if np.any(f_z <= 50.0):
            continue
        checked += 1
        forces = vm.tire_forces(x, u, loads, params)
        for w in range(4):
            g_sq = vals[cg.B_G1][w, i]
            util = forces.utilization[w]
            if util > 1.0 + 1e-9:
                assert g_sq > 0.0
            elif util < 1.0 - 1e-9:
                assert g_sq < 0.0
    assert checked > 100


def _fd_jacobian(fn, args, idx, h):
    hi = list(args)
    lo = list(args)
    hi[idx] = args[idx] + h
    lo[idx] = args[idx] - h
    return (fn(*hi) - fn(*lo)) / (2 * h)


@pytest.mark.parametrize("which", ["a", "b"])
def test_jacobians_match_finite_differences(blocks, which):
    block_a, block_b = blocks
    rng = np.random.default_rng(14)
    pts = _random_points(rng, 20)
    if which == "a":
        block, args = block_a, list(pts) + [np.full(20, 0.3)]
    else:
        block, args = block_b, list(pts)
    jac = block.jac(*args)
    worst = 0.0
    for idx in range(cg.N_Y):
        h = 1e-5 * max(1.0, np.abs(args[idx]).max())
        fd = _fd_jacobian(block.value, args, idx, h)
        err = np.abs(jac[:, idx, :] - fd) / np.maximum(1.0, np.abs(fd))
        worst = max(worst, err.max())
    assert worst < 1e-4


@pytest.mark.parametrize("which", ["a", "b"])
def test_jacobian_mask_is_superset(blocks, which):
    block_a, block_b = blocks
    rng = np.random.default_rng(15)
    pts = _random_points(rng, 30)
    if which == "a":
        block, args = block_a, list(pts) + [np.full(30, 0.7)]
    else:
        block, args = block_b, list(pts)
    jac = block.jac(*args)
    outside = jac[~block.jac_mask]
    assert np.all(outside == 0.0)


@pytest.mark.parametrize("which", ["a", "b"])
def test_hessian_matches_finite_differences(blocks, which):
    block_a, block_b = blocks
    rng = np.random.default_rng(16)
    n = 10
    pts = _random_points(rng, n)
    if which == "a":
        block = block_a
        args = list(pts) + [np.full(n, 0.3)]
        mults = [rng.standard_normal(n) for _ in range(block.n_out)]
    else:
        block = block_b
        args = list(pts)
        mults = [rng.standard_normal(n) for _ in range(block.n_out)]

    def contracted_grad(*a):
        jac = block.jac(*a)
        out = np.zeros((cg.N_Y, n))
        for r in range(block.n_out):
            out += mults[r][None, :] * jac[r]
        return out

    hv = block.hess(*args, *mults)
    dense = np.zeros((cg.N_Y, cg.N_Y, n))
    for e, (i, j) in enumerate(zip(block.hess_rows, block.hess_cols)):
        dense[i, j] += hv[e]
        if i != j:
            dense[j, i] += hv[e]
    worst = 0.0
    for idx in range(cg.N_Y):
        h = 1e-5 * max(1.0, np.abs(args[idx]).max())
        fd = _fd_jacobian(contracted_grad, args, idx, h)
        err = np.abs(dense[:, idx, :] - fd) / np.maximum(1.0, np.abs(fd))
        worst = max(worst, err.max())
    assert worst < 1e-4


def test_build_blocks_is_memoized():
    p = vm.VehicleParams()
    a1, b1 = cg.build_blocks(p)
    a2, b2 = cg.build_blocks(vm.VehicleParams())
    assert a1 is a2 and b1 is b2
