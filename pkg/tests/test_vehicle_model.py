"""Double-track vehicle model: kinematics, loads, tire forces, dynamics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import fsolve

from minlap import vehicle_model as vm
from minlap.vehicle_model import ControlVector, StateVector


@pytest.fixture(scope="module")
def params():
    return vm.VehicleParams()


# ---------------------------------------------------------------- sdot / L


def test_sdot_straight_identity():
    assert vm.sdot(10.0, 0.0, 0.0, 0.0, 0.0) == pytest.approx(10.0)


def test_sdot_heading_projection():
    assert vm.sdot(10.0, 0.0, math.pi / 3.0, 0.0, 0.0) == pytest.approx(5.0)


def test_sdot_offset_scaling():
    assert vm.sdot(10.0, 0.0, 0.0, 50.0, 0.01) == pytest.approx(20.0)


def test_sdot_singularity():
    with pytest.raises(vm.ModelDomainError):
        vm.sdot(10.0, 0.0, 0.0, 100.0, 0.01)


def test_lagrangian_values():
    assert vm.lagrangian(10.0, 0.0, 0.0, 0.0, 0.0) == pytest.approx(0.1)
    assert vm.lagrangian(20.0, 0.0, 0.0, 50.0, 0.01) == pytest.approx(0.025)


def test_lagrangian_singular_speed():
    with pytest.raises(vm.ModelDomainError):
        vm.lagrangian(0.0, 0.0, 0.0, 0.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(
    v=st.floats(min_value=1.0, max_value=100.0),
    ang=st.floats(min_value=-1.2, max_value=1.2),
    n=st.floats(min_value=-4.0, max_value=4.0),
    kappa=st.floats(min_value=-0.03, max_value=0.03),
)
def test_lagrangian_sdot_product(v, ang, n, kappa):
    # L * sdot = 1 for any admissible state
    prod = vm.lagrangian(v, 0.5 * ang, 0.5 * ang, n, kappa) * vm.sdot(
        v, 0.5 * ang, 0.5 * ang, n, kappa
    )
    assert prod == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- loads


def test_static_axle_split(params):
    x = StateVector(v=0.001)
    u = ControlVector()
    loads = vm.wheel_loads(x, u, 0.0, 0.0, params)
    front = loads.fl + loads.fr
    expected = params.m * params.g * (params.l - params.l_f) / params.l
    assert front == pytest.approx(expected, rel=1e-6)
    assert loads.fl == pytest.approx(loads.fr)


def test_zero_ay_means_zero_pi(params):
    loads = vm.wheel_loads(StateVector(v=20.0), ControlVector(), 1.0, 0.0, params)
    assert loads.pi == 0.0


def test_mirror_symmetry_of_loads(params):
    x = StateVector(v=30.0)
    u = ControlVector()
    a = vm.wheel_loads(x, u, 0.5, 6.0, params)
    b = vm.wheel_loads(x, u, 0.5, -6.0, params)
    assert a.fl == pytest.approx(b.fr)
    assert a.rl == pytest.approx(b.rr)


def test_load_sum_invariant(params):
    x = StateVector(v=40.0)
    u = ControlVector(F_d=3000.0)
    loads = vm.wheel_loads(x, u, 1.5, 8.0, params)
    total = loads.fl + loads.fr + loads.rl + loads.rr
    expected = params.m * params.g + params.downforce(40.0)
    assert total == pytest.approx(expected, rel=1e-6)


def test_wheel_lift_raises(params):
    with pytest.raises(vm.ModelDomainError, match="wheel lift"):
        vm.wheel_loads(StateVector(v=1.0), ControlVector(), 0.0, 80.0, params)


# ---------------------------------------------------------------- tires


def test_zero_slip_zero_drive_gives_zero_forces(params):
    x = StateVector(v=25.0)
    u = ControlVector()
    loads = vm.wheel_loads(x, u, 0.0, 0.0, params)
    tf = vm.tire_forces(x, u, loads, params)
    assert np.allclose(tf.fx, 0.0)
    assert np.allclose(tf.fy, 0.0, atol=1e-9)


def test_magic_formula_odd_symmetry(params):
    t = params.tire_front
    for alpha in (0.01, 0.05, 0.2):
        assert vm.magic_fy(t, 3000.0, -alpha) == pytest.approx(
            -vm.magic_fy(t, 3000.0, alpha)
        )


def test_small_slip_linearity(params):
    # oracle: finite-difference slope of the implemented formula at alpha=1e-4
    # must match the analytic cornering stiffness B*C*mu(F_z0)*F_z0 within 0.1%
    t = params.tire_front
    alpha = 1e-4
    slope_fd = vm.magic_fy(t, t.F_z0, alpha) / alpha
    slope_analytic = t.B * t.C * t.mu_at(t.F_z0) * t.F_z0
    assert slope_fd == pytest.approx(slope_analytic, rel=1e-3)


def test_utilization_scale_invariance():
    # u = sqrt(fx^2+fy^2)/(mu Fz) is invariant when fx, fy and mu*Fz scale together
    fx, fy, grip = 1200.0, 2400.0, 4000.0
    u1 = math.hypot(fx, fy) / grip
    c = 3.7
    u2 = math.hypot(c * fx, c * fy) / (c * grip)
    assert u1 == pytest.approx(u2, rel=1e-12)


def test_drive_force_goes_to_rear(params):
    x = StateVector(v=20.0)
    u = ControlVector(F_d=4000.0)
    loads = vm.wheel_loads(x, u, 0.0, 0.0, params)
    tf = vm.tire_forces(x, u, loads, params)
    assert tf.fx[0] == 0.0 and tf.fx[1] == 0.0
    assert tf.fx[2] == pytest.approx(2000.0)
    assert tf.fx[3] == pytest.approx(2000.0)


def test_brake_balance_split(params):
    x = StateVector(v=20.0)
    u = ControlVector(F_b=-1000.0)
    loads = vm.wheel_loads(x, u, -1.0, 0.0, params)
    tf = vm.tire_forces(x, u, loads, params)
    front = tf.fx[0] + tf.fx[1]
    assert front == pytest.approx(params.brake_balance * u.F_b)


# ---------------------------------------------------------------- dynamics


def test_straight_line_equilibrium(params):
    v = 30.0
    f_eq = params.drag(v) + params.rolling_force()
    x = StateVector(v=v)
    u = ControlVector(F_d=f_eq)
    dx = vm.dynamics(x, u, 0.0, params)
    assert dx[0] == pytest.approx(0.0, abs=1e-12)  # dv/ds
    assert dx[3] == pytest.approx(0.0, abs=1e-12)  # dn/ds
    assert dx[4] == pytest.approx(0.0, abs=1e-12)  # dxi/ds


@settings(max_examples=40, deadline=None)
@given(
    v=st.floats(min_value=5.0, max_value=60.0),
    beta=st.floats(min_value=-0.2, max_value=0.2),
    xi=st.floats(min_value=-0.4, max_value=0.4),
    n=st.floats(min_value=-4.0, max_value=4.0),
    kappa=st.floats(min_value=-0.03, max_value=0.03),
)
def test_dn_identity(v, beta, xi, n, kappa):
    # dn/ds = tan(xi+beta) * (1 - n*kappa) for any admissible state
    x = StateVector(v=v, beta=beta, n=n, xi=xi)
    u = ControlVector(F_d=500.0, delta=0.05, gamma=200.0)
    dx = vm.dynamics(x, u, kappa, params=vm.VehicleParams())
    assert dx[3] == pytest.approx(math.tan(xi + beta) * (1.0 - n * kappa), rel=1e-9, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    v=st.floats(min_value=5.0, max_value=60.0),
    beta=st.floats(min_value=-0.1, max_value=0.1),
    psidot=st.floats(min_value=-0.8, max_value=0.8),
    n=st.floats(min_value=-3.0, max_value=3.0),
    xi=st.floats(min_value=-0.3, max_value=0.3),
    delta=st.floats(min_value=-0.2, max_value=0.2),
    gamma=st.floats(min_value=-3000.0, max_value=3000.0),
    kappa=st.floats(min_value=-0.02, max_value=0.02),
    fd=st.floats(min_value=0.0, max_value=5000.0),
)
def test_mirror_symmetry_of_dynamics(v, beta, psidot, n, xi, delta, gamma, kappa, fd):
    p = vm.VehicleParams()
    u1 = ControlVector(F_d=fd, F_b=0.0, delta=delta, gamma=gamma)
    u2 = ControlVector(F_d=fd, F_b=0.0, delta=-delta, gamma=-gamma)
    x1 = StateVector(v=v, beta=beta, psidot=psidot, n=n, xi=xi)
    x2 = StateVector(v=v, beta=-beta, psidot=-psidot, n=-n, xi=-xi)
    d1 = vm.dynamics(x1, u1, kappa, p)
    d2 = vm.dynamics(x2, u2, -kappa, p)
    assert d2[0] == pytest.approx(d1[0], rel=1e-9, abs=1e-9)   # dv preserved
    for i in (1, 2, 3, 4):
        assert d2[i] == pytest.approx(-d1[i], rel=1e-9, abs=1e-9)


def _trim_circular(params, kappa, v):
    """Solve controls/attitude for steady cornering at speed v on curvature kappa."""
    psidot = kappa * v

    def resid(z):
        beta, delta, f_d, gamma = z
        x = StateVector(v=v, beta=beta, psidot=psidot, n=0.0, xi=-beta)
        u = ControlVector(F_d=f_d, F_b=0.0, delta=delta, gamma=gamma)
        dx = vm.dynamics(x, u, kappa, params)
        pi = vm.lateral_transfer(x, params)
        return [dx[0], dx[1], dx[2], gamma - pi]

    guess = [0.0, math.atan(params.l * kappa), params.drag(v) + params.rolling_force(), 0.0]
    sol, info, ier, msg = fsolve(resid, guess, full_output=True)
    assert ier == 1, msg
    return sol


def test_steady_circular_cornering_closes(params):
    # oracle: high-order adaptive integration of the implemented dynamics over
    # one full circle; the lateral offset must return to ~0
    kappa = 0.02
    v = 10.0
    beta, delta, f_d, gamma = _trim_circular(params, kappa, v)
    assert delta == pytest.approx(math.atan(params.l * kappa), abs=0.05)
    u = ControlVector(F_d=f_d, F_b=0.0, delta=delta, gamma=gamma)

    def rhs(s, y):
        x = StateVector(v=y[0], beta=y[1], psidot=y[2], n=y[3], xi=y[4])
        return vm.dynamics(x, u, kappa, params)

    y0 = [v, beta, kappa * v, 0.0, -beta]
    s_end = 2.0 * math.pi / kappa
    sol = solve_ivp(rhs, (0.0, s_end), y0, method="DOP853", rtol=1e-10, atol=1e-12)
    assert sol.success
    assert abs(sol.y[3, -1]) < 0.05  # n returns to start


# ---------------------------------------------------------------- params IO


def test_vehicle_yaml_roundtrip(tmp_path, params):
    p = tmp_path / "veh.yaml"
    vm.save_vehicle(p, params)
    back = vm.load_vehicle(p)
    assert back == params


def test_vehicle_partial_override(tmp_path):
    p = tmp_path / "veh.yaml"
    p.write_text("m: 900.0\nP_max: 250000.0\ntire_front:\n  mu: 1.5\n")
    v = vm.load_vehicle(p)
    assert v.m == 900.0
    assert v.P_max == 250000.0
    assert v.tire_front.mu == 1.5
    assert v.tire_rear.mu == 1.4  # untouched default


def test_vehicle_unknown_key_rejected(tmp_path):
    p = tmp_path / "veh.yaml"
    p.write_text("mass: 900.0\n")
    with pytest.raises(ValueError, match="unknown vehicle keys"):
        vm.load_vehicle(p)


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        vm.VehicleParams(m=-1.0)
    with pytest.raises(ValueError):
        vm.VehicleParams(F_b_min=100.0)
    with pytest.raises(ValueError):
        vm.VehicleParams(delta_min=0.1)
