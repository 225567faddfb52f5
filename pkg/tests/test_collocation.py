"""Transcription tests: basis exactness, layout arithmetic, derivatives,
sparsity honesty, guess postconditions and trajectory extraction."""

import numpy as np
import pytest
import scipy.sparse as sps

from minlap import ocp_core
from minlap import synthetic
from minlap import track_model as tm
from minlap.collocation import (
    CollocationScheme,
    ExtractionError,
    Grid,
    Trajectory,
    TranscriptionError,
    collocation_coeffs,
    extract_solution,
    guess_into,
    initial_guess,
    time_from_stages,
    transcribe,
)
from minlap.ocp_core import ContinuousOcp, EnergyConfig, OcpConfig
from minlap.vehicle_model import VehicleParams


def _ocp(track, **cfg_kwargs):
    cfg_kwargs.setdefault("ds", track.ds)
    cfg = OcpConfig(**cfg_kwargs)
    return ocp_core.assemble(track, VehicleParams(), cfg)


@pytest.fixture(scope="module")
def small_circle():
    return tm.build_track(synthetic.circle_track(radius=100.0, n_points=24,
                                                 width=6.0), 5.0)


@pytest.fixture(scope="module")
def small_problem(small_circle):
    ocp = _ocp(small_circle, energy=EnergyConfig.from_kwh(1.0, f_r=0.0))
    return transcribe(ocp, Grid.from_track(small_circle))


# ------------------------------------------------------------------- basis


class TestBasis:
    def test_legendre_points_d2(self):
        sch = collocation_coeffs(2, "legendre")
        s3 = np.sqrt(3.0)
        assert np.allclose(sch.tau, [(3 - s3) / 6, (3 + s3) / 6], atol=1e-14)
        assert np.allclose(sch.B, [0.0, 0.5, 0.5], atol=1e-14)

    def test_radau_points_d2(self):
        sch = collocation_coeffs(2, "radau")
        assert np.allclose(sch.tau, [1.0 / 3.0, 1.0], atol=1e-12)
        assert np.allclose(sch.B, [0.0, 0.75, 0.25], atol=1e-12)

    @pytest.mark.parametrize("scheme,d", [("legendre", 1), ("legendre", 2),
                                          ("legendre", 3), ("radau", 2),
                                          ("radau", 3)])
    def test_differentiation_exact_for_interpolants(self, scheme, d):
        # the C matrix differentiates any polynomial of degree <= d exactly
        sch = collocation_coeffs(d, scheme)
        pts = np.concatenate([[0.0], sch.tau])
        rng = np.random.default_rng(d)
        coeffs = rng.standard_normal(d + 1)
        poly = np.poly1d(coeffs)
        values = poly(pts)
        deriv = poly.deriv()
        for j in range(d):
            approx = float(values @ sch.C[:, j])
            assert approx == pytest.approx(deriv(sch.tau[j]), abs=1e-11)
        assert float(values @ sch.D) == pytest.approx(poly(1.0), abs=1e-12)

    def _endpoint_by_collocation(self, sch, d, rhs_poly):
        # solve the one-interval collocation system for dx/dt = p(t), x(0)=0
        A = sch.C[1:, :].T                      # (d, d)
        b = rhs_poly(sch.tau)                    # C[0,:] * x0 drops out, x0=0
        xc = np.linalg.solve(A, b)
        return float(np.concatenate([[0.0], xc]) @ sch.D)

    def test_legendre_order_2d_minus_1(self):
        # integrating a polynomial RHS of degree <= 2d-1 is exact
        d = 2
        sch = collocation_coeffs(d, "legendre")
        rng = np.random.default_rng(0)
        exact_poly = np.poly1d(rng.standard_normal(2 * d))  # degree 2d-1
        got = self._endpoint_by_collocation(sch, d, exact_poly)
        want = exact_poly.integ()(1.0)
        assert got == pytest.approx(want, abs=1e-13)
        # degree 2d breaks exactness
        hard = np.poly1d(np.ones(2 * d + 1))
        got = self._endpoint_by_collocation(sch, d, hard)
        assert abs(got - hard.integ()(1.0)) > 1e-6

    def test_radau_order_2d_minus_2(self):
        d = 2
        sch = collocation_coeffs(d, "radau")
        rng = np.random.default_rng(1)
        poly = np.poly1d(rng.standard_normal(2 * d - 1))    # degree 2d-2
        got = self._endpoint_by_collocation(sch, d, poly)
        assert got == pytest.approx(poly.integ()(1.0), abs=1e-13)
        hard = np.poly1d(np.ones(2 * d))                     # degree 2d-1
        got = self._endpoint_by_collocation(sch, d, hard)
        assert abs(got - hard.integ()(1.0)) > 1e-6

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            Grid(n_intervals=1, ds=5.0)
        with pytest.raises(ValueError):
            Grid(n_intervals=10, ds=-1.0)
        with pytest.raises(ValueError):
            Grid(n_intervals=10, ds=5.0, scheme="simpson")
        with pytest.raises(ValueError):
            Grid(n_intervals=10, ds=5.0, d=0)


# ------------------------------------------------------------------ layout


class TestLayout:
    def test_decision_vector_arithmetic(self):
        # 200 intervals, d = 2: (5 + 10 + 4 + 1) * 200 = 4000 variables
        track = tm.build_track(
            synthetic.circle_track(radius=159.154943, n_points=240,
                                   width=6.0), 5.0)
        assert track.n_nodes == 200
        ocp = _ocp(track)
        prob = transcribe(ocp, Grid.from_track(track))
        assert prob.n == 4000
        assert prob.m == 27 * 200

    def test_cyclic_links_last_interval_to_first_node(self, small_problem):
        meta = small_problem.meta
        n_last = meta["cont_rows"][meta["N"] - 1]
        first_state_cols = set(meta["x_idx"][0].tolist())
        pattern = set()
        for r, c in zip(small_problem.jac_rows, small_problem.jac_cols):
            if r in set(n_last.tolist()):
                pattern.add(int(c))
        # the five wrap-around continuity rows each touch x_0
        assert first_state_cols <= pattern

    def test_fixed_open_sizes(self):
        track = tm.build_track(synthetic.straight_track(length=500.0,
                                                        n_points=26), 5.0)
        ocp = _ocp(track, boundary="fixed",
                   fixed_initial_state=[15.0, 0.0, 0.0, 0.0, 0.0])
        prob = transcribe(ocp, Grid.from_track(track))
        n_iv = track.n_nodes - 1
        assert prob.n == 20 * n_iv + 5
        assert prob.m == 27 * n_iv - 4
        # initial state pinned by bounds
        x0_cols = prob.meta["x_idx"][0]
        assert np.allclose(prob.lb[x0_cols], prob.ub[x0_cols])

    def test_trapezoidal_sizes(self, small_circle):
        ocp = _ocp(small_circle)
        prob = transcribe(ocp, Grid.from_track(small_circle,
                                               scheme="trapezoidal"))
        n_iv = small_circle.n_nodes
        assert prob.n == 10 * n_iv
        assert prob.m == 17 * n_iv

    def test_energy_budget_is_terminal_bound(self, small_circle):
        budget = EnergyConfig.from_kwh(1.25, f_r=0.0)
        ocp = _ocp(small_circle, energy=budget)
        prob = transcribe(ocp, Grid.from_track(small_circle))
        meta = prob.meta
        e_last = meta["e_idx"][meta["N"] - 1]
        scaled = prob.ub[e_last] * meta["var_scale"][e_last]
        assert scaled == pytest.approx(budget.budget_j, rel=1e-12)
        # no budget -> unbounded above (scaled box still effectively open)
        prob2 = transcribe(_ocp(small_circle), Grid.from_track(small_circle))
        assert prob2.ub[prob2.meta["e_idx"][-1]] > 1e12

    def test_mismatched_grid_refused(self, small_circle):
        ocp = _ocp(small_circle)
        with pytest.raises(TranscriptionError):
            transcribe(ocp, Grid(n_intervals=small_circle.n_nodes + 3,
                                 ds=small_circle.ds))
        with pytest.raises(TranscriptionError):
            transcribe(ocp, Grid(n_intervals=small_circle.n_nodes,
                                 ds=small_circle.ds * 2.0))

    def test_cyclic_on_open_track_refused(self):
        track = tm.build_track(synthetic.straight_track(length=500.0,
                                                        n_points=26), 5.0)
        ocp = _ocp(track)  # default boundary is cyclic
        with pytest.raises(TranscriptionError):
            transcribe(ocp, Grid.from_track(track))


# ------------------------------------------------------------- quadrature


class TestQuadrature:
    def test_constant_speed_objective_on_straight(self):
        # 1000 m at a constant 50 m/s on the centerline: T = 20 s exactly
        track = tm.build_track(synthetic.straight_track(length=1000.0,
                                                        n_points=201), 5.0)
        ocp = _ocp(track, boundary="fixed",
                   fixed_initial_state=[50.0, 0.0, 0.0, 0.0, 0.0])
        prob = transcribe(ocp, Grid.from_track(track))
        z = guess_into(prob, v0=50.0, mode="corner-cap")
        assert prob.objective(z) == pytest.approx(20.0, abs=1e-10)

    def test_doubling_speed_halves_time(self, small_circle):
        ocp = _ocp(small_circle)
        prob = transcribe(ocp, Grid.from_track(small_circle))
        z25 = guess_into(prob, v0=25.0, a_y_max=1e9, mode="corner-cap")
        z50 = guess_into(prob, v0=50.0, a_y_max=1e9, mode="corner-cap")
        assert prob.objective(z25) == pytest.approx(2.0 * prob.objective(z50),
                                                    rel=1e-12)


# ------------------------------------------------------------- derivatives


def _fd_dir_errors(prob, z, rng, n_dirs=2, h=1e-6):
    g = prob.gradient(z)
    J = prob.jacobian(z)
    lam = rng.standard_normal(prob.m)
    hd = prob.hessian(z, lam, 0.5)
    H = sps.coo_matrix((hd, (prob.hess_rows, prob.hess_cols)),
                       shape=(prob.n, prob.n)).tocsc()
    Hfull = H + H.T - sps.diags(H.diagonal())

    def lag_grad(zz):
        return 0.5 * prob.gradient(zz) + prob.jacobian(zz).T @ lam

    worst = np.zeros(3)
    for _ in range(n_dirs):
        dz = rng.standard_normal(prob.n)
        dz /= np.linalg.norm(dz)
        fg = (prob.objective(z + h * dz) - prob.objective(z - h * dz)) / (2 * h)
        fc = (prob.constraints(z + h * dz) - prob.constraints(z - h * dz)) / (2 * h)
        fh = (lag_grad(z + h * dz) - lag_grad(z - h * dz)) / (2 * h)
        worst[0] = max(worst[0], abs(fg - g @ dz) / max(1.0, abs(g @ dz)))
        worst[1] = max(worst[1],
                       np.abs(fc - J @ dz).max() / max(1.0, np.abs(J @ dz).max()))
        worst[2] = max(worst[2],
                       np.abs(fh - Hfull @ dz).max() / max(1.0, np.abs(Hfull @ dz).max()))
    return worst


class TestDerivatives:
    @pytest.mark.parametrize("scheme", ["legendre", "radau", "trapezoidal"])
    def test_directional_derivatives(self, small_circle, scheme):
        ocp = _ocp(small_circle, energy=EnergyConfig.from_kwh(1.0, f_r=0.4))
        prob = transcribe(ocp, Grid.from_track(small_circle, scheme=scheme))
        rng = np.random.default_rng(3)
        z = guess_into(prob) + 0.01 * rng.standard_normal(prob.n)
        z = np.clip(z, prob.lb + 1e-6, prob.ub - 1e-6)
        worst = _fd_dir_errors(prob, z, rng)
        assert worst[0] < 1e-6 and worst[1] < 1e-6 and worst[2] < 1e-6

    def test_no_nonzeros_outside_declared_pattern(self, small_problem):
        # 200 random single-variable probes: every constraint that moves
        # must list that variable in its declared jacobian column pattern
        prob = small_problem
        cols_of_row = {}
        for r, c in zip(prob.jac_rows, prob.jac_cols):
            cols_of_row.setdefault(int(r), set()).add(int(c))
        rng = np.random.default_rng(4)
        z = guess_into(prob)
        z = np.clip(z + 0.01 * rng.standard_normal(prob.n),
                    prob.lb + 1e-6, prob.ub - 1e-6)
        c0 = prob.constraints(z)
        for col in rng.choice(prob.n, size=200, replace=False):
            zp = z.copy()
            zp[col] += 1e-4
            moved = np.flatnonzero(np.abs(prob.constraints(zp) - c0) > 1e-12)
            for row in moved:
                assert int(col) in cols_of_row.get(int(row), set()), \
                    f"undeclared jacobian entry ({row}, {col})"

    def test_hessian_structure_is_upper_triangle(self, small_problem):
        assert np.all(small_problem.hess_rows <= small_problem.hess_cols)


# ------------------------------------------------------------------- guess


class TestInitialGuess:
    def test_guess_respects_bounds(self, small_problem):
        z = guess_into(small_problem)
        assert np.all(z >= small_problem.lb - 1e-12)
        assert np.all(z <= small_problem.ub + 1e-12)

    def test_speed_clipped_by_lateral_cap(self, small_circle):
        # R = 100 m, a_y_max = 14: the cap is sqrt(1400) ~ 37.4 m/s
        ocp = _ocp(small_circle)
        prob = transcribe(ocp, Grid.from_track(small_circle))
        z = initial_guess(ocp, Grid.from_track(small_circle), v0=50.0,
                          a_y_max=14.0, mode="corner-cap")
        xp = z * prob.meta["var_scale"]
        v_nodes = xp[prob.meta["x_idx"][: prob.meta["N"], 0]]
        kappa = prob.meta["kappa_nodes"]
        cap = np.sqrt(14.0 / np.abs(kappa))
        assert np.all(v_nodes <= cap + 1e-9)
        assert np.allclose(v_nodes, np.minimum(50.0, cap), atol=1e-9)
        assert v_nodes[0] == pytest.approx(np.sqrt(14.0 * 100.0), rel=5e-3)

    def test_guess_below_cap_keeps_default(self, small_circle):
        ocp = _ocp(small_circle)
        grid = Grid.from_track(small_circle)
        prob = transcribe(ocp, grid)
        z = initial_guess(ocp, grid, v0=20.0, a_y_max=14.0, mode="corner-cap")
        xp = z * prob.meta["var_scale"]
        v_nodes = xp[prob.meta["x_idx"][: prob.meta["N"], 0]]
        assert np.allclose(v_nodes, 20.0)

    @pytest.mark.parametrize("mode", ["oracle", "corner-cap"])
    def test_guess_controls(self, small_problem, mode):
        xp = guess_into(small_problem, mode=mode) \
            * small_problem.meta["var_scale"]
        u = xp[small_problem.meta["u_idx"]]
        x = xp[small_problem.meta["x_idx"][: small_problem.meta["N"]]]
        p = VehicleParams()
        kap = small_problem.meta["kappa_nodes"]
        assert np.all(u[:, 0] >= 0.0)          # drive force forward
        assert np.all(u[:, 1] <= 0.0)          # brake force backward
        assert np.allclose(u[:, 0] * u[:, 1], 0.0)  # never both at once
        assert np.allclose(u[:, 2], np.arctan(p.l * kap), atol=1e-12)
        # lateral transfer matched to the steady state: m*v*psidot*h/tw
        gamma_ss = p.m * x[:, 0] * x[:, 2] * p.h_cog / p.tw_mean
        assert np.allclose(u[:, 3], gamma_ss, atol=1e-9)

    def test_oracle_guess_honours_fixed_start_speed(self):
        track = tm.build_track(synthetic.straight_track(length=500.0,
                                                        n_points=101), 5.0)
        ocp = _ocp(track, boundary="fixed",
                   fixed_initial_state=[30.0, 0.0, 0.0, 0.0, 0.0])
        prob = transcribe(ocp, Grid.from_track(track))
        xp = guess_into(prob, mode="oracle") * prob.meta["var_scale"]
        v_nodes = xp[prob.meta["x_idx"][:, 0]]
        assert v_nodes[0] == pytest.approx(30.0)
        # the point-mass profile accelerates off the start on a straight
        assert v_nodes[1] > 30.0

    def test_unknown_guess_mode_rejected(self, small_problem):
        with pytest.raises(ValueError, match="guess mode"):
            guess_into(small_problem, mode="optimistic")

    def test_guess_energy_accumulates_forward(self, small_problem):
        xp = guess_into(small_problem) * small_problem.meta["var_scale"]
        e = xp[small_problem.meta["e_idx"]]
        assert np.all(np.diff(e) >= -1e-9)
        assert e[-1] > 0.0


# -------------------------------------------------------------- extraction


class _FakeResult:
    def __init__(self, x, status="optimal"):
        self.x = x
        self.status = status


class TestExtraction:
    def test_roundtrip_from_guess(self, small_circle, small_problem):
        z = guess_into(small_problem)
        traj = extract_solution(small_problem, _FakeResult(z), small_circle)
        assert isinstance(traj, Trajectory)
        n_rows = small_problem.meta["N"] + 1
        assert traj.s.shape == (n_rows,)
        assert traj.states.shape == (n_rows, 5)
        assert traj.time[0] == 0.0
        assert traj.energy[0] == 0.0
        # cumulative time reproduces the transcribed objective exactly
        assert traj.lap_time == pytest.approx(small_problem.objective(z),
                                              abs=1e-9)
        assert time_from_stages(traj) == pytest.approx(traj.lap_time,
                                                       abs=1e-9)
        # path inside the corridor
        half = 0.5 * VehicleParams().vehicle_width
        wr = small_circle.w_right
        wl = small_circle.w_left
        n = traj.states[:-1, 3]
        assert np.all(n <= wl - half + 1e-9)
        assert np.all(n >= -(wr - half) - 1e-9)
        # closing row repeats node zero
        assert np.allclose(traj.states[-1], traj.states[0])
        assert traj.s[-1] == pytest.approx(small_circle.total_length)

    def test_power_is_drive_force_times_speed(self, small_circle,
                                              small_problem):
        z = guess_into(small_problem)
        traj = extract_solution(small_problem, _FakeResult(z), small_circle)
        assert np.allclose(traj.power,
                           traj.controls[:, 0] * traj.states[:, 0])

    def test_diverged_result_refused(self, small_circle, small_problem):
        z = guess_into(small_problem)
        with pytest.raises(ExtractionError):
            extract_solution(small_problem, _FakeResult(z, status="diverged"),
                             small_circle)

    def test_wrong_length_refused(self, small_circle, small_problem):
        with pytest.raises(ExtractionError):
            extract_solution(small_problem,
                             _FakeResult(np.zeros(3), status="optimal"),
                             small_circle)
