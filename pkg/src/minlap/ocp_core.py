"""Continuous minimum-lap-time optimal control problem.

Assembles the objective, dynamics, equality constraints h1-h2, inequality
constraints g1-g12 and the energy accounting into one immutable problem
description, and provides the independent feasibility evaluators used to
re-check solver output.

Slot layout of the inequality vector (all entries must be <= 0):
    g1  tire friction ellipse, worst wheel: sqrt(Fx^2+Fy^2)/(mu(Fz) Fz) - 1
    g2  traction power:        F_d * v - P_max
    g3  drive force box:       F_d - F_d_max
    g4  drive force sign:      -F_d
    g5  brake force sign:      F_b
    g6  steering box:          delta - delta_max
    g7  steering box:          delta_min - delta
    g8  drive rate:            dF_d/(L ds) - F_d_max/T_d
    g9  brake rate:            F_b_min/T_b - dF_b/(L ds)
    g10 steering rate:         ddelta/(L ds) - delta_max/T_delta
    g11 steering rate:         delta_min/T_delta - ddelta/(L ds)
    g12 energy budget:         E_total - E_budget (global; -inf placeholder in
        the per-node vector, evaluated over the whole trajectory)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import track_model as _track
from . import vehicle_model as vm
from .track_model import Track
from .vehicle_model import ControlVector, StateVector, VehicleParams

KWH_TO_J = 3.6e6

INEQUALITY_NAMES = (
    "g1", "g2", "g3", "g4", "g5", "g6", "g7", "g8", "g9", "g10", "g11", "g12",
)
EQUALITY_NAMES = ("h1", "h2")


class AssemblyError(ValueError):
    """Raised when track, vehicle and config do not form a solvable problem."""


@dataclass(frozen=True)
class EnergyConfig:
    """Energy budget and recuperation settings."""

    budget_j: float = 0.0  # available energy per lap, J
    f_r: float = 0.0       # mean recuperation factor in [0, 1]
    enabled: bool = False

    def __post_init__(self):
        if self.enabled and self.budget_j <= 0.0:
            raise ValueError("enabled energy budget must be positive")
        if not 0.0 <= self.f_r <= 1.0:
            raise ValueError("f_r must lie in [0, 1]")

    @staticmethod
    def from_kwh(budget_kwh: float, f_r: float = 0.0) -> "EnergyConfig":
        return EnergyConfig(budget_j=budget_kwh * KWH_TO_J, f_r=f_r, enabled=True)

    @property
    def budget_kwh(self) -> float:
        return self.budget_j / KWH_TO_J


@dataclass(frozen=True)
class ScalingConfig:
    """Typical magnitudes used to scale states/controls to order one."""

    v: float = 50.0
    beta: float = 0.5
    psidot: float = 1.0
    n: float = 5.0
    xi: float = 1.0
    f_d: float = 7000.0
    f_b: float = 20000.0
    delta: float = 0.5
    gamma: float = 5000.0
    energy: float = KWH_TO_J

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) <= 0.0:
                raise ValueError(f"scaling factor {name} must be positive")

    def state_scale(self) -> np.ndarray:
        return np.array([self.v, self.beta, self.psidot, self.n, self.xi])

    def control_scale(self) -> np.ndarray:
        return np.array([self.f_d, self.f_b, self.delta, self.gamma])


@dataclass(frozen=True)
class OcpConfig:
    """Discretization, boundary mode, energy settings and state boxes."""

    ds: float = 5.0
    boundary: str = "cyclic"  # "cyclic" | "fixed"
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    scaling: ScalingConfig = field(default_factory=ScalingConfig)
    v_min: float = 1.0
    v_max: float = 120.0
    beta_max: float = 0.35
    psidot_max: float = 2.0
    xi_max: float = 0.8
    gamma_max: float = 12000.0
    h2_mode: str = "equality"  # "equality" | "relaxed"
    h2_eps: float = 1.0        # N^2, only used in relaxed mode
    fixed_initial_state: tuple | None = None  # (v, beta, psidot, n, xi) for "fixed"

    def __post_init__(self):
        if self.ds <= 0.0:
            raise ValueError("ds must be positive")
        if self.boundary not in ("cyclic", "fixed"):
            raise ValueError("boundary must be 'cyclic' or 'fixed'")
        if self.h2_mode not in ("equality", "relaxed"):
            raise ValueError("h2_mode must be 'equality' or 'relaxed'")
        if self.v_min <= 0.0 or self.v_max <= self.v_min:
            raise ValueError("need 0 < v_min < v_max")


@dataclass(frozen=True)
class ContinuousOcp:
    """The assembled continuous problem.

    Constraint bookkeeping: two per-node equalities (h1, h2), eleven per-node
    inequalities (g1-g11) and, when the budget is enabled, one global scalar
    inequality (g12). Corridor bounds on n are variable bounds, not rows.
    """

    track: Track
    params: VehicleParams
    config: OcpConfig
    n_lower: np.ndarray  # corridor bound per node, m
    n_upper: np.ndarray

    @property
    def equality_names(self) -> tuple:
        return EQUALITY_NAMES

    @property
    def inequality_names(self) -> tuple:
        return INEQUALITY_NAMES[:11]

    @property
    def global_inequality_names(self) -> tuple:
        return ("g12",) if self.config.energy.enabled else ()

    # ---------------------------------------------------------- evaluators

    def objective_integrand(self, x: StateVector, kappa: float) -> float:
        return objective_integrand(x, kappa)

    def eval_equalities(self, x, u, loads):
        return eval_equalities(x, u, loads)

    def eval_inequalities(self, x, u, x_prev, u_prev, L, ds, tires=None):
        return eval_inequalities(x, u, x_prev, u_prev, L, ds, self.params)

    def energy_terms(self, x, u):
        return energy_terms(x, u, self.config.energy.f_r)

    def with_energy(self, energy: EnergyConfig) -> "ContinuousOcp":
        """Same problem with a different energy configuration."""
        return replace(self, config=replace(self.config, energy=energy))


def objective_integrand(x: StateVector, kappa: float) -> float:
    """Running cost L = dt/ds; its lap integral is the lap time."""
    return vm.lagrangian(x.v, x.beta, x.xi, x.n, kappa)


def eval_equalities(x: StateVector, u: ControlVector,
                    loads: vm.WheelLoads) -> tuple[float, float]:
    """(h1, h2): load-transfer consistency and drive/brake exclusivity."""
    h1 = u.gamma - loads.pi
    h2 = u.F_d * u.F_b
    return h1, h2


def eval_inequalities(x: StateVector, u: ControlVector,
                      x_prev: StateVector | None, u_prev: ControlVector | None,
                      L: float, ds: float, params: VehicleParams) -> np.ndarray:
    """Per-node inequality vector g1..g12, each entry feasible when <= 0.

    The rate entries g8-g11 need the predecessor interval's controls and the
    local Lagrangian L; without a predecessor they are -inf (not applicable).
    The global budget entry g12 is -inf here and evaluated over the whole
    trajectory by energy_budget_violation.
    """
    p = params
    g = np.full(12, -np.inf)
    a_x = vm.longitudinal_acceleration(x, u, p)
    a_y = x.v * x.psidot
    loads = vm.wheel_loads(x, u, a_x, a_y, p)
    tf = vm.tire_forces(x, u, loads, p)
    g[0] = float(np.max(tf.utilization)) - 1.0
    g[1] = u.F_d * x.v - p.P_max
    g[2] = u.F_d - p.F_d_max
    g[3] = -u.F_d
    g[4] = u.F_b
    g[5] = u.delta - p.delta_max
    g[6] = p.delta_min - u.delta
    if u_prev is not None:
        dt = L * ds
        g[7] = (u.F_d - u_prev.F_d) / dt - p.F_d_max / p.T_d
        g[8] = p.F_b_min / p.T_b - (u.F_b - u_prev.F_b) / dt
        g[9] = (u.delta - u_prev.delta) / dt - p.delta_max / p.T_delta
        g[10] = p.delta_min / p.T_delta - (u.delta - u_prev.delta) / dt
    return g


def energy_terms(x: StateVector, u: ControlVector, f_r: float) -> tuple[float, float]:
    """(P_total, energy integrand), both in W.

    P_total = F_d * v is the traction power; the energy integrand
    (F_d + f_r*F_b) * v feeds E = integral over time, i.e. multiply by the
    Lagrangian L for the space-domain integral.
    """
    p_total = u.F_d * x.v
    e_rate = (u.F_d + f_r * u.F_b) * x.v
    return p_total, e_rate


def energy_budget_violation(e_total_j: float, energy: EnergyConfig) -> float:
    """g12 = E_total - E_budget (global scalar)."""
    if not energy.enabled:
        return -math.inf
    return e_total_j - energy.budget_j


def assemble(track: Track, params: VehicleParams, config: OcpConfig) -> ContinuousOcp:
    """Build the continuous OCP, checking corridor feasibility for n = 0."""
    if abs(config.ds - track.ds) > 1e-9 * max(track.ds, 1.0):
        raise AssemblyError(
            f"config ds = {config.ds} does not match the track grid ds = {track.ds}"
        )
    half = 0.5 * params.vehicle_width
    n_upper = track.w_left - half
    n_lower = -(track.w_right - half)
    violations = _track.validate_corridor(
        track, np.zeros(track.n_nodes), params.vehicle_width
    )
    if violations:
        idx = violations[0][0]
        raise AssemblyError(
            f"corridor infeasible for the reference line at node {idx}: "
            "vehicle wider than the track"
        )
    if config.boundary == "fixed" and config.fixed_initial_state is None:
        raise AssemblyError("fixed boundary mode needs fixed_initial_state")
    if config.boundary == "fixed" and track.closed:
        # allowed: a standing-start lap on a closed circuit
        pass
    return ContinuousOcp(
        track=track,
        params=params,
        config=config,
        n_lower=n_lower,
        n_upper=n_upper,
    )


# ----------------------------------------------------- independent re-check


def equality_scales(params: VehicleParams) -> np.ndarray:
    """Natural magnitudes for (h1, h2) used by the scaled feasibility check."""
    return np.array([
        params.m * params.g,
        params.F_d_max * abs(params.F_b_min),
    ])


def inequality_scales(params: VehicleParams) -> np.ndarray:
    """Natural magnitudes for g1..g11 used by the scaled feasibility check."""
    return np.array([
        1.0,                                   # g1 is dimensionless
        params.P_max,                          # g2
        params.F_d_max,                        # g3
        params.F_d_max,                        # g4
        abs(params.F_b_min),                   # g5
        params.delta_max,                      # g6
        params.delta_max,                      # g7
        params.F_d_max / params.T_d,           # g8
        abs(params.F_b_min) / params.T_b,      # g9
        params.delta_max / params.T_delta,     # g10
        params.delta_max / params.T_delta,     # g11
    ])


@dataclass(frozen=True)
class FeasibilityReport:
    """Worst scaled constraint values over a trajectory, all feasible <= tol."""

    max_h: float
    max_g: float
    g12_scaled: float
    energy_monotone: bool
    per_name: dict

    def feasible(self, tol: float = 1e-6) -> bool:
        ok = self.max_h <= tol and self.max_g <= tol
        if np.isfinite(self.g12_scaled):
            ok = ok and self.g12_scaled <= tol
        return ok


def check_feasibility(ocp: ContinuousOcp, states: np.ndarray, controls: np.ndarray,
                      energy_j: np.ndarray) -> FeasibilityReport:
    """Re-evaluate h/g over node arrays, independently of the solver.

    states: (N, 5), controls: (N, 4) piecewise-constant per interval,
    energy_j: (N,) cumulative energy at each interval's right node.
    On cyclic problems the rate constraints wrap around.
    """
    track, p, cfg = ocp.track, ocp.params, ocp.config
    n_nodes = states.shape[0]
    h_scale = equality_scales(p)
    g_scale = inequality_scales(p)
    worst_h = np.zeros(2)
    worst_g = np.full(11, -np.inf)
    for k in range(n_nodes):
        x = StateVector(*states[k])
        u = ControlVector(*controls[k])
        a_x = vm.longitudinal_acceleration(x, u, p)
        loads = vm.wheel_loads(x, u, a_x, x.v * x.psidot, p)
        h1, h2 = eval_equalities(x, u, loads)
        worst_h = np.maximum(worst_h, np.abs([h1, h2]) / h_scale)
        if k > 0 or (track.closed and cfg.boundary == "cyclic"):
            kp = k - 1 if k > 0 else n_nodes - 1
            x_prev = StateVector(*states[kp])
            u_prev = ControlVector(*controls[kp])
            L = vm.lagrangian(x_prev.v, x_prev.beta, x_prev.xi, x_prev.n,
                              track.kappa[kp])
        else:
            x_prev = u_prev = None
            L = 1.0
        g = eval_inequalities(x, u, x_prev, u_prev, L, track.ds, p)
        worst_g = np.maximum(worst_g, g[:11] / g_scale)

    g12 = energy_budget_violation(float(energy_j[-1]), cfg.energy)
    g12_scaled = g12 / cfg.energy.budget_j if cfg.energy.enabled else -math.inf
    e_full = np.concatenate([[0.0], energy_j])
    monotone = bool(np.all(np.diff(e_full) >= -1e-6 * cfg.scaling.energy))
    per_name = {"h1": worst_h[0], "h2": worst_h[1]}
    per_name.update({INEQUALITY_NAMES[i]: worst_g[i] for i in range(11)})
    per_name["g12"] = g12_scaled
    return FeasibilityReport(
        max_h=float(np.max(worst_h)),
        max_g=float(np.max(worst_g)),
        g12_scaled=float(g12_scaled),
        energy_monotone=monotone,
        per_name=per_name,
    )
