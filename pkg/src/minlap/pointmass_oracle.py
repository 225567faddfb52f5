"""Point-mass velocity-profile oracle.

A longitudinal point-mass model on a fixed path, solved by the classic
forward-backward sweep: cap speeds at the cornering limit, integrate maximum
traction forward, integrate maximum braking backward, and take the pointwise
minimum. On closed paths the sweeps repeat until the cyclic fixed point.

This is an independent verification path for the full optimizer: it shares no
code with the double-track model beyond basic parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REGIME_CORNER = "corner"
REGIME_BRAKE = "brake"
REGIME_POWER = "power"
REGIME_GRIP = "grip"

_V_FLOOR = 0.1  # m/s, numerical floor to keep times/powers finite
_V_CEIL = 200.0  # m/s, stand-in for "uncapped" on straights


@dataclass(frozen=True)
class PointMassParams:
    """Longitudinal point-mass parameters.

    The traction limit is min(M_e_max*i_g/r, P_max/v). The lateral limit
    grows with downforce: a_lat(v) = a_lat_max * (1 + downforce(v)/(m*g)),
    which makes the cornering cap solvable in closed form because the limit
    is linear in v^2.
    """

    m: float = 975.0
    rho_a: float = 1.2
    A: float = 1.0
    c_w: float = 0.75
    c_r: float = 0.012
    g: float = 9.81
    r: float = 0.33           # wheel radius, m
    i_g: float = 6.0          # gear transmission
    M_e_max: float = 385.0    # motor torque limit, N*m
    P_max: float = 270e3      # W
    a_lat_max: float = 13.734  # lateral acceleration limit at zero speed, m/s^2
    F_b_min: float = -20000.0  # brake force limit, N (negative)
    c_l: float = 0.0          # downforce coefficient (0 disables the v^2 term)
    slope: float | np.ndarray = 0.0  # road slope alpha(s), rad

    def __post_init__(self):
        for name in ("m", "rho_a", "A", "g", "r", "i_g", "M_e_max", "P_max",
                     "a_lat_max"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.c_w < 0.0 or self.c_r < 0.0 or self.c_l < 0.0:
            raise ValueError("c_w, c_r, c_l must be non-negative")
        if self.F_b_min >= 0.0:
            raise ValueError("F_b_min must be negative")

    @property
    def f_traction_max(self) -> float:
        """Wheel force at the torque limit, N."""
        return self.M_e_max * self.i_g / self.r

    def drag(self, v):
        return 0.5 * self.rho_a * self.A * self.c_w * np.square(v)

    def downforce(self, v):
        return 0.5 * self.rho_a * self.c_l * self.A * np.square(v)

    def a_lat(self, v):
        """Speed-dependent lateral acceleration limit, m/s^2."""
        return self.a_lat_max * (1.0 + self.downforce(v) / (self.m * self.g))

    def resistance(self, v, slope):
        """Drag + rolling + gravity along the path, N (positive opposes motion)."""
        return self.drag(v) + self.m * self.g * (self.c_r + np.sin(slope))

    def slope_at(self, n_nodes: int) -> np.ndarray:
        s = np.asarray(self.slope, dtype=float)
        if s.ndim == 0:
            return np.full(n_nodes, float(s))
        if s.shape != (n_nodes,):
            raise ValueError("slope array length must match the path")
        return s


@dataclass(frozen=True)
class VelocityProfile:
    """Velocity profile on a fixed path with per-node bookkeeping."""

    v: np.ndarray        # m/s per node
    t: np.ndarray        # s, cumulative, t[0] = 0
    E: np.ndarray        # J, cumulative consumption at f_r = 0, E[0] = 0
    regime: np.ndarray   # limiting regime per node
    ds: float
    closed: bool
    total_time: float    # lap time (closed: includes the wrap interval)
    total_energy: float  # J at f_r = 0

    def __post_init__(self):
        if np.any(self.v <= 0.0):
            raise ValueError("velocity profile must be positive")
        if np.any(np.diff(self.t) <= 0.0):
            raise ValueError("cumulative time must be strictly increasing")

    @property
    def n_nodes(self) -> int:
        return self.v.size


def corner_speed_cap(path_kappa: np.ndarray, params: PointMassParams) -> np.ndarray:
    """Maximum pure-cornering speed per node.

    Solves v^2 |kappa| = a_lat(v) for v; since a_lat is linear in v^2 the
    solution is exact. Unbounded caps (straights, or downforce outgrowing
    curvature) saturate at a large ceiling.
    """
    kap = np.abs(np.asarray(path_kappa, dtype=float))
    a0 = params.a_lat_max
    k_down = 0.5 * params.rho_a * params.c_l * params.A / (params.m * params.g)
    denom = kap - a0 * k_down
    with np.errstate(divide="ignore", invalid="ignore"):
        v_sq = np.where(denom > 0.0, a0 / denom, np.inf)
    return np.minimum(np.sqrt(v_sq), _V_CEIL)


def _accel_limit(v, kappa, slope, params: PointMassParams):
    """Maximum net forward acceleration at speed v and curvature kappa."""
    a_lat_demand = v * v * abs(kappa)
    a_cap = params.a_lat(v)
    margin = max(a_cap * a_cap - a_lat_demand * a_lat_demand, 0.0)
    f_grip = params.m * np.sqrt(margin)
    f_power = params.P_max / max(v, _V_FLOOR)
    f_x = min(params.f_traction_max, f_power, f_grip)
    return (f_x - params.resistance(v, slope)) / params.m


def _decel_limit(v, kappa, slope, params: PointMassParams):
    """Maximum deceleration magnitude at speed v (resistances assist)."""
    a_lat_demand = v * v * abs(kappa)
    a_cap = params.a_lat(v)
    margin = max(a_cap * a_cap - a_lat_demand * a_lat_demand, 0.0)
    f_grip = params.m * np.sqrt(margin)
    f_b = min(-params.F_b_min, f_grip)
    return (f_b + params.resistance(v, slope)) / params.m


def _forward_sweep(v, cap, kappa, slope, ds, params, closed):
    n = v.size
    steps = range(n) if closed else range(n - 1)
    for k in steps:
        k1 = (k + 1) % n
        a1 = _accel_limit(v[k], kappa[k], slope[k], params)
        v_tent = np.sqrt(max(v[k] ** 2 + 2.0 * a1 * ds, _V_FLOOR**2))
        v_mid = 0.5 * (v[k] + v_tent)
        a2 = _accel_limit(v_mid, kappa[k], slope[k], params)
        v_reach = np.sqrt(max(v[k] ** 2 + 2.0 * a2 * ds, _V_FLOOR**2))
        v[k1] = min(v[k1], max(v_reach, _V_FLOOR), cap[k1])
    return v


def _backward_sweep(v, kappa, slope, ds, params, closed):
    n = v.size
    steps = range(n - 1, -1, -1) if closed else range(n - 2, -1, -1)
    for k in steps:
        k1 = (k + 1) % n
        d1 = _decel_limit(v[k1], kappa[k1], slope[k1], params)
        v_tent = np.sqrt(v[k1] ** 2 + 2.0 * d1 * ds)
        v_mid = 0.5 * (v[k1] + v_tent)
        d2 = _decel_limit(v_mid, kappa[k1], slope[k1], params)
        v_reach = np.sqrt(v[k1] ** 2 + 2.0 * d2 * ds)
        v[k] = min(v[k], max(v_reach, _V_FLOOR))
    return v


def profile_forces(v: np.ndarray, ds: float, slope: np.ndarray,
                   params: PointMassParams, closed: bool):
    """Reconstruct per-interval forces (F_d >= 0, F_b <= 0) from the profile.

    Interval k spans nodes k -> k+1 (wrapping when closed). Acceleration
    follows from the kinematic identity a = (v_next^2 - v^2) / (2 ds) and the
    resistive terms are evaluated at the interval-mean squared speed, so work
    sums telescope exactly on closed loops.
    """
    n = v.size
    v_next = np.roll(v, -1) if closed else v[1:]
    v_here = v if closed else v[:-1]
    a = (v_next**2 - v_here**2) / (2.0 * ds)
    v_sq_mean = 0.5 * (v_here**2 + v_next**2)
    drag = 0.5 * params.rho_a * params.A * params.c_w * v_sq_mean
    slope_here = slope if closed else slope[:-1]
    resist = drag + params.m * params.g * (params.c_r + np.sin(slope_here))
    f_x = params.m * a + resist
    return np.maximum(f_x, 0.0), np.minimum(f_x, 0.0)


def _classify(v, cap, f_d, f_b, params: PointMassParams, closed: bool):
    n = v.size
    regime = np.full(n, REGIME_GRIP, dtype=object)
    n_int = n if closed else n - 1
    for k in range(n):
        ki = k if k < n_int else n_int - 1
        if v[k] >= cap[k] - 1e-6:
            regime[k] = REGIME_CORNER
        elif f_b[ki] < -1e-6:
            regime[k] = REGIME_BRAKE
        elif f_d[ki] >= 0.999 * params.P_max / max(v[k], _V_FLOOR):
            regime[k] = REGIME_POWER
        elif f_d[ki] >= 0.999 * params.f_traction_max:
            regime[k] = REGIME_GRIP
        else:
            # partial throttle: limited by the upcoming corner or cruising
            # at the drag equilibrium, both power-side regimes
            regime[k] = REGIME_POWER
    return np.asarray(regime)


def forward_backward_profile(path_kappa: np.ndarray, ds: float,
                             params: PointMassParams, closed: bool = True,
                             v_start: float | None = None) -> VelocityProfile:
    """Maximal velocity profile on a fixed path.

    closed=True treats the path as a cyclic lap and iterates the sweeps to
    the fixed point (at most 10, convergence 1e-6 m/s). v_start caps the
    first node on open paths (0 is clipped to a small positive floor).
    """
    kappa = np.asarray(path_kappa, dtype=float)
    n = kappa.size
    if n < 2:
        raise ValueError("need at least two path nodes")
    if ds <= 0.0:
        raise ValueError("ds must be positive")
    slope = params.slope_at(n)
    cap = corner_speed_cap(kappa, params)
    v = cap.copy()
    if not closed and v_start is not None:
        v[0] = min(v[0], max(v_start, _V_FLOOR))

    if closed:
        for _ in range(10):
            v_prev = v.copy()
            v = _forward_sweep(v, cap, kappa, slope, ds, params, closed=True)
            v = _backward_sweep(v, kappa, slope, ds, params, closed=True)
            if np.max(np.abs(v - v_prev)) < 1e-6:
                break
    else:
        v = _forward_sweep(v, cap, kappa, slope, ds, params, closed=False)
        v = _backward_sweep(v, kappa, slope, ds, params, closed=False)

    f_d, f_b = profile_forces(v, ds, slope, params, closed)
    v_next = np.roll(v, -1) if closed else v[1:]
    v_here = v if closed else v[:-1]
    dt = 2.0 * ds / (v_here + v_next)
    de = f_d * ds  # consumption at f_r = 0
    t = np.concatenate([[0.0], np.cumsum(dt)])
    e = np.concatenate([[0.0], np.cumsum(de)])
    total_time = float(t[-1])
    total_energy = float(e[-1])
    if closed:
        t, e = t[:-1], e[:-1]
    regime = _classify(v, cap, f_d, f_b, params, closed)
    return VelocityProfile(
        v=v, t=t, E=e, regime=regime, ds=ds, closed=closed,
        total_time=total_time, total_energy=total_energy,
    )


def profile_energy(profile: VelocityProfile, f_r: float,
                   params: PointMassParams) -> float:
    """Net energy demand E = sum (F_d + f_r * F_b) * ds over the profile, J."""
    if not 0.0 <= f_r <= 1.0:
        raise ValueError("f_r must lie in [0, 1]")
    slope = params.slope_at(profile.n_nodes)
    f_d, f_b = profile_forces(profile.v, profile.ds, slope, params,
                              profile.closed)
    return float(np.sum((f_d + f_r * f_b) * profile.ds))


def pointmass_from_vehicle(vehicle) -> PointMassParams:
    """Calibrate point-mass parameters from double-track vehicle parameters.

    Shared quantities copy over directly; the torque limit is chosen so the
    wheel-force limit matches F_d_max, and the lateral limit is mu*g with the
    downforce term entering through c_l.
    """
    mu = 0.5 * (vehicle.tire_front.mu + vehicle.tire_rear.mu)
    return PointMassParams(
        m=vehicle.m,
        rho_a=vehicle.rho_a,
        A=vehicle.A,
        c_w=vehicle.c_w,
        c_r=vehicle.c_r,
        g=vehicle.g,
        M_e_max=vehicle.F_d_max * 0.33 / 6.0,
        P_max=vehicle.P_max,
        a_lat_max=mu * vehicle.g,
        F_b_min=vehicle.F_b_min,
        c_l=vehicle.c_l,
    )
