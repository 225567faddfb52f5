"""Nonlinear double-track vehicle dynamics in the space domain.

States x(s) = (v, beta, psidot, n, xi), controls u(s) = (F_d, F_b, delta,
gamma). Four individually loaded wheels with a simplified magic-formula
lateral tire model, load-dependent friction, quasi-steady longitudinal and
lateral load transfer, aerodynamic drag and downforce, rear-axle drive and a
fixed front/rear brake balance. The independent variable is arc length s of
the track reference line; all time derivatives are divided by
sdot = v cos(xi + beta) / (1 - n kappa).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import yaml


class ModelDomainError(ValueError):
    """State or parameters left the model's domain of validity."""


@dataclass(frozen=True)
class TireParams:
    """Simplified magic-formula coefficients for one axle.

    F_y = mu(F_z) * F_z * sin(C * atan(B*a - E*(B*a - atan(B*a)))) with the
    load-dependent friction mu(F_z) = mu * (1 - eps_mu * (F_z - F_z0)).
    """

    B: float = 10.0
    C: float = 2.5
    E: float = 1.0
    mu: float = 1.4
    F_z0: float = 3000.0
    eps_mu: float = 1.0e-5

    def __post_init__(self):
        if self.B <= 0 or self.C <= 0:
            raise ValueError("tire B and C must be positive")
        if self.mu <= 0:
            raise ValueError("tire mu must be positive")
        if self.F_z0 <= 0:
            raise ValueError("tire F_z0 must be positive")

    def mu_at(self, f_z: float) -> float:
        """Load-dependent friction coefficient."""
        return self.mu * (1.0 - self.eps_mu * (f_z - self.F_z0))


@dataclass(frozen=True)
class VehicleParams:
    """Physical vehicle parameters, SI units.

    Defaults describe a plausible electric racecar; every value can be
    overridden through the vehicle parameter file.
    """

    m: float = 975.0              # mass, kg
    rho_a: float = 1.2            # air density, kg/m^3
    A: float = 1.0                # frontal area, m^2
    c_w: float = 0.75             # drag coefficient
    c_r: float = 0.012            # rolling resistance coefficient
    g: float = 9.81               # gravity, m/s^2
    l: float = 3.1                # wheelbase, m
    l_f: float = 1.6              # cog to front axle, m
    tw_f: float = 1.6             # front track width, m
    tw_r: float = 1.55            # rear track width, m
    h_cog: float = 0.30           # cog height, m
    c_l: float = 3.0              # downforce coefficient
    vehicle_width: float = 1.8    # m, for the corridor box
    I_z: float = 1200.0           # yaw inertia, kg m^2
    P_max: float = 270.0e3        # traction power limit, W
    F_d_max: float = 7000.0       # drive force limit, N
    F_b_min: float = -20000.0     # brake force limit, N (negative)
    delta_max: float = 0.35       # steering bounds, rad
    delta_min: float = -0.35
    T_d: float = 0.5              # actuator time constants, s
    T_b: float = 0.3
    T_delta: float = 0.5
    brake_balance: float = 0.6    # front share of brake force
    k_roll: float = 0.5           # front share of lateral load transfer
    aero_split_front: float = 0.5  # front share of downforce
    tire_front: TireParams = field(default_factory=TireParams)
    tire_rear: TireParams = field(default_factory=TireParams)

    def __post_init__(self):
        for name in ("m", "rho_a", "A", "g", "l", "l_f", "tw_f", "tw_r",
                     "h_cog", "vehicle_width", "I_z", "P_max", "F_d_max",
                     "T_d", "T_b", "T_delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.delta_min < 0 < self.delta_max:
            raise ValueError("need delta_min < 0 < delta_max")
        if not self.F_b_min < 0 < self.F_d_max:
            raise ValueError("need F_b_min < 0 < F_d_max")
        if not 0 < self.l_f < self.l:
            raise ValueError("need 0 < l_f < l")
        if not 0.0 <= self.brake_balance <= 1.0:
            raise ValueError("brake_balance must lie in [0, 1]")

    @property
    def l_r(self) -> float:
        """Cog to rear axle, m."""
        return self.l - self.l_f

    @property
    def tw_mean(self) -> float:
        return 0.5 * (self.tw_f + self.tw_r)

    def drag(self, v: float) -> float:
        """Aerodynamic drag force at speed v, N."""
        return 0.5 * self.rho_a * self.A * self.c_w * v * v

    def downforce(self, v: float) -> float:
        """Aerodynamic downforce at speed v, N."""
        return 0.5 * self.rho_a * self.A * self.c_l * v * v

    def rolling_force(self) -> float:
        """Rolling resistance force, N (weight-based, downforce excluded)."""
        return self.m * self.g * self.c_r


@dataclass(frozen=True)
class StateVector:
    """OCP state x(s)."""

    v: float          # speed, m/s
    beta: float = 0.0  # side slip angle, rad
    psidot: float = 0.0  # yaw rate, rad/s
    n: float = 0.0    # lateral offset to the reference line, m
    xi: float = 0.0   # heading error to the reference line, rad

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.beta, self.psidot, self.n, self.xi])


@dataclass(frozen=True)
class ControlVector:
    """OCP control u(s)."""

    F_d: float = 0.0    # drive force, N (>= 0)
    F_b: float = 0.0    # brake force, N (<= 0)
    delta: float = 0.0  # steering angle, rad
    gamma: float = 0.0  # lateral wheel load transfer, N

    def as_array(self) -> np.ndarray:
        return np.array([self.F_d, self.F_b, self.delta, self.gamma])


@dataclass(frozen=True)
class WheelLoads:
    """Vertical loads per wheel plus the lateral transfer that produced them."""

    fl: float
    fr: float
    rl: float
    rr: float
    pi: float  # lateral load transfer, N

    def as_array(self) -> np.ndarray:
        return np.array([self.fl, self.fr, self.rl, self.rr])


@dataclass(frozen=True)
class TireForces:
    """Per-wheel tire forces and friction-ellipse utilization."""

    fx: np.ndarray  # (fl, fr, rl, rr), N, wheel frame
    fy: np.ndarray
    utilization: np.ndarray  # sqrt(fx^2+fy^2) / (mu(F_z) F_z), dimensionless


def sdot(v: float, beta: float, xi: float, n: float, kappa: float) -> float:
    """ds/dt along the reference line."""
    denom = 1.0 - n * kappa
    if denom <= 0.0:
        raise ModelDomainError(
            f"1 - n*kappa = {denom:.3g} <= 0: point lies beyond the curvature center"
        )
    return v * math.cos(xi + beta) / denom


def lagrangian(v: float, beta: float, xi: float, n: float, kappa: float) -> float:
    """dt/ds, the running cost whose path integral is the lap time."""
    if v <= 0.0:
        raise ModelDomainError(f"v = {v:.3g} <= 0 makes the Lagrangian singular")
    return 1.0 / sdot(v, beta, xi, n, kappa)


def wheel_loads(x: StateVector, u: ControlVector, a_x: float, a_y: float,
                params: VehicleParams) -> WheelLoads:
    """Quasi-steady vertical wheel loads for given accelerations.

    Static axle shares plus longitudinal transfer m*a_x*h/l, aerodynamic
    downforce split between the axles, and lateral transfer
    Pi = m*a_y*h/tw_mean distributed k_roll front / (1 - k_roll) rear.
    """
    p = params
    pi = p.m * a_y * p.h_cog / p.tw_mean
    loads = _loads_from_transfer(x, pi, a_x, p)
    if min(loads.fl, loads.fr, loads.rl, loads.rr) < 0.0:
        raise ModelDomainError(
            "wheel lift: negative vertical load "
            f"(fl={loads.fl:.0f}, fr={loads.fr:.0f}, rl={loads.rl:.0f}, rr={loads.rr:.0f} N)"
        )
    return loads


def _loads_from_transfer(x: StateVector, pi: float, a_x: float,
                         p: VehicleParams) -> WheelLoads:
    """Loads with explicitly supplied lateral transfer and a_x (no lift check)."""
    f_down = p.downforce(x.v)
    dx = p.m * a_x * p.h_cog / p.l
    front = p.m * p.g * p.l_r / p.l + p.aero_split_front * f_down - dx
    rear = p.m * p.g * p.l_f / p.l + (1.0 - p.aero_split_front) * f_down + dx
    return WheelLoads(
        fl=0.5 * front - p.k_roll * pi,
        fr=0.5 * front + p.k_roll * pi,
        rl=0.5 * rear - (1.0 - p.k_roll) * pi,
        rr=0.5 * rear + (1.0 - p.k_roll) * pi,
        pi=pi,
    )


def longitudinal_acceleration(x: StateVector, u: ControlVector,
                              params: VehicleParams) -> float:
    """a_x used for the quasi-steady longitudinal load transfer."""
    return (u.F_d + u.F_b - params.drag(x.v) - params.rolling_force()) / params.m


def lateral_transfer(x: StateVector, params: VehicleParams) -> float:
    """Pi implied by the dynamics with the steady-state a_y = v*psidot."""
    a_y = x.v * x.psidot
    return params.m * a_y * params.h_cog / params.tw_mean


def slip_angles(x: StateVector, u: ControlVector, params: VehicleParams) -> np.ndarray:
    """Per-wheel slip angles (fl, fr, rl, rr), rad."""
    p = params
    v_lat_f = x.v * math.sin(x.beta) + p.l_f * x.psidot
    v_lat_r = -x.v * math.sin(x.beta) + p.l_r * x.psidot
    v_lon = x.v * math.cos(x.beta)
    a_fl = u.delta - math.atan2(v_lat_f, v_lon - 0.5 * p.tw_f * x.psidot)
    a_fr = u.delta - math.atan2(v_lat_f, v_lon + 0.5 * p.tw_f * x.psidot)
    a_rl = math.atan2(v_lat_r, v_lon - 0.5 * p.tw_r * x.psidot)
    a_rr = math.atan2(v_lat_r, v_lon + 0.5 * p.tw_r * x.psidot)
    return np.array([a_fl, a_fr, a_rl, a_rr])


def magic_fy(tire: TireParams, f_z: float, alpha: float) -> float:
    """Simplified magic-formula lateral force, N."""
    b_a = tire.B * alpha
    arg = b_a - tire.E * (b_a - math.atan(b_a))
    return tire.mu_at(f_z) * f_z * math.sin(tire.C * math.atan(arg))


def tire_forces(x: StateVector, u: ControlVector, loads: WheelLoads,
                params: VehicleParams) -> TireForces:
    """Per-wheel longitudinal and lateral tire forces.

    Drive force goes to the rear axle with an equal left/right split; brake
    force is distributed by the brake-balance parameter. The longitudinal
    and lateral directions couple through the friction-ellipse utilization
    sqrt(F_x^2 + F_y^2) / (mu(F_z) F_z), which the path constraint caps at 1.
    """
    p = params
    alphas = slip_angles(x, u, p)
    fz = loads.as_array()
    bb = p.brake_balance
    fx = np.array([
        0.5 * bb * u.F_b,
        0.5 * bb * u.F_b,
        0.5 * u.F_d + 0.5 * (1.0 - bb) * u.F_b,
        0.5 * u.F_d + 0.5 * (1.0 - bb) * u.F_b,
    ])
    tires = (p.tire_front, p.tire_front, p.tire_rear, p.tire_rear)
    fy = np.array([magic_fy(t, z, a) for t, z, a in zip(tires, fz, alphas)])
    grip = np.array([t.mu_at(z) * z for t, z in zip(tires, fz)])
    util = np.sqrt(fx**2 + fy**2) / grip
    return TireForces(fx=fx, fy=fy, utilization=util)


def dynamics(x: StateVector, u: ControlVector, kappa: float,
             params: VehicleParams) -> np.ndarray:
    """Space-domain state derivative d(v, beta, psidot, n, xi)/ds.

    The lateral load transfer entering the wheel loads is the control gamma;
    the equality constraint h1 ties it to the transfer implied by a_y.
    """
    p = params
    L = lagrangian(x.v, x.beta, x.xi, x.n, kappa)
    a_x = longitudinal_acceleration(x, u, p)
    loads = _loads_from_transfer(x, u.gamma, a_x, p)
    tf = tire_forces(x, u, loads, p)
    fx_fl, fx_fr, fx_rl, fx_rr = tf.fx
    fy_fl, fy_fr, fy_rl, fy_rr = tf.fy
    f_resist = p.drag(x.v) + p.rolling_force()

    cb, sb = math.cos(x.beta), math.sin(x.beta)
    cdb, sdb = math.cos(u.delta - x.beta), math.sin(u.delta - x.beta)
    cd, sd = math.cos(u.delta), math.sin(u.delta)

    f_par = ((fx_rl + fx_rr) * cb + (fx_fl + fx_fr) * cdb
             + (fy_rl + fy_rr) * sb - (fy_fl + fy_fr) * sdb
             - f_resist * cb)
    f_perp = (-(fx_rl + fx_rr) * sb + (fx_fl + fx_fr) * sdb
              + (fy_rl + fy_rr) * cb + (fy_fl + fy_fr) * cdb
              + f_resist * sb)
    moment = ((fx_rr - fx_rl) * 0.5 * p.tw_r - (fy_rl + fy_rr) * p.l_r
              + ((fx_fr - fx_fl) * cd + (fy_fl - fy_fr) * sd) * 0.5 * p.tw_f
              + ((fy_fl + fy_fr) * cd + (fx_fl + fx_fr) * sd) * p.l_f)

    dv = L * f_par / p.m
    dbeta = L * (-x.psidot + f_perp / (p.m * x.v))
    dpsidot = L * moment / p.I_z
    dn = L * x.v * math.sin(x.xi + x.beta)
    dxi = L * x.psidot - kappa
    return np.array([dv, dbeta, dpsidot, dn, dxi])


# ------------------------------------------------------------ parameter file


def vehicle_to_dict(params: VehicleParams) -> dict:
    return asdict(params)


def vehicle_from_dict(data: dict) -> VehicleParams:
    """Build VehicleParams from a flat mapping, applying defaults."""
    data = dict(data or {})
    kwargs = {}
    for key in ("tire_front", "tire_rear"):
        if key in data:
            sub = data.pop(key)
            if not isinstance(sub, dict):
                raise ValueError(f"{key} must be a mapping of tire coefficients")
            unknown = set(sub) - set(TireParams.__dataclass_fields__)
            if unknown:
                raise ValueError(f"unknown tire keys in {key}: {sorted(unknown)}")
            kwargs[key] = TireParams(**sub)
    known = set(VehicleParams.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown vehicle keys: {sorted(unknown)}")
    kwargs.update(data)
    return VehicleParams(**kwargs)


def load_vehicle(path: str | Path) -> VehicleParams:
    """Load vehicle parameters from a YAML key-value file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"vehicle file not found: {path}")
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError("vehicle file must contain a key-value mapping")
    return vehicle_from_dict(data)


def save_vehicle(path: str | Path, params: VehicleParams) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(vehicle_to_dict(params), fh, sort_keys=True)
