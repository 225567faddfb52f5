"""Parametric synthetic tracks for tests, examples and benchmarks.

All generators return a RawCenterline; pass it through
track_model.build_track to obtain the uniform arc-length grid.
"""

from __future__ import annotations

import math

import numpy as np

from .track_model import RawCenterline


def circle_track(radius: float = 100.0, n_points: int = 36, width: float = 5.0,
                 ccw: bool = True) -> RawCenterline:
    """Closed circle of the given radius, counterclockwise by default."""
    phi = np.linspace(0.0, 2.0 * math.pi, n_points, endpoint=False)
    if not ccw:
        phi = -phi
    x = radius * np.cos(phi)
    y = radius * np.sin(phi)
    w = np.full(n_points, width)
    return RawCenterline(x=x, y=y, w_right=w.copy(), w_left=w.copy(), closed=True)


def straight_track(length: float = 1000.0, n_points: int = 51, width: float = 5.0,
                   heading: float = 0.0) -> RawCenterline:
    """Open straight line of the given length and heading."""
    t = np.linspace(0.0, length, n_points)
    x = t * math.cos(heading)
    y = t * math.sin(heading)
    w = np.full(n_points, width)
    return RawCenterline(x=x, y=y, w_right=w.copy(), w_left=w.copy(), closed=False)


def s_curve_track(radius: float = 50.0, width: float = 5.0,
                  points_per_arc: int = 60) -> RawCenterline:
    """Open S-curve: two tangent arcs of equal radius and opposite curvature.

    Starts at the origin heading +x; first arc turns left (kappa = +1/radius)
    through 90 degrees, the second turns right through 90 degrees. The arcs
    meet tangentially, so curvature flips sign at the junction.
    """
    phi = np.linspace(0.0, 0.5 * math.pi, points_per_arc)
    # left arc: center (0, R)
    x1 = radius * np.sin(phi)
    y1 = radius * (1.0 - np.cos(phi))
    # right arc: starts at (R, R) heading +y, center (2R, R)
    x2 = 2.0 * radius - radius * np.cos(phi)
    y2 = radius + radius * np.sin(phi)
    x = np.concatenate([x1, x2[1:]])
    y = np.concatenate([y1, y2[1:]])
    w = np.full(len(x), width)
    return RawCenterline(x=x, y=y, w_right=w.copy(), w_left=w.copy(), closed=False)


def _arc(x0, y0, heading, radius, angle, spacing):
    """Sample an arc; positive angle turns left. Returns points after the start."""
    n = max(int(math.ceil(abs(angle) * radius / spacing)), 2)
    dphi = np.linspace(0.0, angle, n + 1)[1:]
    # center sits at distance R on the left (angle > 0) or right (angle < 0)
    sign = 1.0 if angle >= 0 else -1.0
    cx = x0 - sign * radius * math.sin(heading)
    cy = y0 + sign * radius * math.cos(heading)
    phi0 = math.atan2(y0 - cy, x0 - cx)
    phi = phi0 + dphi
    return cx + radius * np.cos(phi), cy + radius * np.sin(phi), heading + angle


def _straight(x0, y0, heading, length, spacing):
    n = max(int(math.ceil(length / spacing)), 2)
    t = np.linspace(0.0, length, n + 1)[1:]
    return x0 + t * math.cos(heading), y0 + t * math.sin(heading), heading


def _corner_kappa(s_local: np.ndarray, radius: float, ramp: float, arc_len: float) -> np.ndarray:
    """Curvature of one left corner: raised-cosine ramps around a constant core.

    The ramp shape keeps kappa C1-continuous, which keeps the spline fit and
    the node-level curvature integral well behaved. Total heading change is
    kappa_peak * (arc_len - ramp) by the ramp's half-area symmetry.
    """
    k = 1.0 / radius
    core = arc_len - 2.0 * ramp
    out = np.full_like(s_local, k)
    up = s_local < ramp
    down = s_local > ramp + core
    out[up] = 0.5 * k * (1.0 - np.cos(math.pi * s_local[up] / ramp))
    out[down] = 0.5 * k * (1.0 + np.cos(math.pi * (s_local[down] - ramp - core) / ramp))
    return out


def benchmark_track(width: float = 5.5, spacing: float = 5.0, ramp: float = 20.0) -> RawCenterline:
    """Closed 2.5 km benchmark circuit.

    Counterclockwise loop: four straights joined by four left 90-degree
    corners with radii 30 / 70 / 50 / 90 m, each corner entered and exited
    through a raised-cosine curvature ramp. The 800 m opening straight feeds
    the tight R = 30 corner. Two straight lengths are solved so the loop
    closes exactly; the curvature areas close the heading by construction.
    """
    from scipy.optimize import fsolve

    radii = [30.0, 70.0, 50.0, 90.0]
    # heading change per corner: k*(core + ramp) = pi/2 -> core = (pi/2)*R - ramp
    arc_lens = [0.5 * math.pi * r + ramp for r in radii]
    h = 0.05

    def path(lengths):
        segs = []
        for i, r in enumerate(radii):
            segs.append(("s", lengths[i]))
            segs.append(("c", r, arc_lens[i]))
        total = sum(seg[1] if seg[0] == "s" else seg[2] for seg in segs)
        m = int(round(total / h))
        s = (np.arange(m) + 0.5) * (total / m)
        kappa = np.zeros(m)
        pos = 0.0
        for seg in segs:
            ln = seg[1] if seg[0] == "s" else seg[2]
            sel = (s >= pos) & (s < pos + ln)
            if seg[0] == "c":
                kappa[sel] = _corner_kappa(s[sel] - pos, seg[1], ramp, seg[2])
            pos += ln
        theta = np.concatenate([[0.0], np.cumsum(kappa) * (total / m)])
        xm = np.cos(0.5 * (theta[:-1] + theta[1:]))
        ym = np.sin(0.5 * (theta[:-1] + theta[1:]))
        x = np.concatenate([[0.0], np.cumsum(xm) * (total / m)])
        y = np.concatenate([[0.0], np.cumsum(ym) * (total / m)])
        return x, y, total

    fixed = [800.0, 260.0]

    def closure(free):
        x, y, _ = path([fixed[0], fixed[1], free[0], free[1]])
        return [x[-1] - x[0], y[-1] - y[0]]

    free0 = np.array([800.0, 220.0])
    free = fsolve(closure, free0, xtol=1e-12)
    x, y, total = path([fixed[0], fixed[1], free[0], free[1]])

    gap = math.hypot(x[-1] - x[0], y[-1] - y[0])
    if gap > 1e-6:
        raise AssertionError(f"benchmark loop failed to close (gap {gap:.2e} m)")
    step = max(int(round(spacing / h)), 1)
    idx = np.arange(0, len(x) - 1, step)
    xs, ys = x[idx], y[idx]
    w = np.full(len(xs), width)
    return RawCenterline(x=xs, y=ys, w_right=w.copy(), w_left=w.copy(), closed=True)
