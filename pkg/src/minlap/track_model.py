"""Racetrack reference-line geometry.

Loads a centerline from CSV, fits a (periodic) cubic spline through it,
resamples at uniform arc length and provides curvature, heading and lateral
corridor bounds for the curvilinear vehicle model.

Conventions: n > 0 lies left of the reference line in the direction of
travel; kappa > 0 is a left turn; theta is measured from the global +x axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq


class TrackError(ValueError):
    """Raised for malformed or degenerate track input."""


@dataclass(frozen=True)
class RawCenterline:
    """Ordered centerline points with lateral widths, as read from file.

    Attributes
    ----------
    x, y : np.ndarray
        Point coordinates in meters, in file order.
    w_right, w_left : np.ndarray
        Distance from the reference line to the track edge on each side, m.
    closed : bool
        Whether the last point connects back to the first.
    """

    x: np.ndarray
    y: np.ndarray
    w_right: np.ndarray
    w_left: np.ndarray
    closed: bool = True

    def __post_init__(self):
        n = len(self.x)
        if not (len(self.y) == len(self.w_right) == len(self.w_left) == n):
            raise TrackError("centerline arrays must have equal length")
        if n < 4:
            raise TrackError(f"degenerate track: need at least 4 points, got {n}")
        dx = np.diff(self.x)
        dy = np.diff(self.y)
        if np.any(np.hypot(dx, dy) <= 1e-6):
            i = int(np.argmax(np.hypot(dx, dy) <= 1e-6))
            raise TrackError(f"coincident consecutive points at index {i}")
        for name, w in (("w_right", self.w_right), ("w_left", self.w_left)):
            if np.any(w <= 0.0):
                i = int(np.argmax(w <= 0.0))
                raise TrackError(f"non-positive {name} at row {i}")

    @property
    def n_points(self) -> int:
        return len(self.x)


@dataclass(frozen=True)
class Track:
    """Arc-length parameterized reference line on a uniform grid.

    Attributes
    ----------
    s_grid : np.ndarray
        Arc length per node, strictly increasing from 0, uniform spacing.
        Closed tracks omit the duplicate endpoint at s = S_total.
    kappa, theta : np.ndarray
        Curvature (1/m) and heading (rad) per node.
    x, y : np.ndarray
        Cartesian node coordinates, m.
    w_right, w_left : np.ndarray
        Corridor widths per node, m.
    total_length : float
        S_total in meters.
    closed : bool
    """

    s_grid: np.ndarray
    kappa: np.ndarray
    theta: np.ndarray
    x: np.ndarray
    y: np.ndarray
    w_right: np.ndarray
    w_left: np.ndarray
    total_length: float
    closed: bool

    @property
    def ds(self) -> float:
        """Uniform grid spacing in meters."""
        return float(self.s_grid[1] - self.s_grid[0])

    @property
    def n_nodes(self) -> int:
        return len(self.s_grid)

    def width_at(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Linearly interpolated (w_right, w_left) at arbitrary arc lengths."""
        s = np.asarray(s, dtype=float)
        if self.closed:
            sm = np.mod(s, self.total_length)
            grid = np.append(self.s_grid, self.total_length)
            wr = np.append(self.w_right, self.w_right[0])
            wl = np.append(self.w_left, self.w_left[0])
        else:
            sm = s
            grid, wr, wl = self.s_grid, self.w_right, self.w_left
        return np.interp(sm, grid, wr), np.interp(sm, grid, wl)

    def kappa_at(self, s: np.ndarray) -> np.ndarray:
        """Linearly interpolated curvature at arbitrary arc lengths."""
        s = np.asarray(s, dtype=float)
        if self.closed:
            sm = np.mod(s, self.total_length)
            grid = np.append(self.s_grid, self.total_length)
            k = np.append(self.kappa, self.kappa[0])
        else:
            sm = s
            grid, k = self.s_grid, self.kappa
        return np.interp(sm, grid, k)


def load_centerline(path: str | Path) -> RawCenterline:
    """Read a centerline CSV file.

    Expected format: header line ``# x_m,y_m,w_tr_right_m,w_tr_left_m``,
    optional header flag ``# closed=true|false`` (default true), then one
    ``x,y,w_right,w_left`` row per point.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"track file not found: {path}")
    closed = True
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                flag = line.lstrip("#").strip().lower()
                if flag.startswith("closed="):
                    value = flag.split("=", 1)[1]
                    if value not in ("true", "false"):
                        raise TrackError(
                            f"line {lineno}: closed flag must be true|false, got {value!r}"
                        )
                    closed = value == "true"
                continue
            fields = line.split(",")
            if len(fields) != 4:
                raise TrackError(
                    f"line {lineno}: expected 4 columns x,y,w_right,w_left, got {len(fields)}"
                )
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise TrackError(f"line {lineno}: non-numeric field ({exc})") from exc
    if len(rows) < 4:
        raise TrackError(f"degenerate track: need at least 4 points, got {len(rows)}")
    arr = np.asarray(rows, dtype=float)
    return RawCenterline(
        x=arr[:, 0], y=arr[:, 1], w_right=arr[:, 2], w_left=arr[:, 3], closed=closed
    )


def save_centerline(path: str | Path, raw: RawCenterline) -> None:
    """Write a centerline in the CSV format accepted by load_centerline."""
    with open(path, "w") as fh:
        fh.write("# x_m,y_m,w_tr_right_m,w_tr_left_m\n")
        fh.write(f"# closed={'true' if raw.closed else 'false'}\n")
        for xi, yi, wr, wl in zip(raw.x, raw.y, raw.w_right, raw.w_left):
            fh.write(f"{xi:.12g},{yi:.12g},{wr:.12g},{wl:.12g}\n")


def _fit_splines(raw: RawCenterline):
    """Cubic splines x(t), y(t) over chordal parameter t, periodic if closed."""
    x, y = raw.x, raw.y
    if raw.closed:
        # periodic spline needs the wrap point appended with equal end values
        gap = math.hypot(x[0] - x[-1], y[0] - y[-1])
        if gap <= 1e-6:
            # input already repeats the first point; drop the duplicate
            x, y = x[:-1], y[:-1]
        xs = np.append(x, x[0])
        ys = np.append(y, y[0])
        t = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(xs), np.diff(ys)))])
        if np.any(np.diff(t) <= 1e-9):
            raise TrackError("coincident points defeat the spline fit")
        return CubicSpline(t, xs, bc_type="periodic"), CubicSpline(t, ys, bc_type="periodic"), t
    t = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(x), np.diff(y)))])
    if np.any(np.diff(t) <= 1e-9):
        raise TrackError("coincident points defeat the spline fit")
    return CubicSpline(t, x, bc_type="natural"), CubicSpline(t, y, bc_type="natural"), t


def build_track(raw: RawCenterline, ds: float) -> Track:
    """Fit a smooth reference line and resample it at uniform arc length.

    Parameters
    ----------
    raw : RawCenterline
    ds : float
        Requested grid spacing in meters. The actual spacing is
        S_total / round(S_total / ds) so the grid divides the track exactly.
    """
    if ds <= 0.0:
        raise TrackError("ds must be positive")
    spx, spy, t_knots = _fit_splines(raw)

    def speed(t):
        return np.hypot(spx(t, 1), spy(t, 1))

    # arc length at the knots by adaptive quadrature on each spline segment
    seg_len = np.empty(len(t_knots) - 1)
    for i in range(len(seg_len)):
        seg_len[i], _ = quad(speed, t_knots[i], t_knots[i + 1], limit=200)
    s_knots = np.concatenate([[0.0], np.cumsum(seg_len)])
    s_total = float(s_knots[-1])

    n_iv = max(int(round(s_total / ds)), 1)
    ds_actual = s_total / n_iv
    if raw.closed:
        s_grid = ds_actual * np.arange(n_iv)
    else:
        s_grid = ds_actual * np.arange(n_iv + 1)

    # invert s(t) per node: bracket by knot segment, refine with brentq
    t_grid = np.empty_like(s_grid)
    for i, s in enumerate(s_grid):
        j = int(np.searchsorted(s_knots, s, side="right") - 1)
        j = min(max(j, 0), len(seg_len) - 1)
        target = s - s_knots[j]
        if target <= 1e-12 * max(s_total, 1.0):
            t_grid[i] = t_knots[j]
            continue

        def resid(t, j=j, target=target):
            val, _ = quad(speed, t_knots[j], t, limit=100)
            return val - target

        # nodes landing on a knot can make both bracket ends negative by roundoff
        if resid(t_knots[j + 1]) <= 0.0:
            t_grid[i] = t_knots[j + 1]
        else:
            t_grid[i] = brentq(resid, t_knots[j], t_knots[j + 1], xtol=1e-10)

    xp, yp = spx(t_grid, 1), spy(t_grid, 1)
    xpp, ypp = spx(t_grid, 2), spy(t_grid, 2)
    denom = (xp**2 + yp**2) ** 1.5
    kappa = (xp * ypp - yp * xpp) / denom
    theta = np.arctan2(yp, xp)

    # widths interpolated linearly in arc length of the input points
    s_pts = s_knots[: raw.n_points] if not raw.closed else s_knots[:-1]
    if len(s_pts) != raw.n_points:
        # closed input that repeated the first point: widths align to unique points
        s_pts = s_knots[: raw.n_points]
    wr = _interp_width(s_grid, s_pts, raw.w_right, s_total, raw.closed)
    wl = _interp_width(s_grid, s_pts, raw.w_left, s_total, raw.closed)

    if raw.closed:
        # reconstructed endpoint must coincide with the start
        end_gap = math.hypot(float(spx(t_knots[-1]) - spx(0.0)), float(spy(t_knots[-1]) - spy(0.0)))
        if end_gap > 0.1:
            raise TrackError(f"closed track does not close: endpoint gap {end_gap:.3f} m")

    return Track(
        s_grid=s_grid,
        kappa=kappa,
        theta=theta,
        x=spx(t_grid),
        y=spy(t_grid),
        w_right=wr,
        w_left=wl,
        total_length=s_total,
        closed=raw.closed,
    )


def _interp_width(s_grid, s_pts, w, s_total, closed):
    if closed:
        sp = np.append(s_pts, s_total)
        wp = np.append(w[: len(s_pts)], w[0])
    else:
        sp, wp = s_pts, w[: len(s_pts)]
    return np.interp(s_grid, sp, wp)


def frenet_to_cartesian(track: Track, n: np.ndarray) -> np.ndarray:
    """Map lateral offsets to Cartesian points, one per grid node.

    point_i = centerline_i + n_i * normal_i with the left-pointing unit
    normal (-sin theta, cos theta), so n > 0 lies left of the line.
    """
    n = np.asarray(n, dtype=float)
    if n.shape != track.s_grid.shape:
        raise ValueError("n must be defined at every grid node")
    px = track.x - n * np.sin(track.theta)
    py = track.y + n * np.cos(track.theta)
    return np.column_stack([px, py])


def validate_corridor(track: Track, n: np.ndarray, vehicle_width: float) -> list[tuple[int, float, float]]:
    """List (node index, n, violated bound) wherever n leaves the corridor.

    The vehicle is shrunk to a point by subtracting half its width from each
    side; bounds are closed (a point exactly on the bound is feasible).
    """
    if vehicle_width <= 0.0:
        raise ValueError("vehicle_width must be positive")
    n = np.asarray(n, dtype=float)
    half = 0.5 * vehicle_width
    hi = track.w_left - half
    lo = -(track.w_right - half)
    out = []
    for i in range(len(n)):
        if n[i] > hi[i]:
            out.append((i, float(n[i]), float(hi[i])))
        elif n[i] < lo[i]:
            out.append((i, float(n[i]), float(lo[i])))
    return out


def check_track(track: Track) -> list[str]:
    """Validate Track invariants; returns a list of human-readable issues."""
    issues = []
    dspacing = np.diff(track.s_grid)
    if len(dspacing) and (np.max(dspacing) - np.min(dspacing)) > 1e-9 * track.total_length:
        issues.append("non-uniform arc-length grid")
    tight = np.abs(track.kappa) * np.maximum(track.w_left, track.w_right)
    if np.any(tight >= 1.0):
        i = int(np.argmax(tight))
        issues.append(
            f"|kappa|*w >= 1 at node {i} (s = {track.s_grid[i]:.1f} m): "
            "corridor crosses the curvature center"
        )
    if track.closed:
        integral = float(np.sum(track.kappa) * track.ds)
        winding = integral / (2.0 * math.pi)
        if abs(integral - 2.0 * math.pi * round(winding)) > 1e-3:
            issues.append(f"curvature integral is not a whole winding ({winding:.5f} turns)")
    return issues
