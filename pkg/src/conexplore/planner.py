"""Grid A* planning and smooth arc-length-parameterized paths."""

from __future__ import annotations

import heapq
import itertools

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from .world import OccupancyGrid


class NoPath(Exception):
    """Goal unreachable on the occupancy grid."""


class OccupiedEndpoint(Exception):
    """Start or goal maps to an occupied cell."""


_OFFSETS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]
_OFFSET_COSTS = {o: float(np.linalg.norm(o)) for o in _OFFSETS}


class GridPath:
    """Ordered cell-center waypoints along a 26-connected grid path."""

    def __init__(self, waypoints):
        self.waypoints = np.asarray(waypoints, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.waypoints)

    @property
    def cost(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())


def astar(grid: OccupancyGrid, start, goal) -> GridPath:
    """Shortest cell path under Euclidean step costs with Euclidean heuristic."""
    sc = grid.cell_of(start)
    gc = grid.cell_of(goal)
    for c, name in ((sc, "start"), (gc, "goal")):
        if not grid.in_bounds(c) or not grid.is_free(c):
            raise OccupiedEndpoint(f"{name} cell {c} is occupied or out of bounds")
    if sc == gc:
        return GridPath([grid.center(sc)])

    cell = grid.cell_size
    goal_arr = np.asarray(gc, dtype=float)

    def h(c):
        return float(np.linalg.norm((np.asarray(c, dtype=float) - goal_arr))) * cell

    counter = itertools.count()
    open_heap = [(h(sc), 0.0, next(counter), sc)]
    gscore = {sc: 0.0}
    came = {}
    closed = set()
    while open_heap:
        _, g, _, c = heapq.heappop(open_heap)
        if c in closed:
            continue
        if c == gc:
            cells = [c]
            while c in came:
                c = came[c]
                cells.append(c)
            cells.reverse()
            return GridPath([grid.center(x) for x in cells])
        closed.add(c)
        for off in _OFFSETS:
            nb = (c[0] + off[0], c[1] + off[1], c[2] + off[2])
            if nb in closed or not grid.is_free(nb):
                continue
            ng = g + _OFFSET_COSTS[off] * cell
            if ng < gscore.get(nb, np.inf):
                gscore[nb] = ng
                came[nb] = c
                heapq.heappush(open_heap, (ng + h(nb), ng, next(counter), nb))
    raise NoPath(f"no path from cell {sc} to cell {gc}")


def _collinear(waypoints, tol=1e-12) -> bool:
    w = waypoints
    if len(w) <= 2:
        return True
    d = w[-1] - w[0]
    n = np.linalg.norm(d)
    if n == 0:
        return False
    d = d / n
    rel = w[1:-1] - w[0]
    cross = np.cross(rel, d)
    return bool(np.all(np.linalg.norm(cross, axis=1) < tol * max(1.0, n)))


class SmoothPath:
    """C2 arc-length-parameterized curve from start to target.

    Built by interpolating grid waypoints with a natural cubic spline
    (straight segment and single-point cases handled exactly).  Dense sample
    tables back the closest-point, length, and kinematics queries.
    """

    def __init__(self, waypoints, sample_step=0.02):
        wp = np.asarray(waypoints, dtype=float).reshape(-1, 3)
        if len(wp) == 0:
            raise ValueError("need at least one waypoint")
        # drop consecutive duplicates
        if len(wp) > 1:
            keep = np.ones(len(wp), dtype=bool)
            keep[1:] = np.linalg.norm(np.diff(wp, axis=0), axis=1) > 1e-12
            wp = wp[keep]
        self.waypoints = wp
        self.start = wp[0].copy()
        self.target = wp[-1].copy()
        self._spline = None

        if len(wp) == 1:
            self._samples = wp.copy()
            self._s = np.zeros(1)
            self._u = np.zeros(1)
            self._tan = np.zeros((1, 3))
            self._curv = np.zeros((1, 3))
            self.total_length = 0.0
            return

        if len(wp) == 2 or _collinear(wp):
            chord = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(wp, axis=0), axis=1))]
            total = chord[-1]
            m = max(2, int(np.ceil(total / sample_step)) + 1)
            u = np.linspace(0.0, total, m)
            direction = (wp[-1] - wp[0]) / total
            pts = wp[0] + u[:, None] * direction
            self._samples = pts
            self._s = u.copy()
            self._u = u.copy()
            self._tan = np.tile(direction, (m, 1))
            self._curv = np.zeros((m, 3))
            self.total_length = float(total)
            return

        chord = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(wp, axis=0), axis=1))]
        self._spline = CubicSpline(chord, wp, axis=0, bc_type="natural")
        m = max(16, int(np.ceil(chord[-1] / sample_step)) + 1)
        u = np.linspace(0.0, chord[-1], m)
        pts = self._spline(u)
        d1 = self._spline(u, 1)
        d2 = self._spline(u, 2)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        s = np.r_[0.0, np.cumsum(seg)]
        speed = np.linalg.norm(d1, axis=1)
        speed = np.where(speed == 0, 1.0, speed)
        tan = d1 / speed[:, None]
        # curvature vector: dT/ds
        proj = (d1 * d2).sum(axis=1) / speed**2
        curv = (d2 - d1 * proj[:, None]) / speed[:, None] ** 2
        self._samples = pts
        self._s = s
        self._u = u
        self._tan = tan
        self._curv = curv
        self.total_length = float(s[-1])

    # -- queries ---------------------------------------------------------

    @property
    def degenerate(self) -> bool:
        return self.total_length == 0.0

    def _u_of_s(self, s: float) -> float:
        return float(np.interp(s, self._s, self._u))

    def _s_of_u(self, u: float) -> float:
        return float(np.interp(u, self._u, self._s))

    def point_at(self, s: float) -> np.ndarray:
        if self.degenerate:
            return self.start.copy()
        if self._spline is not None:
            return np.asarray(self._spline(self._u_of_s(s)))
        return self.start + np.clip(s, 0.0, self.total_length) * self._tan[0]

    def closest_point(self, q, s_hint=None, window=None):
        """Global (or windowed) closest point; ties break to the largest s.

        Returns (point, s).
        """
        q = np.asarray(q, dtype=float)
        if self.degenerate:
            return self.start.copy(), 0.0
        lo_i, hi_i = 0, len(self._samples) - 1
        if s_hint is not None and window is not None:
            lo_i = int(np.searchsorted(self._s, s_hint - window)) - 1
            hi_i = int(np.searchsorted(self._s, s_hint + window)) + 1
            lo_i = max(0, lo_i)
            hi_i = min(len(self._samples) - 1, hi_i)
        d = np.linalg.norm(self._samples[lo_i : hi_i + 1] - q, axis=1)
        dmin = d.min()
        # largest-arc-length tie rule among near-equal sample minima
        tied = np.nonzero(d <= dmin + 1e-9)[0]
        k = lo_i + int(tied[-1])
        return self._refine_closest(q, k)

    def _refine_closest(self, q, k):
        if self._spline is None:
            # exact projection onto the straight segment
            direction = self._tan[0]
            s = float(np.clip((q - self.start) @ direction, 0.0, self.total_length))
            return self.start + s * direction, s
        lo = self._u[max(0, k - 1)]
        hi = self._u[min(len(self._u) - 1, k + 1)]
        if hi <= lo:
            u_best = self._u[k]
        else:
            res = minimize_scalar(
                lambda u: float(((self._spline(u) - q) ** 2).sum()),
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": 1e-10},
            )
            u_best = float(res.x)
            # endpoint guard: bounded search can stall a hair inside the bracket
            for u_edge in (lo, hi):
                if ((np.asarray(self._spline(u_edge)) - q) ** 2).sum() < (
                    (np.asarray(self._spline(u_best)) - q) ** 2
                ).sum():
                    u_best = u_edge
        return np.asarray(self._spline(u_best)), self._s_of_u(u_best)

    def track(self, q, s_hint: float, window: float = 0.5):
        """Fast windowed closest-point query for high-rate tracking.

        Sample argmin plus parabolic refinement on the dense table; accuracy
        is bounded by the table resolution.  Returns (point, s).
        """
        q = np.asarray(q, dtype=float)
        if self.degenerate:
            return self.start.copy(), 0.0
        if self._spline is None:
            return self._refine_closest(q, 0)
        lo = max(0, int(self._s.searchsorted(s_hint - window)) - 1)
        hi = min(len(self._samples) - 1, int(self._s.searchsorted(s_hint + window)) + 1)
        d2 = ((self._samples[lo : hi + 1] - q) ** 2).sum(axis=1)
        k_rel = int(np.argmin(d2))
        k = lo + k_rel
        if 0 < k < len(self._s) - 1:
            if 0 < k_rel < hi - lo:
                a = float(d2[k_rel - 1])
                b = float(d2[k_rel])
                c = float(d2[k_rel + 1])
            else:
                a = float(((self._samples[k - 1] - q) ** 2).sum())
                b = float(((self._samples[k] - q) ** 2).sum())
                c = float(((self._samples[k + 1] - q) ** 2).sum())
            denom = a - 2.0 * b + c
            off = 0.0 if denom <= 1e-18 else min(1.0, max(-1.0, 0.5 * (a - c) / denom))
            if off >= 0.0:
                i0, w = k, off
            else:
                i0, w = k - 1, 1.0 + off
            p = (1.0 - w) * self._samples[i0] + w * self._samples[i0 + 1]
            s = (1.0 - w) * self._s[i0] + w * self._s[i0 + 1]
            return p, float(s)
        return self._samples[k].copy(), float(self._s[k])

    def track_frame(self, q, s_hint: float, window: float, v_cruise: float, taper_len: float):
        """Fused high-rate query: windowed closest point plus virtual-point
        kinematics at that point.  Returns (q_gamma, s, v_gamma, a_gamma)."""
        p, s = self.track(q, s_hint, window)
        if self.degenerate:
            return p, s, np.zeros(3), np.zeros(3)
        i = int(self._s.searchsorted(s))
        i = min(max(i, 1), len(self._s) - 1)
        s0 = self._s[i - 1]
        s1 = self._s[i]
        w = 0.0 if s1 == s0 else (s - s0) / (s1 - s0)
        t = (1.0 - w) * self._tan[i - 1] + w * self._tan[i]
        nt = np.sqrt((t * t).sum())
        if nt > 0:
            t = t / nt
        c = (1.0 - w) * self._curv[i - 1] + w * self._curv[i]
        remaining = self.total_length - s
        f, dfds = taper_factor(remaining, taper_len)
        speed = v_cruise * f
        v = speed * t
        a = speed * speed * c + (v_cruise * dfds) * speed * t
        return p, s, v, a

    def remaining_length(self, s: float) -> float:
        if s < -1e-9 or s > self.total_length + 1e-9:
            raise ValueError(f"arc length {s} outside [0, {self.total_length}]")
        return max(0.0, self.total_length - s)

    def frame_at(self, s: float):
        """(point, unit tangent, curvature vector) interpolated from the table."""
        if self.degenerate:
            return self.start.copy(), np.zeros(3), np.zeros(3)
        s = float(np.clip(s, 0.0, self.total_length))
        i = int(np.searchsorted(self._s, s))
        i = min(max(i, 1), len(self._s) - 1)
        s0, s1 = self._s[i - 1], self._s[i]
        w = 0.0 if s1 == s0 else (s - s0) / (s1 - s0)
        p = (1 - w) * self._samples[i - 1] + w * self._samples[i]
        t = (1 - w) * self._tan[i - 1] + w * self._tan[i]
        n = np.linalg.norm(t)
        if n > 0:
            t = t / n
        c = (1 - w) * self._curv[i - 1] + w * self._curv[i]
        return p, t, c


def taper_factor(remaining: float, taper_len: float):
    """Speed scale in [0, 1]: 1 until the last taper_len of path, 0 at the end.

    Returns (factor, d factor / d s).
    """
    if taper_len <= 0 or remaining >= taper_len:
        return 1.0, 0.0
    if remaining <= 0:
        return 0.0, 0.0
    f = 0.5 - 0.5 * np.cos(np.pi * remaining / taper_len)
    # d remaining / d s = -1
    dfds = -0.5 * np.pi / taper_len * np.sin(np.pi * remaining / taper_len)
    return float(f), float(dfds)


def path_kinematics(path: SmoothPath, s: float, v_cruise: float, taper_len: float = 0.0):
    """Velocity and acceleration of a virtual point at arc length s.

    Tangential speed is v_cruise, tapered to zero over the final taper_len of
    arc length; acceleration combines the centripetal term with the taper's
    tangential deceleration.
    """
    if v_cruise <= 0:
        raise ValueError("v_cruise must be positive")
    if path.degenerate:
        return np.zeros(3), np.zeros(3)
    _, tan, curv = path.frame_at(s)
    remaining = path.total_length - np.clip(s, 0.0, path.total_length)
    f, dfds = taper_factor(remaining, taper_len)
    speed = v_cruise * f
    v = speed * tan
    a = speed**2 * curv + (v_cruise * dfds) * speed * tan
    return v, a
