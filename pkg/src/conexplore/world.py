"""Static 3D world: obstacle point cloud, sensing model, occupancy grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

INF = float("inf")


@dataclass(frozen=True)
class SensingParams:
    """Radii of the sensing / clearance model.

    R_s        max robot-sensing range
    R_s_inner  full-weight sensing plateau (< R_s)
    R_o        min obstacle clearance
    R_o_outer  full-weight obstacle plateau (> R_o)
    R_c        min inter-robot distance
    R_c_outer  full-weight inter-robot plateau (> R_c)
    R_m        obstacle-sensor range (> R_o)
    """

    R_s: float
    R_s_inner: float
    R_o: float
    R_o_outer: float
    R_c: float
    R_c_outer: float
    R_m: float

    def __post_init__(self):
        if not (0.0 < self.R_s_inner < self.R_s):
            raise ValueError("need 0 < R_s_inner < R_s")
        if not (0.0 < self.R_o < self.R_o_outer):
            raise ValueError("need 0 < R_o < R_o_outer")
        if not (0.0 < self.R_c < self.R_c_outer):
            raise ValueError("need 0 < R_c < R_c_outer")
        if not (self.R_o < self.R_m):
            raise ValueError("need R_o < R_m")


def sample_box(box_min, box_max, spacing: float) -> np.ndarray:
    """Fill an axis-aligned box with a regular point lattice (spacing <= given)."""
    lo = np.asarray(box_min, dtype=float)
    hi = np.asarray(box_max, dtype=float)
    axes = []
    for a in range(3):
        n = max(2, int(np.ceil((hi[a] - lo[a]) / spacing)) + 1)
        axes.append(np.linspace(lo[a], hi[a], n))
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([c.ravel() for c in g], axis=1)


class ObstacleSet:
    """Finite (possibly empty) obstacle point cloud."""

    def __init__(self, points=None):
        if points is None:
            pts = np.zeros((0, 3))
        else:
            pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("obstacle points must be finite")
        self.points = pts
        self._tree = cKDTree(pts) if len(pts) else None

    @classmethod
    def from_primitives(cls, points=None, boxes=(), spacing=0.25) -> "ObstacleSet":
        parts = []
        if points is not None and len(points):
            parts.append(np.asarray(points, dtype=float).reshape(-1, 3))
        for box in boxes:
            sp = box.get("spacing", spacing)
            parts.append(sample_box(box["min"], box["max"], sp))
        if parts:
            return cls(np.concatenate(parts, axis=0))
        return cls()

    def __len__(self):
        return len(self.points)

    @property
    def empty(self) -> bool:
        return len(self.points) == 0

    def clearance(self, q) -> float:
        """Distance from a point to the nearest obstacle (+inf if none)."""
        if self._tree is None:
            return INF
        d, _ = self._tree.query(np.asarray(q, dtype=float))
        return float(d)

    def clearances(self, points) -> np.ndarray:
        """Clearance of each row of points (+inf everywhere if no obstacles)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if self._tree is None:
            return np.full(len(pts), INF)
        d, _ = self._tree.query(pts)
        return np.asarray(d, dtype=float)

    def local_view(self, q, R_m: float) -> np.ndarray:
        """Obstacle points within R_m of q (the robot's legal obstacle view)."""
        if self._tree is None:
            return self.points
        idx = self._tree.query_ball_point(np.asarray(q, dtype=float), R_m)
        return self.points[idx]

    def local_view_indices(self, q, R_m: float) -> list:
        if self._tree is None:
            return []
        return self._tree.query_ball_point(np.asarray(q, dtype=float), R_m)


def segment_point_distances(qi, qj, points):
    """Distance from each point to the segment qi-qj, with the segment parameter.

    Returns (dists, ts) where ts is the clamped projection parameter in [0, 1].
    """
    qi = np.asarray(qi, dtype=float)
    qj = np.asarray(qj, dtype=float)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    u = qj - qi
    uu = float(u @ u)
    if uu == 0.0:
        d = np.linalg.norm(pts - qi, axis=1)
        return d, np.zeros(len(pts))
    t = np.clip((pts - qi) @ u / uu, 0.0, 1.0)
    closest = qi + t[:, None] * u
    d = np.linalg.norm(closest - pts, axis=1)
    return d, t


def line_of_sight_clearance(qi, qj, obstacles: ObstacleSet) -> float:
    """Min distance from the segment qi-qj to any obstacle point (+inf if none)."""
    if obstacles.empty:
        return INF
    d, _ = segment_point_distances(qi, qj, obstacles.points)
    return float(d.min())


def adjacency(positions, obstacles: ObstacleSet, p: SensingParams) -> np.ndarray:
    """Boolean N x N neighbor matrix: range strictly < R_s and clearance >= R_o."""
    q = np.asarray(positions, dtype=float)
    n = len(q)
    diff = q[:, None, :] - q[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    adj = dist < p.R_s
    np.fill_diagonal(adj, False)
    if not obstacles.empty:
        ii, jj = np.nonzero(np.triu(adj, 1))
        if len(ii):
            pts = obstacles.points
            qa = q[ii]
            u = q[jj] - qa
            uu = np.maximum((u * u).sum(axis=1), 1e-300)
            w = pts[None, :, :] - qa[:, None, :]
            t = np.clip((w * u[:, None, :]).sum(axis=2) / uu[:, None], 0.0, 1.0)
            gap = t[:, :, None] * u[:, None, :] - w
            dmin = np.sqrt((gap * gap).sum(axis=2)).min(axis=1)
            blocked = dmin < p.R_o
            adj[ii[blocked], jj[blocked]] = False
            adj[jj[blocked], ii[blocked]] = False
    return adj


def neighbors(i: int, positions, obstacles: ObstacleSet, p: SensingParams) -> set:
    """Set of robots whose relative position robot i can measure."""
    adj = adjacency(positions, obstacles, p)
    return set(np.nonzero(adj[i])[0].tolist())


@dataclass
class OccupancyGrid:
    """Regular 3D grid; a cell is occupied iff an obstacle lies within R_grid
    (closed ball) of its center."""

    origin: np.ndarray
    cell_size: float
    dims: tuple
    occupied: np.ndarray = field(repr=False)

    def cell_of(self, point) -> tuple:
        idx = np.floor((np.asarray(point, dtype=float) - self.origin) / self.cell_size)
        return tuple(int(v) for v in idx)

    def in_bounds(self, cell) -> bool:
        return all(0 <= c < d for c, d in zip(cell, self.dims))

    def center(self, cell) -> np.ndarray:
        return self.origin + (np.asarray(cell, dtype=float) + 0.5) * self.cell_size

    def is_free(self, cell) -> bool:
        return self.in_bounds(cell) and not self.occupied[cell]

    def nearest_free_cell(self, point, max_radius_cells: int = 3):
        """Free cell closest to point, searching a small neighborhood."""
        c0 = self.cell_of(point)
        if self.is_free(c0):
            return c0
        best = None
        best_d = INF
        r = max_radius_cells
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                for dz in range(-r, r + 1):
                    c = (c0[0] + dx, c0[1] + dy, c0[2] + dz)
                    if self.is_free(c):
                        d = float(np.linalg.norm(self.center(c) - point))
                        if d < best_d:
                            best, best_d = c, d
        return best


def rasterize(obstacles: ObstacleSet, bounds, R_grid: float) -> OccupancyGrid:
    """Discretize the bounding box into cells of size R_grid and mark occupancy."""
    if R_grid <= 0:
        raise ValueError("R_grid must be positive")
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    if np.any(hi <= lo):
        raise ValueError("degenerate bounds")
    dims = tuple(int(np.ceil((hi[a] - lo[a]) / R_grid)) for a in range(3))
    occ = np.zeros(dims, dtype=bool)
    if not obstacles.empty:
        axes = [lo[a] + (np.arange(dims[a]) + 0.5) * R_grid for a in range(3)]
        g = np.meshgrid(*axes, indexing="ij")
        centers = np.stack([c.ravel() for c in g], axis=1)
        tree = cKDTree(obstacles.points)
        d, _ = tree.query(centers)
        occ = (d <= R_grid).reshape(dims)
    return OccupancyGrid(origin=lo, cell_size=R_grid, dims=dims, occupied=occ)
