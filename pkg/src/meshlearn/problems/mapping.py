"""2-D occupancy maps, simulated lidar and per-robot scan streams.

World coordinates are in map units with cell (r, c) covering
[c, c+1) x [r, r+1) times ``scale``; networks see coordinates normalized to
[-1, 1] on each axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..data import Dataset

BUNDLED_MAP = "office_60x40.txt"

# closed-loop waypoints (world units) for the bundled floorplan, one loop per third
OFFICE_LOOPS = (
    ((6.5, 5.5), (16.5, 5.5), (16.5, 35.5), (6.5, 35.5)),
    ((23.5, 5.5), (36.5, 5.5), (36.5, 35.5), (23.5, 35.5)),
    ((43.5, 6.5), (56.5, 6.5), (56.5, 35.5), (43.5, 35.5)),
)


class MapError(ValueError):
    pass


@dataclass(frozen=True)
class GridMap:
    occupied: np.ndarray  # bool, (rows, cols)
    scale: float = 1.0

    def __post_init__(self):
        occ = self.occupied
        if occ.ndim != 2 or occ.size == 0:
            raise MapError("grid must be a non-empty 2-D array")
        border = np.concatenate([occ[0], occ[-1], occ[:, 0], occ[:, -1]])
        if not border.all():
            raise MapError("border cells must be occupied")
        if occ.all():
            raise MapError("map has no free cell")

    @property
    def rows(self) -> int:
        return self.occupied.shape[0]

    @property
    def cols(self) -> int:
        return self.occupied.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        return self.cols * self.scale, self.rows * self.scale

    def cell_of(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(pts, dtype=np.float64)
        c = np.floor(pts[..., 0] / self.scale).astype(int)
        r = np.floor(pts[..., 1] / self.scale).astype(int)
        return r, c

    def density(self, pts: np.ndarray) -> np.ndarray:
        """1.0 in occupied cells (and outside the map), else 0.0."""
        r, c = self.cell_of(pts)
        inside = (r >= 0) & (r < self.rows) & (c >= 0) & (c < self.cols)
        out = np.ones(r.shape)
        out[inside] = self.occupied[r[inside], c[inside]].astype(float)
        return out

    def normalize(self, pts: np.ndarray) -> np.ndarray:
        w, h = self.extent
        pts = np.asarray(pts, dtype=np.float64)
        return np.stack([2.0 * pts[..., 0] / w - 1.0, 2.0 * pts[..., 1] / h - 1.0], axis=-1)

    def denormalize(self, pts: np.ndarray) -> np.ndarray:
        w, h = self.extent
        pts = np.asarray(pts, dtype=np.float64)
        return np.stack([(pts[..., 0] + 1.0) * w / 2.0, (pts[..., 1] + 1.0) * h / 2.0], axis=-1)

    def free_cells(self) -> np.ndarray:
        return np.argwhere(~self.occupied)


def parse_grid_map(text: str) -> GridMap:
    lines = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip()]
    try:
        rows, cols, scale = lines[0].split()
        rows, cols, scale = int(rows), int(cols), float(scale)
    except (IndexError, ValueError) as exc:
        raise MapError("first line must be 'rows cols scale'") from exc
    body = lines[1:]
    if len(body) != rows or any(len(ln) != cols for ln in body):
        raise MapError(f"map body is not {rows} x {cols}")
    bad = set("".join(body)) - {"#", "."}
    if bad:
        raise MapError(f"unexpected map characters {sorted(bad)}")
    occ = np.array([[ch == "#" for ch in ln] for ln in body])
    return GridMap(occ, scale)


def load_grid_map(path=None) -> GridMap:
    if path is None:
        ref = resources.files("meshlearn.problems") / "floorplans" / BUNDLED_MAP
        return parse_grid_map(ref.read_text())
    return parse_grid_map(Path(path).read_text())


@dataclass(frozen=True)
class LidarScan:
    origin: np.ndarray
    points: np.ndarray  # (k, 2) world coordinates
    labels: np.ndarray  # (k,) in {0, 1}


def simulate_lidar(grid: GridMap, pose, num_rays: int = 64, max_range: float = 8.0,
                   samples_per_ray: int = 4, step: float | None = None, angle_offset: float = 0.0) -> LidarScan:
    """Ray-march each beam at a fixed fine step until the first occupied cell.

    A hit contributes its first occupied sample point with label 1. Each beam
    also contributes ``samples_per_ray`` evenly spaced label-0 points strictly
    inside its free segment; any that clip an occupied corner between march
    samples are dropped.
    """
    origin = np.asarray(pose, dtype=np.float64)
    if num_rays < 1:
        raise ValueError("num_rays must be >= 1")
    if grid.density(origin[None])[0] > 0:
        raise MapError(f"pose {tuple(origin)} is inside a wall")
    step = step if step is not None else 0.1 * grid.scale
    angles = angle_offset + 2.0 * np.pi * np.arange(num_rays) / num_rays
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    ts = np.arange(1, int(np.floor(max_range / step)) + 1) * step
    samples = origin + ts[None, :, None] * dirs[:, None, :]
    occ = grid.density(samples) > 0
    hit = occ.any(axis=1)
    first = np.where(hit, occ.argmax(axis=1), len(ts))

    pts, labels = [], []
    for k in range(num_rays):
        if hit[k]:
            pts.append(samples[k, first[k]])
            labels.append(1.0)
            t_free = ts[first[k] - 1] if first[k] > 0 else 0.0
        else:
            t_free = max_range
        if t_free > 0 and samples_per_ray > 0:
            frac = np.arange(1, samples_per_ray + 1) / (samples_per_ray + 1)
            free_pts = origin + (t_free * frac)[:, None] * dirs[k]
            free_pts = free_pts[grid.density(free_pts) == 0]
            pts.extend(free_pts)
            labels.extend([0.0] * len(free_pts))
    return LidarScan(origin, np.array(pts).reshape(-1, 2), np.array(labels))


def loop_poses(waypoints, n: int) -> np.ndarray:
    """``n`` poses evenly spaced by arc length around a closed polyline."""
    wp = np.asarray(waypoints, dtype=np.float64)
    closed = np.vstack([wp, wp[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.arange(n) * cum[-1] / n
    idx = np.searchsorted(cum, s, side="right") - 1
    frac = (s - cum[idx]) / seg[idx]
    return closed[idx] + frac[:, None] * (closed[idx + 1] - closed[idx])


def _check_path(grid: GridMap, waypoints):
    wp = np.asarray(waypoints, dtype=np.float64)
    dense = loop_poses(wp, 2000)
    bad = grid.density(np.vstack([wp, dense])) > 0
    if bad.any():
        raise MapError("trajectory passes through an occupied cell")


@dataclass(frozen=True)
class MappingSuite:
    grid: GridMap
    streams: list  # per robot: list of Dataset blocks, one per scan (normalized x, y (k, 1))
    positions: list  # per robot: (T, 2) normalized poses, aligned with streams
    coverage: list  # per robot: bool grid of cells observed by its scans
    val: Dataset
    val_cells: tuple  # (rows, cols) of each validation point

    def outside_coverage(self, i: int) -> np.ndarray:
        r, c = self.val_cells
        return ~self.coverage[i][r, c]


def _scan_block(grid: GridMap, scan: LidarScan) -> Dataset:
    return Dataset(grid.normalize(scan.points), scan.labels.reshape(-1, 1))


def make_mapping_suite(grid: GridMap | None = None, n_robots: int = 3, waypoints=None,
                       scans_per_trajectory: int = 600, seed: int = 0, num_rays: int = 64,
                       max_range: float = 8.0, samples_per_ray: int = 4, n_val_poses: int = 100) -> MappingSuite:
    grid = grid if grid is not None else load_grid_map()
    waypoints = waypoints if waypoints is not None else OFFICE_LOOPS
    if len(waypoints) < n_robots:
        raise MapError(f"{len(waypoints)} trajectories for {n_robots} robots")
    rng = np.random.default_rng(seed)

    streams, positions, coverage = [], [], []
    for i in range(n_robots):
        _check_path(grid, waypoints[i])
        poses = loop_poses(waypoints[i], scans_per_trajectory)
        blocks = []
        seen = np.zeros_like(grid.occupied)
        for pose in poses:
            scan = simulate_lidar(grid, pose, num_rays, max_range, samples_per_ray,
                                  angle_offset=rng.uniform(0, 2 * np.pi / num_rays))
            blocks.append(_scan_block(grid, scan))
            r, c = grid.cell_of(scan.points)
            seen[r, c] = True
        streams.append(blocks)
        positions.append(grid.normalize(poses))
        coverage.append(seen)

    union = np.logical_or.reduce(coverage)
    free = grid.free_cells()
    cells = free[rng.integers(len(free), size=n_val_poses)]
    val_pts, val_lab = [], []
    for r, c in cells:
        pose = (np.array([c, r]) + rng.uniform(0.1, 0.9, size=2)) * grid.scale
        scan = simulate_lidar(grid, pose, num_rays, max_range, samples_per_ray,
                              angle_offset=rng.uniform(0, 2 * np.pi / num_rays))
        val_pts.append(scan.points)
        val_lab.append(scan.labels)
    val_pts = np.concatenate(val_pts)
    val_lab = np.concatenate(val_lab)
    vr, vc = grid.cell_of(val_pts)
    keep = union[vr, vc]
    val = Dataset(grid.normalize(val_pts[keep]), val_lab[keep].reshape(-1, 1))
    return MappingSuite(grid, streams, positions, coverage, val, (vr[keep], vc[keep]))


def reconstruct(predict, grid: GridMap, rows: int, cols: int) -> np.ndarray:
    """Query a density model on an R x C mesh of cell-centre points; returns (R*C, 3) x, y, density."""
    xs = (np.arange(cols) + 0.5) / cols * 2.0 - 1.0
    ys = (np.arange(rows) + 0.5) / rows * 2.0 - 1.0
    xx, yy = np.meshgrid(xs, ys)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    dens = np.asarray(predict(pts)).reshape(-1)
    return np.column_stack([pts, dens])
