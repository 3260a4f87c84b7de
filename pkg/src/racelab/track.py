"""Random closed race tracks and their boolean occupancy maps.

A track is built from a periodic cubic spline of the radius as a function of
the polar angle, which guarantees a closed, star-shaped centerline. The inner
and outer borders are lateral offsets of the centerline, and the drivable
region is rasterized into a square grid by an even-odd scanline fill. The grid
is the only world model the environment uses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

logger = logging.getLogger(__name__)

KNOTS = 512  # spline knots per closed curve


class TrackGenerationError(RuntimeError):
    """Raised when no valid track is found within the retry budget."""


@dataclass(frozen=True)
class TrackConfig:
    n_control_points: int = 10
    track_width: float = 0.2
    map_resolution: int = 1300
    world_extent: float = 2.0
    enable_obstacles: bool = True
    enable_chicanes: bool = True
    rng_seed: int = 0
    radius_range: tuple[float, float] = (0.45, 0.85)
    angle_jitter: float = 0.3  # fraction of the control point spacing
    min_curvature_radius: float = 0.12  # of the centerline, world units
    border_samples: int = 4000
    max_retries: int = 20
    # obstacles
    obstacle_count: tuple[int, int] = (2, 4)
    obstacle_half_length: float = 0.025
    obstacle_width_fraction: tuple[float, float] = (0.3, 0.6)
    obstacle_spacing: float = 0.4  # minimum arc distance between obstacles
    car_clearance: float = 0.02
    grace_distance: float = 0.5  # arc distance kept free around the start
    # chicanes
    chicane_count: tuple[int, int] = (1, 2)
    chicane_length_fraction: tuple[float, float] = (0.05, 0.10)
    chicane_amplitude_fraction: tuple[float, float] = (0.2, 0.4)

    def __post_init__(self):
        if self.n_control_points < 4:
            raise ValueError("n_control_points must be >= 4")
        if self.track_width <= 0:
            raise ValueError("track_width must be positive")
        if self.map_resolution < 100:
            raise ValueError("map_resolution must be >= 100")
        if self.world_extent <= 0:
            raise ValueError("world_extent must be positive")
        lo, hi = self.radius_range
        if not 0 < lo <= hi:
            raise ValueError("radius_range must satisfy 0 < r_min <= r_max")
        if self.obstacle_width_fraction[1] > 0.6:
            raise ValueError("obstacles may span at most 60% of the track width")
        if self.chicane_amplitude_fraction[1] > 0.4:
            raise ValueError("chicane amplitude may be at most 40% of the track width")
        gap = (1.0 - self.obstacle_width_fraction[1]) * self.track_width
        if gap < 1.5 * self.car_clearance:
            raise ValueError("obstacles would leave no passable gap")


class ClosedCurve:
    """Periodic cubic spline through knots, parametrized on t in [0, 1)."""

    def __init__(self, knots):
        knots = np.asarray(knots, dtype=float)
        t = np.linspace(0.0, 1.0, len(knots) + 1)
        self.knots = knots
        self._spline = CubicSpline(t, np.vstack([knots, knots[:1]]), bc_type="periodic")

    def __call__(self, t):
        return self._spline(np.mod(t, 1.0))

    def derivative(self, t, nu=1):
        return self._spline(np.mod(t, 1.0), nu)

    def sample(self, n):
        return self(np.arange(n) / n)

    def curvature(self, t):
        d1 = self.derivative(t, 1)
        d2 = self.derivative(t, 2)
        cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        return cross / np.linalg.norm(d1, axis=-1) ** 3


def _unit_normals(curve: ClosedCurve, t):
    d = curve.derivative(t)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    # left normal; the track runs counter-clockwise so this points inwards
    return np.stack([-d[..., 1], d[..., 0]], axis=-1)


@dataclass(frozen=True)
class SplineBorders:
    inner: ClosedCurve
    outer: ClosedCurve
    centerline: ClosedCurve
    width: float
    chicanes: tuple[tuple[float, float], ...] = ()  # (t_start, t_end) of each S-bend
    base_knots: np.ndarray | None = None  # undisplaced centerline knots
    offsets: np.ndarray | None = None  # accumulated lateral displacement per knot

    @property
    def start_point(self):
        return self.centerline(0.0)

    @property
    def start_heading(self):
        d = self.centerline.derivative(0.0)
        return float(np.arctan2(d[1], d[0]))

    @classmethod
    def from_centerline(cls, knots, width, offsets=None, chicanes=()):
        """Build borders at +-width/2 from centerline knots.

        ``offsets`` shifts both borders laterally (along the normals of the
        given knots) and moves the centerline with them.
        """
        base = ClosedCurve(knots)
        t = np.arange(len(knots)) / len(knots)
        n = _unit_normals(base, t)
        shift = np.zeros(len(knots)) if offsets is None else np.asarray(offsets)
        inner = knots + n * (0.5 * width + shift)[:, None]
        outer = knots - n * (0.5 * width - shift)[:, None]
        center = knots + n * shift[:, None]
        return cls(ClosedCurve(inner), ClosedCurve(outer), ClosedCurve(center), width, tuple(chicanes), knots, shift)

    def arc_length_table(self, n=4000):
        """Centerline samples, their t values and cumulative arc length."""
        t = np.arange(n) / n
        pts = self.centerline(t)
        seg = np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        return t, pts, s

    def length(self, n=4000):
        return float(self.arc_length_table(n)[2][-1])


@dataclass(frozen=True)
class Obstacle:
    """Rectangle in the local track frame, attached to one border."""

    center: np.ndarray  # centerline point the frame is anchored to
    tangent: np.ndarray
    normal: np.ndarray
    half_length: float
    lateral: tuple[float, float]  # blocked interval along the normal
    t: float = 0.0

    @property
    def half_extent(self):
        return self.half_length, 0.5 * (self.lateral[1] - self.lateral[0])

    def contains(self, points):
        d = np.asarray(points, dtype=float) - self.center
        along = d @ self.tangent
        lat = d @ self.normal
        return (np.abs(along) <= self.half_length) & (lat >= self.lateral[0]) & (lat <= self.lateral[1])


@dataclass(frozen=True)
class TrackMap:
    grid: np.ndarray  # [iy, ix], True = drivable
    cell_size: float
    origin: np.ndarray  # world position of the lower-left corner of cell (0, 0)
    obstacles: tuple[Obstacle, ...] = field(default=())

    @property
    def resolution(self):
        return self.grid.shape[0]

    def cell_index(self, points):
        p = (np.asarray(points, dtype=float) - self.origin) / self.cell_size
        return np.floor(p).astype(np.int64)

    def cell_centers(self, ix, iy):
        return self.origin + (np.stack([ix, iy], axis=-1) + 0.5) * self.cell_size

    def is_inside(self, points):
        idx = self.cell_index(points)
        ix, iy = idx[..., 0], idx[..., 1]
        n = self.resolution
        ok = (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n)
        out = np.zeros(ix.shape, dtype=bool)
        out[ok] = self.grid[iy[ok], ix[ok]]
        return out


def _polar_centerline(rng, config):
    n = config.n_control_points
    jitter = config.angle_jitter * rng.uniform(-0.5, 0.5, n)
    angles = 2 * np.pi * (np.arange(n) + jitter) / n
    radii = rng.uniform(*config.radius_range, n)
    radius = CubicSpline(np.append(angles, angles[0] + 2 * np.pi), np.append(radii, radii[0]), bc_type="periodic")
    theta = angles[0] + 2 * np.pi * np.arange(KNOTS) / KNOTS
    r = radius(theta)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def _is_star_shaped(points):
    ang = np.unwrap(np.arctan2(points[:, 1], points[:, 0]))
    steps = np.diff(np.append(ang, ang[0] + 2 * np.pi))
    return bool(np.all(steps > 0)) and np.isclose(ang[-1] - ang[0] + steps[-1], 2 * np.pi)


def validate_borders(borders: SplineBorders, config: TrackConfig) -> bool:
    """Check closure-compatible geometry: no pinching and no self-crossing."""
    n = config.border_samples
    t = np.arange(n) / n
    inner, outer = borders.inner(t), borders.outer(t)
    if np.min(np.linalg.norm(inner - outer, axis=1)) < 0.5 * borders.width:
        return False
    for pts in (inner, outer, borders.centerline(t)):
        if not _is_star_shaped(pts):
            return False
    limit = 0.5 * config.world_extent - 2 * config.world_extent / config.map_resolution
    if np.max(np.abs(outer)) >= limit:
        return False
    return True


def _curvature_ok(borders, config, t=None):
    t = np.arange(config.border_samples) / config.border_samples if t is None else t
    kappa = np.abs(borders.centerline.curvature(t))
    return bool(np.max(kappa) * config.min_curvature_radius <= 1.0)


def _base_borders(config: TrackConfig, rng) -> SplineBorders:
    for attempt in range(config.max_retries):
        knots = _polar_centerline(rng, config)
        borders = SplineBorders.from_centerline(knots, config.track_width)
        if _curvature_ok(borders, config) and validate_borders(borders, config):
            return borders
        logger.debug("rejected degenerate track (attempt %d)", attempt)
    raise TrackGenerationError(
        f"no valid track after {config.max_retries} attempts; the width may be too large for the radius range"
    )


def rasterize(borders: SplineBorders, config: TrackConfig) -> TrackMap:
    """Even-odd fill at cell centers between the inner and outer polylines."""
    res = config.map_resolution
    cell = config.world_extent / res
    origin = np.full(2, -0.5 * config.world_extent)
    n = config.border_samples
    t = np.arange(n) / n
    edges = []
    for curve in (borders.inner, borders.outer):
        p = curve(t)
        edges.append(np.concatenate([p, np.roll(p, -1, axis=0)], axis=1))
    x0, y0, x1, y1 = np.concatenate(edges).T

    # rows whose center y satisfies min(y0, y1) <= y < max(y0, y1)
    lo = np.ceil((np.minimum(y0, y1) - origin[1]) / cell - 0.5).astype(np.int64)
    hi = np.ceil((np.maximum(y0, y1) - origin[1]) / cell - 0.5).astype(np.int64)
    count = np.maximum(hi - lo, 0)
    edge = np.repeat(np.arange(len(x0)), count)
    row = np.repeat(lo, count) + (np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count))
    yc = origin[1] + (row + 0.5) * cell
    e0x, e0y, e1x, e1y = x0[edge], y0[edge], x1[edge], y1[edge]
    xc = e0x + (yc - e0y) * (e1x - e0x) / (e1y - e0y)
    col = np.floor((xc - origin[0]) / cell - 0.5).astype(np.int64) + 1
    keep = (row >= 0) & (row < res)
    toggles = np.zeros((res, res + 1), dtype=np.int32)
    np.add.at(toggles, (row[keep], np.clip(col[keep], 0, res)), 1)
    grid = (np.cumsum(toggles, axis=1)[:, :res] % 2).astype(bool)
    return TrackMap(grid=grid, cell_size=cell, origin=origin)


def carve_obstacles(track_map: TrackMap, obstacles) -> TrackMap:
    """Return a copy of the map with the obstacle footprints marked blocked."""
    grid = track_map.grid.copy()
    cell = track_map.cell_size
    for ob in obstacles:
        reach = np.hypot(ob.half_length, max(abs(ob.lateral[0]), abs(ob.lateral[1]))) + 2 * cell
        lo = track_map.cell_index(ob.center - reach)
        hi = track_map.cell_index(ob.center + reach) + 1
        lo = np.clip(lo, 0, track_map.resolution)
        hi = np.clip(hi, 0, track_map.resolution)
        ix, iy = np.meshgrid(np.arange(lo[0], hi[0]), np.arange(lo[1], hi[1]))
        inside = ob.contains(track_map.cell_centers(ix, iy))
        grid[iy[inside], ix[inside]] = False
    return replace(track_map, grid=grid, obstacles=track_map.obstacles + tuple(obstacles))


def make_obstacle(borders: SplineBorders, t: float, side: int, fraction: float, half_length: float) -> Obstacle:
    """Obstacle covering ``fraction`` of the width from one border.

    ``side`` = +1 attaches it to the inner border, -1 to the outer one. The
    footprint reaches a little past the border so no sliver stays open.
    """
    w = borders.width
    center = borders.centerline(t)
    tangent = borders.centerline.derivative(t)
    tangent = tangent / np.linalg.norm(tangent)
    normal = np.array([-tangent[1], tangent[0]])
    edge = 0.5 * w - fraction * w
    pad = 0.5 * w + 0.25 * w
    lateral = (edge, pad) if side > 0 else (-pad, -edge)
    return Obstacle(center, tangent, normal, half_length, lateral, float(t))


def _arc_position(s_table, t_table, s):
    return float(np.interp(s, s_table[:-1], t_table))


def add_obstacles(track_map: TrackMap, borders: SplineBorders, rng, config: TrackConfig) -> TrackMap:
    """Block 2-4 partial-width rectangles along the track, away from the start."""
    if not config.enable_obstacles:
        return track_map
    t_tab, _, s_tab = borders.arc_length_table()
    total = s_tab[-1]
    chicane_s = [(np.interp(a, t_tab, s_tab[:-1]), np.interp(b, t_tab, s_tab[:-1])) for a, b in borders.chicanes]
    count = int(rng.integers(config.obstacle_count[0], config.obstacle_count[1] + 1))
    placed_s: list[float] = []
    obstacles = []
    margin = config.obstacle_half_length + 0.5 * config.track_width
    for k in range(count):
        for _ in range(config.max_retries):
            s = rng.uniform(config.grace_distance, total - config.grace_distance)
            side = 1 if rng.random() < 0.5 else -1
            frac = rng.uniform(*config.obstacle_width_fraction)
            if any(abs(s - p) < config.obstacle_spacing for p in placed_s):
                continue
            if any(a - margin <= s <= b + margin for a, b in chicane_s):
                continue
            placed_s.append(s)
            obstacles.append(make_obstacle(borders, _arc_position(s_tab, t_tab, s), side, frac, config.obstacle_half_length))
            break
        else:
            logger.info("skipping obstacle %d: no valid placement found", k)
    return carve_obstacles(track_map, obstacles)


def chicane_profile(u, amplitude):
    """Lateral S-shaped offset on u in [0, 1]; zero value and slope at both ends."""
    u = np.asarray(u, dtype=float)
    return amplitude * np.sin(2 * np.pi * u) * np.sin(np.pi * u) ** 2


def apply_chicane(borders: SplineBorders, t_start: float, length_fraction: float, amplitude: float) -> SplineBorders:
    """Displace both borders laterally by an S-shaped offset over an arc."""
    if amplitude == 0.0:
        return borders
    knots = borders.base_knots
    t_knots = np.arange(len(knots)) / len(knots)
    t_tab, _, s_tab = borders.arc_length_table()
    total = s_tab[-1]
    s_knots = np.interp(t_knots, t_tab, s_tab[:-1])
    s0 = float(np.interp(t_start, t_tab, s_tab[:-1]))
    u = (s_knots - s0) / (length_fraction * total)
    offsets = borders.offsets + np.where((u >= 0) & (u <= 1), chicane_profile(np.clip(u, 0, 1), amplitude), 0.0)
    s1 = s0 + length_fraction * total
    t_end = float(np.interp(s1, s_tab[:-1], t_tab))
    return SplineBorders.from_centerline(knots, borders.width, offsets, borders.chicanes + ((t_start, t_end),))


def add_chicanes(borders: SplineBorders, rng, config: TrackConfig) -> SplineBorders:
    """Insert 1-2 S-bends, each over 5-10% of the lap."""
    if not config.enable_chicanes:
        return borders
    count = int(rng.integers(config.chicane_count[0], config.chicane_count[1] + 1))
    for k in range(count):
        t_tab, _, s_tab = borders.arc_length_table()
        total = s_tab[-1]
        for _ in range(config.max_retries):
            frac = rng.uniform(*config.chicane_length_fraction)
            amp = rng.uniform(*config.chicane_amplitude_fraction) * config.track_width
            s0 = rng.uniform(config.grace_distance, total - config.grace_distance - frac * total)
            if any(_overlaps(s0, frac * total, a, b, t_tab, s_tab) for a, b in borders.chicanes):
                continue
            candidate = apply_chicane(borders, _arc_position(s_tab, t_tab, s0), frac, amp)
            if validate_borders(candidate, config):
                borders = candidate
                break
        else:
            logger.info("skipping chicane %d: no valid placement found", k)
    return borders


def _overlaps(s0, length, t_a, t_b, t_tab, s_tab):
    a = np.interp(t_a, t_tab, s_tab[:-1])
    b = np.interp(t_b, t_tab, s_tab[:-1])
    return s0 < b + 0.2 and s0 + length > a - 0.2


def generate_track(config: TrackConfig) -> tuple[SplineBorders, TrackMap]:
    """Random closed track and its occupancy map; a pure function of the config."""
    rng = np.random.default_rng(config.rng_seed)
    borders = _base_borders(config, rng)
    borders = add_chicanes(borders, rng, config)
    track_map = rasterize(borders, config)
    track_map = add_obstacles(track_map, borders, rng, config)
    return borders, track_map


def export_pgm(track_map: TrackMap, path):
    """Write the grid as a binary PGM, white = drivable, north up."""
    img = np.where(track_map.grid[::-1], 255, 0).astype(np.uint8)
    n = img.shape[0]
    with open(path, "wb") as f:
        f.write(f"P5\n{n} {n}\n255\n".encode())
        f.write(img.tobytes())


def borders_svg(borders: SplineBorders, extent: float, size: int = 650, samples: int = 1000, extra: str = "") -> str:
    scale = size / extent

    def path(curve):
        p = curve(np.arange(samples) / samples)
        xs = (p[:, 0] + 0.5 * extent) * scale
        ys = (0.5 * extent - p[:, 1]) * scale
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        return f'<polygon points="{pts}" fill="none" stroke="black" stroke-width="1"/>'

    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">\n'
        f'<rect width="{size}" height="{size}" fill="white"/>\n'
        f"{path(borders.outer)}\n{path(borders.inner)}\n{extra}</svg>\n"
    )


def export_svg(borders: SplineBorders, path, extent: float = 2.0):
    with open(path, "w") as f:
        f.write(borders_svg(borders, extent))
