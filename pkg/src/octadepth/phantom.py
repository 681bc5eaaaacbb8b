"""Deterministic synthetic vessel trees with exact ground truth.

Trees grow by recursive bifurcation in normalised canvas coordinates. Each
branch is a constant-curvature arc with a fixed number of random draws, so
the tree's topology is independent of the output resolution. Depth ``z``
increases with generation (larger vessels sit nearer the sensor) and varies
smoothly along a branch.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .raster import BinaryMask, DepthMap, Image2D

FIELD_OF_VIEW_MM = 3.0
MM_PER_DEPTH = 0.5

# normalised-coordinate constants
_SAMPLES = 256
_MARGIN = 0.03
_CLEARANCE = 0.035
_MIN_FRACTION = 0.3


class EmptySceneError(ValueError):
    """The configuration produced no branches."""


@dataclass(frozen=True)
class PhantomConfig:
    depth_levels: int = 4
    branch_prob: float = 0.8
    radius_root: float = 3.0
    radius_decay: float = 0.7
    angle_jitter: float = 0.6
    canvas: tuple[int, int] = (512, 512)  # (width, height)
    n_roots: int = 1
    root_length: float = 0.8
    length_decay: float = 0.65
    z_root: float = 0.2
    z_step: float = 0.22
    z_jitter: float = 0.04
    z_wiggle: float = 0.03

    def __post_init__(self):
        object.__setattr__(self, "canvas", tuple(int(c) for c in self.canvas))
        if self.radius_root < 1:
            raise ValueError("radius_root must be at least 1 px")
        if self.depth_levels < 1:
            raise ValueError("depth_levels must be at least 1")
        if not 0 < self.radius_decay < 1:
            raise ValueError("radius_decay must lie in (0, 1)")
        if not 0 <= self.branch_prob <= 1:
            raise ValueError("branch_prob must lie in [0, 1]")
        if self.n_roots < 1:
            raise ValueError("n_roots must be at least 1")
        if min(self.canvas) < 8:
            raise ValueError("canvas must be at least 8x8")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["canvas"] = list(self.canvas)
        return d


@dataclass
class Branch:
    points: np.ndarray  # (k, 3): x px, y px, z in [0, 1]
    radii: np.ndarray  # (k,) px
    parent: int = -1
    parent_vertex: int = -1
    generation: int = 0


@dataclass
class PhantomScene:
    branches: list
    seed: int
    canvas: tuple[int, int]
    config: PhantomConfig = field(default_factory=PhantomConfig)

    def topology(self) -> list[tuple[int, int]]:
        """(parent, generation) per branch; parent -1 for roots."""
        return [(b.parent, b.generation) for b in self.branches]


@dataclass
class PhantomSample:
    angiogram: Image2D
    depth_gt: DepthMap
    seg_gt: BinaryMask
    centerline_gt: np.ndarray  # (m, 3) mm
    mm_per_px: float
    mm_per_depth: float


@dataclass
class _Arc:
    start: np.ndarray
    heading: float
    curvature: float
    length: float
    generation: int
    parent: int
    s_root: float  # arc length on the parent where this branch starts
    z_start: float
    z_target: float
    phase: float
    period: float
    samples: np.ndarray = None
    children_s: list = field(default_factory=list)

    def position(self, s):
        s = np.asarray(s, dtype=np.float64)
        if abs(self.curvature) < 1e-9:
            dx, dy = s * math.cos(self.heading), s * math.sin(self.heading)
        else:
            k, h = self.curvature, self.heading
            dx = (np.sin(h + k * s) - math.sin(h)) / k
            dy = -(np.cos(h + k * s) - math.cos(h)) / k
        return np.stack([self.start[0] + dx, self.start[1] + dy], axis=-1)

    def heading_at(self, s):
        return self.heading + self.curvature * s

    def z(self, s, wiggle):
        s = np.asarray(s, dtype=np.float64)
        ramp = max(0.3 * self.length, 1e-9)
        t = np.clip(s / ramp, 0.0, 1.0)
        smooth = t * t * (3 - 2 * t)
        base = self.z_start + (self.z_target - self.z_start) * smooth
        return np.clip(base + wiggle * np.sin(2 * np.pi * s / self.period + self.phase), 0.0, 1.0)


def _z_level(cfg: PhantomConfig, generation: int, u: float) -> float:
    z = cfg.z_root + generation * cfg.z_step + (2 * u - 1) * cfg.z_jitter
    return float(np.clip(z, 0.02, 0.98))


def _grow(arc: _Arc, accepted: list, cfg: PhantomConfig) -> float:
    """Arc length until the branch leaves the canvas or nears another branch."""
    s = np.linspace(0.0, arc.length, _SAMPLES)
    pts = arc.position(s)
    inside = np.all((pts >= _MARGIN) & (pts <= 1 - _MARGIN), axis=1)
    stop = _SAMPLES if inside.all() else int(np.argmin(inside))
    if accepted and stop > 0:
        others = []
        for j, other in enumerate(accepted):
            o = other.samples
            if j == arc.parent:
                # the parent is allowed near this branch's root
                far = np.hypot(*(o - arc.start).T) > 3 * _CLEARANCE
                o = o[far]
            others.append(o)
        others = np.concatenate(others) if others else np.empty((0, 2))
        if len(others):
            d = np.sqrt(((pts[:stop, None, :] - others[None, :, :]) ** 2).sum(-1)).min(axis=1)
            hit = d < _CLEARANCE
            if hit.any():
                stop = int(np.argmax(hit))
    if stop < 2:
        return 0.0
    return float(s[stop - 1])


def generate_tree(seed: int, config: PhantomConfig = PhantomConfig()) -> PhantomScene:
    """Grow a vessel forest. Deterministic for fixed ``(seed, config)``."""
    cfg = config
    rng = np.random.default_rng(seed)
    queue = []
    for _ in range(cfg.n_roots):
        u = rng.random(6)
        side = int(u[0] * 4) % 4
        t = 0.2 + 0.6 * u[1]
        start, inward = [
            (np.array([t, _MARGIN]), math.pi / 2),
            (np.array([1 - _MARGIN, t]), math.pi),
            (np.array([t, 1 - _MARGIN]), -math.pi / 2),
            (np.array([_MARGIN, t]), 0.0),
        ][side]
        heading = inward + (2 * u[2] - 1) * 0.5
        curvature = (2 * u[3] - 1) * cfg.angle_jitter / cfg.root_length
        queue.append(_Arc(start, heading, curvature, cfg.root_length, 0, -1, 0.0,
                          _z_level(cfg, 0, u[4]), _z_level(cfg, 0, u[4]),
                          2 * np.pi * u[5], 0.5 * cfg.root_length))

    accepted: list[_Arc] = []
    while queue:
        arc = queue.pop(0)
        full = arc.length
        arc.length = _grow(arc, accepted, cfg)
        if arc.length < _MIN_FRACTION * full:
            continue
        arc.samples = arc.position(np.linspace(0.0, arc.length, _SAMPLES))
        idx = len(accepted)
        accepted.append(arc)
        if arc.parent >= 0:
            accepted[arc.parent].children_s.append(arc.s_root)
        for sign in (1.0, -1.0):
            u = rng.random(6)
            if arc.generation + 1 >= cfg.depth_levels or u[0] >= cfg.branch_prob:
                continue
            s_root = (0.25 + 0.6 * u[1]) * arc.length
            g = arc.generation + 1
            length = full * cfg.length_decay
            heading = arc.heading_at(s_root) + sign * (0.45 + 0.5 * u[2])
            curvature = (2 * u[3] - 1) * cfg.angle_jitter / length
            queue.append(_Arc(arc.position(s_root), heading, curvature, length, g, idx,
                              s_root, float(arc.z(s_root, cfg.z_wiggle)), _z_level(cfg, g, u[4]),
                              0.0, 0.5 * length))
            # the child's wiggle is zero at its root, keeping z continuous
    if not accepted:
        raise EmptySceneError(f"seed {seed} produced no branches")

    w, h = cfg.canvas
    scale = np.array([w - 1, h - 1], dtype=np.float64)
    step = 1.0 / max(scale)
    branches, branch_s = [], []
    for arc in accepted:
        n = max(2, int(math.ceil(arc.length / step)) + 1)
        s = np.union1d(np.linspace(0.0, arc.length, n), np.asarray(arc.children_s, float))
        xy = arc.position(s) * scale
        z = arc.z(s, cfg.z_wiggle)
        radius = cfg.radius_root * cfg.radius_decay ** arc.generation
        parent_vertex = -1
        if arc.parent >= 0:
            ps = branch_s[arc.parent]
            parent_vertex = int(np.flatnonzero(ps == arc.s_root)[0])
            xy[0] = branches[arc.parent].points[parent_vertex, :2]
            z[0] = branches[arc.parent].points[parent_vertex, 2]
        branches.append(Branch(np.column_stack([xy, z]), np.full(len(s), radius),
                               arc.parent, parent_vertex, arc.generation))
        branch_s.append(s)
    return PhantomScene(branches, seed, (w, h), cfg)


def rasterize(scene: PhantomScene, noise_level: float = 0.05,
              mm_per_px: float | None = None, mm_per_depth: float = MM_PER_DEPTH) -> PhantomSample:
    """Render segmentation, depth (nearest branch wins) and angiogram."""
    w, h = scene.canvas
    if mm_per_px is None:
        mm_per_px = FIELD_OF_VIEW_MM / w
    depth = np.full((h, w), np.inf)
    for br in scene.branches:
        _paint_branch(depth, br)
    seg = np.isfinite(depth)
    depth_img = np.where(seg, depth, 0.0)
    rng = np.random.default_rng([scene.seed, 1])
    angio = seg.astype(np.float64)
    if noise_level > 0:
        angio = np.clip(angio + rng.normal(0.0, noise_level, angio.shape), 0.0, 1.0)
    pts = np.concatenate([b.points for b in scene.branches])
    cloud = pts * np.array([mm_per_px, mm_per_px, mm_per_depth])
    mask = BinaryMask(seg.astype(np.uint8))
    return PhantomSample(Image2D(angio), DepthMap(Image2D(depth_img), mask), mask,
                         cloud, mm_per_px, mm_per_depth)


def _paint_branch(depth: np.ndarray, br: Branch) -> None:
    h, w = depth.shape
    p = br.points
    for i in range(len(p) - 1):
        (x0, y0, z0), (x1, y1, z1) = p[i], p[i + 1]
        r0, r1 = br.radii[i], br.radii[i + 1]
        rmax = max(r0, r1)
        xa = max(int(math.floor(min(x0, x1) - rmax)), 0)
        xb = min(int(math.ceil(max(x0, x1) + rmax)), w - 1)
        ya = max(int(math.floor(min(y0, y1) - rmax)), 0)
        yb = min(int(math.ceil(max(y0, y1) + rmax)), h - 1)
        if xa > xb or ya > yb:
            continue
        gy, gx = np.mgrid[ya:yb + 1, xa:xb + 1].astype(np.float64)
        dx, dy = x1 - x0, y1 - y0
        ll = dx * dx + dy * dy
        if ll > 0:
            t = np.clip(((gx - x0) * dx + (gy - y0) * dy) / ll, 0.0, 1.0)
        else:
            t = np.zeros_like(gx)
        dist = np.hypot(gx - (x0 + t * dx), gy - (y0 + t * dy))
        cover = dist <= r0 + t * (r1 - r0)
        z = z0 + t * (z1 - z0)
        win = depth[ya:yb + 1, xa:xb + 1]
        np.minimum(win, np.where(cover, z, np.inf), out=win)


def make_sample(seed: int, config: PhantomConfig = PhantomConfig(),
                noise_level: float = 0.05, mm_per_depth: float = MM_PER_DEPTH) -> PhantomSample:
    return rasterize(generate_tree(seed, config), noise_level, mm_per_depth=mm_per_depth)
