"""Lift a vessel graph into 3D, resample, sweep tubes and export geometry.

Coordinates are millimetres: ``(x * sx, y * sy, depth * sz)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import vesselgraph as vg
from .phantom import FIELD_OF_VIEW_MM, MM_PER_DEPTH
from .raster import BinaryMask, DepthMap, bilinear_sample_many

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReconConfig:
    """Physical scales and sweep settings.

    ``sx``/``sy`` of ``None`` mean a 3 mm field of view across the image
    (3/512 mm/px at 512 px); :meth:`for_shape` fills them in.
    """

    sx: float | None = None
    sy: float | None = None
    sz: float = MM_PER_DEPTH
    step: float = 1.0  # px, converted with sx
    sides: int = 8
    caps: bool = True
    relink_radius: float = vg.RELINK_RADIUS
    min_spur_length: int = vg.MIN_SPUR_LENGTH

    def __post_init__(self):
        scales = [v for v in (self.sx, self.sy) if v is not None]
        if min(scales + [self.sz, self.step]) <= 0:
            raise ValueError("scales and step must be positive")
        if self.sides < 3:
            raise ValueError("a tube needs at least 3 sides")

    def for_shape(self, shape) -> "ReconConfig":
        h, w = shape
        return replace(self,
                       sx=FIELD_OF_VIEW_MM / w if self.sx is None else self.sx,
                       sy=FIELD_OF_VIEW_MM / h if self.sy is None else self.sy)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PointCloud3:
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    radius: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud has non-finite coordinates")

    def __len__(self):
        return len(self.points)


@dataclass
class TubeMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    radius: np.ndarray

    @classmethod
    def empty(cls) -> "TubeMesh":
        return cls(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64), np.empty(0))

    @classmethod
    def merge(cls, meshes) -> "TubeMesh":
        meshes = list(meshes)
        if not meshes:
            return cls.empty()
        offs = np.cumsum([0] + [len(m.vertices) for m in meshes[:-1]])
        return cls(np.concatenate([m.vertices for m in meshes]),
                   np.concatenate([m.triangles + o for m, o in zip(meshes, offs)]),
                   np.concatenate([m.radius for m in meshes]))


@dataclass
class ReconResult:
    graph: vg.VesselGraph
    skeleton: BinaryMask
    polylines: list  # per segment, (m, 3) mm after resampling
    radii: list  # per segment, (m,) mm
    cloud: PointCloud3
    mesh: TubeMesh
    filled: int = 0
    config: ReconConfig | None = None


# ---------------------------------------------------------------------------
# Lifting and resampling
# ---------------------------------------------------------------------------


def segment_pixels(graph: vg.VesselGraph, seg: vg.Segment) -> np.ndarray:
    """Chain pixels extended to junction nodes so branches meet."""
    pos = {n.id: (n.x, n.y, n.kind) for n in graph.nodes}
    px = [tuple(p) for p in seg.pixels]
    xa, ya, ka = pos[seg.node_a]
    xb, yb, kb = pos[seg.node_b]
    if ka == "junction" and px[0] != (xa, ya):
        px.insert(0, (xa, ya))
    if kb == "junction" and px[-1] != (xb, yb):
        px.append((xb, yb))
    return np.array(px, dtype=np.float64).reshape(-1, 2)


def fill_invalid(depth: DepthMap) -> tuple[np.ndarray, np.ndarray]:
    """Depth array with invalid pixels taken from the nearest valid one, and
    the boolean invalid mask."""
    data = np.array(depth.image.data)
    invalid = ~depth.valid.bits.astype(bool)
    if invalid.any() and not invalid.all():
        _, (iy, ix) = ndimage.distance_transform_edt(invalid, return_indices=True)
        data = data[iy, ix]
    return data, invalid


def lift_centerline(graph: vg.VesselGraph, depth: DepthMap, cfg: ReconConfig = ReconConfig()):
    """Map segment pixels to 3D. Returns ``(polylines, cloud, filled)`` where
    ``filled`` counts pixels whose depth came from a neighbouring valid pixel."""
    from .raster import Image2D

    cfg = cfg.for_shape(depth.shape)
    data, invalid = fill_invalid(depth)
    img = Image2D(data)
    h, w = data.shape
    polylines, filled = [], 0
    for seg in graph.segments:
        px = segment_pixels(graph, seg)
        if np.any(px < 0) or np.any(px[:, 0] > w - 1) or np.any(px[:, 1] > h - 1):
            raise ValueError("graph pixel outside the depth map")
        z = bilinear_sample_many(img, px[:, 0], px[:, 1])
        filled += int(invalid[px[:, 1].astype(int), px[:, 0].astype(int)].sum())
        polylines.append(np.column_stack([px[:, 0] * cfg.sx, px[:, 1] * cfg.sy, z * cfg.sz]))
    if filled:
        log.warning("%d centerline pixel(s) on invalid depth, filled from nearest valid", filled)
    pts = np.concatenate(polylines) if polylines else np.empty((0, 3))
    return polylines, PointCloud3(pts), filled


def _arclength(p: np.ndarray) -> np.ndarray:
    d = np.diff(p, axis=0)
    return np.concatenate([[0.0], np.cumsum(np.sqrt((d * d).sum(axis=1)))])


def resample_segment(poly, step: float, values=None):
    """Resample at equal arc-length spacing no larger than ``step``.

    Endpoints are kept exactly. ``values`` (one per point) are interpolated
    along arc length and returned alongside when given.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    p = np.asarray(poly, dtype=np.float64)
    if len(p) < 2:
        return (p, np.asarray(values, dtype=np.float64)) if values is not None else p
    s = _arclength(p)
    total = s[-1]
    n = max(1, int(math.ceil(total / step)))
    t = np.linspace(0.0, total, n + 1)
    out = np.column_stack([np.interp(t, s, p[:, k]) for k in range(p.shape[1])])
    out[0], out[-1] = p[0], p[-1]
    if values is None:
        return out
    v = np.interp(t, s, np.asarray(values, dtype=np.float64))
    return out, v


# ---------------------------------------------------------------------------
# Tube sweep
# ---------------------------------------------------------------------------


def _collapse(points, radii):
    keep = [0]
    for i in range(1, len(points)):
        if np.any(points[i] != points[keep[-1]]):
            keep.append(i)
    return points[keep], radii[keep]


def transport_frames(points: np.ndarray):
    """Tangents and rotation-minimising normals (double reflection)."""
    d = np.diff(points, axis=0)
    seg_t = d / np.linalg.norm(d, axis=1, keepdims=True)
    tan = np.empty_like(points)
    tan[0], tan[-1] = seg_t[0], seg_t[-1]
    if len(points) > 2:
        mid = seg_t[:-1] + seg_t[1:]
        nrm = np.linalg.norm(mid, axis=1, keepdims=True)
        # a full reversal has no bisector; fall back to the incoming direction
        tan[1:-1] = np.where(nrm > 1e-12, mid / np.maximum(nrm, 1e-300), seg_t[:-1])
    t0 = tan[0]
    a = np.zeros(3)
    a[int(np.argmin(np.abs(t0)))] = 1.0
    n0 = np.cross(t0, a)
    normals = np.empty_like(points)
    normals[0] = n0 / np.linalg.norm(n0)
    for i in range(len(points) - 1):
        v1 = points[i + 1] - points[i]
        c1 = v1 @ v1
        r = normals[i] - (2.0 / c1) * (v1 @ normals[i]) * v1
        tl = tan[i] - (2.0 / c1) * (v1 @ tan[i]) * v1
        v2 = tan[i + 1] - tl
        c2 = v2 @ v2
        if c2 > 1e-24:
            r = r - (2.0 / c2) * (v2 @ r) * v2
        r = r - (r @ tan[i + 1]) * tan[i + 1]
        normals[i + 1] = r / np.linalg.norm(r)
    return tan, normals


def tube_mesh(points, radii, sides: int = 8, caps: bool = True) -> TubeMesh:
    """Sweep circles of the given radii along a polyline.

    Ring ``i`` holds vertices ``i*sides .. i*sides+sides-1``; with caps the
    two centre vertices come last. Triangles wind counter-clockwise seen from
    outside.
    """
    if sides < 3:
        raise ValueError("sides must be at least 3")
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    r = np.broadcast_to(np.asarray(radii, dtype=np.float64), (len(p),)).copy()
    if np.any(r <= 0):
        raise ValueError("radii must be positive")
    p, r = _collapse(p, r)
    if len(p) < 2:
        raise ValueError("tube needs at least 2 distinct points")
    tan, nor = transport_frames(p)
    bin_ = np.cross(tan, nor)
    th = 2.0 * np.pi * np.arange(sides) / sides
    c, s = np.cos(th), np.sin(th)
    ring = (nor[:, None, :] * c[None, :, None] + bin_[:, None, :] * s[None, :, None])
    verts = (p[:, None, :] + r[:, None, None] * ring).reshape(-1, 3)
    vrad = np.repeat(r, sides)
    m = len(p)
    i = np.arange(m - 1)[:, None]
    k = np.arange(sides)[None, :]
    a = i * sides + k
    b = i * sides + (k + 1) % sides
    a2, b2 = a + sides, b + sides
    tris = np.concatenate([np.stack([a, b, b2], -1).reshape(-1, 3),
                           np.stack([a, b2, a2], -1).reshape(-1, 3)])
    # interleave per quad for a stable, readable order
    q = (m - 1) * sides
    tris = np.stack([tris[:q], tris[q:]], axis=1).reshape(-1, 3)
    if caps:
        c0, c1 = len(verts), len(verts) + 1
        last = (m - 1) * sides
        k = np.arange(sides)
        start = np.column_stack([np.full(sides, c0), (k + 1) % sides, k])
        end = np.column_stack([np.full(sides, c1), last + k, last + (k + 1) % sides])
        tris = np.concatenate([tris, start, end])
        verts = np.concatenate([verts, p[:1], p[-1:]])
        vrad = np.concatenate([vrad, r[:1], r[-1:]])
    return TubeMesh(verts, tris.astype(np.int64), vrad)


def triangle_normals(mesh: TubeMesh) -> np.ndarray:
    v = mesh.vertices[mesh.triangles]
    return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    s = "%.6f" % x
    return "0.000000" if s == "-0.000000" else s


def encode_ply(geom) -> bytes:
    """ASCII PLY for a :class:`TubeMesh` (with faces) or a :class:`PointCloud3`."""
    is_mesh = isinstance(geom, TubeMesh)
    pts = geom.vertices if is_mesh else geom.points
    rad = geom.radius
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property float x", "property float y", "property float z"]
    if rad is not None:
        lines.append("property float radius")
    if is_mesh:
        lines += [f"element face {len(geom.triangles)}",
                  "property list uchar int vertex_indices"]
    lines.append("end_header")
    for i, q in enumerate(pts):
        row = [_fmt(v) for v in q]
        if rad is not None:
            row.append(_fmt(rad[i]))
        lines.append(" ".join(row))
    if is_mesh:
        lines += ["3 %d %d %d" % tuple(t) for t in geom.triangles]
    return ("\n".join(lines) + "\n").encode("ascii")


def export_ply(geom, path) -> None:
    Path(path).write_bytes(encode_ply(geom))


def parse_ply(text) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Parse ASCII PLY written by :func:`encode_ply` (or any ASCII PLY with
    x/y/z vertex properties). Returns ``(xyz, radius or None, faces)``."""
    if isinstance(text, bytes):
        text = text.decode("ascii")
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError("not a PLY file")
    elements, cur = [], None
    i = 1
    while i < len(lines) and lines[i].strip() != "end_header":
        tok = lines[i].split()
        if tok[:2] == ["format", "ascii"]:
            pass
        elif tok and tok[0] == "format":
            raise ValueError("only ASCII PLY is supported")
        elif tok and tok[0] == "element":
            cur = (tok[1], int(tok[2]), [])
            elements.append(cur)
        elif tok and tok[0] == "property":
            cur[2].append(tok[-1])
        i += 1
    if i == len(lines):
        raise ValueError("PLY header has no end_header")
    body = lines[i + 1:]
    xyz, rad, faces = np.empty((0, 3)), None, np.empty((0, 3), dtype=np.int64)
    pos = 0
    for name, count, props in elements:
        rows = body[pos:pos + count]
        if len(rows) < count:
            raise ValueError(f"PLY truncated in element {name}")
        pos += count
        if name == "vertex":
            arr = np.array([r.split() for r in rows], dtype=np.float64).reshape(count, len(props))
            xyz = arr[:, [props.index("x"), props.index("y"), props.index("z")]]
            if "radius" in props:
                rad = arr[:, props.index("radius")]
        elif name == "face":
            faces = np.array([r.split()[1:4] for r in rows], dtype=np.int64).reshape(-1, 3)
    return xyz, rad, faces


def load_ply_points(path) -> np.ndarray:
    return parse_ply(Path(path).read_bytes())[0]


def encode_polydata(polylines, title: str = "vessel centerlines") -> bytes:
    pts = [np.asarray(p, dtype=np.float64).reshape(-1, 3) for p in polylines]
    n = sum(len(p) for p in pts)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET POLYDATA",
             f"POINTS {n} float"]
    for p in pts:
        lines += [" ".join(_fmt(v) for v in q) for q in p]
    lines.append(f"LINES {len(pts)} {n + len(pts)}")
    off = 0
    for p in pts:
        lines.append(" ".join(str(v) for v in [len(p), *range(off, off + len(p))]))
        off += len(p)
    return ("\n".join(lines) + "\n").encode("ascii")


def export_polydata(polylines, path) -> None:
    Path(path).write_bytes(encode_polydata(polylines))


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------


def reconstruct(seg, depth: DepthMap, cfg: ReconConfig = ReconConfig()) -> ReconResult:
    """Skeletonize, build the graph, lift, resample and sweep tubes."""
    seg = seg if isinstance(seg, BinaryMask) else BinaryMask(np.asarray(seg))
    if seg.shape != depth.shape:
        raise ValueError(f"segmentation {seg.shape} and depth {depth.shape} differ in size")
    cfg = cfg.for_shape(seg.shape)
    skel, graph = vg.build_graph(seg, cfg.relink_radius, cfg.min_spur_length)
    if not graph.segments:
        log.warning("empty segmentation; nothing to reconstruct")
        return ReconResult(graph, skel, [], [], PointCloud3(), TubeMesh.empty(), 0, cfg)
    lifted, _, filled = lift_centerline(graph, depth, cfg)
    edt = _mask_edt(seg)
    polys, radii, meshes = [], [], []
    for segm, poly in zip(graph.segments, lifted):
        px = segment_pixels(graph, segm).astype(int)
        r = edt[px[:, 1], px[:, 0]] * cfg.sx  # every chain pixel lies in the mask
        rp, rr = resample_segment(poly, cfg.step * cfg.sx, r)
        polys.append(rp)
        radii.append(rr)
        if len(np.unique(rp, axis=0)) >= 2:  # an isolated dot has no tube
            meshes.append(tube_mesh(rp, rr, cfg.sides, cfg.caps))
    cloud = PointCloud3(np.concatenate(polys))
    return ReconResult(graph, skel, polys, radii, cloud, TubeMesh.merge(meshes), filled, cfg)


def _mask_edt(seg: BinaryMask) -> np.ndarray:
    m = seg.bits.astype(bool)
    return ndimage.distance_transform_edt(np.pad(m, 1))[1:-1, 1:-1]
