"""Centerline extraction and vessel-graph construction from a binary mask.

Pipeline: parallel thinning -> junction detection -> removal of junction
neighbourhoods -> ordered pixel chains -> nearest-junction relinking.
Pixel coordinates are ``(x, y)``; "row-major order" means sorted by ``(y, x)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .raster import BinaryMask

log = logging.getLogger(__name__)

RELINK_RADIUS = 3.0
MIN_SPUR_LENGTH = 3

EIGHT = np.ones((3, 3), dtype=bool)
# ring order: N, NE, E, SE, S, SW, W, NW as (dy, dx)
RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
_FOUR = {(-1, 0), (0, 1), (1, 0), (0, -1)}


def _bits(mask) -> np.ndarray:
    return np.asarray(getattr(mask, "bits", mask)).astype(np.uint8)


def count_components(mask) -> int:
    return int(ndimage.label(_bits(mask), structure=EIGHT)[1])


# ---------------------------------------------------------------------------
# Thinning
# ---------------------------------------------------------------------------


def _ring_values(img, y, x):
    h, w = img.shape
    out = []
    for dy, dx in RING:
        yy, xx = y + dy, x + dx
        out.append(1 if 0 <= yy < h and 0 <= xx < w and img[yy, xx] else 0)
    return out


def _ring_single_component(vals) -> bool:
    """True when the set ring positions form one 8-connected group."""
    pos = [RING[i] for i in range(8) if vals[i]]
    if not pos:
        return False
    seen = {pos[0]}
    todo = [pos[0]]
    while todo:
        a = todo.pop()
        for b in pos:
            if b not in seen and abs(a[0] - b[0]) <= 1 and abs(a[1] - b[1]) <= 1:
                seen.add(b)
                todo.append(b)
    return len(seen) == len(pos)


def crossing_number(vals) -> int:
    """Number of 0->1 transitions around the ring (count of branch runs)."""
    return sum(1 for i in range(8) if not vals[i] and vals[(i + 1) % 8])


def _remove_staircases(skel: np.ndarray) -> None:
    """Delete corner pixels of 4-connected steps that 8-connectivity makes
    redundant; junctions and endpoints are kept."""
    changed = True
    while changed:
        changed = False
        ys, xs = np.nonzero(skel)
        for y, x in zip(ys.tolist(), xs.tolist()):
            v = _ring_values(skel, y, x)
            if sum(v) < 2 or crossing_number(v) != 2:
                continue
            n, e, s, w = v[0], v[2], v[4], v[6]
            if not ((n and e) or (e and s) or (s and w) or (w and n)):
                continue
            if _ring_single_component(v):
                skel[y, x] = 0
                changed = True


THINNING = {"guo_hall": kernels.guo_hall, "zhang_suen": kernels.zhang_suen}


def skeletonize(mask, method: str = "guo_hall") -> BinaryMask:
    """One-pixel-wide 8-connected centerline of ``mask``.

    Two-subiteration thinning (Guo-Hall by default; plain Zhang-Suen erases
    2-px-thick diagonal strokes), then staircase cleanup. A component the thinning
    erased entirely (e.g. a 2x2 block) keeps its deepest pixel, so the
    number of 8-connected components is preserved.
    """
    m = _bits(mask)
    if not m.any():
        return BinaryMask(np.zeros_like(m))
    if method not in THINNING:
        raise ValueError(f"unknown thinning method {method!r}")
    skel = THINNING[method](np.ascontiguousarray(m))
    _remove_staircases(skel)
    labels, n = ndimage.label(m, structure=EIGHT)
    kept = np.unique(labels[skel.astype(bool)])
    if len(kept) < n:
        edt = ndimage.distance_transform_edt(m)
        for lab in sorted(set(range(1, n + 1)) - set(kept.tolist())):
            ys, xs = np.nonzero(labels == lab)
            i = int(np.argmax(edt[ys, xs]))  # first maximum in row-major order
            skel[ys[i], xs[i]] = 1
    return BinaryMask(skel)


# ---------------------------------------------------------------------------
# Junctions and segments
# ---------------------------------------------------------------------------


def neighbor_count(skel) -> np.ndarray:
    s = _bits(skel)
    k = np.ones((3, 3), dtype=np.int32)
    k[1, 1] = 0
    return ndimage.convolve(s.astype(np.int32), k, mode="constant") * s


def find_junctions(skel) -> list[tuple[int, int]]:
    """Skeleton pixels with at least three neighbours that lead into at
    least three separate branches, as ``(x, y)`` in row-major order.

    The branch test (ring crossing number) stops pixels beside a junction,
    which also touch three or more skeleton pixels, from counting twice.
    """
    s = _bits(skel)
    nc = neighbor_count(s)
    out = []
    ys, xs = np.nonzero(nc >= 3)
    for y, x in zip(ys.tolist(), xs.tolist()):
        if crossing_number(_ring_values(s, y, x)) >= 3:
            out.append((x, y))
    return out


def junction_zone(shape, junctions) -> np.ndarray:
    """Boolean mask of every junction pixel and its 8-neighbourhood."""
    h, w = shape
    z = np.zeros(shape, dtype=bool)
    for x, y in junctions:
        z[max(y - 1, 0):min(y + 2, h), max(x - 1, 0):min(x + 2, w)] = True
    return z


def _order_chain(pixels: set) -> list[list[tuple[int, int]]]:
    """Split a pixel set into ordered 8-connected chains covering it."""
    chains = []
    remaining = set(pixels)
    while remaining:
        def degree(p):
            x, y = p
            return sum((x + dx, y + dy) in remaining for dy, dx in RING)

        ends = sorted((p for p in remaining if degree(p) <= 1), key=lambda p: (p[1], p[0]))
        start = ends[0] if ends else min(remaining, key=lambda p: (p[1], p[0]))
        chain = [start]
        remaining.discard(start)
        cur = start
        while True:
            x, y = cur
            cand = [(x + dx, y + dy) for dy, dx in RING if (x + dx, y + dy) in remaining]
            if not cand:
                break
            cand.sort(key=lambda p: ((p[1] - y, p[0] - x) not in _FOUR, p[1], p[0]))
            cur = cand[0]
            chain.append(cur)
            remaining.discard(cur)
        chains.append(chain)
    return chains


def decompose_segments(skel, junctions) -> list[np.ndarray]:
    """Remove junction neighbourhoods and return the remaining pieces as
    ordered ``(k, 2)`` arrays of ``(x, y)``."""
    s = _bits(skel).astype(bool)
    rest = s & ~junction_zone(s.shape, junctions)
    labels, n = ndimage.label(rest, structure=EIGHT)
    if n == 0:
        return []
    out = []
    objs = ndimage.find_objects(labels)
    # components are numbered in row-major order of their first pixel
    for lab, sl in enumerate(objs, start=1):
        ys, xs = np.nonzero(labels[sl] == lab)
        pix = set(zip((xs + sl[1].start).tolist(), (ys + sl[0].start).tolist()))
        for chain in _order_chain(pix):
            out.append(np.array(chain, dtype=np.int64).reshape(-1, 2))
    return out


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------


@dataclass
class Node:
    id: int
    x: int
    y: int
    kind: str  # "junction" | "endpoint"


@dataclass
class Segment:
    id: int
    node_a: int
    node_b: int
    pixels: np.ndarray  # (k, 2) of (x, y)
    bridge: bool = False


@dataclass
class VesselGraph:
    nodes: list = field(default_factory=list)
    segments: list = field(default_factory=list)
    orphans: int = 0

    @property
    def adjacency(self) -> dict:
        adj = {n.id: [] for n in self.nodes}
        for s in self.segments:
            adj[s.node_a].append(s.id)
            adj[s.node_b].append(s.id)
        return adj

    def degree(self, node_id: int) -> int:
        return len(self.adjacency[node_id])

    def junctions(self):
        return [n for n in self.nodes if n.kind == "junction"]

    def endpoints(self):
        return [n for n in self.nodes if n.kind == "endpoint"]

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "x": n.x, "y": n.y, "kind": n.kind} for n in self.nodes],
            "segments": [
                {"id": s.id, "node_a": s.node_a, "node_b": s.node_b,
                 "pixels": s.pixels.tolist()}
                for s in self.segments
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "VesselGraph":
        nodes = [Node(n["id"], n["x"], n["y"], n["kind"]) for n in d["nodes"]]
        segs = [Segment(s["id"], s["node_a"], s["node_b"],
                        np.array(s["pixels"], dtype=np.int64).reshape(-1, 2))
                for s in d["segments"]]
        return cls(nodes, segs)


def _line(a, b) -> list[tuple[int, int]]:
    """8-connected pixel line from a to b, both included."""
    (x0, y0), (x1, y1) = a, b
    n = max(abs(x1 - x0), abs(y1 - y0))
    if n == 0:
        return [(x0, y0)]
    t = np.arange(n + 1) / n
    xs = np.rint(x0 + t * (x1 - x0)).astype(int)
    ys = np.rint(y0 + t * (y1 - y0)).astype(int)
    return list(zip(xs.tolist(), ys.tolist()))


def _bridge_paths(skel: np.ndarray, junctions) -> list[tuple[int, int, list]]:
    """Shortest paths between junctions whose removed neighbourhoods touch."""
    zone = skel & junction_zone(skel.shape, junctions)
    labels, _ = ndimage.label(zone, structure=EIGHT)
    by_label = {}
    for j, (x, y) in enumerate(junctions):
        by_label.setdefault(int(labels[y, x]), []).append(j)
    out = []
    for members in by_label.values():
        for a, b in zip(members, members[1:]):
            path = _bfs(zone, junctions[a], junctions[b])
            if path is not None:
                out.append((a, b, path))
    return out


def _bfs(region, start, goal):
    from collections import deque

    h, w = region.shape
    prev = {start: None}
    q = deque([start])
    while q:
        cur = q.popleft()
        if cur == goal:
            path = []
            while cur is not None:
                path.append(cur)
                cur = prev[cur]
            return path[::-1]
        x, y = cur
        for dy, dx in RING:
            nxt = (x + dx, y + dy)
            if (0 <= nxt[1] < h and 0 <= nxt[0] < w and region[nxt[1], nxt[0]]
                    and nxt not in prev):
                prev[nxt] = cur
                q.append(nxt)
    return None


def relink(segments, junctions, radius: float = RELINK_RADIUS,
           min_spur_length: int = MIN_SPUR_LENGTH, skeleton=None) -> VesselGraph:
    """Attach segment ends to the nearest junction within ``radius``.

    Ends with no junction in range become endpoint nodes (counted in
    ``orphans`` when the chain also has a junction-side end; warned once).
    Spurs (one junction end, one free end) whose arm, chain plus the removed
    ring pixel, is shorter than ``min_spur_length`` are dropped. Junctions
    left with two segments are merged through; with one they become endpoints.
    When ``skeleton`` is given, junctions whose removed neighbourhoods touch
    are joined by bridge segments.
    """
    jpos = np.array(junctions, dtype=np.float64).reshape(-1, 2)
    nodes = [Node(i, int(x), int(y), "junction") for i, (x, y) in enumerate(junctions)]
    segs: list[Segment] = []

    def nearest(p, exclude=None):
        if not len(jpos):
            return None
        d = np.hypot(jpos[:, 0] - p[0], jpos[:, 1] - p[1])
        if exclude is not None:
            d[exclude] = np.inf
        j = int(np.argmin(d))  # ties -> lowest id
        return j if d[j] <= radius else None

    def endpoint(p):
        nodes.append(Node(len(nodes), int(p[0]), int(p[1]), "endpoint"))
        return len(nodes) - 1

    orphans = 0
    for chain in segments:
        chain = np.asarray(chain, dtype=np.int64).reshape(-1, 2)
        a = nearest(chain[0])
        b = nearest(chain[-1], exclude=a if len(chain) == 1 and a is not None else None)
        if a is not None and a == b and len(chain) <= 2 * radius + 1:
            # a short arm within reach of one junction at both ends: only the
            # nearer end attaches (a genuine loop is longer than that)
            da = np.hypot(*(chain[0] - jpos[a]))
            db = np.hypot(*(chain[-1] - jpos[a]))
            if da <= db:
                b = None
            else:
                a = None
        if a is None and b is None and len(junctions):
            orphans += 1
        na = a if a is not None else endpoint(chain[0])
        nb = b if b is not None else endpoint(chain[-1])
        segs.append(Segment(len(segs), na, nb, chain))
    if orphans:
        log.warning("%d segment(s) with no junction within %.1f px", orphans, radius)

    if skeleton is not None and len(junctions):
        for a, b, path in _bridge_paths(_bits(skeleton).astype(bool), list(map(tuple, junctions))):
            segs.append(Segment(len(segs), a, b, np.array(path, dtype=np.int64), bridge=True))

    kind = {n.id: n.kind for n in nodes}
    if min_spur_length > 0:
        keep = []
        for s in segs:
            ka, kb = kind[s.node_a], kind[s.node_b]
            spur = (ka == "junction") != (kb == "junction")
            if spur and len(s.pixels) + 1 < min_spur_length:
                continue
            keep.append(s)
        segs = keep

    if skeleton is not None:
        sk = _bits(skeleton).astype(bool)
        segs = [_connect(s, nodes, sk) if not s.bridge else s for s in segs]
    segs = _dissolve_weak_junctions(nodes, segs)
    return _compact(nodes, segs, orphans)


def _connector(sk, end, node) -> list:
    """Skeleton pixels strictly between a chain end and its junction node,
    ordered from the end; a straight line when the skeleton has no path."""
    (x0, y0), (x1, y1) = end, node
    if max(abs(x1 - x0), abs(y1 - y0)) <= 1:
        return []
    h, w = sk.shape
    ya, yb = max(min(y0, y1) - 1, 0), min(max(y0, y1) + 2, h)
    xa, xb = max(min(x0, x1) - 1, 0), min(max(x0, x1) + 2, w)
    path = _bfs(sk[ya:yb, xa:xb], (x0 - xa, y0 - ya), (x1 - xa, y1 - ya))
    if path is None:
        return _line(end, node)[1:-1]
    return [(x + xa, y + ya) for x, y in path[1:-1]]


def _connect(seg: Segment, nodes, sk) -> Segment:
    px = [tuple(p) for p in seg.pixels.tolist()]
    na, nb = nodes[seg.node_a], nodes[seg.node_b]
    if na.kind == "junction":
        px = _connector(sk, px[0], (na.x, na.y))[::-1] + px
    if nb.kind == "junction":
        px = px + _connector(sk, px[-1], (nb.x, nb.y))
    return Segment(seg.id, seg.node_a, seg.node_b, np.array(px, dtype=np.int64).reshape(-1, 2),
                   seg.bridge)


def _dissolve_weak_junctions(nodes, segs):
    while True:
        deg = {}
        for s in segs:
            deg.setdefault(s.node_a, []).append(s)
            deg.setdefault(s.node_b, []).append(s)
        target = None
        for n in nodes:
            if n.kind == "junction" and len(deg.get(n.id, [])) == 2:
                inc = deg[n.id]
                if inc[0] is not inc[1]:
                    target = (n, inc)
                    break
        if target is None:
            break
        n, (s1, s2) = target
        p1 = [tuple(p) for p in s1.pixels]
        p2 = [tuple(p) for p in s2.pixels]
        if s1.node_a == n.id:
            p1, far1 = p1[::-1], s1.node_b
        else:
            far1 = s1.node_a
        if s2.node_b == n.id:
            p2, far2 = p2[::-1], s2.node_a
        else:
            far2 = s2.node_b
        c = (n.x, n.y)
        merged = p1 + _line(p1[-1], c)[1:] + _line(c, p2[0])[1:-1] + p2
        dedup = []
        for p in merged:
            if not dedup or dedup[-1] != p:
                dedup.append(p)
        new = Segment(-1, far1, far2, np.array(dedup, dtype=np.int64), s1.bridge and s2.bridge)
        segs = [s for s in segs if s is not s1 and s is not s2] + [new]
        n.kind = "dissolved"
    for n in nodes:
        if n.kind == "junction":
            d = sum((s.node_a == n.id) + (s.node_b == n.id) for s in segs)
            if d == 1:
                n.kind = "endpoint"
    return segs


def _compact(nodes, segs, orphans) -> VesselGraph:
    used = set()
    for s in segs:
        used.update((s.node_a, s.node_b))
    remap = {}
    out_nodes = []
    for n in nodes:
        if n.id in used and n.kind in ("junction", "endpoint"):
            remap[n.id] = len(out_nodes)
            out_nodes.append(Node(len(out_nodes), n.x, n.y, n.kind))
    out_segs = [Segment(i, remap[s.node_a], remap[s.node_b], s.pixels, s.bridge)
                for i, s in enumerate(segs)]
    return VesselGraph(out_nodes, out_segs, orphans)


def build_graph(mask, radius: float = RELINK_RADIUS,
                min_spur_length: int = MIN_SPUR_LENGTH) -> tuple[BinaryMask, VesselGraph]:
    skel = skeletonize(mask)
    junctions = find_junctions(skel)
    segments = decompose_segments(skel, junctions)
    return skel, relink(segments, junctions, radius, min_spur_length, skeleton=skel)


def estimate_radius(mask, skel) -> np.ndarray:
    """Euclidean distance to the nearest background pixel, per skeleton pixel,
    as a full-size array (zero off the skeleton)."""
    m = _bits(mask).astype(bool)
    s = _bits(skel).astype(bool)
    if np.any(s & ~m):
        raise ValueError("skeleton is not contained in the mask")
    edt = ndimage.distance_transform_edt(np.pad(m, 1))[1:-1, 1:-1]
    return np.where(s, edt, 0.0)


def rasterize_graph(graph: VesselGraph, shape) -> np.ndarray:
    """Mask of all segment pixels plus straight bridges from each segment end
    to its node."""
    out = np.zeros(shape, dtype=np.uint8)
    pos = {n.id: (n.x, n.y) for n in graph.nodes}
    for s in graph.segments:
        px = [tuple(p) for p in s.pixels]
        px += _line(px[0], pos[s.node_a]) + _line(px[-1], pos[s.node_b])
        for x, y in px:
            out[y, x] = 1
    return out
