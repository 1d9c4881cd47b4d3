"""Post-training label merging and InstanceLoc."""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import ParseError, UnknownLabel
from .frontend import CorruptionParams, InstanceMask, fast_regions
from .instance_map import LabelAssignment
from .label_field import LabelField, RenderConfig, render_pixels, render_view
from .rng import stream
from .scene import Scene, ray_cast

MERGE_DOWNSAMPLE = 2


@dataclass
class RedundancyGraph:
    nodes: list[int]
    edges: Counter = field(default_factory=Counter)  # (a, b) with a < b -> count

    def add(self, a: int, b: int, n: int = 1) -> None:
        if a == b:
            raise ValueError("self edges are not allowed")
        self.edges[(min(a, b), max(a, b))] += n

    def degree(self) -> dict[int, int]:
        deg = {v: 0 for v in self.nodes}
        for (a, b), n in self.edges.items():
            deg[a] = deg.get(a, 0) + n
            deg[b] = deg.get(b, 0) + n
        return deg


def region_occupancy(rendered: np.ndarray, regions: InstanceMask) -> dict[int, dict[int, float]]:
    """Per frontend region, the fraction of its pixels carrying each rendered label."""
    out = {}
    for r in regions.region_labels():
        inside = rendered[regions.labels == r]
        labs, counts = np.unique(inside, return_counts=True)
        out[r] = {int(l): c / len(inside) for l, c in zip(labs, counts) if l != 0}
    return out


def add_region_edges(graph: RedundancyGraph, occupancy: dict[int, dict[int, float]], tau_area: float) -> None:
    for fracs in occupancy.values():
        big = sorted(l for l, f in fracs.items() if f > tau_area)
        for a, b in itertools.combinations(big, 2):
            graph.add(a, b)


def jitter_pose(pose: geo.Pose, rng, rot_deg: float, trans: float) -> geo.Pose:
    axis = rng.normal(size=3)
    ang = np.deg2rad(rng.uniform(-rot_deg, rot_deg))
    r = geo.rotation_about(axis, ang)
    return geo.Pose(pose.rotation @ r, pose.translation + rng.uniform(-trans, trans, size=3))


def sample_views(cameras, k_views: int, seed: int, rot_deg: float = 2.0, trans: float = 0.02):
    """``k_views`` perturbed copies of training cameras chosen uniformly."""
    rng = stream(seed, "merge-views")
    out = []
    for _ in range(k_views):
        pose, k = cameras[int(rng.integers(len(cameras)))]
        out.append((jitter_pose(pose, rng, rot_deg, trans), k))
    return out


def build_redundancy_graph(field: LabelField, scene: Scene, cameras, k_views: int = 20, tau_area: float = 0.15,
                           frontend: CorruptionParams = CorruptionParams(), render_cfg: RenderConfig = RenderConfig(),
                           seed: int = 0, return_views: bool = False):
    """Vote for duplicate labels using coarse renders of random views.

    The fast frontend sees the scene itself (ray cast at the coarse
    resolution), standing in for an image-based segmenter.
    """
    if k_views < 1:
        raise ValueError("k_views must be at least 1")
    graph = RedundancyGraph(list(range(1, field.n_labels + 1)))
    views = []
    for n, (pose, k) in enumerate(sample_views(cameras, k_views, seed)):
        kd = k.downsample(MERGE_DOWNSAMPLE)
        rendered, _ = render_view(field, (pose, k), render_cfg, MERGE_DOWNSAMPLE)
        regions = fast_regions(ray_cast(scene, (pose, kd)), frontend, index=n)
        add_region_edges(graph, region_occupancy(rendered, regions), tau_area)
        views.append((rendered, regions))
    return (graph, views) if return_views else graph


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller id becomes the root so it is the canonical label
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo


def merge_score(graph: RedundancyGraph, a: int, b: int, deg=None) -> float:
    deg = graph.degree() if deg is None else deg
    e = graph.edges.get((min(a, b), max(a, b)), 0)
    d = deg.get(a, 0) + deg.get(b, 0)
    return 2.0 * e / d if d else 0.0


def merge_labels(graph: RedundancyGraph, tau_merge: float = 0.75, iterate: bool = False) -> dict[int, int]:
    """Canonical label for every node; pairs scoring strictly above ``tau_merge`` merge.

    All pairs are scored on the same graph before any union. With
    ``iterate`` the graph is collapsed onto the merged labels and rescored
    until nothing changes.
    """
    uf = _UnionFind(graph.nodes)
    while True:
        deg = graph.degree()
        passing = [(a, b) for (a, b) in sorted(graph.edges) if merge_score(graph, a, b, deg) > tau_merge]
        for a, b in passing:
            uf.union(a, b)
        if not iterate or not passing:
            break
        collapsed = RedundancyGraph(sorted({uf.find(v) for v in graph.nodes}))
        for (a, b), n in graph.edges.items():
            ra, rb = uf.find(a), uf.find(b)
            if ra != rb:
                collapsed.add(ra, rb, n)
        graph = collapsed
    return {v: uf.find(v) for v in uf.parent}


def apply_merge(target, merge_map: dict[int, int]):
    """Relabel an image (or list of images) or a LabelAssignment. 0 stays 0."""
    if isinstance(target, LabelAssignment):
        return _merge_assignment(target, merge_map)
    if isinstance(target, (list, tuple)):
        return [apply_merge(t, merge_map) for t in target]
    img = np.asarray(target)
    labs = np.unique(img)
    unknown = [int(l) for l in labs if l != 0 and int(l) not in merge_map]
    if unknown:
        raise UnknownLabel(f"labels {unknown} not in merge map")
    lut = np.arange(int(labs.max()) + 1 if labs.size else 1)
    for a, b in merge_map.items():
        if a < len(lut):
            lut[a] = b
    return lut[img]


def _merge_assignment(asg: LabelAssignment, merge_map):
    mapping = {}
    for key, lab in asg.mapping.items():
        if lab is not None and lab not in merge_map:
            raise UnknownLabel(f"label {lab} not in merge map")
        mapping[key] = None if lab is None else merge_map[lab]
    total_area: dict[int, float] = {}
    for lab, n in asg.frames_per_label.items():
        c = merge_map[lab]
        total_area[c] = total_area.get(c, 0.0) + asg.avg_area[lab] * n
    frames: dict[int, set] = {c: set() for c in total_area}
    for (f, _), lab in mapping.items():
        if lab is not None:
            frames[lab].add(f)
    fpl = {c: len(fs) for c, fs in frames.items()}
    # per-frame areas of merged sources add up, so totals divide by distinct frames
    avg = {c: total_area[c] / fpl[c] for c in total_area}
    return LabelAssignment(mapping, fpl, avg)


def write_merge_map(path, merge_map: dict[int, int]) -> None:
    lines = ["# from to"] + [f"{a} {b}" for a, b in sorted(merge_map.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_merge_map(path) -> dict[int, int]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 2:
            raise ParseError(f"expected 2 fields, got {len(tok)}", lineno)
        try:
            out[int(tok[0])] = int(tok[1])
        except ValueError:
            raise ParseError(f"non-integer token in {line!r}", lineno) from None
    return out


@dataclass
class LocResult:
    mask: np.ndarray
    queries: int
    votes: dict[int, dict[int, int]]


def instance_loc(field: LabelField, regions: InstanceMask, camera, samples_per_region: int | None = 48,
                 seed: int = 0, render_cfg: RenderConfig = RenderConfig()) -> LocResult:
    """Give each frontend region the majority rendered label of a few of its pixels.

    ``samples_per_region=None`` renders every pixel. Ties go to the lowest
    label; a background majority leaves the region at 0.
    """
    us, vs, owner = [], [], []
    for r in regions.region_labels():
        v, u = np.nonzero(regions.labels == r)
        if samples_per_region is not None and len(u) > samples_per_region:
            pick = np.sort(stream(seed, "loc", r).choice(len(u), size=samples_per_region, replace=False))
            u, v = u[pick], v[pick]
        us.append(u)
        vs.append(v)
        owner.append(np.full(len(u), r))
    out = np.zeros(regions.shape, dtype=np.int64)
    if not us:
        return LocResult(out, 0, {})
    u, v, owner = np.concatenate(us), np.concatenate(vs), np.concatenate(owner)
    labels = render_pixels(field, camera, u, v, render_cfg)
    votes = {}
    for r in regions.region_labels():
        c = Counter(labels[owner == r].tolist())
        votes[r] = dict(c)
        top = max(c.values())
        winner = min(l for l, n in c.items() if n == top)
        if winner:
            out[regions.labels == r] = winner
    return LocResult(out, len(u), votes)


def dense_majority(rendered: np.ndarray, regions: InstanceMask) -> np.ndarray:
    """Per-region majority of a fully rendered label image (same tie rule)."""
    out = np.zeros(regions.shape, dtype=np.int64)
    for r in regions.region_labels():
        m = regions.labels == r
        labs, counts = np.unique(rendered[m], return_counts=True)
        winner = labs[counts == counts.max()].min()
        out[m] = winner
    return out
