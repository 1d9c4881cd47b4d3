"""InstanceMap: associate per-frame mask regions into scene-wide labels."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InconsistentInput, ParseError
from .frontend import InstanceMask
from .leiden import leiden

NodeKey = tuple[int, int]  # (frame, region_label)


@dataclass
class RegionNode:
    frame: int
    region_label: int
    pixel_count: int
    keypoints: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def key(self) -> NodeKey:
        return (self.frame, self.region_label)


@dataclass
class AssociationGraph:
    nodes: list[RegionNode]
    edges: list[tuple[int, int, float]]  # node indices, matching score

    def index(self) -> dict[NodeKey, int]:
        return {n.key: i for i, n in enumerate(self.nodes)}


@dataclass
class LabelAssignment:
    mapping: dict[NodeKey, int | None]
    frames_per_label: dict[int, int]
    avg_area: dict[int, float]

    @property
    def labels(self) -> list[int]:
        return sorted(self.frames_per_label)

    def label_of(self, frame: int, region: int) -> int | None:
        return self.mapping.get((frame, region))


def matching_score(m: int, k_i: int, k_j: int) -> float:
    if m == 0 or k_i == 0 or k_j == 0:
        return 0.0
    return min(m / k_i, m / k_j)


def build_association_graph(masks: list[InstanceMask], match_sets, tau_local: float = 0.8) -> AssociationGraph:
    """Mask association graph over all (frame, region) nodes.

    For every visual pair and every region of the lower-indexed frame, the
    best-scoring region of the other frame gets an edge if its score is
    strictly above ``tau_local``. Keypoints on label 0 are ignored.
    """
    nodes = []
    for f, m in enumerate(masks):
        for lab in m.region_labels():
            nodes.append(RegionNode(f, lab, m.regions[lab].pixel_count))
    idx = {n.key: i for i, n in enumerate(nodes)}
    edges = []
    for ms in match_sets:
        i, j = ms.pair.i, ms.pair.j
        if not (0 <= i < len(masks) and 0 <= j < len(masks)):
            raise InconsistentInput(f"matches reference frame pair ({i}, {j}) but only {len(masks)} masks exist")
        li = _labels_at(masks[i], ms.keypoints_i, i)
        lj = _labels_at(masks[j], ms.keypoints_j, j)
        k_i = Counter(int(x) for x in li if x)
        k_j = Counter(int(x) for x in lj if x)
        for lab, c in k_i.items():
            nodes[idx[(i, lab)]].keypoints[(i, j)] = c
        for lab, c in k_j.items():
            nodes[idx[(j, lab)]].keypoints[(i, j)] = c
        mi, mj = li[ms.matches[:, 0]], lj[ms.matches[:, 1]]
        both = (mi > 0) & (mj > 0)
        m_uv = Counter(zip(mi[both].tolist(), mj[both].tolist()))
        best: dict[int, tuple[float, int]] = {}
        for (ru, rv), m in m_uv.items():
            s = matching_score(m, k_i[ru], k_j[rv])
            cur = best.get(ru)
            if cur is None or s > cur[0] or (s == cur[0] and rv < cur[1]):
                best[ru] = (s, rv)
        for ru in sorted(best):
            s, rv = best[ru]
            if s > tau_local:
                edges.append((idx[(i, ru)], idx[(j, rv)], s))
    return AssociationGraph(nodes, edges)


def _labels_at(mask: InstanceMask, kps: np.ndarray, frame: int) -> np.ndarray:
    h, w = mask.shape
    if len(kps) == 0:
        return np.zeros(0, dtype=np.int64)
    u, v = kps[:, 0], kps[:, 1]
    if u.min() < 0 or v.min() < 0 or u.max() >= w or v.max() >= h:
        raise InconsistentInput(f"keypoint outside frame {frame} ({w}x{h})")
    return mask.labels[v, u]


def leiden_communities(graph: AssociationGraph, resolution: float = 0.0, seed: int = 0) -> list[int]:
    return leiden(len(graph.nodes), graph.edges, resolution, seed)


def assign_labels(partition, graph_or_nodes, tau_community: int = 2, min_frames: int = 2) -> LabelAssignment:
    """Turn communities into 3D labels.

    Communities smaller than ``tau_community`` nodes or seen in fewer than
    ``min_frames`` frames are dropped. Survivors get ids 1..L by decreasing
    size, ties broken by their smallest (frame, region) member.
    """
    nodes = graph_or_nodes.nodes if isinstance(graph_or_nodes, AssociationGraph) else list(graph_or_nodes)
    if len(partition) != len(nodes):
        raise InconsistentInput("partition does not cover every node")
    groups: dict[int, list[RegionNode]] = defaultdict(list)
    for n, c in zip(nodes, partition):
        groups[c].append(n)
    kept = []
    for members in groups.values():
        if len(members) < tau_community:
            continue
        if len({n.frame for n in members}) < min_frames:
            continue
        kept.append(members)
    kept.sort(key=lambda ms: (-len(ms), min(n.key for n in ms)))
    mapping: dict[NodeKey, int | None] = {n.key: None for n in nodes}
    frames_per_label, avg_area = {}, {}
    for lab, members in enumerate(kept, start=1):
        area = defaultdict(int)
        for n in members:
            mapping[n.key] = lab
            area[n.frame] += n.pixel_count
        frames_per_label[lab] = len(area)
        avg_area[lab] = sum(area.values()) / len(area)
    return LabelAssignment(mapping, frames_per_label, avg_area)


def rasterization_order(assignment: LabelAssignment) -> list[int]:
    return sorted(assignment.avg_area, key=lambda lab: (-assignment.avg_area[lab], lab))


def paint_ordered(shape, layers, order) -> np.ndarray:
    """Paint ``(label, bool mask)`` layers so labels later in ``order`` win."""
    rank = {lab: i for i, lab in enumerate(order)}
    out = np.zeros(shape, dtype=np.int64)
    for lab, m in sorted(layers, key=lambda x: rank[x[0]]):
        out[m] = lab
    return out


def render_pseudolabels(masks: list[InstanceMask], assignment: LabelAssignment, order=None) -> list[np.ndarray]:
    order = rasterization_order(assignment) if order is None else list(order)
    missing = set(assignment.labels) - set(order)
    if missing:
        raise InconsistentInput(f"order misses labels {sorted(missing)}")
    out = []
    for f, m in enumerate(masks):
        layers = []
        for lab in m.region_labels():
            l3 = assignment.mapping.get((f, lab))
            if l3 is not None:
                layers.append((l3, m.labels == lab))
        out.append(paint_ordered(m.shape, layers, order))
    return out


def run_instance_map(masks, match_sets, tau_local=0.8, tau_community=2, min_frames=2, resolution=0.0, seed=0):
    """Graph, communities, assignment, order and pseudolabels in one call."""
    graph = build_association_graph(masks, match_sets, tau_local)
    part = leiden_communities(graph, resolution, seed)
    assignment = assign_labels(part, graph, tau_community, min_frames)
    order = rasterization_order(assignment)
    return graph, assignment, order, render_pseudolabels(masks, assignment, order)


# -- export ------------------------------------------------------------------

def write_graph(path, graph: AssociationGraph) -> None:
    lines = ["# frame:region frame:region weight"]
    for a, b, w in graph.edges:
        na, nb = graph.nodes[a], graph.nodes[b]
        lines.append(f"{na.frame}:{na.region_label} {nb.frame}:{nb.region_label} {w!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_graph_edges(path) -> list[tuple[NodeKey, NodeKey, float]]:
    out = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            a, b, w = line.split()
            fa, ra = (int(x) for x in a.split(":"))
            fb, rb = (int(x) for x in b.split(":"))
            out.append(((fa, ra), (fb, rb), float(w)))
        except ValueError:
            raise ParseError(f"bad graph line {line!r}", lineno) from None
    return out


def write_assignment(path, assignment: LabelAssignment) -> None:
    lines = ["# frame region label3d"]
    for (f, r), lab in sorted(assignment.mapping.items()):
        if lab is not None:
            lines.append(f"{f} {r} {lab}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_assignment(path) -> dict[NodeKey, int]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 3:
            raise ParseError(f"expected 3 fields, got {len(tok)}", lineno)
        try:
            f, r, lab = (int(t) for t in tok)
        except ValueError:
            raise ParseError(f"non-integer token in {line!r}", lineno) from None
        out[(f, r)] = lab
    return out
