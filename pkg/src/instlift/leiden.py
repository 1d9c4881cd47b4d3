"""Leiden community detection under the constant Potts model.

Quality of a partition is ``sum_c E_c - resolution * n_c * (n_c - 1) / 2``
where ``E_c`` is the internal edge weight and ``n_c`` the node count of
community ``c``. The algorithm alternates fast local moving, refinement and
aggregation until local moving changes nothing. Refinement merges greedily
(the zero-temperature limit of the randomized rule), so the only randomness
is the node visiting order, drawn from ``seed``.
"""

from __future__ import annotations

from collections import defaultdict, deque

import numpy as np

from .rng import stream


def cpm_quality(membership, edges, resolution: float, sizes=None) -> float:
    membership = list(membership)
    sizes = [1] * len(membership) if sizes is None else list(sizes)
    internal = defaultdict(float)
    count = defaultdict(int)
    for v, c in enumerate(membership):
        count[c] += sizes[v]
    for u, v, w in edges:
        if membership[u] == membership[v]:
            internal[membership[u]] += w
    return sum(internal[c] - resolution * n * (n - 1) / 2.0 for c, n in count.items())


class _Graph:
    def __init__(self, n: int, edges, sizes=None):
        self.n = n
        self.adj = [defaultdict(float) for _ in range(n)]
        self.self_w = [0.0] * n
        for u, v, w in edges:
            if u == v:
                self.self_w[u] += w
            else:
                self.adj[u][v] += w
                self.adj[v][u] += w
        self.size = [1] * n if sizes is None else list(sizes)


def _move_nodes_fast(g: _Graph, comm: list[int], gamma: float, rng) -> bool:
    csize = defaultdict(int)
    for v in range(g.n):
        csize[comm[v]] += g.size[v]
    empty = sorted(set(range(g.n)) - set(csize))
    order = list(rng.permutation(g.n))
    queue = deque(int(v) for v in order)
    queued = [True] * g.n
    moved = False
    while queue:
        v = queue.popleft()
        queued[v] = False
        cv, nv = comm[v], g.size[v]
        w_to = defaultdict(float)
        for u, w in g.adj[v].items():
            w_to[comm[u]] += w
        stay = w_to.get(cv, 0.0) - gamma * nv * (csize[cv] - nv)
        best_c, best_gain = cv, 0.0
        for c in sorted(w_to):
            if c == cv:
                continue
            gain = (w_to[c] - gamma * nv * csize[c]) - stay
            if gain > best_gain + 1e-12:
                best_c, best_gain = c, gain
        if csize[cv] > nv and empty and -stay > best_gain + 1e-12:
            best_c, best_gain = empty[0], -stay
        if best_c == cv:
            continue
        csize[cv] -= nv
        if csize[cv] == 0:
            del csize[cv]
            empty.append(cv)
            empty.sort()
        if best_c in empty:
            empty.remove(best_c)
        csize[best_c] += nv
        comm[v] = best_c
        moved = True
        for u in g.adj[v]:
            if comm[u] != best_c and not queued[u]:
                queue.append(u)
                queued[u] = True
    return moved


def _refine(g: _Graph, comm: list[int], gamma: float, rng) -> list[int]:
    refined = list(range(g.n))
    rsize = list(g.size)
    singleton = [True] * g.n
    members = defaultdict(list)
    for v in range(g.n):
        members[comm[v]].append(v)
    for c in sorted(members):
        nodes = members[c]
        n_c = sum(g.size[v] for v in nodes)
        # weight from each refined sub-community to the rest of c
        r_ext = defaultdict(float)
        for v in nodes:
            for u, w in g.adj[v].items():
                if comm[u] == c:
                    r_ext[v] += w
        for v in (nodes[i] for i in rng.permutation(len(nodes))):
            if not singleton[v]:
                continue
            nv = g.size[v]
            if r_ext[v] < gamma * nv * (n_c - nv):
                continue
            w_to = defaultdict(float)
            for u, w in g.adj[v].items():
                if comm[u] == c:
                    w_to[refined[u]] += w
            best, best_gain = None, 0.0
            for r in sorted(w_to):
                if r == refined[v]:
                    continue
                if r_ext[r] < gamma * rsize[r] * (n_c - rsize[r]):
                    continue
                gain = w_to[r] - gamma * nv * rsize[r]
                if gain > best_gain + 1e-12:
                    best, best_gain = r, gain
            if best is None:
                continue
            old = refined[v]
            for u, w in g.adj[v].items():
                if comm[u] != c:
                    continue
                if refined[u] == best:
                    r_ext[best] -= w
                else:
                    r_ext[best] += w
            r_ext[old] = 0.0
            rsize[best] += nv
            rsize[old] = 0
            refined[v] = best
            singleton[v] = False
            singleton[best] = False
    return refined


def _aggregate(g: _Graph, part: list[int]):
    ids = {c: i for i, c in enumerate(sorted(set(part)))}
    m = len(ids)
    sizes = [0] * m
    for v in range(g.n):
        sizes[ids[part[v]]] += g.size[v]
    w = defaultdict(float)
    for v in range(g.n):
        a = ids[part[v]]
        if g.self_w[v]:
            w[(a, a)] += g.self_w[v]
        for u, wt in g.adj[v].items():
            b = ids[part[u]]
            if v < u:
                w[(min(a, b), max(a, b))] += wt
    edges = [(a, b, wt) for (a, b), wt in sorted(w.items())]
    return _Graph(m, edges, sizes), [ids[c] for c in part]


def leiden(n_nodes: int, edges, resolution: float = 0.0, seed: int = 0, max_levels: int = 100) -> list[int]:
    """Community index for each node, numbered 0.. by first appearance."""
    if n_nodes == 0:
        return []
    rng = stream(seed, "leiden")
    g = _Graph(n_nodes, [(int(u), int(v), float(w)) for u, v, w in edges if w > 0])
    level_of = list(range(n_nodes))
    comm = list(range(n_nodes))
    for _ in range(max_levels):
        _move_nodes_fast(g, comm, resolution, rng)
        if len(set(comm)) == g.n:
            break
        refined = _refine(g, comm, resolution, rng)
        if len(set(refined)) == g.n:
            refined = comm  # refinement stalled; aggregate the moved partition
        new_g, agg = _aggregate(g, refined)
        # initial partition of the aggregate is the unrefined one
        first = {}
        for v in range(g.n):
            first.setdefault(agg[v], comm[v])
        remap = {c: i for i, c in enumerate(sorted(set(first.values())))}
        comm = [remap[first[a]] for a in range(new_g.n)]
        level_of = [agg[x] for x in level_of]
        g = new_g
    raw = [comm[level_of[v]] for v in range(n_nodes)]
    seen: dict[int, int] = {}
    return [seen.setdefault(c, len(seen)) for c in raw]
