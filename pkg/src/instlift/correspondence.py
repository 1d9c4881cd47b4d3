"""Visual pair selection and keypoint matches.

Pair similarity is depth-checked covisibility and matches are exact
reprojections through ground-truth depth, optionally perturbed. External
matches in the text format below can be loaded instead.

Match file lines: ``i j ui vi uj vj`` (integers), ``#`` starts a comment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import IndexOutOfRange, NoForeground, ParseError
from .rng import stream
from .scene import GroundTruthFrame

DEPTH_RTOL = 0.01


@dataclass(frozen=True)
class VisualPair:
    i: int
    j: int
    similarity: float = 1.0


@dataclass(eq=False)
class MatchSet:
    pair: VisualPair
    keypoints_i: np.ndarray  # (n, 2) integer (u, v)
    keypoints_j: np.ndarray
    matches: np.ndarray = field(default=None)  # (m, 2) indices

    def __post_init__(self):
        self.keypoints_i = np.asarray(self.keypoints_i, dtype=np.int64).reshape(-1, 2)
        self.keypoints_j = np.asarray(self.keypoints_j, dtype=np.int64).reshape(-1, 2)
        if self.matches is None:
            n = len(self.keypoints_i)
            self.matches = np.stack([np.arange(n), np.arange(n)], axis=1)
        self.matches = np.asarray(self.matches, dtype=np.int64).reshape(-1, 2)
        m = self.matches
        if len(m) and (m.min() < 0 or m[:, 0].max() >= len(self.keypoints_i)
                       or m[:, 1].max() >= len(self.keypoints_j)):
            raise IndexOutOfRange("match index outside keypoint list")
        if len(np.unique(m[:, 0])) != len(m) or len(np.unique(m[:, 1])) != len(m):
            raise IndexOutOfRange("keypoint used by more than one match")

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Matched pixel coordinates on both sides, each (m, 2) as (u, v)."""
        return self.keypoints_i[self.matches[:, 0]], self.keypoints_j[self.matches[:, 1]]

    def __len__(self):
        return len(self.matches)


def _reproject(u, v, src: GroundTruthFrame, dst: GroundTruthFrame):
    """Reproject source pixels into ``dst``; returns (u', v', visible)."""
    d = src.depth_image[v, u]
    pts = geo.backproject_points(u, v, d, src.pose, src.intrinsics)
    pu, pv, z = geo.project_points(pts, dst.pose, dst.intrinsics)
    k = dst.intrinsics
    ok = np.isfinite(pu) & k.contains(pu, pv)
    ru = np.clip(np.rint(np.nan_to_num(pu)).astype(np.int64), 0, k.width - 1)
    rv = np.clip(np.rint(np.nan_to_num(pv)).astype(np.int64), 0, k.height - 1)
    dd = dst.depth_image[rv, ru]
    ok &= np.isfinite(dd) & (np.abs(z - dd) <= DEPTH_RTOL * dd)
    return pu, pv, ok


def _one_way(fi: GroundTruthFrame, fj: GroundTruthFrame, stride: int) -> float:
    inst = fi.instance_image[::stride, ::stride]
    v, u = np.nonzero(inst)
    if len(u) == 0:
        return 0.0
    u, v = u * stride, v * stride
    _, _, ok = _reproject(u, v, fi, fj)
    return float(ok.mean())


def covisibility_score(frame_i: GroundTruthFrame, frame_j: GroundTruthFrame, stride: int = 4) -> float:
    """Symmetrized fraction of foreground pixels that reproject visibly."""
    return 0.5 * (_one_way(frame_i, frame_j, stride) + _one_way(frame_j, frame_i, stride))


def select_pairs(frames, tau_global: float = 0.25, stride: int = 4) -> list[VisualPair]:
    pairs = []
    for i in range(len(frames)):
        for j in range(i + 1, len(frames)):
            s = covisibility_score(frames[i], frames[j], stride)
            if s > tau_global:
                pairs.append(VisualPair(i, j, s))
    return pairs


def generate_matches(pair: VisualPair, frames, n_keypoints: int = 2000, noise_sigma_px: float = 0.0,
                     outlier_rate: float = 0.0, seed: int = 0) -> MatchSet:
    fi, fj = frames[pair.i], frames[pair.j]
    rng = stream(seed, "matches", pair.i, pair.j)
    v, u = np.nonzero(fi.instance_image)
    if len(u) == 0:
        raise NoForeground(f"frame {pair.i} has no labeled pixels")
    n = min(int(n_keypoints), len(u))
    pick = np.sort(rng.choice(len(u), size=n, replace=False))
    u, v = u[pick], v[pick]
    pu, pv, ok = _reproject(u, v, fi, fj)
    u, v, pu, pv = u[ok], v[ok], pu[ok], pv[ok]
    if noise_sigma_px > 0:
        pu = pu + rng.normal(0.0, noise_sigma_px, size=len(pu))
        pv = pv + rng.normal(0.0, noise_sigma_px, size=len(pv))
    ju, jv = np.rint(pu).astype(np.int64), np.rint(pv).astype(np.int64)
    k = fj.intrinsics
    inb = (ju >= 0) & (ju < k.width) & (jv >= 0) & (jv < k.height)
    u, v, ju, jv = u[inb], v[inb], ju[inb], jv[inb]
    n_out = int(round(outlier_rate * len(u)))
    if n_out:
        idx = rng.choice(len(u), size=n_out, replace=False)
        ju[idx] = rng.integers(0, k.width, size=n_out)
        jv[idx] = rng.integers(0, k.height, size=n_out)
    # one-to-one: first claim on a target pixel wins
    flat = jv * k.width + ju
    _, first = np.unique(flat, return_index=True)
    keep = np.sort(first)
    kp_i = np.stack([u[keep], v[keep]], axis=1)
    kp_j = np.stack([ju[keep], jv[keep]], axis=1)
    return MatchSet(pair, kp_i, kp_j)


def write_matches(path, match_sets) -> None:
    lines = ["# i j ui vi uj vj"]
    for ms in match_sets:
        a, b = ms.endpoints()
        for (ui, vi), (uj, vj) in zip(a, b):
            lines.append(f"{ms.pair.i} {ms.pair.j} {ui} {vi} {uj} {vj}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_matches(path) -> list[MatchSet]:
    groups: dict[tuple[int, int], list[list[int]]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 6:
            raise ParseError(f"expected 6 integers, got {len(tok)} tokens", lineno)
        try:
            vals = [int(t) for t in tok]
        except ValueError:
            raise ParseError(f"non-integer token in {line!r}", lineno) from None
        if min(vals) < 0:
            raise IndexOutOfRange(f"line {lineno}: negative index or coordinate")
        i, j = vals[0], vals[1]
        if i == j:
            raise ParseError("a frame cannot be matched with itself", lineno)
        if i > j:
            i, j = j, i
            vals = [i, j, *vals[4:6], *vals[2:4]]
        groups.setdefault((i, j), []).append(vals[2:])
    out = []
    for (i, j), rows in sorted(groups.items()):
        arr = np.asarray(rows, dtype=np.int64)
        kp_i, inv_i = np.unique(arr[:, 0:2], axis=0, return_inverse=True)
        kp_j, inv_j = np.unique(arr[:, 2:4], axis=0, return_inverse=True)
        m = np.stack([inv_i.ravel(), inv_j.ravel()], axis=1)
        out.append(MatchSet(VisualPair(i, j), kp_i, kp_j, m))
    return out
