"""Simulated 2D instance segmentation frontend.

Turns exact instance images into the kind of masks an off-the-shelf
segmenter produces: labels that mean nothing across frames, objects cut into
parts, missing objects and ragged borders.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .rng import stream
from .scene import GroundTruthFrame, read_pgm16, write_pgm16


@dataclass(frozen=True)
class RegionInfo:
    pixel_count: int
    bbox: tuple[int, int, int, int]  # row0, col0, row1, col1 (exclusive)


@dataclass(eq=False)
class InstanceMask:
    labels: np.ndarray
    regions: dict[int, RegionInfo] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not self.regions:
            self.regions = index_regions(self.labels)

    @property
    def shape(self):
        return self.labels.shape

    def region_labels(self) -> list[int]:
        return sorted(self.regions)


def index_regions(labels: np.ndarray) -> dict[int, RegionInfo]:
    out = {}
    slices = ndimage.find_objects(labels)
    counts = np.bincount(labels.ravel()) if labels.size else np.zeros(1, dtype=np.int64)
    for idx, sl in enumerate(slices, start=1):
        if sl is None:
            continue
        out[idx] = RegionInfo(int(counts[idx]),
                              (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop))
    return out


@dataclass(frozen=True)
class CorruptionParams:
    permute: bool = True
    split_prob: float = 0.0
    max_splits: int = 0
    dropout_prob: float = 0.0
    erosion_radius: int = 0
    min_region_px: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("split_prob", "dropout_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.max_splits < 0 or self.erosion_radius < 0:
            raise ValueError("max_splits and erosion_radius must be non-negative")
        if self.min_region_px < 1:
            raise ValueError("min_region_px must be at least 1")


# 4-connectivity
_CC_STRUCTURE = ndimage.generate_binary_structure(2, 1)


def connected_regions(labels: np.ndarray) -> np.ndarray:
    """Split every nonzero label into its 4-connected components.

    Components are numbered 1.. in order of (source label, first pixel in
    raster order).
    """
    out = np.zeros(labels.shape, dtype=np.int64)
    nxt = 1
    for lab in np.unique(labels):
        if lab == 0:
            continue
        cc, n = ndimage.label(labels == lab, structure=_CC_STRUCTURE)
        if n:
            out[cc > 0] = cc[cc > 0] + (nxt - 1)
            nxt += n
    return out


def split_by_line(piece: np.ndarray, rng: np.random.Generator):
    """Cut a boolean region with a random straight line through its bbox.

    Draws, in order: angle in [0, pi), row offset, column offset. Returns the
    two sides ``(front, back)``; either may be empty.
    """
    rows, cols = np.nonzero(piece)
    theta = rng.uniform(0.0, np.pi)
    pr = rng.uniform(rows.min(), rows.max() + 1)
    pc = rng.uniform(cols.min(), cols.max() + 1)
    rr, cc = np.indices(piece.shape)
    side = (rr - pr) * np.cos(theta) + (cc - pc) * np.sin(theta) > 0
    return piece & side, piece & ~side


def _corrupt_region(region: np.ndarray, p: CorruptionParams, rng: np.random.Generator):
    if p.dropout_prob > 0 and rng.random() < p.dropout_prob:
        return []
    pieces = [region]
    queue = [0]
    done = 0
    while queue and done < p.max_splits:
        idx = queue.pop(0)
        if not rng.random() < p.split_prob:
            continue
        a, b = split_by_line(pieces[idx], rng)
        if a.sum() < p.min_region_px or b.sum() < p.min_region_px:
            continue  # a sliver would be dropped anyway; keep the piece whole
        pieces[idx] = a
        pieces.append(b)
        queue += [idx, len(pieces) - 1]
        done += 1
    if p.erosion_radius > 0:
        se = np.ones((2 * p.erosion_radius + 1,) * 2, dtype=bool)
        pieces = [ndimage.binary_erosion(pc, structure=se, border_value=1) for pc in pieces]
    return [pc for pc in pieces if pc.sum() >= p.min_region_px]


def _run_pipeline(regions: np.ndarray, p: CorruptionParams, key: tuple, permute: bool) -> InstanceMask:
    out = np.zeros(regions.shape, dtype=np.int64)
    n = 0
    for lab in np.unique(regions):
        if lab == 0:
            continue
        rng = stream(p.seed, *key, "region", int(lab))
        for piece in _corrupt_region(regions == lab, p, rng):
            n += 1
            out[piece] = n
    if permute and n > 1:
        perm = stream(p.seed, *key, "permute").permutation(n) + 1
        lut = np.concatenate([[0], perm])
        out = lut[out]
    return InstanceMask(out)


def corrupt(gt: GroundTruthFrame | np.ndarray, p: CorruptionParams, frame_index: int) -> InstanceMask:
    """Frontend mask for one frame.

    Regions are the ground-truth instances. Per region: dropout, recursive
    line splitting, square erosion; then all surviving pieces are numbered and
    optionally shuffled.
    """
    labels = gt.instance_image if isinstance(gt, GroundTruthFrame) else np.asarray(gt)
    return _run_pipeline(np.asarray(labels, dtype=np.int64), p, ("corrupt", int(frame_index)), p.permute)


def fast_regions(source: GroundTruthFrame | np.ndarray, p: CorruptionParams, index: int = 0) -> InstanceMask:
    """Cheap frontend used for merging and localization.

    Regions are the 4-connected components of the source labels; labels are
    always shuffled.
    """
    labels = source.instance_image if isinstance(source, GroundTruthFrame) else np.asarray(source)
    regions = connected_regions(np.asarray(labels, dtype=np.int64))
    return _run_pipeline(regions, p, ("fast", int(index)), True)


def write_mask(path, mask: InstanceMask) -> None:
    path = Path(path)
    write_pgm16(path, mask.labels)
    lines = ["# label pixel_count"] + [f"{lab} {info.pixel_count}" for lab, info in sorted(mask.regions.items())]
    path.with_suffix(".txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_mask(path) -> InstanceMask:
    return InstanceMask(read_pgm16(path))
