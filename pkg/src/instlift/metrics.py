"""Scene-level panoptic quality over a concatenated image sequence.

All instances belong to a single class. Label 0 is void in both prediction
and reference: it never forms a segment, but a predicted segment's pixels
over reference background still enlarge its union with every reference
segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch


@dataclass
class PQReport:
    pq: float
    tp: int
    fp: int
    fn: int
    miou_tp: float
    matched: list[tuple[int, int, float]] = field(default_factory=list)
    total_reference: int = 0

    def to_text(self) -> str:
        lines = [f"pq={self.pq:.6f}", f"tp={self.tp}", f"fp={self.fp}", f"fn={self.fn}",
                 f"miou_tp={self.miou_tp:.6f}", f"total_reference={self.total_reference}"]
        lines += [f"match {p} {g} {iou:.6f}" for p, g, iou in self.matched]
        return "\n".join(lines) + "\n"


def _stack(frames) -> np.ndarray:
    return np.concatenate([np.asarray(f, dtype=np.int64).ravel() for f in frames]) if len(frames) else np.zeros(0, np.int64)


def scene_pq(pred, gt) -> PQReport:
    if len(pred) != len(gt):
        raise ShapeMismatch(f"{len(pred)} predicted frames vs {len(gt)} reference frames")
    for a, b in zip(pred, gt):
        if np.shape(a) != np.shape(b):
            raise ShapeMismatch(f"frame shapes differ: {np.shape(a)} vs {np.shape(b)}")
    p = _stack(pred)
    g = _stack(gt)
    p_ids, p_inv = np.unique(p, return_inverse=True)
    g_ids, g_inv = np.unique(g, return_inverse=True)
    p_area = np.bincount(p_inv, minlength=len(p_ids))
    g_area = np.bincount(g_inv, minlength=len(g_ids))
    joint = p_inv.astype(np.int64) * len(g_ids) + g_inv
    pairs, inter = np.unique(joint, return_counts=True)
    pi, gi = pairs // len(g_ids), pairs % len(g_ids)
    matched = []
    for a, b, n in zip(pi, gi, inter):
        if p_ids[a] == 0 or g_ids[b] == 0:
            continue
        iou = n / (p_area[a] + g_area[b] - n)
        if iou > 0.5:
            matched.append((int(p_ids[a]), int(g_ids[b]), float(iou)))
    matched.sort(key=lambda m: (m[1], m[0]))
    n_pred = int(np.count_nonzero(p_ids))
    n_gt = int(np.count_nonzero(g_ids))
    tp = len(matched)
    fp, fn = n_pred - tp, n_gt - tp
    iou_sum = sum(m[2] for m in matched)
    denom = tp + 0.5 * fp + 0.5 * fn
    return PQReport(pq=iou_sum / denom if denom > 0 else 0.0, tp=tp, fp=fp, fn=fn,
                    miou_tp=iou_sum / tp if tp else 0.0, matched=matched, total_reference=n_gt)


def matched_miou(pred, gt) -> tuple[float, int, int]:
    r = scene_pq(pred, gt)
    return r.miou_tp, r.tp, r.total_reference


def write_report(path, report: PQReport, extra: dict | None = None) -> None:
    head = "".join(f"{k}={v}\n" for k, v in (extra or {}).items())
    Path(path).write_text(head + report.to_text(), encoding="utf-8")


def parse_report(text: str) -> dict:
    out: dict = {"match": []}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("match "):
            _, p, g, iou = line.split()
            out["match"].append((int(p), int(g), float(iou)))
        elif "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
