"""InstanceLift: a multiresolution voxel label field.

Density and label logits live on dense grids at several resolutions. A query
point reads every level by trilinear interpolation and sums the results.
Rays are rendered with standard alpha compositing; label logits are
composited with the leftover transmittance assigned to a fixed background
logit vector, then passed through a softmax.

Label training never touches density: the compositing weights are treated
as constants when differentiating the label loss.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import geometry as geo
from .errors import FormatError, LabelOutOfRange, UnmappedId
from .rng import stream
from .scene import ray_aabb

BG_SCALE = 10.0
PAINT_LOGIT = 10.0
# samples whose compositing weight is at or below this are skipped for labels
WEIGHT_EPS = 1e-12
_CHUNK = 16384


@dataclass(eq=False)
class LabelField:
    bounds: tuple[np.ndarray, np.ndarray]
    resolutions: list[tuple[int, int, int]]
    n_labels: int
    density: list[np.ndarray]
    logits: list[np.ndarray]

    @classmethod
    def zeros(cls, bounds, resolutions, n_labels: int, dtype=np.float32) -> "LabelField":
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
        res = [tuple(int(x) for x in ((r,) * 3 if np.isscalar(r) else r)) for r in resolutions]
        if any(min(r) < 2 for r in res):
            raise ValueError("every level needs at least 2 nodes per axis")
        return cls((lo, hi), res, int(n_labels),
                   [np.zeros(r, dtype=dtype) for r in res],
                   [np.zeros(r + (n_labels + 1,), dtype=dtype) for r in res])

    @property
    def n_classes(self) -> int:
        return self.n_labels + 1

    @property
    def background(self) -> np.ndarray:
        b = np.zeros(self.n_classes)
        b[0] = BG_SCALE
        return b

    def copy(self) -> "LabelField":
        return replace(self, density=[d.copy() for d in self.density],
                       logits=[l.copy() for l in self.logits])

    def inside(self, pts: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds
        return np.all((pts >= lo) & (pts <= hi), axis=-1)


@dataclass(frozen=True)
class RenderConfig:
    samples_per_ray: int = 64
    near: float | None = None
    far: float | None = None
    jitter: bool = False

    def __post_init__(self):
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be at least 2")
        if self.near is not None and self.far is not None and not self.near < self.far:
            raise ValueError("near must be below far")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    rays_per_batch: int = 1024
    lr_density: float = 20.0
    lr_labels: float = 1000.0
    density_mode: str = "oracle"
    bg_fraction: float = 0.1
    depth_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.rays_per_batch < 1:
            raise ValueError("iterations and rays_per_batch must be positive")
        if not (self.lr_density > 0 and self.lr_labels > 0):
            raise ValueError("learning rates must be positive")
        if self.density_mode not in ("oracle", "depth"):
            raise ValueError(f"unknown density mode {self.density_mode!r}")
        if not 0.0 <= self.bg_fraction <= 1.0:
            raise ValueError("bg_fraction must lie in [0, 1]")


# -- interpolation ----------------------------------------------------------

def _corners(field: LabelField, level: int, pts: np.ndarray):
    """Flat node indices (N, 8) and trilinear weights (N, 8) for one level."""
    lo, hi = field.bounds
    res = np.asarray(field.resolutions[level])
    g = (pts - lo) / (hi - lo) * (res - 1)
    i0 = np.clip(np.floor(g).astype(np.int64), 0, res - 2)
    f = np.clip(g - i0, 0.0, 1.0)
    idx = np.empty(pts.shape[:-1] + (8,), dtype=np.int64)
    wts = np.empty(pts.shape[:-1] + (8,))
    ny, nz = res[1], res[2]
    c = 0
    for dx in (0, 1):
        wx = f[..., 0] if dx else 1.0 - f[..., 0]
        for dy in (0, 1):
            wy = f[..., 1] if dy else 1.0 - f[..., 1]
            for dz in (0, 1):
                wz = f[..., 2] if dz else 1.0 - f[..., 2]
                idx[..., c] = ((i0[..., 0] + dx) * ny + (i0[..., 1] + dy)) * nz + (i0[..., 2] + dz)
                wts[..., c] = wx * wy * wz
                c += 1
    return idx, wts


def _density_at(field: LabelField, pts: np.ndarray, inside: np.ndarray, corners=None) -> np.ndarray:
    raw = np.zeros(pts.shape[:-1])
    for lvl, grid in enumerate(field.density):
        if not grid.any():
            continue
        idx, wts = corners[lvl] if corners is not None else _corners(field, lvl, pts)
        raw += np.sum(grid.reshape(-1)[idx] * wts, axis=-1)
    return np.where(inside, np.maximum(raw, 0.0), 0.0)


def _logits_at(field: LabelField, pts: np.ndarray, inside: np.ndarray, corners=None) -> np.ndarray:
    out = np.zeros(pts.shape[:-1] + (field.n_classes,))
    for lvl, grid in enumerate(field.logits):
        idx, wts = corners[lvl] if corners is not None else _corners(field, lvl, pts)
        vals = grid.reshape(-1, field.n_classes)[idx]
        out += np.einsum("...k,...kc->...c", wts, vals)
    out[~inside] = field.background
    return out


def sample_field(field: LabelField, point) -> tuple[float, np.ndarray]:
    p = np.asarray(point, dtype=np.float64).reshape(1, 3)
    ins = field.inside(p)
    return float(_density_at(field, p, ins)[0]), _logits_at(field, p, ins)[0]


# -- rendering -----------------------------------------------------------------

def _ray_range(field: LabelField, o, d, cfg: RenderConfig):
    t0, t1 = ray_aabb(o, d, *field.bounds)
    t0 = np.maximum(t0, 0.0)
    if cfg.near is not None:
        t0 = np.maximum(t0, cfg.near) if cfg.far is None else np.full_like(t0, cfg.near)
    if cfg.far is not None:
        t1 = np.minimum(t1, cfg.far) if cfg.near is None else np.full_like(t1, cfg.far)
    hit = t1 > t0
    return np.where(hit, t0, 0.0), np.where(hit, t1, 0.0), hit


def _sample_ts(field, o, d, cfg: RenderConfig, rng=None):
    t0, t1, hit = _ray_range(field, o, d, cfg)
    s = cfg.samples_per_ray
    step = (t1 - t0) / s
    if cfg.jitter and rng is not None:
        u = rng.random((len(o), s))
    else:
        u = np.full((len(o), s), 0.5)
    ts = t0[:, None] + (np.arange(s)[None, :] + u) * step[:, None]
    deltas = np.broadcast_to(step[:, None], ts.shape)
    return ts, deltas, hit


def composite_weights(sigma: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Alpha-compositing weights along the last axis."""
    tau = sigma * deltas
    alpha = -np.expm1(-tau)
    trans = np.exp(-np.concatenate([np.zeros(tau.shape[:-1] + (1,)), np.cumsum(tau, axis=-1)[..., :-1]], axis=-1))
    return trans * alpha


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class _Samples:
    """Compositing state for a ray batch, sparse over nonzero weights."""

    n_rays: int
    wsum: np.ndarray
    sw_t: np.ndarray          # sum of w * t per ray
    ray: np.ndarray           # ray index per kept sample
    w: np.ndarray             # weight per kept sample
    corners: list             # per level (idx, wts) for kept samples
    inside: np.ndarray


def _march(field: LabelField, o, d, cfg: RenderConfig, rng=None, keep_dense=False):
    ts, deltas, hit = _sample_ts(field, o, d, cfg, rng)
    pts = o[:, None, :] + ts[..., None] * d[:, None, :]
    inside = field.inside(pts) & hit[:, None]
    sigma = _density_at(field, pts, inside)
    w = composite_weights(sigma, deltas)
    keep = w > WEIGHT_EPS
    ray = np.nonzero(keep)[0]
    kp = pts[keep]
    corners = [_corners(field, lvl, kp) for lvl in range(len(field.logits))]
    smp = _Samples(len(o), w.sum(axis=-1), (w * ts).sum(axis=-1), ray, w[keep], corners, inside[keep])
    if keep_dense:
        return smp, (pts, ts, deltas, sigma, w, inside)
    return smp


def _composite_logits(field: LabelField, smp: _Samples) -> np.ndarray:
    lg = _logits_at(field, np.zeros((len(smp.w), 3)), smp.inside, smp.corners)
    z = np.zeros((smp.n_rays, field.n_classes))
    np.add.at(z, smp.ray, smp.w[:, None] * lg)
    z += (1.0 - smp.wsum)[:, None] * field.background
    return z


def render_rays(field: LabelField, origins, dirs, cfg: RenderConfig = RenderConfig(), rng=None):
    """Render ray batches; returns ``(distribution, expected_depth, weight_sum)``."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    dist = np.empty((n, field.n_classes))
    depth = np.empty(n)
    wsum = np.empty(n)
    for a in range(0, n, _CHUNK):
        b = min(a + _CHUNK, n)
        smp = _march(field, origins[a:b], dirs[a:b], cfg, rng)
        dist[a:b] = softmax(_composite_logits(field, smp))
        wsum[a:b] = smp.wsum
        depth[a:b] = smp.sw_t / np.maximum(smp.wsum, 1e-10)
    return dist, depth, wsum


def render_ray(field: LabelField, ray: geo.Ray, cfg: RenderConfig = RenderConfig()):
    dist, depth, wsum = render_rays(field, ray.origin[None], ray.direction[None], cfg)
    return dist[0], float(depth[0]), float(wsum[0])


def render_view(field: LabelField, camera, cfg: RenderConfig = RenderConfig(), downsample: int = 1):
    """Argmax label image and per-pixel max probability."""
    pose, k = camera
    kd = k.downsample(int(downsample))
    o, d = geo.image_rays(pose, kd)
    dist, _, _ = render_rays(field, o.reshape(-1, 3), d.reshape(-1, 3), cfg)
    labels = dist.argmax(axis=-1).reshape(kd.height, kd.width)
    return labels, dist.max(axis=-1).reshape(kd.height, kd.width)


def render_pixels(field: LabelField, camera, u, v, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Argmax labels at integer pixel coordinates."""
    pose, k = camera
    o, d = geo.pixel_rays(u, v, pose, k)
    dist, _, _ = render_rays(field, o.reshape(-1, 3), d.reshape(-1, 3), cfg)
    return dist.argmax(axis=-1)


# -- painting ------------------------------------------------------------------

def paint_from_oracle(field: LabelField, oracle: np.ndarray, label_map: dict, density: float = 400.0) -> LabelField:
    """Write oracle geometry and labels into the finest level.

    ``oracle`` holds instance ids at the finest level's nodes. Foreground
    nodes get ``density`` (per meter), all others zero.
    Logits are +/-PAINT_LOGIT one-hot; background nodes take the label of
    the nearest foreground node so interpolation near surfaces stays on the
    object's label.
    """
    oracle = np.asarray(oracle)
    lvl = int(np.argmax([np.prod(r) for r in field.resolutions]))
    if oracle.shape != field.resolutions[lvl]:
        raise ValueError(f"oracle grid {oracle.shape} does not match level resolution {field.resolutions[lvl]}")
    ids = np.unique(oracle[oracle > 0])
    missing = [int(i) for i in ids if int(i) not in label_map]
    if missing:
        raise UnmappedId(f"instance ids {missing} have no label")
    out = field.copy()
    for g in out.density + out.logits:
        g[...] = 0
    if len(ids) == 0:
        return out
    lut = np.zeros(int(oracle.max()) + 1, dtype=np.int64)
    for i in ids:
        lab = int(label_map[int(i)])
        if not 0 < lab <= field.n_labels:
            raise LabelOutOfRange(f"label {lab} outside 1..{field.n_labels}")
        lut[int(i)] = lab
    labels = lut[oracle]
    fg = labels > 0
    near = ndimage.distance_transform_edt(~fg, return_distances=False, return_indices=True)
    filled = labels[tuple(near)]
    out.density[lvl][...] = density * fg
    lg = np.full(filled.shape + (field.n_classes,), -PAINT_LOGIT)
    np.put_along_axis(lg, filled[..., None], PAINT_LOGIT, axis=-1)
    out.logits[lvl][...] = lg
    return out


def paint_density(field: LabelField, occupancy: np.ndarray, density: float = 400.0) -> LabelField:
    """Copy of ``field`` with oracle density on the finest level and zero logits."""
    occupancy = np.asarray(occupancy)
    lvl = int(np.argmax([np.prod(r) for r in field.resolutions]))
    if occupancy.shape != field.resolutions[lvl]:
        raise ValueError(f"occupancy grid {occupancy.shape} does not match level resolution {field.resolutions[lvl]}")
    out = field.copy()
    for g in out.density + out.logits:
        g[...] = 0
    out.density[lvl][...] = density * (occupancy > 0)
    return out


# -- training ------------------------------------------------------------------

@dataclass(eq=False)
class TrainFrame:
    pose: geo.Pose
    intrinsics: geo.Intrinsics
    labels: np.ndarray
    depth: np.ndarray | None = None


@dataclass
class TrainResult:
    field: LabelField
    ce: list[float] = field(default_factory=list)
    density_loss: list[float] = field(default_factory=list)


def _ray_pool(frames: list[TrainFrame], bg_fraction: float, rng):
    """Supervised rays: every labeled pixel plus a fixed share of the rest."""
    o_all, d_all, y_all, t_all = [], [], [], []
    for fr in frames:
        lab = np.asarray(fr.labels)
        fg = lab > 0
        bg_idx = np.flatnonzero(~fg)
        n_bg = int(round(bg_fraction * len(bg_idx)))
        pick = np.zeros(lab.size, dtype=bool)
        pick[np.flatnonzero(fg)] = True
        if n_bg:
            pick[np.sort(rng.choice(bg_idx, size=n_bg, replace=False))] = True
        v, u = np.unravel_index(np.flatnonzero(pick), lab.shape)
        o, d = geo.pixel_rays(u, v, fr.pose, fr.intrinsics)
        o_all.append(o)
        d_all.append(d)
        y_all.append(lab[v, u])
        if fr.depth is not None:
            fwd = d @ fr.pose.rotation[:, 2]
            t_all.append(np.asarray(fr.depth)[v, u] / fwd)
        else:
            t_all.append(np.full(len(u), np.inf))
    return (np.concatenate(o_all), np.concatenate(d_all),
            np.concatenate(y_all).astype(np.int64), np.concatenate(t_all))


def _ce_and_grad(z: np.ndarray, y: np.ndarray):
    p = softmax(z)
    ce = -np.log(np.maximum(p[np.arange(len(y)), y], 1e-300))
    g = p
    g[np.arange(len(y)), y] -= 1.0
    return ce, g


def label_loss_and_grad(field: LabelField, smp: _Samples, y: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. every label level.

    Gradients come back unreduced per level as ``(node_ids, values)``; the
    same node may appear several times and contributions add up.
    """
    z = _composite_logits(field, smp)
    ce, gz = _ce_and_grad(z, y)
    gz /= len(y)
    gs = smp.w[:, None] * gz[smp.ray]
    grads = []
    for idx, wts in smp.corners:
        contrib = (wts[..., None] * gs[:, None, :]).reshape(-1, field.n_classes)
        grads.append((idx.reshape(-1), contrib))
    return float(ce.mean()), grads


def label_loss(field: LabelField, origins, dirs, y, cfg: RenderConfig) -> float:
    smp = _march(field, np.asarray(origins, float), np.asarray(dirs, float), cfg)
    z = _composite_logits(field, smp)
    ce, _ = _ce_and_grad(z, np.asarray(y))
    return float(ce.mean())


def label_gradient(field: LabelField, origins, dirs, y, cfg: RenderConfig):
    """Dense label-grid gradients (one array per level) of the mean CE."""
    smp = _march(field, np.asarray(origins, float), np.asarray(dirs, float), cfg)
    _, grads = label_loss_and_grad(field, smp, np.asarray(y))
    out = []
    for lvl, (nodes, acc) in enumerate(grads):
        g = np.zeros(field.logits[lvl].shape).reshape(-1, field.n_classes)
        np.add.at(g, nodes, acc)
        out.append(g.reshape(field.logits[lvl].shape))
    return out


def _density_loss_and_grad(field: LabelField, dense, t_target, fg, cfg_weight):
    """Occupancy objective for depth-supervised density.

    Foreground rays: ``depth_weight * (S - t* W)^2 + (W - 1)^2`` with W the
    weight sum and S the weighted depth sum, so the first term is the squared
    depth error once W reaches 1 and stays bounded when W is near 0.
    Background rays: ``W^2``.
    """
    pts, ts, deltas, sigma, w, inside = dense
    n = len(ts)
    tau = sigma * deltas
    cum = np.cumsum(tau, axis=-1)
    t_next = np.exp(-cum)                   # transmittance after each sample
    t_end = t_next[:, -1]
    W = w.sum(axis=-1)
    S = (w * ts).sum(axis=-1)
    tail = np.cumsum((w * ts)[:, ::-1], axis=-1)[:, ::-1]
    tail_after = np.concatenate([tail[:, 1:], np.zeros((n, 1))], axis=-1)
    dW = deltas * t_end[:, None]
    dS = deltas * (t_next * ts - tail_after)
    tgt = np.where(fg, t_target, 0.0)
    r = S - tgt * W
    loss = np.where(fg, cfg_weight * r ** 2 + (W - 1.0) ** 2, W ** 2)
    g = np.where(fg[:, None], 2 * cfg_weight * r[:, None] * (dS - tgt[:, None] * dW) + 2 * (W - 1.0)[:, None] * dW,
                 2 * W[:, None] * dW)
    g = g / n
    # rectified sum of levels: no gradient where the clamp is active or outside
    raw = np.zeros(sigma.shape)
    for lvl, grid in enumerate(field.density):
        idx, wts = _corners(field, lvl, pts)
        raw += np.sum(grid.reshape(-1)[idx] * wts, axis=-1)
    g = np.where(inside & (raw > 0) | inside & (raw == 0) & (g < 0), g, 0.0)
    grads = []
    for lvl in range(len(field.density)):
        idx, wts = _corners(field, lvl, pts)
        contrib = (wts * g[..., None]).reshape(-1)
        flat = idx.reshape(-1)
        nodes, inv = np.unique(flat, return_inverse=True)
        grads.append((nodes, np.bincount(inv, weights=contrib, minlength=len(nodes))))
    return float(loss.mean()), grads


def train(field: LabelField, frames: list[TrainFrame], train_cfg: TrainConfig = TrainConfig(),
          render_cfg: RenderConfig = RenderConfig()) -> TrainResult:
    """Fit label logits (and, in depth mode, density) to pseudolabel images."""
    for fr in frames:
        lab = np.asarray(fr.labels)
        if lab.size and (lab.min() < 0 or lab.max() > field.n_labels):
            raise LabelOutOfRange(f"pseudolabels must lie in [0, {field.n_labels}]")
    f = field.copy()
    rng = stream(train_cfg.seed, "train")
    o, d, y, t_depth = _ray_pool(frames, train_cfg.bg_fraction, stream(train_cfg.seed, "pool"))
    result = TrainResult(f)
    if len(y) == 0:
        return result
    cache = None
    if train_cfg.density_mode == "oracle" and not render_cfg.jitter:
        cache = _SampleCache(f, o, d, render_cfg)
    for _ in range(train_cfg.iterations):
        batch = rng.integers(0, len(y), size=train_cfg.rays_per_batch)
        dens_loss = 0.0
        if cache is not None:
            smp = cache.batch(batch)
        elif train_cfg.density_mode == "depth":
            smp, dense = _march(f, o[batch], d[batch], render_cfg, rng, keep_dense=True)
            fg = np.isfinite(t_depth[batch])
            dens_loss, dgrads = _density_loss_and_grad(f, dense, t_depth[batch], fg, train_cfg.depth_weight)
        else:
            smp = _march(f, o[batch], d[batch], render_cfg, rng)
        ce, grads = label_loss_and_grad(f, smp, y[batch])
        for lvl, (nodes, acc) in enumerate(grads):
            flat = f.logits[lvl].reshape(-1, f.n_classes)
            np.add.at(flat, nodes, (-train_cfg.lr_labels * acc).astype(flat.dtype))
        if train_cfg.density_mode == "depth":
            for lvl, (nodes, acc) in enumerate(dgrads):
                flat = f.density[lvl].reshape(-1)
                flat[nodes] = np.maximum(flat[nodes] - train_cfg.lr_density * acc, 0.0)
        result.ce.append(ce)
        result.density_loss.append(dens_loss)
    return result


class _SampleCache:
    """Precomputed sparse samples for a fixed ray pool under frozen density."""

    def __init__(self, field: LabelField, o, d, cfg: RenderConfig):
        rays, ws, pts_all, ins_all, wsum = [], [], [], [], []
        for a in range(0, len(o), _CHUNK):
            b = min(a + _CHUNK, len(o))
            ts, deltas, hit = _sample_ts(field, o[a:b], d[a:b], cfg)
            pts = o[a:b, None, :] + ts[..., None] * d[a:b, None, :]
            inside = field.inside(pts) & hit[:, None]
            w = composite_weights(_density_at(field, pts, inside), deltas)
            keep = w > WEIGHT_EPS
            rays.append(np.nonzero(keep)[0] + a)
            ws.append(w[keep])
            pts_all.append(pts[keep])
            ins_all.append(inside[keep])
            wsum.append(w.sum(axis=-1))
        self.field = field
        self.ray = np.concatenate(rays)
        self.w = np.concatenate(ws)
        pts = np.concatenate(pts_all)
        self.inside = np.concatenate(ins_all)
        self.wsum = np.concatenate(wsum)
        self.corners = [_corners(field, lvl, pts) for lvl in range(len(field.logits))]
        self.start = np.searchsorted(self.ray, np.arange(len(o) + 1))

    def batch(self, batch: np.ndarray) -> _Samples:
        lo, hi = self.start[batch], self.start[batch + 1]
        counts = hi - lo
        sel = np.repeat(lo - np.cumsum(np.concatenate([[0], counts[:-1]])), counts) + np.arange(counts.sum())
        ray = np.repeat(np.arange(len(batch)), counts)
        corners = [(idx[sel], wts[sel]) for idx, wts in self.corners]
        return _Samples(len(batch), self.wsum[batch], np.zeros(len(batch)), ray, self.w[sel],
                        corners, self.inside[sel])


def evaluate_ce(field: LabelField, frames: list[TrainFrame], cfg: RenderConfig = RenderConfig(),
                bg_fraction: float = 0.1, seed: int = 0) -> float:
    """Mean cross-entropy over the same ray pool ``train`` draws from."""
    o, d, y, _ = _ray_pool(frames, bg_fraction, stream(seed, "pool"))
    total = 0.0
    for a in range(0, len(y), _CHUNK):
        b = min(a + _CHUNK, len(y))
        total += label_loss(field, o[a:b], d[a:b], y[a:b], cfg) * (b - a)
    return total / max(len(y), 1)


# -- checkpoints ---------------------------------------------------------------

MAGIC = b"LF01"


def save_field(path, field: LabelField) -> None:
    lo, hi = field.bounds
    parts = [MAGIC, struct.pack("<6d", *lo, *hi), struct.pack("<I", len(field.resolutions))]
    for r in field.resolutions:
        parts.append(struct.pack("<3I", *r))
    parts.append(struct.pack("<I", field.n_labels))
    for g in field.density + field.logits:
        parts.append(np.ascontiguousarray(g, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_field(path) -> LabelField:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a label field checkpoint (magic {data[:4]!r})")
    try:
        pos = 4
        vals = struct.unpack_from("<6d", data, pos)
        pos += 48
        (n_lvl,) = struct.unpack_from("<I", data, pos)
        pos += 4
        res = []
        for _ in range(n_lvl):
            res.append(struct.unpack_from("<3I", data, pos))
            pos += 12
        (n_labels,) = struct.unpack_from("<I", data, pos)
        pos += 4
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    field = LabelField.zeros((np.array(vals[:3]), np.array(vals[3:])), res, n_labels)
    for g in field.density + field.logits:
        nbytes = 4 * g.size
        chunk = data[pos:pos + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(f"{path}: truncated grid data")
        g[...] = np.frombuffer(chunk, dtype="<f4").reshape(g.shape)
        pos += nbytes
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return field


def write_loss_trace(path, result: TrainResult) -> None:
    lines = ["iteration,ce_loss,density_loss"]
    for i, (ce, dl) in enumerate(zip(result.ce, result.density_loss)):
        lines.append(f"{i},{ce:.9g},{dl:.9g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
