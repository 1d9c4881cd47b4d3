"""Synthetic scenes of labeled spheres and boxes, ray cast to ground truth.

Depth images store camera-frame ``Z`` (the same quantity ``project``
returns), with ``+inf`` for background pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import BadParams, DegeneratePrimitive, DuplicateId, ParseError
from .geometry import Intrinsics, Pose


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float

    def lo(self):
        return self.center - self.radius

    def hi(self):
        return self.center + self.radius

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.sum((pts - self.center) ** 2, axis=-1) <= self.radius ** 2

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Smallest positive hit distance per ray, ``inf`` on miss."""
        oc = origins - self.center
        b = np.sum(oc * dirs, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius ** 2
        disc = b * b - c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > 1e-9, t0, t1)
        return np.where(hit & (t > 1e-9), t, np.inf)


@dataclass(frozen=True, eq=False)
class Box:
    min: np.ndarray
    max: np.ndarray

    def lo(self):
        return self.min

    def hi(self):
        return self.max

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.all((pts >= self.min) & (pts <= self.max), axis=-1)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        t_near, t_far = ray_aabb(origins, dirs, self.min, self.max)
        t = np.where(t_near > 1e-9, t_near, t_far)
        return np.where((t_near <= t_far) & (t > 1e-9), t, np.inf)


def ray_aabb(origins, dirs, lo, hi):
    """Slab test. Returns ``(t_near, t_far)``; a miss has ``t_near > t_far``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        ta = (lo - origins) * inv
        tb = (hi - origins) * inv
    # 0 * inf for axis-parallel rays lying on a slab plane
    ta = np.where(np.isnan(ta), -np.inf, ta)
    tb = np.where(np.isnan(tb), np.inf, tb)
    t_near = np.max(np.minimum(ta, tb), axis=-1)
    t_far = np.min(np.maximum(ta, tb), axis=-1)
    return t_near, t_far


@dataclass(frozen=True, eq=False)
class Scene:
    primitives: tuple  # of (instance_id, Sphere | Box)
    bounds: tuple[np.ndarray, np.ndarray]

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.primitives]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.bounds[0] + self.bounds[1])


@dataclass(frozen=True, eq=False)
class GroundTruthFrame:
    pose: Pose
    intrinsics: Intrinsics
    instance_image: np.ndarray
    depth_image: np.ndarray

    @property
    def camera(self):
        return (self.pose, self.intrinsics)


def build_scene(spec) -> Scene:
    """Build a scene from descriptors.

    Each descriptor is ``("sphere", id, (cx, cy, cz), r)`` or
    ``("box", id, (x0, y0, z0), (x1, y1, z1))``.
    """
    prims = []
    seen = set()
    for desc in spec:
        kind, pid = desc[0], int(desc[1])
        if pid <= 0:
            raise BadParams(f"instance id must be positive, got {pid}")
        if pid in seen:
            raise DuplicateId(f"instance id {pid} used twice")
        seen.add(pid)
        if kind == "sphere":
            c = np.asarray(desc[2], dtype=np.float64)
            r = float(desc[3])
            if not r > 0:
                raise DegeneratePrimitive(f"sphere {pid} has radius {r}")
            prims.append((pid, Sphere(c, r)))
        elif kind == "box":
            lo = np.asarray(desc[2], dtype=np.float64)
            hi = np.asarray(desc[3], dtype=np.float64)
            if np.any(lo >= hi):
                raise DegeneratePrimitive(f"box {pid} has min >= max on some axis")
            prims.append((pid, Box(lo, hi)))
        else:
            raise BadParams(f"unknown primitive kind {kind!r}")
    if prims:
        lo = np.min([p.lo() for _, p in prims], axis=0)
        hi = np.max([p.hi() for _, p in prims], axis=0)
    else:
        lo, hi = np.full(3, -1.0), np.full(3, 1.0)
    return Scene(tuple(prims), (lo, hi))


def cast_rays(scene: Scene, origins: np.ndarray, dirs: np.ndarray):
    """Nearest hit per ray: ``(instance_id, distance)``.

    Primitives are visited in ascending id order and only a strictly nearer
    hit replaces the current one, so exact ties go to the lower id.
    """
    shape = origins.shape[:-1]
    best_t = np.full(shape, np.inf)
    best_id = np.zeros(shape, dtype=np.int64)
    for pid, prim in sorted(scene.primitives, key=lambda x: x[0]):
        t = prim.intersect(origins, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_id = np.where(closer, pid, best_id)
    return best_id, best_t


def ray_cast(scene: Scene, camera) -> GroundTruthFrame:
    pose, k = camera
    o, d = geo.image_rays(pose, k)
    ids, dist = cast_rays(scene, o, d)
    # distance along the unit ray -> camera-frame Z
    fwd = d @ pose.rotation[:, 2]
    depth = np.where(ids > 0, dist * fwd, np.inf)
    return GroundTruthFrame(pose, k, ids.astype(np.int64), depth)


def generate_trajectory(kind: str, n_frames: int, params: dict, scene: Scene | None = None) -> list[Pose]:
    """Camera poses looking at the scene center (or ``params['target']``).

    orbit: ``radius``, ``height`` (above target), ``start_deg`` (0),
    ``arc_deg`` (360). A full circle excludes the end point so azimuths are
    spaced ``360 / n`` apart; partial arcs include both ends.
    line: ``start`` and ``end`` eye positions.
    """
    if n_frames < 2:
        raise BadParams("need at least two frames")
    if "target" in params:
        target = np.asarray(params["target"], dtype=np.float64)
    elif scene is not None:
        target = scene.center
    else:
        target = np.zeros(3)
    up = params.get("up", (0.0, 0.0, 1.0))
    try:
        if kind == "orbit":
            radius = float(params["radius"])
            if not radius > 0:
                raise BadParams("orbit radius must be positive")
            height = float(params.get("height", 0.0))
            start = float(params.get("start_deg", 0.0))
            arc = float(params.get("arc_deg", 360.0))
            if abs(arc) >= 360.0:
                az = start + arc * np.arange(n_frames) / n_frames
            else:
                az = start + arc * np.arange(n_frames) / (n_frames - 1)
            poses = []
            for a in np.deg2rad(az):
                eye = target + np.array([radius * math.cos(a), radius * math.sin(a), height])
                poses.append(geo.look_at(eye, target, up))
            return poses
        if kind == "line":
            p0 = np.asarray(params["start"], dtype=np.float64)
            p1 = np.asarray(params["end"], dtype=np.float64)
            return [geo.look_at(p0 + (p1 - p0) * s, target, up)
                    for s in np.linspace(0.0, 1.0, n_frames)]
    except KeyError as exc:
        raise BadParams(f"missing trajectory parameter {exc.args[0]!r}") from None
    except ValueError as exc:
        raise BadParams(str(exc)) from None
    raise BadParams(f"unknown trajectory kind {kind!r}")


def grid_points(bounds, resolution, nodes: bool = False) -> np.ndarray:
    """Sample positions on a regular grid, shape ``(*resolution, 3)``.

    ``nodes=False`` gives cell centers, ``nodes=True`` gives cell corners
    spanning ``bounds`` inclusively.
    """
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    res = _res3(resolution)
    axes = []
    for a in range(3):
        if nodes:
            axes.append(np.linspace(lo[a], hi[a], res[a]))
        else:
            step = (hi[a] - lo[a]) / res[a]
            axes.append(lo[a] + (np.arange(res[a]) + 0.5) * step)
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack(g, axis=-1)


def _res3(resolution) -> tuple[int, int, int]:
    if np.isscalar(resolution):
        return (int(resolution),) * 3
    return tuple(int(r) for r in resolution)


def voxel_instance_oracle(scene: Scene, resolution, bounds=None, nodes: bool = False) -> np.ndarray:
    """Instance id at each grid sample by point-in-primitive tests."""
    res = _res3(resolution)
    if min(res) < 2:
        raise BadParams("grid resolution must be at least 2 per axis")
    pts = grid_points(scene.bounds if bounds is None else bounds, res, nodes=nodes)
    out = np.zeros(res, dtype=np.int64)
    for pid, prim in sorted(scene.primitives, key=lambda x: x[0], reverse=True):
        out[prim.contains(pts)] = pid
    return out


# -- file formats ------------------------------------------------------------

def parse_scene_text(text: str) -> Scene:
    descs = []
    for lineno, raw in enumerate(text.replace(";", "\n").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "sphere" and len(tok) == 6:
                descs.append(("sphere", int(tok[1]), [float(x) for x in tok[2:5]], float(tok[5])))
            elif tok[0] == "box" and len(tok) == 8:
                descs.append(("box", int(tok[1]), [float(x) for x in tok[2:5]],
                              [float(x) for x in tok[5:8]]))
            else:
                raise ParseError(f"cannot parse primitive {line!r}", lineno)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    return build_scene(descs)


def format_scene(scene: Scene) -> str:
    lines = []
    for pid, p in scene.primitives:
        if isinstance(p, Sphere):
            vals = [*p.center, p.radius]
            lines.append(f"sphere {pid} " + " ".join(repr(float(x)) for x in vals))
        else:
            vals = [*p.min, *p.max]
            lines.append(f"box {pid} " + " ".join(repr(float(x)) for x in vals))
    return "\n".join(lines) + "\n"


def write_pgm16(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    if img.size and (img.min() < 0 or img.max() > 65535):
        raise ValueError("labels must fit in 16 bits")
    h, w = img.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + img.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    from .errors import FormatError

    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 65535:
        raise FormatError(f"{path}: expected maxval 65535, got {maxval}")
    pos += 1
    raw = data[pos:pos + 2 * w * h]
    if len(raw) != 2 * w * h:
        raise FormatError(f"{path}: truncated raster")
    return np.frombuffer(raw, dtype=">u2").reshape(h, w).astype(np.int64)


def write_depth(path, depth: np.ndarray) -> None:
    d = np.where(np.isfinite(depth), depth, 0.0).astype("<f4")
    h, w = d.shape
    header = b"D32F" + np.array([w, h], dtype="<u4").tobytes() + b"\x00" * 4
    Path(path).write_bytes(header + d.tobytes())


def read_depth(path) -> np.ndarray:
    from .errors import FormatError

    data = Path(path).read_bytes()
    if data[:4] != b"D32F":
        raise FormatError(f"{path}: bad depth magic")
    w, h = np.frombuffer(data[4:12], dtype="<u4")
    raw = np.frombuffer(data[16:], dtype="<f4")
    if raw.size != w * h:
        raise FormatError(f"{path}: truncated depth raster")
    d = raw.reshape(int(h), int(w)).astype(np.float64)
    return np.where(d > 0, d, np.inf)
