"""Pinhole camera model, rigid poses and ray generation.

Conventions: camera +Z forward, +X right, +Y down. Pixel ``(u, v)`` has its
center at integer coordinates, ``u`` is the column and ``v`` the row. Images
are indexed ``image[v, u]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BehindCamera, NonPositiveDepth, OutOfBounds, ParseError

_MIN_DEPTH = 1e-9


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world rigid transform.

    ``rotation`` maps camera-frame directions to world directions and
    ``translation`` is the camera center in world coordinates.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 3) to camera frame."""
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
                and np.allclose(self.translation, other.translation, atol=atol, rtol=0))

    def is_orthonormal(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return (np.max(np.abs(r.T @ r - np.eye(3))) < tol
                and abs(np.linalg.det(r) - 1.0) < tol)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def downsample(self, factor: int) -> "Intrinsics":
        """Intrinsics of the ``factor``-times coarser pixel grid.

        Coarse pixel ``(u', v')`` is centered on the fine-grid point
        ``factor * u' + (factor - 1) / 2``.
        """
        if factor == 1:
            return self
        s = 1.0 / factor
        off = (factor - 1) / 2.0
        return Intrinsics(self.fx * s, self.fy * s, (self.cx - off) * s, (self.cy - off) * s,
                          self.width // factor, self.height // factor)

    def contains(self, u, v) -> np.ndarray:
        """True where the pixel coordinate rounds to a valid pixel."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        return (u >= -0.5) & (u < self.width - 0.5) & (v >= -0.5) & (v < self.height - 0.5)


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.array(self.origin, dtype=np.float64).reshape(3)
        d = np.array(self.direction, dtype=np.float64).reshape(3)
        d = d / np.linalg.norm(d)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


def project(point, pose: Pose, k: Intrinsics) -> tuple[np.ndarray, float]:
    """Project a world point; returns ``(pixel, depth)``."""
    p = pose.to_camera(point)
    z = p[2]
    if not z > _MIN_DEPTH:
        raise BehindCamera(f"camera-frame depth {z:.3g} is not in front of the camera")
    return np.array([k.fx * p[0] / z + k.cx, k.fy * p[1] / z + k.cy]), float(z)


def project_points(points: np.ndarray, pose: Pose, k: Intrinsics):
    """Vectorized projection. Points behind the camera get NaN pixels."""
    p = pose.to_camera(points)
    z = p[..., 2]
    ok = z > _MIN_DEPTH
    zs = np.where(ok, z, 1.0)
    u = np.where(ok, k.fx * p[..., 0] / zs + k.cx, np.nan)
    v = np.where(ok, k.fy * p[..., 1] / zs + k.cy, np.nan)
    return u, v, z


def backproject(pixel, depth: float, pose: Pose, k: Intrinsics) -> np.ndarray:
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    u, v = pixel
    p = np.array([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth])
    return pose.to_world(p)


def backproject_points(u, v, depth, pose: Pose, k: Intrinsics) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth > 0)):
        raise NonPositiveDepth("all depths must be positive")
    cam = np.stack([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth], axis=-1)
    return pose.to_world(cam)


def pixel_ray(pixel, pose: Pose, k: Intrinsics) -> Ray:
    u, v = pixel
    if not bool(k.contains(u, v)):
        raise OutOfBounds(f"pixel ({u}, {v}) outside {k.width}x{k.height} image")
    d = np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
    return Ray(pose.translation, pose.rotation @ d)


def pixel_rays(u, v, pose: Pose, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions, shape (..., 3), for pixel arrays."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    d = d @ pose.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(pose.translation, d.shape)
    return o, d


def image_rays(pose: Pose, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Rays through every pixel center, shape (H, W, 3)."""
    v, u = np.mgrid[0:k.height, 0:k.width]
    return pixel_rays(u, v, pose, k)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Pose at ``eye`` whose +Z axis points at ``target``.

    The camera +Y (down) axis is aligned with ``-up`` as closely as possible.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(z)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    z /= n
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(x) < 1e-9:
        raise ValueError("viewing direction parallel to up vector")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), eye)


def rotation_about(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    kx = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx


# -- camera text files ------------------------------------------------------

def format_camera(cam_id: int, pose: Pose, k: Intrinsics) -> str:
    vals = [k.fx, k.fy, k.cx, k.cy]
    head = " ".join(repr(float(x)) for x in vals)
    rot = " ".join(repr(float(x)) for x in pose.rotation.ravel())
    tr = " ".join(repr(float(x)) for x in pose.translation)
    return f"{cam_id} {head} {k.width} {k.height} {rot} {tr}"


def write_cameras(path, cameras) -> None:
    """Write ``(pose, intrinsics)`` pairs, one per line, ids from 0."""
    lines = ["# id fx fy cx cy w h r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz"]
    lines += [format_camera(i, p, k) for i, (p, k) in enumerate(cameras)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_cameras(path) -> list[tuple[int, Pose, Intrinsics]]:
    out = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 19:
            raise ParseError(f"expected 19 fields, got {len(tok)}", lineno)
        try:
            cam_id = int(tok[0])
            fx, fy, cx, cy = (float(t) for t in tok[1:5])
            w, h = int(tok[5]), int(tok[6])
            rot = np.array([float(t) for t in tok[7:16]]).reshape(3, 3)
            tr = np.array([float(t) for t in tok[16:19]])
            k = Intrinsics(fx, fy, cx, cy, w, h)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        out.append((cam_id, Pose(rot, tr), k))
    return out
