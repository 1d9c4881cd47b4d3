"""Pipeline configuration: flat ``key = value`` files with ``[section]`` headers."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .frontend import CorruptionParams
from .label_field import RenderConfig, TrainConfig

# (section, key, default, help); default None means required
KEYS = [
    ("run", "seed", None, "base seed for every random stream"),
    ("run", "out", "out", "output directory"),
    ("run", "threads", "0", "worker threads for per-frame work, 0 = all cores"),
    ("scene", "spec", None, "scene file path, or inline primitives separated by ';'"),
    ("camera", "width", "128", "image width in pixels"),
    ("camera", "height", "128", "image height in pixels"),
    ("camera", "fov_deg", "60", "horizontal field of view"),
    ("trajectory", "kind", "orbit", "orbit | line"),
    ("trajectory", "frames", "24", "number of frames"),
    ("trajectory", "radius", "2.5", "orbit radius (m)"),
    ("trajectory", "height", "1.0", "orbit height above the scene center (m)"),
    ("trajectory", "start_deg", "0", "first orbit azimuth"),
    ("trajectory", "arc_deg", "360", "orbit sweep"),
    ("trajectory", "start", "", "line start eye position 'x y z'"),
    ("trajectory", "end", "", "line end eye position 'x y z'"),
    ("frontend", "permute", "true", "shuffle labels per frame"),
    ("frontend", "split_prob", "0", "per-region split probability"),
    ("frontend", "max_splits", "0", "split budget per region"),
    ("frontend", "dropout_prob", "0", "per-region drop probability"),
    ("frontend", "erosion_radius", "0", "square erosion radius (px)"),
    ("frontend", "min_region_px", "1", "smallest region kept"),
    ("fast_frontend", "split_prob", "0", "fast frontend split probability"),
    ("fast_frontend", "max_splits", "0", "fast frontend split budget"),
    ("fast_frontend", "erosion_radius", "0", "fast frontend erosion radius"),
    ("fast_frontend", "min_region_px", "16", "fast frontend smallest region (px at half resolution)"),
    ("matching", "stride", "4", "pixel stride for covisibility scoring"),
    ("matching", "n_keypoints", "4000", "keypoints sampled per pair"),
    ("matching", "noise_sigma_px", "0", "match endpoint noise (px)"),
    ("matching", "outlier_rate", "0", "fraction of matches with random endpoints"),
    ("matching", "file", "", "use an external match file instead of generating"),
    ("thresholds", "tau_global", "0.25", "pair selection similarity threshold"),
    ("thresholds", "tau_local", "0.8", "matching score threshold"),
    ("thresholds", "tau_community", "2", "minimum community size"),
    ("thresholds", "tau_area", "0.15", "region occupancy threshold for redundancy edges"),
    ("thresholds", "tau_merge", "0.75", "label merge threshold"),
    ("thresholds", "min_frames", "2", "minimum frames per 3D label"),
    ("thresholds", "resolution", "0", "Leiden CPM resolution"),
    ("field", "levels", "16,32,64,128", "grid resolution per level"),
    ("field", "padding", "0.1", "margin around the scene bounds (m)"),
    ("field", "oracle_density", "400", "density painted inside objects (1/m)"),
    ("train", "iterations", "2000", "training iterations"),
    ("train", "rays_per_batch", "1024", "rays per iteration"),
    ("train", "lr_labels", "1000", "label learning rate"),
    ("train", "lr_density", "20", "density learning rate (depth mode)"),
    ("train", "density_mode", "oracle", "oracle | depth"),
    ("train", "bg_fraction", "0.1", "share of unlabeled pixels supervised as background"),
    ("render", "samples_per_ray", "64", "samples per ray"),
    ("refine", "k_views", "20", "random views for the redundancy graph"),
    ("refine", "samples_per_region", "48", "field queries per region in localization"),
    ("refine", "merge_iterate", "false", "repeat merging until stable"),
]

KNOWN = {(s, k) for s, k, _, _ in KEYS}


def help_text() -> str:
    lines = ["configuration keys:"]
    sec = None
    for s, k, d, h in KEYS:
        if s != sec:
            lines.append(f"  [{s}]")
            sec = s
        default = "required" if d is None else f"default {d!r}"
        lines.append(f"    {k:<16} {h} ({default})")
    return "\n".join(lines)


@dataclass
class PipelineConfig:
    seed: int
    out: Path
    threads: int
    scene_spec: str
    scene_base: Path
    width: int
    height: int
    fov_deg: float
    trajectory: dict
    frontend: CorruptionParams
    fast_frontend: CorruptionParams
    stride: int
    n_keypoints: int
    noise_sigma_px: float
    outlier_rate: float
    match_file: str
    tau_global: float
    tau_local: float
    tau_community: int
    tau_area: float
    tau_merge: float
    min_frames: int
    resolution: float
    levels: list[int]
    padding: float
    oracle_density: float
    train: TrainConfig
    render: RenderConfig
    k_views: int
    samples_per_region: int
    merge_iterate: bool
    raw: dict = field(default_factory=dict)

    def intrinsics(self):
        import math

        from .geometry import Intrinsics

        fx = 0.5 * self.width / math.tan(math.radians(self.fov_deg) / 2)
        return Intrinsics(fx, fx, (self.width - 1) / 2.0, (self.height - 1) / 2.0, self.width, self.height)


def load_config(path=None, text: str | None = None, overrides: dict | None = None) -> PipelineConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    base = Path(".")
    try:
        if text is not None:
            cp.read_string(text)
        elif path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError("config", f"file {str(p)!r} not found")
            cp.read_string(p.read_text(encoding="utf-8"))
            base = p.parent
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    raw = {}
    for s in cp.sections():
        for k, v in cp.items(s):
            if (s, k) not in KNOWN:
                raise ConfigError(f"{s}.{k}", "unknown key")
            raw[(s, k)] = v
    for (s, k), v in (overrides or {}).items():
        raw[(s, k)] = str(v)
    return _build(raw, base)


def _build(raw: dict, base: Path) -> PipelineConfig:
    def get(s, k):
        if (s, k) in raw and raw[(s, k)].strip() != "":
            return raw[(s, k)].strip()
        for ss, kk, d, _ in KEYS:
            if (ss, kk) == (s, k):
                if d is None:
                    raise ConfigError(f"{s}.{k}", "required key is missing")
                return d
        raise KeyError((s, k))

    def num(s, k, kind=float, lo=None, hi=None, lo_open=False):
        v = get(s, k)
        try:
            x = kind(v)
        except ValueError:
            raise ConfigError(f"{s}.{k}", f"cannot parse {v!r} as {kind.__name__}") from None
        if lo is not None and (x < lo or (lo_open and x == lo)):
            raise ConfigError(f"{s}.{k}", f"value {x} out of range")
        if hi is not None and x > hi:
            raise ConfigError(f"{s}.{k}", f"value {x} out of range")
        return x

    def flag(s, k):
        v = get(s, k).lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{s}.{k}", f"cannot parse {v!r} as a boolean")

    def vec(s, k):
        v = get(s, k)
        if not v:
            return None
        try:
            out = [float(x) for x in v.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"{s}.{k}", f"cannot parse {v!r} as a vector") from None
        if len(out) != 3:
            raise ConfigError(f"{s}.{k}", "expected three numbers")
        return out

    seed = num("run", "seed", int)
    threads = num("run", "threads", int, 0)
    kind = get("trajectory", "kind")
    traj = {"kind": kind, "frames": num("trajectory", "frames", int, 2)}
    if kind == "orbit":
        traj.update(radius=num("trajectory", "radius", float, 0, lo_open=True),
                    height=num("trajectory", "height"),
                    start_deg=num("trajectory", "start_deg"), arc_deg=num("trajectory", "arc_deg"))
    elif kind == "line":
        start, end = vec("trajectory", "start"), vec("trajectory", "end")
        if start is None or end is None:
            raise ConfigError("trajectory.start", "line trajectories need start and end")
        traj.update(start=start, end=end)
    else:
        raise ConfigError("trajectory.kind", f"unknown kind {kind!r}")

    front = CorruptionParams(
        permute=flag("frontend", "permute"),
        split_prob=num("frontend", "split_prob", float, 0, 1),
        max_splits=num("frontend", "max_splits", int, 0),
        dropout_prob=num("frontend", "dropout_prob", float, 0, 1),
        erosion_radius=num("frontend", "erosion_radius", int, 0),
        min_region_px=num("frontend", "min_region_px", int, 1),
        seed=seed)
    fast = CorruptionParams(
        permute=True,
        split_prob=num("fast_frontend", "split_prob", float, 0, 1),
        max_splits=num("fast_frontend", "max_splits", int, 0),
        erosion_radius=num("fast_frontend", "erosion_radius", int, 0),
        min_region_px=num("fast_frontend", "min_region_px", int, 1),
        seed=seed)
    lv = get("field", "levels")
    try:
        levels = [int(x) for x in lv.replace(",", " ").split()]
    except ValueError:
        raise ConfigError("field.levels", f"cannot parse {lv!r}") from None
    if not levels or min(levels) < 2:
        raise ConfigError("field.levels", "need at least one level of 2 or more nodes")
    mode = get("train", "density_mode")
    if mode not in ("oracle", "depth"):
        raise ConfigError("train.density_mode", f"unknown mode {mode!r}")
    train = TrainConfig(
        iterations=num("train", "iterations", int, 0),
        rays_per_batch=num("train", "rays_per_batch", int, 1),
        lr_labels=num("train", "lr_labels", float, 0, lo_open=True),
        lr_density=num("train", "lr_density", float, 0, lo_open=True),
        density_mode=mode,
        bg_fraction=num("train", "bg_fraction", float, 0, 1),
        seed=seed)
    render = RenderConfig(samples_per_ray=num("render", "samples_per_ray", int, 2))
    threads = threads or (os.cpu_count() or 1)
    return PipelineConfig(
        seed=seed, out=Path(get("run", "out")), threads=threads,
        scene_spec=get("scene", "spec"), scene_base=base,
        width=num("camera", "width", int, 1), height=num("camera", "height", int, 1),
        fov_deg=num("camera", "fov_deg", float, 0, 179, lo_open=True),
        trajectory=traj, frontend=front, fast_frontend=fast,
        stride=num("matching", "stride", int, 1), n_keypoints=num("matching", "n_keypoints", int, 1),
        noise_sigma_px=num("matching", "noise_sigma_px", float, 0),
        outlier_rate=num("matching", "outlier_rate", float, 0, 1),
        match_file=get("matching", "file"),
        tau_global=num("thresholds", "tau_global", float, 0, 1),
        tau_local=num("thresholds", "tau_local", float, 0, 1),
        tau_community=num("thresholds", "tau_community", int, 1),
        tau_area=num("thresholds", "tau_area", float, 0, 1),
        tau_merge=num("thresholds", "tau_merge", float, 0, 1),
        min_frames=num("thresholds", "min_frames", int, 1),
        resolution=num("thresholds", "resolution", float, 0),
        levels=levels, padding=num("field", "padding", float, 0),
        oracle_density=num("field", "oracle_density", float, 0, lo_open=True),
        train=train, render=render,
        k_views=num("refine", "k_views", int, 1),
        samples_per_region=num("refine", "samples_per_region", int, 1),
        merge_iterate=flag("refine", "merge_iterate"),
        raw=dict(raw))
