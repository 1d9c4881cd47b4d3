"""End-to-end orchestration: synthetic data, InstanceMap, lifting, merge, render.

Every stage reads its inputs from disk so each artifact is exercised through
its file format. Output layout under ``out``::

    synth/  scene.txt cameras.txt gt/ depth/ masks/ matches.txt manifest.txt
    run/    graph.txt assignment.txt pseudo/ field.lf loss.csv merge_map.txt
            render_raw/ render/ metrics.txt timings.txt overview.png loss.png manifest.txt
    loc/    view_NNN.pgm timing.txt report.txt
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import correspondence as co
from . import frontend as fe
from . import geometry as geo
from . import instance_map as im
from . import label_field as lf
from . import metrics, plotting
from . import refine
from . import scene as sc
from .config import PipelineConfig
from .errors import IndexOutOfRange, InstLiftError, IoError, InvariantViolation, ShapeMismatch

STAGES = ("correspondence", "instance_map", "lift-train", "merge", "render")
# files whose content depends on the wall clock; kept out of the manifest
UNHASHED = {"timings.txt", "timing.txt", "manifest.txt"}


def _frame_name(i: int, ext: str) -> str:
    return f"frame_{i:03d}.{ext}"


def _pmap(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise IoError(f"cannot write to {path}: {exc.strerror or exc}") from None
    return path


@contextmanager
def _stage(name: str, timings: dict | None = None):
    t0 = time.perf_counter()
    try:
        yield
    except InstLiftError as exc:
        exc.stage = name
        exc.args = (f"[{name}] {exc.args[0] if exc.args else ''}",) + exc.args[1:]
        raise
    except OSError as exc:
        err = IoError(f"[{name}] {exc}")
        err.stage = name
        raise err from exc
    finally:
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def write_manifest(root: Path) -> Path:
    """``sha256  relative/path`` for every file under ``root`` except timing files."""
    lines = []
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in UNHASHED:
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            lines.append(f"{digest}  {p.relative_to(root).as_posix()}")
    path = root / "manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            digest, name = line.split(None, 1)
            out[name.strip()] = digest
    return out


# -- synth ---------------------------------------------------------------------

def load_scene(cfg: PipelineConfig) -> sc.Scene:
    spec = cfg.scene_spec
    head = spec.split(None, 1)[0] if spec.split() else ""
    if head in ("sphere", "box"):
        return sc.parse_scene_text(spec)
    path = Path(spec)
    if not path.is_absolute():
        path = cfg.scene_base / path
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read scene file {path}: {exc.strerror or exc}") from None
    return sc.parse_scene_text(text)


def training_cameras(cfg: PipelineConfig, scene: sc.Scene):
    params = {k: v for k, v in cfg.trajectory.items() if k not in ("kind", "frames")}
    poses = sc.generate_trajectory(cfg.trajectory["kind"], cfg.trajectory["frames"], params, scene)
    k = cfg.intrinsics()
    return [(p, k) for p in poses]


def cmd_synth(cfg: PipelineConfig) -> Path:
    """Scene, cameras, ground truth, corrupted masks and matches under ``out/synth``."""
    root = _mkdir(Path(cfg.out) / "synth")
    with _stage("synth"):
        scene = load_scene(cfg)
        cams = training_cameras(cfg, scene)
        frames = _pmap(lambda c: sc.ray_cast(scene, c), cams, cfg.threads)
        masks = [fe.corrupt(f, cfg.frontend, i) for i, f in enumerate(frames)]
        pairs = co.select_pairs(frames, cfg.tau_global, cfg.stride)
        match_sets = _pmap(lambda p: co.generate_matches(p, frames, cfg.n_keypoints, cfg.noise_sigma_px,
                                                         cfg.outlier_rate, cfg.seed), pairs, cfg.threads)
        (root / "scene.txt").write_text(sc.format_scene(scene), encoding="utf-8")
        geo.write_cameras(root / "cameras.txt", cams)
        for sub in ("gt", "depth", "masks"):
            _mkdir(root / sub)
        for i, (f, m) in enumerate(zip(frames, masks)):
            sc.write_pgm16(root / "gt" / _frame_name(i, "pgm"), f.instance_image)
            sc.write_depth(root / "depth" / _frame_name(i, "d32"), f.depth_image)
            fe.write_mask(root / "masks" / _frame_name(i, "pgm"), m)
        lines = ["# i j similarity"] + [f"{p.i} {p.j} {p.similarity!r}" for p in pairs]
        (root / "pairs.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        co.write_matches(root / "matches.txt", match_sets)
    write_manifest(root)
    return root


@dataclass
class SynthData:
    scene: sc.Scene
    cameras: list
    gt: list[np.ndarray]
    depth: list[np.ndarray]
    masks: list[fe.InstanceMask]


def load_synth(root) -> SynthData:
    root = Path(root)
    if not (root / "cameras.txt").is_file():
        raise IoError(f"no synthetic data under {root}")
    scene = sc.parse_scene_text((root / "scene.txt").read_text(encoding="utf-8"))
    cams = [(p, k) for _, p, k in geo.read_cameras(root / "cameras.txt")]
    n = len(cams)
    gt = [sc.read_pgm16(root / "gt" / _frame_name(i, "pgm")) for i in range(n)]
    depth = [sc.read_depth(root / "depth" / _frame_name(i, "d32")) for i in range(n)]
    masks = [fe.read_mask(root / "masks" / _frame_name(i, "pgm")) for i in range(n)]
    for (_, k), g in zip(cams, gt):
        if g.shape != k.shape:
            raise ShapeMismatch(f"image {g.shape} does not match camera {k.shape}")
    return SynthData(scene, cams, gt, depth, masks)


# -- run -----------------------------------------------------------------------

def field_bounds(scene: sc.Scene, padding: float):
    lo, hi = scene.bounds
    return (np.asarray(lo) - padding, np.asarray(hi) + padding)


def oracle_field(cfg: PipelineConfig, scene: sc.Scene, n_labels: int) -> lf.LabelField:
    bounds = field_bounds(scene, cfg.padding)
    field = lf.LabelField.zeros(bounds, cfg.levels, n_labels)
    occ = sc.voxel_instance_oracle(scene, max(cfg.levels), bounds, nodes=True)
    return lf.paint_density(field, occ, cfg.oracle_density)


def _write_labels(folder: Path, images) -> None:
    _mkdir(folder)
    for i, img in enumerate(images):
        sc.write_pgm16(folder / _frame_name(i, "pgm"), img)


def _read_labels(folder: Path, n: int) -> list[np.ndarray]:
    return [sc.read_pgm16(folder / _frame_name(i, "pgm")) for i in range(n)]


def _render_all(field, cams, cfg: PipelineConfig):
    return _pmap(lambda c: lf.render_view(field, c, cfg.render)[0], cams, cfg.threads)


def cmd_run(cfg: PipelineConfig, resume: bool = False) -> Path:
    """Full pipeline; synthesizes inputs first when they are missing.

    With ``resume`` an existing ``field.lf`` replaces training.
    """
    out = Path(cfg.out)
    synth_root = out / "synth"
    if not (synth_root / "manifest.txt").is_file():
        cmd_synth(cfg)
    root = _mkdir(out / "run")
    timings: dict[str, float] = {}
    data = load_synth(synth_root)
    n = len(data.cameras)

    with _stage("correspondence", timings):
        match_path = Path(cfg.match_file) if cfg.match_file else synth_root / "matches.txt"
        if cfg.match_file and not match_path.is_absolute():
            match_path = cfg.scene_base / match_path
        if not match_path.is_file():
            raise IoError(f"match file {match_path} not found")
        match_sets = co.load_matches(match_path)
        for ms in match_sets:
            if ms.pair.j >= n:
                raise IndexOutOfRange(f"match pair ({ms.pair.i}, {ms.pair.j}) beyond {n} frames")

    with _stage("instance_map", timings):
        graph, asg, order, pseudo = im.run_instance_map(
            data.masks, match_sets, cfg.tau_local, cfg.tau_community, cfg.min_frames, cfg.resolution, cfg.seed)
        im.write_graph(root / "graph.txt", graph)
        im.write_assignment(root / "assignment.txt", asg)
        (root / "order.txt").write_text(" ".join(str(x) for x in order) + "\n", encoding="utf-8")
        _write_labels(root / "pseudo", pseudo)

    n_labels = max(asg.labels, default=0)
    ckpt = root / "field.lf"
    with _stage("lift-train", timings):
        if resume and ckpt.is_file():
            field = lf.load_field(ckpt)
            if field.n_labels != n_labels:
                raise InvariantViolation(f"checkpoint has {field.n_labels} labels, assignment has {n_labels}")
            ce_trace, dens_trace = [], []
        else:
            field = oracle_field(cfg, data.scene, n_labels) if cfg.train.density_mode == "oracle" else \
                lf.LabelField.zeros(field_bounds(data.scene, cfg.padding), cfg.levels, n_labels)
            tframes = [lf.TrainFrame(p, k, lab, d if cfg.train.density_mode == "depth" else None)
                       for (p, k), lab, d in zip(data.cameras, pseudo, data.depth)]
            result = lf.train(field, tframes, cfg.train, cfg.render)
            field, ce_trace, dens_trace = result.field, result.ce, result.density_loss
            lf.save_field(ckpt, field)
            lf.write_loss_trace(root / "loss.csv", result)

    with _stage("merge", timings):
        rgraph = refine.build_redundancy_graph(field, data.scene, data.cameras, cfg.k_views, cfg.tau_area,
                                               cfg.fast_frontend, cfg.render, cfg.seed)
        merge_map = refine.merge_labels(rgraph, cfg.tau_merge, cfg.merge_iterate)
        refine.write_merge_map(root / "merge_map.txt", merge_map)
        lines = ["# label label count"] + [f"{a} {b} {c}" for (a, b), c in sorted(rgraph.edges.items())]
        (root / "redundancy.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    with _stage("render", timings):
        rendered = _render_all(field, data.cameras, cfg)
        final = refine.apply_merge(rendered, merge_map)
        _write_labels(root / "render_raw", rendered)
        _write_labels(root / "render", final)

    with _stage("eval"):
        report = evaluate(root, data.gt, pseudo, rendered, final)
        show = sorted({0, n // 3, (2 * n) // 3, n - 1})
        plotting.save_overview(root / "overview.png",
                               {"reference": data.gt, "frontend": [m.labels for m in data.masks],
                                "pseudolabel": pseudo, "rendered": final}, show)
        if ce_trace:
            plotting.save_loss_curve(root / "loss.png", ce_trace, dens_trace)
    write_timings(root / "timings.txt", timings)
    write_manifest(root)
    return root


def evaluate(root: Path, gt, pseudo, rendered, final) -> metrics.PQReport:
    r_pseudo = metrics.scene_pq(pseudo, gt)
    r_render = metrics.scene_pq(rendered, gt)
    report = metrics.scene_pq(final, gt)
    extra = {"pseudo_pq": f"{r_pseudo.pq:.6f}", "render_pq": f"{r_render.pq:.6f}",
             "pseudo_tp": r_pseudo.tp, "n_frames": len(gt)}
    metrics.write_report(root / "metrics.txt", report, extra)
    return report


def write_timings(path, timings: dict) -> None:
    lines = ["# stage seconds"] + [f"{s} {timings.get(s, 0.0):.3f}" for s in STAGES]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_timings(path) -> dict[str, float]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            s, v = line.split()
            out[s] = float(v)
    return out


def cmd_eval(cfg: PipelineConfig) -> metrics.PQReport:
    """Recompute metrics.txt from images already on disk."""
    out = Path(cfg.out)
    gt_dir, root = out / "synth" / "gt", out / "run"
    if not (root / "render").is_dir():
        raise IoError(f"no rendered labels under {root}")
    n = len(sorted(gt_dir.glob("frame_*.pgm")))
    gt = _read_labels(gt_dir, n)
    with _stage("eval"):
        return evaluate(root, gt, _read_labels(root / "pseudo", n),
                        _read_labels(root / "render_raw", n), _read_labels(root / "render", n))


def cmd_render(cfg: PipelineConfig, camera_file=None, out_dir=None) -> list[np.ndarray]:
    """Render the merged field from a camera file (default: training cameras)."""
    out = Path(cfg.out)
    root = out / "run"
    field = lf.load_field(root / "field.lf")
    merge_map = _merge_map_or_identity(root, field)
    cam_path = Path(camera_file) if camera_file else out / "synth" / "cameras.txt"
    cams = [(p, k) for _, p, k in geo.read_cameras(cam_path)]
    images = refine.apply_merge(_render_all(field, cams, cfg), merge_map)
    _write_labels(Path(out_dir) if out_dir else out / "views", images)
    return images


def _merge_map_or_identity(root: Path, field: lf.LabelField) -> dict[int, int]:
    path = root / "merge_map.txt"
    if path.is_file():
        return refine.read_merge_map(path)
    return {i: i for i in range(1, field.n_labels + 1)}


# -- loc -----------------------------------------------------------------------

@dataclass
class LocSummary:
    miou: float
    rendered_miou: float
    ms_per_frame: list[float]
    queries: list[int]


def cmd_loc(cfg: PipelineConfig, checkpoint=None, camera_file=None, out_dir=None) -> LocSummary:
    """Localize fast-frontend regions of each camera view in the trained field."""
    out = Path(cfg.out)
    ckpt = Path(checkpoint) if checkpoint else out / "run" / "field.lf"
    field = lf.load_field(ckpt)
    merge_map = _merge_map_or_identity(ckpt.parent, field)
    scene = load_scene(cfg)
    cam_path = Path(camera_file) if camera_file else out / "synth" / "cameras.txt"
    cams = [(p, k) for _, p, k in geo.read_cameras(cam_path)]
    loc_root = _mkdir(Path(out_dir) if out_dir else out / "loc")
    want = (cfg.height, cfg.width)
    for _, k in cams:
        if k.shape != want:
            raise ShapeMismatch(f"camera image size {k.shape} differs from configured {want}")
    masks, dense, gts, ms, queries = [], [], [], [], []
    for i, cam in enumerate(cams):
        gt = sc.ray_cast(scene, cam)
        regions = fe.fast_regions(gt, cfg.fast_frontend, index=i)
        t0 = time.perf_counter()
        res = refine.instance_loc(field, regions, cam, cfg.samples_per_region, cfg.seed, cfg.render)
        ms.append(1000.0 * (time.perf_counter() - t0))
        loc = refine.apply_merge(res.mask, merge_map)
        sc.write_pgm16(loc_root / f"view_{i:03d}.pgm", loc)
        masks.append(loc)
        queries.append(res.queries)
        gts.append(gt.instance_image)
        dense.append(refine.apply_merge(lf.render_view(field, cam, cfg.render)[0], merge_map))
    lines = ["# view milliseconds queries"] + [f"{i} {t:.3f} {q}" for i, (t, q) in enumerate(zip(ms, queries))]
    (loc_root / "timing.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if not cams:
        (loc_root / "report.txt").write_text("views=0\n", encoding="utf-8")
        return LocSummary(0.0, 0.0, [], [])
    r_loc = metrics.scene_pq(masks, gts)
    r_dense = metrics.scene_pq(dense, gts)
    metrics.write_report(loc_root / "report.txt", r_loc,
                         {"views": len(cams), "rendered_miou": f"{r_dense.miou_tp:.6f}",
                          "loc_miou": f"{r_loc.miou_tp:.6f}"})
    return LocSummary(r_loc.miou_tp, r_dense.miou_tp, ms, queries)
