"""Command line front end: ``instlift {synth,run,loc,eval,render}``."""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .config import help_text, load_config
from .errors import InstLiftError


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="pipeline config file")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides run.out)")
    common.add_argument("--threads", type=int, metavar="N", help="worker threads (overrides run.threads)")
    common.add_argument("--seed", type=int, metavar="S", help="base seed (overrides run.seed)")

    ap = argparse.ArgumentParser(prog="instlift", description="Lift per-frame instance masks into a 3D label field.",
                                 epilog=help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)
    kw = dict(parents=[common], epilog=help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub.add_parser("synth", help="render the synthetic scene, masks and matches", **kw)
    p = sub.add_parser("run", help="full pipeline; synthesizes inputs when missing", **kw)
    p.add_argument("--resume", action="store_true", help="reuse an existing field checkpoint")
    p = sub.add_parser("loc", help="localize frontend regions in new views", **kw)
    p.add_argument("--checkpoint", metavar="PATH", help="field checkpoint (default OUT/run/field.lf)")
    p.add_argument("--cameras", metavar="PATH", help="camera file (default OUT/synth/cameras.txt)")
    sub.add_parser("eval", help="recompute metrics from images on disk", **kw)
    p = sub.add_parser("render", help="render label images from the trained field", **kw)
    p.add_argument("--cameras", metavar="PATH", help="camera file (default OUT/synth/cameras.txt)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    overrides = {}
    if args.out is not None:
        overrides[("run", "out")] = args.out
    if args.threads is not None:
        overrides[("run", "threads")] = args.threads
    if args.seed is not None:
        overrides[("run", "seed")] = args.seed
    try:
        cfg = load_config(args.config, overrides=overrides)
        if args.command == "synth":
            root = pipeline.cmd_synth(cfg)
            print(f"synth: wrote {root}")
        elif args.command == "run":
            root = pipeline.cmd_run(cfg, resume=args.resume)
            print((root / "metrics.txt").read_text(encoding="utf-8"), end="")
            print((root / "timings.txt").read_text(encoding="utf-8"), end="")
        elif args.command == "loc":
            s = pipeline.cmd_loc(cfg, args.checkpoint, args.cameras)
            print(f"views={len(s.ms_per_frame)} loc_miou={s.miou:.6f} rendered_miou={s.rendered_miou:.6f}")
        elif args.command == "eval":
            print(pipeline.cmd_eval(cfg).to_text(), end="")
        elif args.command == "render":
            imgs = pipeline.cmd_render(cfg, args.cameras)
            print(f"render: {len(imgs)} views")
    except InstLiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # anything unexpected is an internal fault
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
