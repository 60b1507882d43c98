"""``coseg`` command line: full runs, single stages and fixture generation."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, PipelineConfig
from .harness import HarnessError, bundled_fixtures, generate_fixture
from .pipeline import STAGES, StageError, run_pipeline, run_stage
from .vidcore import VideoError


def _config(args):
    if args.config is not None and not Path(args.config).is_file():
        raise ConfigError(f"config file not found: {args.config}")
    cfg = PipelineConfig.load(args.config, dict(kv.split("=", 1) for kv in args.set or []))
    if args.threads is not None:
        cfg = cfg.updated({"threads": args.threads})
    return cfg


def _common(p):
    p.add_argument("--manifest", required=True, help="video-set manifest (key=value file)")
    p.add_argument("--config", help="pipeline config (key=value file)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads over videos (0 = all cores)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")


def build_parser():
    ap = argparse.ArgumentParser(prog="coseg", description="Video co-segmentation with proposal streams.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the whole pipeline")
    _common(run)
    run.add_argument("--dump-stages", action="store_true", help="write every stage's output under <out>/stages")
    run.add_argument("--quiet", action="store_true")

    st = sub.add_parser("stage", help="run one stage from dumped inputs")
    st.add_argument("name", choices=STAGES)
    _common(st)
    st.add_argument("--model", help="crf stage: solve this model file instead of building one")
    st.add_argument("--dump-stages", action="store_true", help="accepted for symmetry; stages always dump")

    fx = sub.add_parser("fixture", help="render a synthetic video set")
    fx.add_argument("spec", nargs="?", default="two-videos-one-square",
                    help=f"bundled name ({', '.join(bundled_fixtures())}) or JSON spec path")
    fx.add_argument("--out", required=True, help="output directory")
    return ap


def main(argv=None):
    ap = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    # `coseg stage crf --model m.txt` needs no manifest
    if len(argv) >= 2 and argv[0] == "stage" and argv[1] == "crf" and "--model" in argv \
            and "--manifest" not in argv:
        argv = list(argv) + ["--manifest", ""]
    args = ap.parse_args(argv)
    try:
        if args.command == "fixture":
            path = generate_fixture(args.spec, args.out)
            print(f"wrote {path}")
            return 0
        cfg = _config(args)
        if args.command == "run":
            log = (lambda m: None) if args.quiet else (lambda m: print(m, file=sys.stderr))
            _, report = run_pipeline(args.manifest, cfg, args.out, args.dump_stages, log=log)
            if report is not None:
                print(report.format())
            return 0
        run_stage(args.name, args.manifest, cfg, args.out, model_path=args.model)
        return 0
    except (StageError, HarnessError, ConfigError, VideoError, ValueError, OSError) as exc:
        print(f"coseg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
