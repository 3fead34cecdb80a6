"""Command-line entry point: run pipeline stages or serve the review API.

    cmrfusion <stage> --config cfg.json [--out DIR]
    cmrfusion all --config cfg.json
    cmrfusion serve --config cfg.json [--port 8000] [--host 127.0.0.1]

The config JSON mirrors PipelineConfig field names.
"""

from __future__ import annotations

import argparse
import json
import sys

from cmrfusion.pipeline import (
    STAGES,
    MissingArtifactError,
    PipelineConfig,
    run_all,
    run_stage,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmrfusion",
        description="Joint cine/DE cardiac MR analysis pipeline")
    parser.add_argument("stage", choices=list(STAGES) + ["all", "serve"],
                        help="pipeline stage to run, 'all', or 'serve'")
    parser.add_argument("--config", required=True, help="pipeline config JSON")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--port", type=int, default=8000, help="serve mode port")
    parser.add_argument("--host", default="127.0.0.1", help="serve mode host")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = PipelineConfig.from_json(args.config)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        print(f"error: cannot load config {args.config}: {exc}", file=sys.stderr)
        return 2
    if args.out:
        cfg.out_dir = args.out

    if args.stage == "serve":
        import uvicorn

        from cmrfusion.server import create_app

        uvicorn.run(create_app(cfg), host=args.host, port=args.port)
        return 0

    try:
        if args.stage == "all":
            result = run_all(cfg)
        else:
            result = run_stage(args.stage, cfg)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # stage failure -> nonzero exit with a message
        print(f"error: stage {args.stage} failed: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"stage": args.stage, "result": result}, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
