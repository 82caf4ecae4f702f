"""Command-line entry point wiring the pipeline stages."""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .config import ConfigError, load_config
from .mesh import load_mesh, save_mesh
from .pipeline import STAGES, run_pipeline, write_manifest


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anatomesh",
        description="Anatomical mesh modeling and mass classification pipeline.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, _ in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage over a work directory")
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", required=True, help="work/output directory")

    p = sub.add_parser("pipeline", help="run all stages end-to-end")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-mesh", help="re-export a mesh file (format round-trip)")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "export-mesh":
            save_mesh(load_mesh(args.mesh), args.out)
            return 0
        cfg = load_config(args.config)
        if args.command == "pipeline":
            accs = run_pipeline(cfg, args.out)
            for k in sorted(accs):
                print(f"{k} accuracy: {accs[k]:.4f}")
            return 0
        for name, fn in STAGES:
            if name == args.command:
                import os

                os.makedirs(args.out, exist_ok=True)
                fn(cfg, args.out)
                write_manifest(cfg, args.out, [name])
                return 0
        raise ConfigError(f"unknown command {args.command}")
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"anatomesh: {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
