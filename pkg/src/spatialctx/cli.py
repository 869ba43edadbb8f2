"""Command-line entry point: run scenarios, build reports, serve a store
over TCP, and emit a starter scene config."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .experiment import ExperimentConfig, compare_report, run_experiment
from .scene import default_scene, scene_to_config
from .service import ENDPOINT_ENV_VAR, SocketServer, resolve_endpoint
from .store import ContextStore


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatialctx")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run capture scenarios and write metrics CSVs + map images")
    p_run.add_argument("--config", help="experiment config file (key=value sections)")
    p_run.add_argument("--scenario", help="single|multi|guided|full|baseline|all (overrides config)")
    p_run.add_argument("--seed", type=int, help="override the experiment seed")
    p_run.add_argument("--out", help="override the output directory")

    p_report = sub.add_parser("report", help="summarize two or more scenario metrics CSVs")
    p_report.add_argument("csvs", nargs="+", help="scenario metrics CSV files")
    p_report.add_argument("--out", help="directory for report.txt / report.csv (default: stdout only)")

    p_serve = sub.add_parser("serve", help="serve a shared context store over TCP")
    p_serve.add_argument("--endpoint", help=f"host:port (default ${ENDPOINT_ENV_VAR} or 127.0.0.1:7707)")
    p_serve.add_argument("--voxel-size", type=float, default=0.05)

    p_gen = sub.add_parser("gen-scene", help="write the default scene as an editable config")
    p_gen.add_argument("--out", default="scene.ini", help="path for the scene config file")
    return parser


def cmd_run(args) -> int:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    if args.scenario:
        config = replace(config, scenario=args.scenario)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out:
        config = replace(config, out_dir=args.out)
    config.validate()
    results = run_experiment(config)
    for name, result in results.items():
        print(
            f"{name}: mean final PSNR {result.mean_final('psnr_db'):.3f} dB, "
            f"coverage {result.mean_final('coverage'):.4f}, "
            f"memory {result.mean_final('memory_bytes'):.0f} B "
            f"({len(result.placements)} placements)"
        )
    print(f"artifacts written to {config.out_dir}/")
    return 0


def cmd_report(args) -> int:
    text, csv_text = compare_report(args.csvs)
    print(text, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as f:
            f.write(text)
        with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8") as f:
            f.write(csv_text)
        print(f"report written to {args.out}/report.txt and {args.out}/report.csv")
    return 0


def cmd_serve(args) -> int:
    host, port = resolve_endpoint(args.endpoint)
    store = ContextStore(voxel_size=args.voxel_size)
    server = SocketServer(store, host=host, port=port)
    print(f"serving shared context store on {server.host}:{server.port}")
    server.serve_forever()
    return 0


def cmd_gen_scene(args) -> int:
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(scene_to_config(default_scene()))
    print(f"scene config written to {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"run": cmd_run, "report": cmd_report, "serve": cmd_serve, "gen-scene": cmd_gen_scene}
    try:
        return handlers[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
