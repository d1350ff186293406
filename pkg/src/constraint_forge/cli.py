"""Command-line entry point: ``constraint-forge <subcommand> --config path``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import pipeline
from .analytics import verb_report_text
from .config import ConfigError, PipelineConfig
from .jsonl import write_json
from .validate import validate_paths

logger = logging.getLogger("constraint_forge")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON file")
    p.add_argument("--output-dir", help="artifact directory")
    p.add_argument("--seeds", dest="seeds_path", help="raw seed JSONL")
    p.add_argument("--n-constraints", type=int)
    p.add_argument("--rng-seed", type=int)
    p.add_argument("--judger-mode", choices=("single", "both_orders"))
    p.add_argument("--replay", dest="replay_path", help="replay pool JSONL")
    p.add_argument("--replay-budget", type=int)
    p.add_argument("--max-seeds", type=int)
    p.add_argument("--provider-kind", choices=("http", "mock"))
    p.add_argument("--mock-script", help="mock provider script (implies --provider-kind mock)")
    p.add_argument("--cache-dir", help="response cache directory")
    p.add_argument("--concurrency", type=int, help="provider concurrency limit")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="constraint-forge",
        description="Build constraint-ladder preference data and training curricula.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "seeds": "filter and deduplicate seed instructions",
        "build": "grow constraint chains and generate outputs",
        "judge": "run pairwise tournaments and emit preference pairs",
        "assemble": "bin pairs into curriculum stages and write the manifest",
        "stats": "per-stage dataset statistics",
        "verbs": "leading-verb frequency over chain instructions",
        "run": "all stages end to end",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        _add_common(p)
        if name == "verbs":
            p.add_argument("--top-n", type=int)
    v = sub.add_parser("validate", help="check an artifact tree or individual artifact files")
    v.add_argument("paths", nargs="*", help="artifact directories or files (default: output dir)")
    v.add_argument("--json", action="store_true", help="emit the report as JSON")
    _add_common(v)
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    for name in ("output_dir", "seeds_path", "n_constraints", "rng_seed", "judger_mode",
                 "replay_path", "replay_budget", "max_seeds"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if args.mock_script is not None:
        cfg.provider.kind = "mock"
        cfg.provider.mock_script = args.mock_script
    if args.provider_kind is not None:
        cfg.provider.kind = args.provider_kind
    if args.cache_dir is not None:
        cfg.provider.cache_dir = args.cache_dir
    if args.concurrency is not None:
        cfg.provider.max_concurrency = args.concurrency
    if getattr(args, "top_n", None) is not None:
        cfg.top_n_verbs = args.top_n
    cfg.validate()
    return cfg


def _require_inputs(cfg: PipelineConfig, command: str) -> None:
    out = Path(cfg.output_dir)
    needs = {
        "seeds": [Path(cfg.seeds_path)],
        "run": [Path(cfg.seeds_path)],
        "build": [out / pipeline.SEEDS],
        "judge": [out / pipeline.CHAINS],
        "assemble": [out / pipeline.PAIRS],
        "stats": [out / "training_manifest.json"],
        "verbs": [out / pipeline.CHAINS],
    }.get(command, [])
    if command in ("run", "assemble") and cfg.replay_path:
        needs.append(Path(cfg.replay_path))
    if cfg.provider.kind == "mock" and cfg.provider.mock_script and command in ("build", "judge", "run"):
        needs.append(Path(cfg.provider.mock_script))
    for path in needs:
        if not path.exists():
            raise FileNotFoundError(f"input not found: {path}")


def _dispatch(cfg: PipelineConfig, command: str) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if command == "run":
        return pipeline.run_all(cfg)
    if command == "seeds":
        seeds = pipeline._stage("seeds", pipeline.run_seeds, cfg)
        return {"status": "ok", "seeds": len(seeds)}
    if command == "stats":
        report = pipeline._stage("stats", pipeline.run_stats, cfg)
        sys.stdout.write(report.to_text())
        return {"status": "ok", "stages": len(report.rows)}
    if command == "verbs":
        hist = pipeline._stage("verbs", pipeline.run_verbs, cfg)
        sys.stdout.write(verb_report_text(hist))
        return {"status": "ok", "verbs": len(hist)}
    if command == "assemble":
        pairs = pipeline._stage("assemble", pipeline.read_pairs, out)
        manifest = pipeline._stage("assemble", pipeline.run_assemble, cfg, pairs)
        return {"status": "ok", "stages": [s["stage_id"] for s in manifest["stages"]]}
    provider = pipeline._stage("provider", pipeline.make_provider, cfg)
    if command == "build":
        seeds = pipeline._stage("build", pipeline.read_seeds, out)
        chains = pipeline._stage("build", pipeline.run_build, cfg, provider, seeds)
        return {"status": "ok", "chains": len(chains), "seeds": len(seeds)}
    if command == "judge":
        chains = pipeline._stage("judge", pipeline.read_chains, out)
        result = pipeline._stage("judge", pipeline.run_judge, cfg, provider, chains)
        return {"status": "ok", "pairs": len(result.pairs), "comparisons": len(result.records)}
    raise ValueError(f"unknown command {command!r}")


def _fail(payload: dict, out: Path | None) -> int:
    if out is not None:
        try:
            write_json(out / pipeline.ERROR_REPORT, payload)
        except OSError as exc:
            logger.error("could not write error report: %s", exc)
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return EXIT_FAILURE


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args)
    except (ConfigError, TypeError, ValueError) as exc:
        sys.stderr.write(json.dumps({"status": "error", "stage": "config", "message": str(exc)}) + "\n")
        return EXIT_CONFIG

    if args.command == "validate":
        paths = args.paths or [cfg.output_dir]
        report = validate_paths(paths)
        if args.json:
            sys.stdout.write(json.dumps(report.to_json(), indent=2) + "\n")
        else:
            sys.stdout.write(report.to_text())
        return EXIT_OK if report.ok else EXIT_FAILURE

    try:
        _require_inputs(cfg, args.command)
    except FileNotFoundError as exc:
        sys.stderr.write(json.dumps({"status": "error", "stage": "input", "message": str(exc)}) + "\n")
        return EXIT_FAILURE

    try:
        summary = _dispatch(cfg, args.command)
    except pipeline.StageError as exc:
        logger.error("%s", exc)
        return _fail(exc.to_json(), Path(cfg.output_dir))
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
