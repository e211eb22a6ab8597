"""Main CLI entry point for anchorsum."""

import argparse
import logging
import sys
from typing import Any, Dict, Optional

from . import __version__
from anchorsum.config import PipelineConfig, load_config, logging_level_of
from anchorsum.errors import ConfigError
from anchorsum.file_manager import FileManager
from anchorsum.handlers.evaluate import eval_command
from anchorsum.handlers.run import EXIT_USAGE, ablate_command, run_command
from anchorsum.handlers.stages import stage_command
from anchorsum.controller import PRESETS

STAGE_COMMANDS = ("ingest", "stage1", "stage2", "stage3", "score")

# Global flag -> dotted config key
MODE_FLAGS = {
    "skip_stage1": "pipeline.skip_stage1",
    "skip_stage2": "pipeline.skip_stage2",
    "video_only": "pipeline.video_only",
    "no_processing": "pipeline.no_processing",
}


def _add_global_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="User configuration file (.yaml or .toml)")
    parser.add_argument("--run-dir", default="run", help="Run directory (default: ./run)")
    parser.add_argument("--backend-profile", help="Backend profile: mock, openai, ollama, or a YAML path")
    parser.add_argument("--video", help="Input video file or directory of stills")
    parser.add_argument("--transcript", help="Transcript file (.srt, .vtt or .txt)")
    parser.add_argument("--dataset-description", help="One-line description of the video domain")
    parser.add_argument("--skip-stage1", action="store_true", help="Send every extracted frame to Stage 2")
    parser.add_argument("--skip-stage2", action="store_true", help="Group Stage-1 frames by segment without labels")
    parser.add_argument("--video-only", action="store_true", help="Do not integrate the transcript")
    parser.add_argument("--no-processing", action="store_true", help="Describe every frame and merge the descriptions")
    parser.add_argument("--force", action="store_true", help="Re-run stages even if their outputs are complete")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at INFO level")
    parser.add_argument("--debug", action="store_true", help="Log at DEBUG level")


def create_parser() -> argparse.ArgumentParser:
    """Create the main argument parser."""
    parser = argparse.ArgumentParser(
        prog="anchorsum",
        description="Zero-shot video summarization with semantic anchors",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  anchorsum run --video clip.mp4 --dataset-description "cooking videos"
  anchorsum stage1 --run-dir runs/clip          # Re-run Stage 1 only
  anchorsum eval --run-dir runs/clip --reference ref.txt
  anchorsum ablate --video clip.mp4 --preset stages --run-dir runs/ablation
        """,
    )

    parser.add_argument("--version", action="version", version=f"anchorsum {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    _add_global_arguments(common)

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    subparsers.add_parser("ingest", parents=[common], help="Extract frames and load the transcript")
    subparsers.add_parser("stage1", parents=[common], help="Change points, difference filter and adaptive sampling")
    subparsers.add_parser("stage2", parents=[common], help="Captions, labels and label anchoring")
    subparsers.add_parser("stage3", parents=[common], help="Windows, descriptions and the summary")
    subparsers.add_parser("score", parents=[common], help="Write per-frame importance scores")
    subparsers.add_parser("run", parents=[common], help="Run every stage, resuming completed ones")

    eval_parser = subparsers.add_parser("eval", parents=[common], help="Evaluate a finished run")
    _add_eval_arguments(eval_parser)

    ablate_parser = subparsers.add_parser("ablate", parents=[common], help="Compare pipeline settings")
    ablate_parser.add_argument(
        "--setting",
        action="append",
        default=[],
        help="Ablation row: a mode (video-only, no-stage-1, no-stage-2, no-processing, baseline) "
             "or KEY:VALUE with KEY in stage1, stage2, adaptive, delta. Repeatable.",
    )
    ablate_parser.add_argument("--preset", choices=sorted(PRESETS), help="Predefined list of settings")
    _add_eval_arguments(ablate_parser)

    return parser


def _add_eval_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--annotations", help="Human importance annotations (.tsv or .json)")
    parser.add_argument("--reference", action="append", default=[], help="Reference summary text file. Repeatable.")
    parser.add_argument("--judge", action="store_true", help="Also score the summary with the LLM judge")


def cli_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted config overrides from explicitly given CLI flags."""
    overrides: Dict[str, Any] = {}
    for flag, key in MODE_FLAGS.items():
        if getattr(args, flag, False):
            overrides[key] = True
    if getattr(args, "dataset_description", None):
        overrides["semantics.dataset_description"] = args.dataset_description
    if getattr(args, "annotations", None):
        overrides["eval.annotations"] = args.annotations
    if getattr(args, "reference", None):
        overrides["eval.references"] = list(args.reference)
    if getattr(args, "judge", False):
        overrides["eval.judge"] = True
    return overrides


def _logging_level(args: argparse.Namespace, config: Optional[PipelineConfig] = None) -> int:
    if getattr(args, "debug", False):
        return logging.DEBUG
    if getattr(args, "verbose", False):
        return logging.INFO
    return logging_level_of(config)


def main(argv=None) -> int:
    """Main CLI entry point."""
    parser = create_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 0

    try:
        config = load_config(args.config, args.backend_profile, cli_overrides(args))
    except (ConfigError, FileNotFoundError) as e:
        logging.basicConfig(level=_logging_level(args), format="%(levelname)s: %(message)s", handlers=[logging.StreamHandler()])
        logging.getLogger(__name__).error(f"Configuration error: {e}")
        return 1

    # Configure logging for CLI from configuration
    logging.basicConfig(
        level=_logging_level(args, config),
        format="%(levelname)s: %(message)s",
        handlers=[logging.StreamHandler()],
    )
    logger = logging.getLogger(__name__)

    try:
        if args.command in STAGE_COMMANDS:
            return stage_command(config, args.run_dir, args.command, args.video, args.transcript, args.force)
        elif args.command == "run":
            if not args.video and not (args.run_dir and _has_manifest(args.run_dir)):
                logger.error("run needs an input video (use --video)")
                return EXIT_USAGE
            return run_command(config, args.run_dir, args.video, args.transcript, args.force)
        elif args.command == "eval":
            return eval_command(config, args.run_dir)
        elif args.command == "ablate":
            return ablate_command(config, args.run_dir, args.video, args.transcript, args.setting, args.preset)
        else:
            logger.error(f"Unknown command: {args.command}")
            return 1
    except KeyboardInterrupt:
        logger.info("Operation cancelled by user")
        return 1
    except Exception as e:
        logger.error(f"Error: {e}")
        return 1


def _has_manifest(run_dir: str) -> bool:
    return FileManager(run_dir).manifest_path().exists()


if __name__ == "__main__":
    sys.exit(main())
