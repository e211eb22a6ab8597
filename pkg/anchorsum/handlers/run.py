"""Run and ablate command implementation."""

import logging
from pathlib import Path
from typing import List, Optional

from anchorsum.config import PipelineConfig
from anchorsum.controller import PRESETS, parse_setting, run_ablation, run_pipeline
from anchorsum.errors import AnchorsumError, InvalidInput, StageError

from .ui_helpers import show_ablation_table, show_run_summary

EXIT_USAGE = 2


def run_command(
    config: PipelineConfig,
    run_dir: str,
    video: Optional[str],
    transcript: Optional[str] = None,
    force: bool = False,
) -> int:
    """
    Run the whole pipeline, resuming completed stages.

    Returns:
        int: Exit code (0 for success, 1 for error)
    """
    logger = logging.getLogger(__name__)
    try:
        controller = run_pipeline(config, video, transcript, Path(run_dir), force=force)
        show_run_summary(run_dir, controller.summary_row())
        return 0
    except StageError as e:
        logger.error(f"Stage '{e.stage}' failed: {e}")
        return 1
    except FileNotFoundError as e:
        logger.error(f"A required file was not found.\nDetails: {e}")
        return 1
    except (AnchorsumError, ValueError) as e:
        logger.error(f"Invalid value or configuration provided.\nDetails: {e}")
        return 1


def ablate_command(
    config: PipelineConfig,
    out_dir: str,
    video: Optional[str],
    transcript: Optional[str] = None,
    settings: Optional[List[str]] = None,
    preset: Optional[str] = None,
) -> int:
    """
    Run one pipeline per ablation setting and print the comparison table.

    Returns:
        int: Exit code (0 for success, 1 for error, 2 for usage errors)
    """
    logger = logging.getLogger(__name__)
    names = list(PRESETS[preset]) if preset else []
    names += settings or []
    try:
        if not names:
            raise InvalidInput("No ablation settings given (use --setting or --preset)")
        parsed = [parse_setting(name) for name in names]
    except InvalidInput as e:
        logger.error(str(e))
        return EXIT_USAGE

    if not video:
        logger.error("ablate needs an input video (use --video)")
        return EXIT_USAGE

    try:
        rows = run_ablation(config, parsed, video, transcript, Path(out_dir))
        show_ablation_table(rows)
        return 0
    except StageError as e:
        logger.error(f"Stage '{e.stage}' failed: {e}")
        return 1
    except FileNotFoundError as e:
        logger.error(f"A required file was not found.\nDetails: {e}")
        return 1
    except (AnchorsumError, ValueError) as e:
        logger.error(f"Invalid value or configuration provided.\nDetails: {e}")
        return 1
