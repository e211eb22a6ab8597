"""Eval command implementation."""

import logging
from pathlib import Path

from anchorsum.config import PipelineConfig
from anchorsum.controller import PipelineController
from anchorsum.errors import AnchorsumError

from .ui_helpers import show_eval_report


def eval_command(config: PipelineConfig, run_dir: str) -> int:
    """
    Evaluate a finished run against annotations and reference summaries.

    Returns:
        int: Exit code (0 for success, 1 for error)
    """
    logger = logging.getLogger(__name__)
    try:
        controller = PipelineController(config, Path(run_dir))
        report = controller.evaluate()
        show_eval_report(report)
        return 0
    except FileNotFoundError as e:
        logger.error(f"A required file was not found. Run the pipeline first.\nDetails: {e}")
        return 1
    except (AnchorsumError, ValueError) as e:
        logger.error(f"Evaluation failed.\nDetails: {e}")
        return 1
