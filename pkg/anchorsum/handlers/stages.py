"""Single-stage command implementation."""

import logging
from pathlib import Path
from typing import Optional

from anchorsum.config import PipelineConfig
from anchorsum.controller import PipelineController
from anchorsum.errors import AnchorsumError, StageError


def stage_command(
    config: PipelineConfig,
    run_dir: str,
    stage: str,
    video: Optional[str] = None,
    transcript: Optional[str] = None,
    force: bool = False,
) -> int:
    """
    Run one pipeline stage against a run directory.

    Args:
        config: Effective configuration
        run_dir: Run directory
        stage: One of ingest, stage1, stage2, stage3, score
        video: Input video or still directory (ingest only)
        transcript: Optional transcript file (ingest only)
        force: Re-run even if the stage outputs are complete

    Returns:
        int: Exit code (0 for success, 1 for error)
    """
    logger = logging.getLogger(__name__)
    try:
        controller = PipelineController(config, Path(run_dir), video, transcript)
        status = controller.run_stage(stage, force=force)
        print(f"{stage}: {status}")
        return 0
    except StageError as e:
        logger.error(f"Stage '{e.stage}' failed: {e}")
        return 1
    except FileNotFoundError as e:
        logger.error(f"A required file was not found. Run the earlier stages first.\nDetails: {e}")
        return 1
    except (AnchorsumError, ValueError) as e:
        logger.error(f"Invalid value or configuration provided.\nDetails: {e}")
        return 1
