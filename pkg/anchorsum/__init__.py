"""anchorsum - zero-shot keyframe selection and anchored video summarization."""

__version__ = "0.1.0"
