"""
Prompt Template Parser for anchorsum

Handles parsing of prompt template files with YAML frontmatter describing the
template id, its slots and how many images accompany the rendered prompt.
"""

import yaml
import re
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Any, Tuple, Optional

from anchorsum.errors import ConfigError, InvalidInput
from anchorsum.file_manager import FileManager
from anchorsum.utils import sha256_text

TEMPLATE_IDS = (
    "frame-describe",
    "label-generate",
    "label-validate",
    "window-describe",
    "recursive-merge",
    "final-integrate",
    "judge-rubric",
)


@dataclass(frozen=True)
class PromptTemplate:
    """A parsed prompt template."""

    template_id: str
    body: str
    slots: Tuple[str, ...]
    images: int

    def render(self, **values: str) -> "RenderedPrompt":
        """Fill every slot and return the prompt with its hash."""
        missing = [slot for slot in self.slots if slot not in values]
        if missing:
            raise InvalidInput(f"Template '{self.template_id}' is missing slot values: {', '.join(missing)}")
        text = process_template_variables(self.body, {k: values[k] for k in self.slots})
        return RenderedPrompt(self.template_id, text, sha256_text(text))


@dataclass(frozen=True)
class RenderedPrompt:
    """A prompt after slot substitution."""

    template_id: str
    text: str
    prompt_hash: str


def parse_template(template_path: str) -> Tuple[Dict[str, Any], str]:
    """
    Parse template file with YAML frontmatter

    Expected format:
    ---
    template_id: label-generate
    slots: [VLM_OUTPUT]
    images: 0
    ---
    Prompt text with {{VLM_OUTPUT}} ...

    Args:
        template_path: Path to the template file

    Returns:
        Tuple[Dict[str, Any], str]: (metadata, template_content)

    Raises:
        FileNotFoundError: When template file does not exist
        ValueError: When template format is invalid
    """
    template_file = Path(template_path)

    if not template_file.exists():
        raise FileNotFoundError(f"Template file not found: {template_path}")

    with open(template_file, 'r', encoding='utf-8') as f:
        content = f.read()

    if not content.startswith('---\n'):
        return {}, content

    try:
        parts = content.split('---\n', 2)
        if len(parts) < 3:
            return {}, content

        metadata = yaml.safe_load(parts[1]) or {}
        # Exactly one trailing newline is part of the file, not of the prompt.
        template_content = parts[2].lstrip('\n').rstrip('\n')

        return metadata, template_content

    except yaml.YAMLError as e:
        raise ValueError(f"Invalid YAML frontmatter in template {template_path}: {e}")


def process_template_variables(content: str, variables: Dict[str, str]) -> str:
    """
    Replace template variables in content

    Variables are in the format {{VARIABLE_NAME}}

    Args:
        content: Content with template variables
        variables: Dictionary mapping variable names to values

    Returns:
        str: Content with variables replaced
    """
    processed_content = content

    # Values are substituted in one pass so slot text containing braces is left alone.
    def _substitute(match: "re.Match[str]") -> str:
        name = match.group(1)
        return str(variables[name]) if name in variables else match.group(0)

    processed_content = re.sub(r'\{\{([A-Z0-9_]+)\}\}', _substitute, processed_content)

    remaining_vars = [v for v in re.findall(r'\{\{([A-Z0-9_]+)\}\}', content) if v not in variables]
    if remaining_vars:
        logger = logging.getLogger(__name__)
        for var in remaining_vars:
            logger.warning("Template variable '{{%s}}' was not replaced. Variable not found in provided variables.", var)

    return processed_content


def validate_template_metadata(metadata: Dict[str, Any], body: str) -> bool:
    """
    Validate template metadata structure

    Every declared slot must appear in the body and every placeholder in the
    body must be declared.
    """
    if not isinstance(metadata, dict):
        return False
    if metadata.get('template_id') not in TEMPLATE_IDS:
        return False

    slots = metadata.get('slots') or []
    if not isinstance(slots, list):
        return False

    placeholders = set(re.findall(r'\{\{([A-Z0-9_]+)\}\}', body))
    return placeholders == set(slots)


@lru_cache(maxsize=None)
def load_prompt(template_id: str, template_dir: Optional[str] = None) -> PromptTemplate:
    """Load a shipped (or overriding) prompt template by id."""
    if template_id not in TEMPLATE_IDS:
        raise ConfigError(f"Unknown prompt template '{template_id}'. Available: {', '.join(TEMPLATE_IDS)}")

    if template_dir:
        file_name = "prompt_" + template_id.replace("-", "_") + ".md"
        path = Path(template_dir) / file_name
        if not path.exists():
            path = FileManager().get_template_path(template_id)
    else:
        path = FileManager().get_template_path(template_id)

    metadata, body = parse_template(str(path))
    if not validate_template_metadata(metadata, body):
        raise ConfigError(f"Prompt template {path} has inconsistent frontmatter and placeholders")

    return PromptTemplate(
        template_id=template_id,
        body=body,
        slots=tuple(metadata.get('slots') or ()),
        images=int(metadata.get('images', 0)),
    )
