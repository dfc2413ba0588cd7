"""Prompt templates shipped as text assets.

Placeholders are written ``{name}``; substitution is a single pass, so
placeholder-like text inside substituted values is left untouched.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

from ..errors import ConfigError

_PLACEHOLDER = re.compile(r"\{([A-Za-z_]\w*)\}")


def load_prompt(name: str, prompt_dir: str | Path | None = None) -> str:
    """Read template ``name`` (without ``.txt``), preferring ``prompt_dir``."""
    if prompt_dir is not None:
        path = Path(prompt_dir) / f"{name}.txt"
        if path.exists():
            return path.read_text(encoding="utf-8").rstrip("\n")
    try:
        return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8").rstrip("\n")
    except FileNotFoundError as exc:
        raise ConfigError(f"unknown prompt template {name!r}") from exc


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER.findall(template))


def render(template: str, **values) -> str:
    missing = {n for n in placeholders(template) if values.get(n) is None}
    if missing:
        raise ConfigError(f"missing prompt placeholder(s): {', '.join(sorted(missing))}")
    return _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), template)
