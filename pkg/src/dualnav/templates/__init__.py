"""Access to versioned prompt templates and style tables.

Templates ship inside the package; a directory override lets deployments
pin their own copies without touching installed files.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

TEMPLATE_VERSION = 1


def load_template(name: str, template_dir: str | None = None) -> str:
    """Load a template by base name, e.g. ``reflection`` or ``convert``."""
    filename = f"{name}_v{TEMPLATE_VERSION}.txt"
    if template_dir is not None:
        return (Path(template_dir) / filename).read_text(encoding="utf-8")
    ref = resources.files("dualnav.templates").joinpath(filename)
    return ref.read_text(encoding="utf-8")


def load_style_tables(template_dir: str | None = None) -> dict:
    """Load the persona/scene styling tables as a dict."""
    filename = f"styles_v{TEMPLATE_VERSION}.json"
    if template_dir is not None:
        raw = (Path(template_dir) / filename).read_text(encoding="utf-8")
    else:
        raw = resources.files("dualnav.templates").joinpath(filename).read_text(encoding="utf-8")
    tables = json.loads(raw)
    if tables.get("version") != TEMPLATE_VERSION:
        raise ValueError(f"style table version {tables.get('version')} != {TEMPLATE_VERSION}")
    return tables


__all__ = ["TEMPLATE_VERSION", "load_style_tables", "load_template"]
