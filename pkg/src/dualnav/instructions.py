"""Instruction records and the shared tokenizer.

Every text field that feeds retrieval keys, experience token sets, or the
policy encoder goes through :func:`tokenize` so that all modules agree on
token boundaries.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

_TOKEN_RE = re.compile(r"[a-z0-9]+")

STYLE_BASIC = "basic"
STYLE_SCENE = "scene"
STYLE_USER_PREFIX = "user:"


def tokenize(text: str) -> list[str]:
    """Lowercase a string and split it into alphanumeric tokens."""
    return _TOKEN_RE.findall(text.lower())


def is_valid_style(style: str) -> bool:
    if style in (STYLE_BASIC, STYLE_SCENE):
        return True
    return style.startswith(STYLE_USER_PREFIX) and len(style) > len(STYLE_USER_PREFIX)


@dataclass(frozen=True)
class Instruction:
    """A navigation instruction in one of the supported speaker styles.

    ``style`` is ``"basic"``, ``"scene"``, or ``"user:<persona>"``.  Tokens
    are derived from ``text`` and cached on construction.
    """

    text: str
    style: str = STYLE_BASIC
    tokens: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("instruction text must be non-empty")
        if not is_valid_style(self.style):
            raise ValueError(f"unknown instruction style: {self.style!r}")
        if not self.tokens:
            object.__setattr__(self, "tokens", tuple(tokenize(self.text)))

    @property
    def persona(self) -> str | None:
        """Persona name for user-style instructions, else None."""
        if self.style.startswith(STYLE_USER_PREFIX):
            return self.style[len(STYLE_USER_PREFIX):]
        return None


__all__ = [
    "Instruction",
    "STYLE_BASIC",
    "STYLE_SCENE",
    "STYLE_USER_PREFIX",
    "is_valid_style",
    "tokenize",
]
