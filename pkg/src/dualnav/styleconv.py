"""Instruction style conversion.

``apply_style`` rewrites a basic instruction into a speaker style using
rule tables (persona prefix/suffix plus an injective synonym map), and the
conversion path maps styled text back to basic phrasing.  The rule styler
and the rule inverse backend are exact inverses of each other, which gives
the conversion pipeline a ground truth to be tested against; an LLM
endpoint can be swapped in through the same backend interface.
"""

from __future__ import annotations

import logging
import re

from .backends import BackendError, CompletionBackend
from .instructions import STYLE_BASIC, STYLE_SCENE, STYLE_USER_PREFIX, Instruction
from .templates import load_style_tables, load_template

log = logging.getLogger(__name__)

CONFIDENCE_THRESHOLD = 0.7

# Horizontal whitespace only: \s would swallow the newline after a bare
# "CONVERTED:" and capture the following line as the converted text.
_CONVERTED_RE = re.compile(r"^CONVERTED:[ \t]*(.+?)[ \t]*$", re.MULTILINE)
_CONFIDENCE_RE = re.compile(r"^CONFIDENCE:[ \t]*([0-9.eE+\-]+)[ \t]*$", re.MULTILINE)
_TEXT_LINE_RE = re.compile(r"^TEXT:[ \t]*(.+?)[ \t]*$", re.MULTILINE)
_TRAILING_PUNCT_RE = re.compile(r"^(.*?)([.,!?]*)$")


def validate_style_tables(tables: dict) -> None:
    """Reject tables whose rules could not be inverted unambiguously."""
    styles = tables.get("styles")
    if not isinstance(styles, dict) or not styles:
        raise ValueError("style tables must define a non-empty 'styles' map")
    seen_targets: set[str] = set()
    all_sources: set[str] = set()
    prefixes: list[str] = []
    suffixes: list[str] = []
    for name, entry in styles.items():
        for word, target in entry.get("synonyms", {}).items():
            if " " in target or not target:
                raise ValueError(f"style {name}: synonym target {target!r} must be one word")
            if target in seen_targets:
                raise ValueError(f"style {name}: synonym target {target!r} reused")
            seen_targets.add(target)
            all_sources.add(word)
        prefixes.extend(entry.get("prefixes", []))
        suffixes.extend(entry.get("suffixes", []))
    if seen_targets & all_sources:
        raise ValueError(f"synonym targets collide with sources: {seen_targets & all_sources}")
    for i, p in enumerate(prefixes):
        for j, q in enumerate(prefixes):
            if i != j and q.startswith(p):
                raise ValueError(f"prefix {p!r} is a prefix of {q!r}")
    for i, s in enumerate(suffixes):
        for j, t in enumerate(suffixes):
            if i != j and t.endswith(s):
                raise ValueError(f"suffix {s!r} is a suffix of {t!r}")


def _style_key(style: str) -> str:
    if style == STYLE_SCENE:
        return "scene"
    if style.startswith(STYLE_USER_PREFIX):
        return style[len(STYLE_USER_PREFIX):]
    raise ValueError(f"cannot style text as {style!r}")


def _map_words(text: str, mapping: dict[str, str]) -> str:
    out = []
    for chunk in text.split(" "):
        m = _TRAILING_PUNCT_RE.match(chunk)
        word, punct = m.group(1), m.group(2)
        out.append(mapping.get(word, word) + punct)
    return " ".join(out)


def apply_style(basic: Instruction, style: str, seed: int = 0, tables: dict | None = None) -> Instruction:
    """Deterministically restyle a basic instruction.

    The seed selects among the style's prefix/suffix variants.  Region and
    landmark words are never touched, so the conversion path can restore
    the original text exactly.
    """
    if basic.style != STYLE_BASIC:
        raise ValueError(f"apply_style expects a basic instruction, got style {basic.style!r}")
    if tables is None:
        tables = load_style_tables()
    key = _style_key(style)
    try:
        entry = tables["styles"][key]
    except KeyError:
        raise KeyError(f"no style table entry for {key!r}") from None
    text = _map_words(basic.text, entry.get("synonyms", {}))
    prefixes = entry.get("prefixes", [])
    suffixes = entry.get("suffixes", [])
    if prefixes:
        text = prefixes[seed % len(prefixes)] + " " + text
    if suffixes:
        text = text + " " + suffixes[seed % len(suffixes)]
    return Instruction(text=text, style=style)


def invert_style(text: str, tables: dict | None = None) -> tuple[str, bool]:
    """Strip any known styling from text; returns (basic text, matched)."""
    if tables is None:
        tables = load_style_tables()
    matched = False
    for entry in tables["styles"].values():
        for prefix in entry.get("prefixes", []):
            if text.startswith(prefix + " "):
                text = text[len(prefix) + 1:]
                matched = True
                break
    for entry in tables["styles"].values():
        for suffix in entry.get("suffixes", []):
            if text.endswith(" " + suffix):
                text = text[: -(len(suffix) + 1)]
                matched = True
                break
    reverse: dict[str, str] = {}
    for entry in tables["styles"].values():
        for word, target in entry.get("synonyms", {}).items():
            reverse[target] = word
    restored = _map_words(text, reverse)
    if restored != text:
        matched = True
    return restored, matched


def list_styles(tables: dict | None = None) -> list[str]:
    """All style names usable with apply_style, e.g. ['scene', 'user:child']."""
    if tables is None:
        tables = load_style_tables()
    out = []
    for key in sorted(tables["styles"]):
        out.append(STYLE_SCENE if key == "scene" else STYLE_USER_PREFIX + key)
    return out


def build_conversion_prompt(instr: Instruction, template_dir: str | None = None) -> str:
    template = load_template("convert", template_dir)
    return template.format(style=instr.style, text=instr.text)


def parse_conversion(completion: str) -> tuple[str, float] | None:
    """Extract (converted text, confidence) from a completion, or None."""
    m_text = _CONVERTED_RE.search(completion)
    m_conf = _CONFIDENCE_RE.search(completion)
    if m_text is None or m_conf is None:
        return None
    try:
        confidence = float(m_conf.group(1))
    except ValueError:
        return None
    return m_text.group(1), confidence


class RuleInverseBackend:
    """Deterministic conversion backend that inverts the rule styler.

    Reads the TEXT line out of the conversion prompt, strips known styling,
    and reports confidence 1.0 when styling was recognized, 0.5 otherwise.
    """

    def __init__(self, tables: dict | None = None):
        self.tables = tables if tables is not None else load_style_tables()

    def complete(self, prompt: str) -> str:
        m = _TEXT_LINE_RE.search(prompt)
        if m is None:
            raise BackendError("conversion prompt has no TEXT line")
        restored, matched = invert_style(m.group(1), self.tables)
        confidence = 1.0 if matched else 0.5
        return f"CONVERTED: {restored}\nCONFIDENCE: {confidence:.2f}"


def convert(
    backend: CompletionBackend,
    instr: Instruction,
    confidence_threshold: float = CONFIDENCE_THRESHOLD,
    template_dir: str | None = None,
) -> Instruction:
    """Convert a styled instruction to basic phrasing via a backend.

    Basic instructions pass through untouched.  The styled text is only
    replaced when the backend's confidence exceeds the threshold; on parse
    failure or backend failure the original instruction is kept.
    """
    if instr.style == STYLE_BASIC:
        return instr
    prompt = build_conversion_prompt(instr, template_dir)
    try:
        completion = backend.complete(prompt)
    except BackendError as exc:
        log.warning("conversion backend failed, keeping original: %s", exc)
        return instr
    parsed = parse_conversion(completion)
    if parsed is None:
        return instr
    converted, confidence = parsed
    if confidence <= confidence_threshold or not converted.strip():
        return instr
    return Instruction(text=converted, style=STYLE_BASIC)


__all__ = [
    "CONFIDENCE_THRESHOLD",
    "RuleInverseBackend",
    "apply_style",
    "build_conversion_prompt",
    "convert",
    "invert_style",
    "list_styles",
    "parse_conversion",
    "validate_style_tables",
]
