"""
Instruction styles and the conversion gate
==========================================

Instructions arrive in different voices.  The styler rewrites a basic
instruction into a persona or scene voice without touching region or
landmark words; the converter asks a backend to undo that, and only
accepts the answer when the backend is confident enough.
"""

from dualnav.instructions import Instruction
from dualnav.styleconv import (
    CONFIDENCE_THRESHOLD,
    RuleInverseBackend,
    apply_style,
    convert,
    list_styles,
)

basic = Instruction(
    text="leave the lobby, go to the hall with the red vase, and stop there.",
    style="basic",
)
print(f"basic: {basic.text}\n")

styled = {}
for style in list_styles():
    if style == "basic":
        continue
    styled[style] = apply_style(basic, style, seed=4)
    print(f"{style:>12}: {styled[style].text}")

# The rule backend recognizes its own styling, answers with the stripped
# text at confidence 1.0, and the round trip is exact.
backend = RuleInverseBackend()
restored = convert(backend, styled["user:pirate"])
print(f"\nconverted back: {restored.text}")
print(f"round trip exact: {restored.text == basic.text}, style: {restored.style}")


class HedgingBackend:
    """Answers plausibly but below the acceptance threshold."""

    def complete(self, prompt: str) -> str:
        return "CONVERTED: go somewhere with a vase.\nCONFIDENCE: 0.50"


# Confidence 0.50 does not clear the 0.7 gate, so the styled original is
# kept rather than replaced with a shaky guess.
kept = convert(HedgingBackend(), styled["user:butler"])
print(f"\nthreshold is {CONFIDENCE_THRESHOLD}; low-confidence answer rejected:")
print(f"  kept text : {kept.text}")
print(f"  kept style: {kept.style}")
