"""Post-episode reflection: distill an episode log into one experience.

A completion backend (deterministic rule oracle or remote LLM) receives a
structured prompt built from the episode log and must answer with a fenced
block of key/value lines.  Anything malformed degrades to a safe default
experience instead of failing the training loop.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, replace

from .backends import BackendError, CompletionBackend
from .env import STOP
from .instructions import tokenize
from .explib import Experience, RetrievalKey
from .policy import EpisodeLog
from .scene import SceneGraph, shortest_path
from .templates import load_template

log = logging.getLogger(__name__)

# Strategy vocabulary shared between retrieval keys and oracle output, so
# that fresh contexts overlap with stored strategies.
STRATEGY_KERNEL = ("prefer", "branch")

_BLOCK_RE = re.compile(r"^BEGIN_EXPERIENCE\s*$(.*?)^END_EXPERIENCE\s*$", re.MULTILINE | re.DOTALL)
_KV_RE = re.compile(r"^(S_t|C_s|R_s|T_n|eta_s):[ \t]*(.*)$", re.MULTILINE)
_CTX_LINE = {
    "scene": re.compile(r"^scene:\s*(\S+)\s*$", re.MULTILINE),
    "start": re.compile(r"^start:\s*(\S+)\s*$", re.MULTILINE),
    "goal": re.compile(r"^goal:\s*(\S+)\s*$", re.MULTILINE),
    "sr": re.compile(r"^result:\s*\S+\s+sr=([0-9.]+)", re.MULTILINE),
}
CORRECTION_HEADER = "task: correction"
_CORR_LINE = {
    "scene": _CTX_LINE["scene"],
    "at": re.compile(r"^at:\s*(\S+)\s*$", re.MULTILINE),
    "goal": _CTX_LINE["goal"],
}
_NEXT_RE = re.compile(r"^NEXT:\s*(\S+)\s*$", re.MULTILINE)


@dataclass(frozen=True)
class ReflectionContext:
    """Deterministic digest of one finished episode."""

    scene_id: str
    scene_type: str
    instruction: str
    start: str
    goal: str
    trajectory: tuple[str, ...]
    success_rate: float
    spl: float
    ne: float
    n_steps: int
    loops: tuple[str, ...]
    backtracks: int
    wrong_stop: bool
    step_lines: tuple[str, ...]


def _goal_from_episode_id(episode_id: str) -> str:
    # Episode ids follow "<scene_id>/<start>-<goal>/<style>/s<seed>".
    try:
        pair = episode_id.split("/")[1]
        return pair.split("-")[1]
    except IndexError:
        raise ValueError(f"cannot read goal from episode id {episode_id!r}") from None


def build_context(log_: EpisodeLog, scene: SceneGraph) -> ReflectionContext:
    """Extract the reflection context from an episode log."""
    if not log_.records:
        raise ValueError("episode log has no records")
    if log_.outcome is None:
        raise ValueError("episode log has no outcome metrics")
    records = log_.records
    nodes = [r.V_j for r in records]
    last = records[-1]
    if last.A_j_s != STOP:
        nodes.append(last.A_j_s)
    loops = sorted({n for n in nodes if nodes.count(n) >= 2})
    backtracks = sum(1 for i in range(2, len(nodes)) if nodes[i] == nodes[i - 2])
    step_lines = tuple(
        f"step {r.j_seq}: at {r.V_j} ({r.F_v_j}) -> {r.A_j_s} "
        f"stop_prob={r.U_step['stop_prob']:.3f} progress={r.U_step['trajectory_effectiveness']:.3f}"
        for r in records
    )
    return ReflectionContext(
        scene_id=scene.scene_id,
        scene_type=scene.scene_type,
        instruction=records[0].I,
        start=records[0].V_j,
        goal=_goal_from_episode_id(log_.episode_id),
        trajectory=tuple(nodes),
        success_rate=float(log_.outcome.SR),
        spl=log_.outcome.SPL,
        ne=log_.outcome.NE,
        n_steps=len(records),
        loops=tuple(loops),
        backtracks=backtracks,
        wrong_stop=log_.outcome.SR == 0 and last.A_j_s == STOP,
        step_lines=step_lines,
    )


def context_block(ctx: ReflectionContext) -> str:
    lines = [
        f"scene: {ctx.scene_id}",
        f"scene_type: {ctx.scene_type}",
        f"instruction: {ctx.instruction}",
        f"start: {ctx.start}",
        f"goal: {ctx.goal}",
        "trajectory: " + " -> ".join(ctx.trajectory),
        f"result: {'success' if ctx.success_rate else 'failure'} "
        f"sr={ctx.success_rate:.2f} spl={ctx.spl:.3f} ne={ctx.ne:.2f} steps={ctx.n_steps}",
        "loops: " + (" ".join(ctx.loops) if ctx.loops else "none"),
        f"backtracks: {ctx.backtracks}",
        f"wrong_stop: {'yes' if ctx.wrong_stop else 'no'}",
        *ctx.step_lines,
    ]
    return "\n".join(lines)


def build_prompt(ctx: ReflectionContext, template_dir: str | None = None) -> str:
    """Full reflection prompt: role, data, tasks, output format."""
    template = load_template("reflection", template_dir)
    return template.format(context=context_block(ctx))


def default_experience(scene_type: str, success_rate: float, now: float) -> Experience:
    """Fallback experience used when a completion cannot be parsed."""
    return Experience(
        S_t=frozenset(tokenize(scene_type)),
        C_s=frozenset(),
        R_s=frozenset(),
        T_n=frozenset(),
        eta_s=min(1.0, max(0.0, success_rate)),
        f=1,
        t_last=now,
        raw_text="",
    )


def parse_experience(text: str, now: float, fallback: Experience) -> Experience:
    """Parse a completion into an experience; fall back on any defect."""
    block = _BLOCK_RE.search(text or "")
    if block is None:
        return fallback
    body = block.group(1)
    fields = dict(_KV_RE.findall(body))
    if set(fields) != {"S_t", "C_s", "R_s", "T_n", "eta_s"}:
        return fallback
    try:
        eta = float(fields["eta_s"])
    except ValueError:
        return fallback
    if math.isnan(eta):
        return fallback
    return Experience(
        S_t=frozenset(tokenize(fields["S_t"])),
        C_s=frozenset(tokenize(fields["C_s"])),
        R_s=frozenset(tokenize(fields["R_s"])),
        T_n=frozenset(tokenize(fields["T_n"])),
        eta_s=min(1.0, max(0.0, eta)),
        f=1,
        t_last=now,
        raw_text=text,
    )


def make_retrieval_key(scene: SceneGraph, node_id: str) -> RetrievalKey:
    """Current-context key: scene type, scene/location tokens, strategy kernel."""
    region = scene.nodes[node_id].region
    return RetrievalKey(
        S_t_cur=frozenset(tokenize(scene.scene_type)),
        C_s_cur=frozenset(tokenize(scene.scene_id)) | {region},
        T_n_cur=frozenset(STRATEGY_KERNEL),
    )


def build_correction_prompt(scene_id: str, current: str, goal: str) -> str:
    """In-loop slow-reasoning request used by the threshold-switch baseline."""
    return "\n".join([CORRECTION_HEADER, f"scene: {scene_id}", f"at: {current}", f"goal: {goal}"])


def parse_correction(completion: str) -> str | None:
    """Extract the corrective action from a completion, or None."""
    m = _NEXT_RE.search(completion or "")
    return m.group(1) if m else None


class RuleOracle:
    """Deterministic slow-reasoning backend grounded in the scene graphs.

    Handles two prompt kinds.  Reflection prompts: reads the scene id,
    endpoints, and outcome out of the data block, recomputes the correct
    route, and emits spatial rules built exclusively from that scene's
    region and landmark tokens.  Correction prompts: answers with the next
    hop of the shortest path from the stalled position.
    """

    def __init__(self, scenes: dict[str, SceneGraph]):
        self.scenes = dict(scenes)

    def complete(self, prompt: str) -> str:
        if prompt.lstrip().startswith(CORRECTION_HEADER):
            return self._correct(prompt)
        return self._reflect(prompt)

    def _correct(self, prompt: str) -> str:
        parsed: dict[str, str] = {}
        for name, pattern in _CORR_LINE.items():
            m = pattern.search(prompt)
            if m is None:
                raise BackendError(f"correction prompt is missing the {name} line")
            parsed[name] = m.group(1)
        scene = self.scenes.get(parsed["scene"])
        if scene is None:
            raise BackendError(f"unknown scene {parsed['scene']!r}")
        if parsed["at"] not in scene.nodes or parsed["goal"] not in scene.nodes:
            raise BackendError("correction prompt references unknown nodes")
        if parsed["at"] == parsed["goal"]:
            return f"NEXT: {STOP}"
        path = shortest_path(scene, parsed["at"], parsed["goal"])
        return f"NEXT: {path[1]}"

    def _reflect(self, prompt: str) -> str:
        parsed: dict[str, str] = {}
        for name, pattern in _CTX_LINE.items():
            m = pattern.search(prompt)
            if m is None:
                raise BackendError(f"prompt is missing the {name} line")
            parsed[name] = m.group(1)
        scene = self.scenes.get(parsed["scene"])
        if scene is None:
            raise BackendError(f"unknown scene {parsed['scene']!r}")
        if parsed["start"] not in scene.nodes or parsed["goal"] not in scene.nodes:
            raise BackendError("prompt references unknown nodes")
        path = shortest_path(scene, parsed["start"], parsed["goal"])
        sr = float(parsed["sr"])

        context_tokens: list[str] = list(tokenize(scene.scene_id))
        for node_id in path:
            region = scene.nodes[node_id].region
            if region not in context_tokens:
                context_tokens.append(region)
        rules: list[str] = []
        strategy: list[str] = list(STRATEGY_KERNEL)
        for here, nxt in zip(path, path[1:]):
            if scene.degree(here) >= 3:
                nxt_node = scene.nodes[nxt]
                for token in (*nxt_node.landmarks, nxt_node.region):
                    if token not in rules:
                        rules.append(token)
                for token in nxt_node.landmarks:
                    if token not in strategy:
                        strategy.append(token)
        if not rules:
            goal_node = scene.nodes[path[-1]]
            rules.extend(t for t in (*goal_node.landmarks, goal_node.region) if t not in rules)
        return "\n".join(
            [
                "BEGIN_EXPERIENCE",
                f"S_t: {scene.scene_type}",
                "C_s: " + " ".join(context_tokens),
                "R_s: " + " ".join(rules),
                "T_n: " + " ".join(strategy),
                f"eta_s: {sr:.2f}",
                "END_EXPERIENCE",
            ]
        )


def reflect(
    backend: CompletionBackend,
    log_: EpisodeLog,
    scene: SceneGraph,
    now: float,
    eta_source: str = "llm",
    template_dir: str | None = None,
) -> Experience:
    """One slow-reasoning pass over a finished episode.

    Backend failures and malformed completions both degrade to the default
    experience.  ``eta_source`` selects whether the stored success rate
    comes from the completion ("llm") or the measured outcome ("measured").
    """
    if eta_source not in ("llm", "measured"):
        raise ValueError(f"eta_source must be 'llm' or 'measured', got {eta_source!r}")
    ctx = build_context(log_, scene)
    prompt = build_prompt(ctx, template_dir)
    fallback = default_experience(ctx.scene_type, ctx.success_rate, now)
    try:
        completion = backend.complete(prompt)
    except BackendError as exc:
        log.warning("reflection backend failed, using default experience: %s", exc)
        return fallback
    experience = parse_experience(completion, now, fallback)
    if eta_source == "measured":
        experience = replace(experience, eta_s=min(1.0, max(0.0, ctx.success_rate)))
    return experience


__all__ = [
    "CORRECTION_HEADER",
    "STRATEGY_KERNEL",
    "ReflectionContext",
    "RuleOracle",
    "build_context",
    "build_correction_prompt",
    "build_prompt",
    "context_block",
    "default_experience",
    "make_retrieval_key",
    "parse_correction",
    "parse_experience",
    "reflect",
]
