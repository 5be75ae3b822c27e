"""Episode sampling and the step/observe interface over scene graphs."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .instructions import STYLE_BASIC, Instruction
from .scene import SceneGraph, shortest_path
from . import styleconv

STOP = "stop"


class InvalidActionError(ValueError):
    """Raised when an action cannot be executed from the current node."""


@dataclass(frozen=True)
class Episode:
    """One navigation task: go from start to goal following an instruction."""

    scene_id: str
    start: str
    goal: str
    instruction: Instruction
    reference_path: tuple[str, ...]
    seed: int = 0

    @property
    def episode_id(self) -> str:
        return f"{self.scene_id}/{self.start}-{self.goal}/{self.instruction.style}/s{self.seed}"


@dataclass(frozen=True, eq=False)
class Candidate:
    """A traversable neighbor as seen from the current node."""

    node_id: str
    heading: float
    distance: float
    feature: np.ndarray


@dataclass(frozen=True, eq=False)
class Observation:
    current: str
    candidates: tuple[Candidate, ...]
    stop_allowed: bool = True


@dataclass(frozen=True)
class StepResult:
    """Outcome of one action: where the agent ended up and how it got there.

    ``path`` lists every node touched, starting at the pre-action node, so
    the caller can extend the trajectory without teleports.
    """

    stopped: bool
    node: str
    path: tuple[str, ...]
    meters: float


def heading_to(from_pos, to_pos) -> float:
    """Azimuth of to_pos as seen from from_pos, in [-pi, pi); +x axis is 0."""
    angle = math.atan2(to_pos[1] - from_pos[1], to_pos[0] - from_pos[0])
    if angle >= math.pi:  # atan2 returns +pi for due -x
        angle -= 2.0 * math.pi
    return angle


def observe(scene: SceneGraph, current: str) -> Observation:
    """Local observation at a node: the neighbors, sorted by id."""
    node = scene.nodes.get(current)
    if node is None:
        raise KeyError(f"unknown node {current}")
    candidates = []
    for nb_id in sorted(scene.neighbors(current)):
        nb = scene.nodes[nb_id]
        candidates.append(
            Candidate(
                node_id=nb_id,
                heading=heading_to(node.position, nb.position),
                distance=scene.edge_length(current, nb_id),
                feature=nb.feature,
            )
        )
    return Observation(current=current, candidates=tuple(candidates), stop_allowed=True)


def _induced_shortest_path(scene: SceneGraph, allowed: set[str], a: str, b: str) -> list[str]:
    """Shortest path from a to b using only nodes in ``allowed``; min-id ties."""
    dist: dict[str, float] = {b: 0.0}
    heap: list[tuple[float, str]] = [(0.0, b)]
    while heap:
        d, cur = heapq.heappop(heap)
        if d > dist.get(cur, math.inf):
            continue
        for nxt, w in scene.neighbors(cur).items():
            if nxt not in allowed:
                continue
            cand = d + w
            if cand < dist.get(nxt, math.inf):
                dist[nxt] = cand
                heapq.heappush(heap, (cand, nxt))
    if a not in dist:
        raise InvalidActionError(f"no traversable route from {a} to {b}")
    path = [a]
    cur = a
    while cur != b:
        choices = [
            nxt
            for nxt, w in scene.neighbors(cur).items()
            if nxt in allowed and abs(w + dist.get(nxt, math.inf) - dist[cur]) <= 1e-9
        ]
        cur = min(choices)
        path.append(cur)
    return path


def step(scene: SceneGraph, current: str, action: str, visited: set[str] | None = None) -> StepResult:
    """Execute one action from ``current``.

    ``stop`` terminates in place.  A neighbor id moves along that edge.  Any
    other node id is treated as a jump target and is walked along the
    shortest route through ``visited`` nodes; this requires ``visited`` to
    contain ``current`` and some node adjacent to the target.
    """
    if current not in scene.nodes:
        raise KeyError(f"unknown node {current}")
    if action == STOP:
        return StepResult(stopped=True, node=current, path=(current,), meters=0.0)
    if action not in scene.nodes:
        raise InvalidActionError(f"unknown action target {action!r}")
    neighbors = scene.neighbors(current)
    if action in neighbors:
        return StepResult(
            stopped=False,
            node=action,
            path=(current, action),
            meters=neighbors[action],
        )
    if visited is None or current not in visited:
        raise InvalidActionError(f"{action} is not adjacent to {current} and no traversal context was given")
    allowed = set(visited) | {action}
    path = _induced_shortest_path(scene, allowed, current, action)
    meters = sum(scene.edge_length(x, y) for x, y in zip(path, path[1:]))
    return StepResult(stopped=False, node=action, path=tuple(path), meters=meters)


def _basic_text(scene: SceneGraph, path: tuple[str, ...]) -> str:
    parts = [f"leave the {scene.nodes[path[0]].region}"]
    for node_id in path[1:-1]:
        node = scene.nodes[node_id]
        parts.append(f"go to the {node.region} with the {' '.join(node.landmarks)}")
    last = scene.nodes[path[-1]]
    parts.append(f"and stop at the {last.region} with the {' '.join(last.landmarks)}")
    text = ", ".join(parts) + "."
    # Successive "go to" segments read better as "then to".
    pieces = text.split(", ")
    for i in range(2, len(pieces)):
        if pieces[i].startswith("go to ") and pieces[i - 1].startswith(("go to ", "then to ")):
            pieces[i] = "then to " + pieces[i][len("go to "):]
    return ", ".join(pieces)


def generate_episode(
    scene: SceneGraph,
    seed: int,
    style: str = STYLE_BASIC,
    min_hops: int = 2,
    max_hops: int | None = None,
) -> Episode:
    """Sample a start/goal pair and build the instruction for it.

    Deterministic in (scene, seed, style, hop bounds).  The reference path
    is the shortest path; the instruction narrates its rooms and landmarks.
    """
    ids = sorted(scene.nodes)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, len(ids)])))
    pairs = []
    for a in ids:
        for b in ids:
            if a == b:
                continue
            hops = len(shortest_path(scene, a, b)) - 1
            if hops < min_hops:
                continue
            if max_hops is not None and hops > max_hops:
                continue
            pairs.append((a, b))
    if not pairs:
        pairs = [(a, b) for a in ids for b in ids if a != b]
    start, goal = pairs[int(rng.integers(0, len(pairs)))]
    reference = tuple(shortest_path(scene, start, goal))
    basic = Instruction(text=_basic_text(scene, reference), style=STYLE_BASIC)
    if style == STYLE_BASIC:
        instruction = basic
    else:
        instruction = styleconv.apply_style(basic, style, seed=seed)
    return Episode(
        scene_id=scene.scene_id,
        start=start,
        goal=goal,
        instruction=instruction,
        reference_path=reference,
        seed=seed,
    )


def validate_episode(scene: SceneGraph, episode: Episode) -> None:
    """Raise ValueError when an episode does not belong to the scene."""
    if episode.scene_id != scene.scene_id:
        raise ValueError(f"episode belongs to {episode.scene_id}, not {scene.scene_id}")
    if episode.start not in scene.nodes or episode.goal not in scene.nodes:
        raise ValueError("episode endpoints are not in the scene")
    if episode.start == episode.goal:
        raise ValueError("episode start equals goal")
    if not episode.reference_path or episode.reference_path[0] != episode.start:
        raise ValueError("reference path must begin at the start node")
    if episode.reference_path[-1] != episode.goal:
        raise ValueError("reference path must end at the goal node")


__all__ = [
    "STOP",
    "Candidate",
    "Episode",
    "InvalidActionError",
    "Observation",
    "StepResult",
    "generate_episode",
    "heading_to",
    "observe",
    "step",
    "validate_episode",
]
