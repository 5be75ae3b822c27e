"""Fast decision policy over a growing topological map.

The action space at each step is ``[stop, local neighbors sorted by id,
frontier nodes sorted by id]``; frontier nodes that are also local
neighbors appear only in the local block.  Local and global score blocks
are mixed by a learned sigmoid gate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .env import Episode, Observation, STOP
from .instructions import Instruction
from .metrics import MetricsReport
from .params import PolicyParams, token_ids
from .scene import SceneGraph


@dataclass(frozen=True)
class TopoMap:
    """What the agent has seen so far: visited nodes, frontier, features."""

    current: str | None = None
    visited: frozenset[str] = frozenset()
    frontier: frozenset[str] = frozenset()
    features: dict[str, np.ndarray] = field(default_factory=dict)
    local_ids: tuple[str, ...] = ()

    @classmethod
    def empty(cls) -> TopoMap:
        return cls()


def update_topomap(topo: TopoMap, obs: Observation, current_feature: np.ndarray | None = None) -> TopoMap:
    """Fold one observation into the map; returns a new map.

    The current node joins the visited set and leaves the frontier; unseen
    candidates join the frontier with their features cached.
    """
    visited = topo.visited | {obs.current}
    features = dict(topo.features)
    if current_feature is not None:
        features[obs.current] = current_feature
    frontier = set(topo.frontier)
    for cand in obs.candidates:
        if cand.node_id not in visited:
            frontier.add(cand.node_id)
        features.setdefault(cand.node_id, cand.feature)
    frontier -= visited
    return TopoMap(
        current=obs.current,
        visited=visited,
        frontier=frozenset(frontier),
        features=features,
        local_ids=tuple(c.node_id for c in obs.candidates),
    )


def action_space(topo: TopoMap) -> list[str]:
    """Ordered actions for the current map state."""
    if topo.current is None:
        raise ValueError("map has no current node; observe first")
    local = list(topo.local_ids)
    extra = sorted(set(topo.frontier) - set(local))
    return [STOP, *local, *extra]


def encode_instruction(params: PolicyParams, instruction: Instruction) -> np.ndarray:
    """Instruction vector: mean of token embeddings, projected."""
    ids = token_ids(instruction.tokens, params.dims.token_vocab)
    if not ids:
        raise ValueError("instruction has no tokens")
    mean_embed = params.token_embed[ids].mean(axis=0)
    return params.instr_proj @ mean_embed


def sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    e = np.exp(shifted)
    return e / e.sum()


def score_actions(
    params: PolicyParams,
    fused_visual: np.ndarray,
    instr_vec: np.ndarray,
    topo: TopoMap,
) -> np.ndarray:
    """Scores over the ordered action space.

    ``fused_visual`` has one row per local candidate (same order as
    ``topo.local_ids``).  Local scores come from fused rows, global scores
    from cached frontier features, and the sigmoid of the scale gate
    arbitrates between the two blocks.  The stop score adds the learned
    bias to the alignment between the mean fused view and the instruction.
    """
    fused_visual = np.asarray(fused_visual, dtype=float)
    n_local = len(topo.local_ids)
    if fused_visual.shape != (n_local, params.dims.feature_dim):
        raise ValueError(
            f"fused_visual shape {fused_visual.shape} does not match "
            f"({n_local}, {params.dims.feature_dim})"
        )
    if instr_vec.shape != (params.dims.feature_dim,):
        raise ValueError("instruction vector has the wrong dimension")
    extra = sorted(set(topo.frontier) - set(topo.local_ids))
    r = params.cand_proj.T @ instr_vec
    local_scores = fused_visual @ r if n_local else np.zeros(0)
    if extra:
        glob = np.stack([topo.features[g] for g in extra])
        glob_scores = glob @ r
    else:
        glob_scores = np.zeros(0)
    gate = sigmoid(params.scale_gate)
    if n_local:
        stop_score = params.stop_bias + float(fused_visual.mean(axis=0) @ instr_vec)
    else:
        stop_score = params.stop_bias
    return np.concatenate(([stop_score], gate * local_scores, (1.0 - gate) * glob_scores))


def select_action(scores: np.ndarray, actions: list[str]) -> str:
    """Argmax action; ties resolve to the lowest index."""
    scores = np.asarray(scores, dtype=float)
    if len(scores) != len(actions):
        raise ValueError("scores and actions disagree in length")
    if np.isnan(scores).any():
        raise ValueError("scores contain NaN")
    return actions[int(np.argmax(scores))]


def trajectory_effectiveness(scene: SceneGraph, episode: Episode, current: str) -> float:
    """Progress toward the goal in [0, 1]; 0 at the start, 1 at the goal."""
    total = scene.geodesic(episode.start, episode.goal)
    if total <= 0.0:
        return 1.0
    remaining = scene.geodesic(current, episode.goal)
    return float(min(1.0, max(0.0, 1.0 - remaining / total)))


@dataclass(frozen=True)
class HistoryRecord:
    """One logged decision; field names are part of the log file format."""

    t_j: float
    j_seq: int
    V_j: str
    T_local: tuple[tuple[str, float, float], ...]
    I: str
    A_j_s: str
    F_v_j: str
    U_step: dict[str, float]


def make_record(
    scene: SceneGraph,
    episode: Episode,
    obs: Observation,
    action: str,
    scores: np.ndarray,
    j_seq: int,
    t_j: float,
    prev_node: str | None = None,
) -> HistoryRecord:
    """Snapshot one decision for the episode log."""
    if j_seq < 1:
        raise ValueError("j_seq starts at 1")
    stop_prob = float(softmax(np.asarray(scores, dtype=float))[0])
    progress = trajectory_effectiveness(scene, episode, obs.current)
    if prev_node is None:
        reward = 0.0
    else:
        reward = scene.geodesic(prev_node, episode.goal) - scene.geodesic(obs.current, episode.goal)
    return HistoryRecord(
        t_j=t_j,
        j_seq=j_seq,
        V_j=obs.current,
        T_local=tuple((c.node_id, c.heading, c.distance) for c in obs.candidates),
        I=episode.instruction.text,
        A_j_s=action,
        F_v_j=scene.nodes[obs.current].description,
        U_step={
            "stop_prob": stop_prob,
            "trajectory_effectiveness": progress,
            "reward": float(reward),
        },
    )


@dataclass
class EpisodeLog:
    episode_id: str
    records: list[HistoryRecord] = field(default_factory=list)
    outcome: MetricsReport | None = None

    def __post_init__(self) -> None:
        seqs = [r.j_seq for r in self.records]
        if seqs != sorted(seqs) or len(set(seqs)) != len(seqs):
            raise ValueError("record sequence numbers must strictly increase")


def write_episode_log(log: EpisodeLog, path: str) -> None:
    """JSON-lines: one header line with id/outcome, then one record per line."""
    if not log.records:
        raise ValueError("refusing to write an empty episode log")
    header: dict = {"episode_id": log.episode_id, "outcome": None}
    if log.outcome is not None:
        header["outcome"] = {
            "episode_id": log.outcome.episode_id,
            "TL": log.outcome.TL,
            "NE": log.outcome.NE,
            "SR": log.outcome.SR,
            "SPL": log.outcome.SPL,
            "nDTW": log.outcome.nDTW,
        }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in log.records:
            fh.write(
                json.dumps(
                    {
                        "t_j": r.t_j,
                        "j_seq": r.j_seq,
                        "V_j": r.V_j,
                        "T_local": [list(entry) for entry in r.T_local],
                        "I": r.I,
                        "A_j_s": r.A_j_s,
                        "F_v_j": r.F_v_j,
                        "U_step": r.U_step,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_episode_log(path: str) -> EpisodeLog:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise ValueError("episode log file is empty")
    header = json.loads(lines[0])
    outcome = None
    if header.get("outcome"):
        outcome = MetricsReport(**header["outcome"])
    records = []
    for line in lines[1:]:
        rec = json.loads(line)
        records.append(
            HistoryRecord(
                t_j=rec["t_j"],
                j_seq=rec["j_seq"],
                V_j=rec["V_j"],
                T_local=tuple(tuple(entry) for entry in rec["T_local"]),
                I=rec["I"],
                A_j_s=rec["A_j_s"],
                F_v_j=rec["F_v_j"],
                U_step=rec["U_step"],
            )
        )
    return EpisodeLog(episode_id=header["episode_id"], records=records, outcome=outcome)


__all__ = [
    "EpisodeLog",
    "HistoryRecord",
    "TopoMap",
    "action_space",
    "encode_instruction",
    "make_record",
    "read_episode_log",
    "score_actions",
    "select_action",
    "sigmoid",
    "softmax",
    "trajectory_effectiveness",
    "update_topomap",
    "write_episode_log",
]
