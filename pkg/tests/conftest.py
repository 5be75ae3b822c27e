"""Shared builders: hand-made scenes and experience factories."""

from __future__ import annotations

import numpy as np
import pytest

from dualnav.env import STOP, Episode, observe
from dualnav.explib import Experience
from dualnav.instructions import STYLE_BASIC, Instruction
from dualnav.metrics import evaluate
from dualnav.policy import EpisodeLog, make_record
from dualnav.scene import Node, SceneGraph, node_feature


def build_scene(scene_id, scene_type, spec, edges):
    """Assemble a scene from (node_id, position, region, landmarks) rows."""
    nodes = {}
    for node_id, pos, region, landmarks in spec:
        nodes[node_id] = Node(
            node_id=node_id,
            position=pos,
            region=region,
            landmarks=tuple(landmarks),
            description=f"{region} with the {' '.join(landmarks)}",
            feature=node_feature(scene_id, region, tuple(landmarks)),
        )
    return SceneGraph(scene_id=scene_id, scene_type=scene_type, nodes=nodes, edges=tuple(edges))


def hand_scene(cd_len: float = 3.0) -> SceneGraph:
    """The 5-node metrics scene; cd_len sets the C-D edge for SR boundary cases.

    Geodesics used by the tests: A-C is 4.0 direct (the A-B-C detour is 8.0,
    exactly twice), and D sits cd_len past C.
    """
    spec = [
        ("A", (0.0, 0.0, 0.0), "lobby", ("red", "vase")),
        ("B", (0.0, 3.0, 0.0), "hallway", ("blue", "lamp")),
        ("C", (4.0, 0.0, 0.0), "kitchen", ("green", "plant")),
        ("D", (4.0, 3.0, 0.0), "office", ("white", "clock")),
        ("E", (8.0, 0.0, 0.0), "storage", ("black", "bench")),
    ]
    edges = [
        ("A", "B", 3.0),
        ("B", "C", 5.0),
        ("A", "C", 4.0),
        ("C", "D", cd_len),
        ("C", "E", 4.0),
    ]
    return build_scene("hand-00000-n5", "office", spec, edges)


def chain_scene(edge: float = 1.0) -> SceneGraph:
    spec = [
        ("A", (0.0, 0.0, 0.0), "lobby", ("red", "vase")),
        ("B", (edge, 0.0, 0.0), "hallway", ("blue", "lamp")),
        ("C", (2 * edge, 0.0, 0.0), "kitchen", ("green", "plant")),
    ]
    edges = [("A", "B", edge), ("B", "C", edge)]
    return build_scene("chain-00000-n3", "residential", spec, edges)


def basic_episode(scene: SceneGraph, start: str, goal: str, reference, seed: int = 0) -> Episode:
    return Episode(
        scene_id=scene.scene_id,
        start=start,
        goal=goal,
        instruction=Instruction(text=f"go to the {scene.nodes[goal].region}", style=STYLE_BASIC),
        reference_path=tuple(reference),
        seed=seed,
    )


def make_exp(S_t=(), C_s=(), R_s=(), T_n=(), eta=0.5, f=1, t_last=0.0) -> Experience:
    return Experience(
        S_t=frozenset(S_t),
        C_s=frozenset(C_s),
        R_s=frozenset(R_s),
        T_n=frozenset(T_n),
        eta_s=eta,
        f=f,
        t_last=t_last,
    )


def rigged_params(scene: SceneGraph, stop_targets: dict, move_targets: dict):
    """Weights that realize hand-chosen per-node score alignments.

    ``stop_targets[n]`` becomes feature(n) @ q and ``move_targets[n]``
    becomes feature(n) @ r, up to least-squares residue; with unit-norm
    near-orthogonal node features the system solves exactly.
    """
    from dualnav.params import init_params, set_tensor

    params = init_params(0)
    order = sorted(scene.nodes)
    feats = np.stack([scene.nodes[n].feature for n in order])
    q = np.linalg.lstsq(feats, np.array([stop_targets[n] for n in order]), rcond=None)[0]
    r = np.linalg.lstsq(feats, np.array([move_targets[n] for n in order]), rcond=None)[0]
    u = np.zeros(params.dims.feature_dim)
    u[0] = 1.0
    set_tensor(params, "token_embed", np.tile(u, (params.dims.token_vocab, 1)))
    set_tensor(params, "instr_proj", np.outer(q, u))
    set_tensor(params, "cand_proj", np.outer(q, r) / (q @ q))
    params.scale_gate = 0.0  # gate 0.5
    params.stop_bias = 0.0
    return params


def branch_rig():
    """Rig for A -> C -> E on the 5-node scene, stopping at the goal."""
    scene = hand_scene()
    params = rigged_params(
        scene,
        stop_targets={"A": 0.0, "B": -4.0, "C": 4.0, "D": 0.0, "E": 0.0},
        move_targets={"A": -2.0, "B": -2.0, "C": 2.0, "D": -2.0, "E": 2.0},
    )
    episode = basic_episode(scene, "A", "E", ("A", "C", "E"))
    return params, scene, episode


def scripted_log(scene: SceneGraph, ep: Episode, walk) -> EpisodeLog:
    """Episode log for a hand-written node walk ending in a stop."""
    records = []
    for i, node in enumerate(walk):
        action = walk[i + 1] if i + 1 < len(walk) else STOP
        records.append(
            make_record(
                scene, ep, observe(scene, node), action, np.zeros(3),
                j_seq=i + 1, t_j=0.0, prev_node=walk[i - 1] if i else None,
            )
        )
    return EpisodeLog(
        episode_id=ep.episode_id,
        records=records,
        outcome=evaluate(scene, ep, list(walk)),
    )


@pytest.fixture
def metrics_scene():
    return hand_scene()
