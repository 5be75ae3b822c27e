"""Topological map bookkeeping, action scoring, and the episode log format."""

import numpy as np
import pytest

from dualnav.env import STOP, observe
from dualnav.metrics import evaluate
from dualnav.params import ModelDims, init_params, set_tensor, tensor_map
from dualnav.policy import (
    EpisodeLog,
    TopoMap,
    action_space,
    encode_instruction,
    make_record,
    read_episode_log,
    score_actions,
    select_action,
    softmax,
    trajectory_effectiveness,
    update_topomap,
    write_episode_log,
)
from dualnav.instructions import Instruction

from conftest import basic_episode, chain_scene, hand_scene

DIMS = ModelDims(feature_dim=4, exp_dim=3, heads=1, token_vocab=16, field_vocab=32)


def zeroed_params(seed=0, dims=DIMS):
    params = init_params(seed, dims)
    for name, t in tensor_map(params).items():
        set_tensor(params, name, np.zeros_like(t))
    return params


# --- topological map --------------------------------------------------------

def test_first_observation_splits_visited_and_frontier():
    scene = chain_scene()
    topo = update_topomap(TopoMap.empty(), observe(scene, "B"))
    assert topo.visited == {"B"}
    assert topo.frontier == {"A", "C"}
    assert topo.local_ids == ("A", "C")


def test_revisit_leaves_frontier_unchanged():
    scene = chain_scene()
    topo = update_topomap(TopoMap.empty(), observe(scene, "A"))
    topo = update_topomap(topo, observe(scene, "B"))
    before = topo.frontier
    topo = update_topomap(topo, observe(scene, "A"))
    assert topo.frontier == before


def test_frontier_empties_after_exhaustive_walk():
    scene = hand_scene()
    topo = TopoMap.empty()
    for node in ("A", "B", "C", "D", "E"):
        topo = update_topomap(topo, observe(scene, node))
    assert topo.frontier == frozenset()
    assert topo.visited == set(scene.nodes)


def test_action_space_order_and_stop_first():
    scene = hand_scene()
    topo = update_topomap(TopoMap.empty(), observe(scene, "A"))
    topo = update_topomap(topo, observe(scene, "C"))
    # At C after A: locals are C's neighbors; frontier extras exclude them.
    actions = action_space(topo)
    assert actions[0] == STOP
    assert actions[1:5] == ["A", "B", "D", "E"]
    assert actions[5:] == sorted(set(topo.frontier) - set(topo.local_ids))


def test_action_space_requires_observation():
    with pytest.raises(ValueError):
        action_space(TopoMap.empty())


# --- instruction encoding ---------------------------------------------------

def test_zero_embeddings_encode_to_zero():
    params = zeroed_params()
    vec = encode_instruction(params, Instruction(text="go to the lobby", style="basic"))
    assert np.array_equal(vec, np.zeros(DIMS.feature_dim))


def test_single_token_is_projected_embedding():
    params = init_params(3, DIMS)
    instr = Instruction(text="lobby", style="basic")
    from dualnav.params import token_ids

    tid = token_ids(["lobby"], DIMS.token_vocab)[0]
    expected = params.instr_proj @ params.token_embed[tid]
    assert np.allclose(encode_instruction(params, instr), expected)


def test_encoding_ignores_token_order():
    params = init_params(3, DIMS)
    a = encode_instruction(params, Instruction(text="red vase lobby", style="basic"))
    b = encode_instruction(params, Instruction(text="lobby red vase", style="basic"))
    assert np.allclose(a, b)


# --- scoring ----------------------------------------------------------------

def two_candidate_topo():
    return TopoMap(
        current="A",
        visited=frozenset({"A"}),
        frontier=frozenset({"B", "C"}),
        features={},
        local_ids=("B", "C"),
    )


def test_zero_params_give_zero_scores():
    params = zeroed_params()
    topo = two_candidate_topo()
    fused = np.ones((2, DIMS.feature_dim))
    scores = score_actions(params, fused, np.zeros(DIMS.feature_dim), topo)
    assert np.array_equal(scores, np.zeros(3))


def test_stop_bias_dominates():
    params = zeroed_params()
    params.stop_bias = 10.0
    topo = two_candidate_topo()
    fused = np.ones((2, DIMS.feature_dim))
    scores = score_actions(params, fused, np.zeros(DIMS.feature_dim), topo)
    actions = action_space(topo)
    assert select_action(scores, actions) == STOP


def test_two_candidate_scores_match_hand_computation():
    params = zeroed_params()
    set_tensor(params, "cand_proj", np.eye(DIMS.feature_dim))
    topo = two_candidate_topo()
    fused = np.array([[1.0, 0.0, 2.0, 0.0], [0.0, 3.0, 0.0, 1.0]])
    instr = np.array([1.0, 1.0, 0.0, 0.0])
    scores = score_actions(params, fused, instr, topo)
    # gate = sigmoid(0) = 0.5; r = I @ instr; stop = mean(fused) @ instr.
    # mean rows = [0.5, 1.5, 1.0, 0.5] -> dot instr = 2.0
    assert scores[0] == pytest.approx(2.0)
    assert scores[1] == pytest.approx(0.5 * 1.0)
    assert scores[2] == pytest.approx(0.5 * 3.0)


def test_select_action_basic_and_ties():
    assert select_action(np.array([0.1, 0.9, 0.3]), ["stop", "B", "C"]) == "B"
    assert select_action(np.array([0.5, 0.5]), ["stop", "B"]) == "stop"  # ties keep index 0


def test_select_action_matches_argmax_oracle():
    rng = np.random.default_rng(11)
    actions = [f"n{i}" for i in range(10)]
    for _ in range(50):
        scores = rng.normal(size=10)
        best = max(range(10), key=lambda i: scores[i])
        assert select_action(scores, actions) == actions[best]


def test_scores_linear_in_fused_features():
    params = init_params(9, DIMS)
    params.stop_bias = 0.0
    topo = two_candidate_topo()
    rng = np.random.default_rng(4)
    fused = rng.normal(size=(2, DIMS.feature_dim))
    instr = rng.normal(size=DIMS.feature_dim)
    base = score_actions(params, fused, instr, topo)
    scaled = score_actions(params, 3.0 * fused, instr, topo)
    assert np.allclose(scaled, 3.0 * base)


def test_select_action_invariant_to_score_shift():
    rng = np.random.default_rng(13)
    actions = [f"n{i}" for i in range(6)]
    for _ in range(25):
        scores = rng.normal(size=6)
        assert select_action(scores, actions) == select_action(scores + 3.7, actions)


def test_select_action_rejects_nan():
    with pytest.raises(ValueError):
        select_action(np.array([0.1, np.nan]), ["stop", "B"])


def test_softmax_normalizes():
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = softmax(rng.normal(size=7) * 10)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert (p >= 0).all()


# --- progress and records ---------------------------------------------------

def test_trajectory_effectiveness_endpoints():
    scene = chain_scene()
    ep = basic_episode(scene, "A", "C", ("A", "B", "C"))
    assert trajectory_effectiveness(scene, ep, "C") == 1.0
    assert trajectory_effectiveness(scene, ep, "A") == 0.0
    assert trajectory_effectiveness(scene, ep, "B") == pytest.approx(0.5)


def test_uniform_scores_give_quarter_stop_prob():
    scene = chain_scene()
    ep = basic_episode(scene, "A", "C", ("A", "B", "C"))
    rec = make_record(scene, ep, observe(scene, "A"), STOP, np.zeros(4), j_seq=1, t_j=0.0)
    assert rec.U_step["stop_prob"] == pytest.approx(0.25)


def test_record_reward_is_goal_distance_delta():
    scene = chain_scene()
    ep = basic_episode(scene, "A", "C", ("A", "B", "C"))
    rec = make_record(scene, ep, observe(scene, "B"), "C", np.zeros(3), j_seq=2, t_j=0.0,
                      prev_node="A")
    assert rec.U_step["reward"] == pytest.approx(1.0)  # 2.0 away -> 1.0 away


def test_log_round_trip(tmp_path):
    scene = chain_scene()
    ep = basic_episode(scene, "A", "C", ("A", "B", "C"))
    records = [
        make_record(scene, ep, observe(scene, "A"), "B", np.zeros(2), j_seq=1, t_j=0.0),
        make_record(scene, ep, observe(scene, "B"), STOP, np.zeros(3), j_seq=2, t_j=0.0,
                    prev_node="A"),
    ]
    outcome = evaluate(scene, ep, ["A", "B"])
    log = EpisodeLog(episode_id=ep.episode_id, records=records, outcome=outcome)
    path = tmp_path / "episode.jsonl"
    write_episode_log(log, str(path))
    loaded = read_episode_log(str(path))
    assert loaded.episode_id == log.episode_id
    assert loaded.records == log.records
    assert loaded.outcome == outcome


def test_log_rejects_disordered_records():
    scene = chain_scene()
    ep = basic_episode(scene, "A", "C", ("A", "B", "C"))
    r1 = make_record(scene, ep, observe(scene, "A"), "B", np.zeros(2), j_seq=2, t_j=0.0)
    r2 = make_record(scene, ep, observe(scene, "B"), STOP, np.zeros(3), j_seq=1, t_j=0.0)
    with pytest.raises(ValueError):
        EpisodeLog(episode_id=ep.episode_id, records=[r1, r2])
