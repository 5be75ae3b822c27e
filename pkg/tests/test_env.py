"""Step/observe semantics and deterministic episode sampling."""

import math

import pytest

from dualnav.env import (
    STOP,
    InvalidActionError,
    generate_episode,
    heading_to,
    observe,
    step,
    validate_episode,
)
from dualnav.scene import generate_scene, shortest_path

from conftest import basic_episode, chain_scene, hand_scene


def test_step_to_neighbor():
    scene = chain_scene()
    result = step(scene, "A", "B")
    assert (result.stopped, result.node) == (False, "B")
    assert result.path == ("A", "B")
    assert result.meters == pytest.approx(1.0)


def test_step_stop_is_terminal_in_place():
    scene = chain_scene()
    result = step(scene, "A", STOP)
    assert result.stopped
    assert result.node == "A"
    assert result.path == ("A",)
    assert result.meters == 0.0


def test_step_rejects_unreachable_target():
    scene = chain_scene()
    with pytest.raises(InvalidActionError):
        step(scene, "A", "C")  # not adjacent, no traversal context


def test_step_rejects_unknown_target():
    scene = chain_scene()
    with pytest.raises(InvalidActionError):
        step(scene, "A", "Z")


def test_step_jump_walks_through_visited_nodes():
    # Frontier jump: C is reachable from A only through visited B.
    scene = chain_scene()
    result = step(scene, "A", "C", visited={"A", "B"})
    assert result.path == ("A", "B", "C")
    assert result.meters == pytest.approx(2.0)


def test_observe_lists_all_neighbors():
    scene = hand_scene()
    obs = observe(scene, "C")  # degree 4: A, B, D, E
    assert [c.node_id for c in obs.candidates] == ["A", "B", "D", "E"]
    assert obs.stop_allowed


def test_observe_headings_and_distances():
    scene = hand_scene()
    obs = observe(scene, "A")
    by_id = {c.node_id: c for c in obs.candidates}
    # C sits due +x of A; B due +y.
    assert by_id["C"].heading == pytest.approx(0.0)
    assert by_id["B"].heading == pytest.approx(math.pi / 2)
    for c in obs.candidates:
        assert c.distance == pytest.approx(scene.edge_length("A", c.node_id))


def test_heading_wraps_to_half_open_interval():
    assert heading_to((0.0, 0.0, 0.0), (-1.0, 0.0, 0.0)) == pytest.approx(-math.pi)


def test_generate_episode_reference_is_shortest_path():
    scene = generate_scene(seed=5, scene_type="mall", n_nodes=10)
    ep = generate_episode(scene, seed=3, min_hops=2, max_hops=4)
    assert list(ep.reference_path) == shortest_path(scene, ep.start, ep.goal)
    hops = len(ep.reference_path) - 1
    assert 2 <= hops <= 4


def test_generate_episode_deterministic_text():
    scene = generate_scene(seed=5, scene_type="mall", n_nodes=10)
    a = generate_episode(scene, seed=3)
    b = generate_episode(scene, seed=3)
    assert a.instruction.text == b.instruction.text
    assert a.episode_id == b.episode_id


def test_instruction_tokens_nonempty():
    scene = generate_scene(seed=5, scene_type="mall", n_nodes=10)
    ep = generate_episode(scene, seed=3)
    assert ep.instruction.tokens


def test_instruction_mentions_goal_landmarks():
    scene = generate_scene(seed=5, scene_type="mall", n_nodes=10)
    ep = generate_episode(scene, seed=3)
    goal = scene.nodes[ep.goal]
    for lm in goal.landmarks:
        assert lm in ep.instruction.tokens


def test_episode_id_format():
    scene = chain_scene()
    ep = basic_episode(scene, "A", "C", ("A", "B", "C"), seed=4)
    assert ep.episode_id == "chain-00000-n3/A-C/basic/s4"


def test_validate_episode_rejects_foreign_scene():
    ep = basic_episode(chain_scene(), "A", "C", ("A", "B", "C"))
    with pytest.raises(ValueError):
        validate_episode(hand_scene(), ep)


def test_validate_episode_rejects_bad_reference():
    scene = chain_scene()
    ep = basic_episode(scene, "A", "C", ("B", "C"))
    with pytest.raises(ValueError):
        validate_episode(scene, ep)


def test_styled_episode_uses_requested_style():
    scene = generate_scene(seed=5, scene_type="mall", n_nodes=10)
    ep = generate_episode(scene, seed=3, style="user:pirate")
    assert ep.instruction.style == "user:pirate"
    basic = generate_episode(scene, seed=3)
    assert ep.instruction.text != basic.instruction.text
