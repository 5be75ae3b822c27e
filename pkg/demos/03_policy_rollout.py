"""
Fast-policy rollouts on a topological map
=========================================

One full episode with an untrained policy, step by step: observations come
in, the map grows, scores pick moves from the local candidates plus the
frontier, and the episode log records everything for later reflection.
"""

import numpy as np

from dualnav.agent import run_episode
from dualnav.env import generate_episode
from dualnav.params import ModelDims, init_params
from dualnav.scene import generate_scene

dims = ModelDims(feature_dim=64, exp_dim=48, heads=4)
scene = generate_scene(seed=5, scene_type="mall", n_nodes=9)
episode = generate_episode(scene, seed=2, min_hops=2, max_hops=3)
print(f"{scene.scene_id}: {episode.start} -> {episode.goal}")
print(f"instruction: {episode.instruction.text}\n")

params = init_params(1, dims)
result = run_episode(params, scene, episode, max_steps=6)

for record in result.log.records:
    local = ", ".join(node_id for node_id, _, _ in record.T_local)
    print(f"step {record.j_seq}: at {record.V_j} candidates [{local}] -> {record.A_j_s} "
          f"(stop prob {record.U_step['stop_prob']:.2f})")

print(f"\ntrajectory: {' -> '.join(result.trajectory)}")
print(f"stopped: {result.stopped} after {len(result.steps)} steps "
      f"(walks straight through the goal without stopping)")
out = result.outcome
print(f"untrained outcome: SR={out.SR} NE={out.NE:.2f}m nDTW={out.nDTW:.3f}")

# Per-step compute is recorded as multiply-accumulate counts.  Unpadded
# steps vary with the candidate count; padded runs hold the cost constant.
print(f"\nper-step MACs (unpadded): {result.step_macs}")
padded = run_episode(params, scene, episode, max_steps=6, l_pad=6, g_pad=9, m_pad=5)
print(f"per-step MACs (padded):   {padded.step_macs}")
same = all(m == padded.step_macs[0] for m in padded.step_macs)
print(f"padded cost constant across steps: {same}")

# The log serializes to JSON lines, one record per step, for offline
# reflection and for the lib/eval commands.
import os
import tempfile

from dualnav.policy import write_episode_log

with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "episode.jsonl")
    write_episode_log(result.log, path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
print(f"\nepisode log -> {len(lines)} JSON lines (header + {len(result.log.records)} records)")
