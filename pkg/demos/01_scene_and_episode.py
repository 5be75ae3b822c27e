"""
Scenes, episodes, and trajectory metrics
========================================

Generate a small indoor scene, look around from its start node, walk the
reference path, and score the walk.
"""

from dualnav.env import generate_episode, observe, step
from dualnav.metrics import evaluate
from dualnav.scene import generate_scene

scene = generate_scene(seed=11, scene_type="hotel", n_nodes=10)
print(f"scene {scene.scene_id}: {len(scene.nodes)} nodes")
for node_id in sorted(scene.nodes)[:4]:
    node = scene.nodes[node_id]
    print(f"  {node_id}: {node.region} with {' '.join(node.landmarks)}")

# An episode samples a start/goal pair a few hops apart and narrates the
# shortest path as a natural-language instruction.
episode = generate_episode(scene, seed=3, min_hops=2, max_hops=4)
print(f"\nstart {episode.start} -> goal {episode.goal}")
print(f"instruction: {episode.instruction.text}")
print(f"reference path: {' -> '.join(episode.reference_path)}")

# Observations expose the current node's navigable neighbors; that is all
# the policy ever sees of the graph.
obs = observe(scene, episode.start)
print(f"\ncandidates at {episode.start}: {[c.node_id for c in obs.candidates]}")

# Walk the reference path with the simulator, then stop.
current = episode.start
trajectory = [current]
for target in episode.reference_path[1:]:
    result = step(scene, current, target)
    trajectory.extend(result.path[1:])
    current = result.node

report = evaluate(scene, episode, trajectory)
print(f"\nperfect walk: SR={report.SR} SPL={report.SPL:.3f} nDTW={report.nDTW:.3f} NE={report.NE:.2f}m")

# A detour through an extra node still succeeds but pays in SPL and nDTW.
spur = next(n for n in scene.neighbors(episode.start) if n != episode.reference_path[1])
detour = [episode.start, spur, episode.start] + list(episode.reference_path[1:])
report = evaluate(scene, episode, detour)
print(f"detoured walk: SR={report.SR} SPL={report.SPL:.3f} nDTW={report.nDTW:.3f} TL={report.TL:.1f}m")

L = sum(scene.edge_length(a, b) for a, b in zip(episode.reference_path, episode.reference_path[1:]))
print(f"optimal length L*={L:.1f}m (SPL = SR * L*/max(TL, L*))")
