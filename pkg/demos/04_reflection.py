"""
Slow reasoning: from episode log to stored experience
=====================================================

Reflection runs once per finished episode.  The log is condensed into a
prompt, a text-completion backend answers in a fenced block, and the parsed
experience lands in the library.  The RuleOracle backend stands in for an
LLM: it mines the scene graph itself and always answers in contract form.
"""

from dualnav.agent import run_episode
from dualnav.env import generate_episode
from dualnav.explib import ExperienceLibrary
from dualnav.params import ModelDims, init_params
from dualnav.reflect import RuleOracle, build_context, build_prompt, make_retrieval_key, reflect
from dualnav.scene import generate_scene

scene = generate_scene(seed=5, scene_type="mall", n_nodes=9)
episode = generate_episode(scene, seed=2, min_hops=2, max_hops=3)
params = init_params(1, ModelDims(feature_dim=64, exp_dim=48, heads=4))
result = run_episode(params, scene, episode, max_steps=6)
print(f"episode {result.log.episode_id}: SR={result.outcome.SR}, "
      f"{len(result.log.records)} decisions to analyze")

# The context distills the log: outcome, loop nodes, backtracks, and the
# final wrong-stop flag feed the prompt's NAVIGATION DATA section.
ctx = build_context(result.log, scene)
print(f"loops={list(ctx.loops)} backtracks={ctx.backtracks} "
      f"wrong_stop={ctx.wrong_stop}")

prompt = build_prompt(ctx)
head = "\n".join(prompt.splitlines()[:6])
print(f"\nprompt opens with:\n{head}\n...")

backend = RuleOracle({scene.scene_id: scene})
completion = backend.complete(prompt)
print(f"\noracle answer:\n{completion}")

experience = reflect(backend, result.log, scene, now=0.0)
print(f"parsed experience: eta={experience.eta_s} f={experience.f}")
print(f"  S_t={sorted(experience.S_t)}")
print(f"  C_s={sorted(experience.C_s)}")
print(f"  R_s={sorted(experience.R_s)}")
print(f"  T_n={sorted(experience.T_n)}")

# Stored once, the experience is retrievable by scene context at the start
# of the next visit.
lib = ExperienceLibrary()
lib.upsert(experience, now=0.0)
key = make_retrieval_key(scene, episode.start)
hits = lib.retrieve(key, now=1.0)
print(f"\nnext visit retrieves {len(hits)} experience(s) for {scene.scene_id}")
