"""Episode execution: the fast decision loop with optional experience fusion."""

from __future__ import annotations

import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .env import Episode, observe, step
from .explib import Experience, ExperienceLibrary
from .fusion import EpisodeSetup, StepForward, setup_episode, step_forward
from .metrics import MetricsReport, evaluate
from .params import PolicyParams
from .policy import (
    EpisodeLog,
    TopoMap,
    action_space,
    make_record,
    select_action,
    update_topomap,
)
from .scene import SceneGraph

DEFAULT_MAX_STEPS = 15


@dataclass
class StepContext:
    """One executed decision, kept around for training."""

    fwd: StepForward
    actions: list[str]
    current: str
    chosen: str


@dataclass
class EpisodeResult:
    trajectory: list[str]
    log: EpisodeLog
    outcome: MetricsReport
    setup: EpisodeSetup
    steps: list[StepContext] = field(default_factory=list)
    stopped: bool = False
    retrieved: list[Experience] = field(default_factory=list)

    @property
    def step_macs(self) -> list[int]:
        return [ctx.fwd.macs for ctx in self.steps]

    @property
    def setup_macs(self) -> int:
        return self.setup.macs


def run_episode(
    params: PolicyParams,
    scene: SceneGraph,
    episode: Episode,
    library: ExperienceLibrary | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
    now: float = 0.0,
    deterministic_time: bool = False,
    l_pad: int | None = None,
    g_pad: int | None = None,
    m_pad: int | None = None,
    action_override: Callable[[str], str] | None = None,
) -> EpisodeResult:
    """Run one episode with the fast policy.

    When a library is given, relevant experiences are retrieved once at
    the first step and fused into every decision; with no library (or no
    hits) the policy scores raw features.  Parameters are read-only here.

    ``action_override`` maps the current node to the action actually
    executed (scores are still computed and cached), which is how the
    trainer rolls out teacher demonstrations.

    Pads fix the compute shape of every decision step: candidate and
    frontier blocks are zero-padded to ``l_pad``/``g_pad`` rows and the
    experience axis to ``m_pad``, so the per-step multiply-accumulate
    count does not depend on what the agent happens to see.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    retrieved: list[Experience] = []
    if library is not None:
        from .reflect import make_retrieval_key  # local import; reflect imports policy types

        key = make_retrieval_key(scene, episode.start)
        retrieved = library.retrieve(key, now)
    setup = setup_episode(params, episode.instruction, retrieved, m_pad=m_pad)

    topo = TopoMap.empty()
    trajectory = [episode.start]
    current = episode.start
    records = []
    steps: list[StepContext] = []
    stopped = False
    prev: str | None = None
    for j_seq in range(1, max_steps + 1):
        obs = observe(scene, current)
        topo = update_topomap(topo, obs, current_feature=scene.nodes[current].feature)
        f_v = np.stack([c.feature for c in obs.candidates])
        extra = sorted(set(topo.frontier) - set(topo.local_ids))
        if extra:
            glob = np.stack([topo.features[g] for g in extra])
        else:
            glob = np.zeros((0, params.dims.feature_dim))
        fwd = step_forward(params, setup, f_v, glob, l_pad=l_pad, g_pad=g_pad)
        actions = action_space(topo)
        scores = fwd.valid_scores()
        chosen = action_override(current) if action_override else select_action(scores, actions)
        t_j = 0.0 if deterministic_time else time.time()
        records.append(
            make_record(scene, episode, obs, chosen, scores, j_seq, t_j, prev_node=prev)
        )
        steps.append(StepContext(fwd=fwd, actions=actions, current=current, chosen=chosen))
        prev = current
        result = step(scene, current, chosen, visited=set(topo.visited))
        trajectory.extend(result.path[1:])
        current = result.node
        if result.stopped:
            stopped = True
            break

    outcome = evaluate(scene, episode, trajectory)
    log = EpisodeLog(episode_id=episode.episode_id, records=records, outcome=outcome)
    return EpisodeResult(
        trajectory=trajectory,
        log=log,
        outcome=outcome,
        setup=setup,
        steps=steps,
        stopped=stopped,
        retrieved=retrieved,
    )


__all__ = ["DEFAULT_MAX_STEPS", "EpisodeResult", "StepContext", "run_episode"]
