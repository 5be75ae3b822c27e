"""Training loop, evaluation suites, and the threshold-switch baseline.

Training is one SGD step per episode on a teacher-forced cross-entropy:
the teacher action at every visited node is the next hop of the shortest
path to the goal (or stop at the goal), scored against the policy's own
on-policy decisions.  Suites replay a fixed tour over every scene for
several rounds; in live mode each visit also reflects once and feeds the
shared experience library, so later tours see both better parameters and
better retrievals.

Library timestamps use logical time: the global episode counter, not the
wall clock, so runs are bit-reproducible.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .agent import DEFAULT_MAX_STEPS, EpisodeResult, run_episode
from .backends import BackendError, CompletionBackend
from .env import STOP, Episode, generate_episode, observe, step
from .explib import DEFAULT_CAPACITY, ExperienceLibrary, load_library, save_library
from .fusion import new_accum, setup_episode, step_backward, step_forward, setup_backward
from .instructions import STYLE_BASIC
from .metrics import MetricsReport, evaluate
from .params import (
    ModelDims,
    PolicyParams,
    apply_sgd,
    init_params,
    load_checkpoint,
    save_checkpoint,
    zero_grads,
)
from .policy import TopoMap, action_space, select_action, softmax, update_topomap
from .reflect import RuleOracle, build_correction_prompt, parse_correction, reflect
from .scene import SCENE_TYPES, SceneGraph, generate_scene, load_scene, save_scene, shortest_path


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training or evaluation run needs, JSON round-trippable."""

    seed: int = 0
    n_scenes: int = 20
    n_nodes: int = 12
    scene_types: tuple[str, ...] = SCENE_TYPES
    style: str = STYLE_BASIC
    rounds: int = 5
    lr: float = 1.0
    updates_per_visit: int = 10
    capacity: int = DEFAULT_CAPACITY
    max_steps: int = DEFAULT_MAX_STEPS
    min_hops: int = 2
    max_hops: int = 4
    cleanup_every: int = 10
    eta_source: str = "llm"
    deterministic_time: bool = True
    feature_dim: int = 64
    exp_dim: int = 48
    heads: int = 4

    def __post_init__(self):
        if self.n_scenes < 1 or self.n_nodes < 3 or self.rounds < 1:
            raise ValueError("n_scenes, n_nodes, and rounds must be positive")
        if not self.scene_types:
            raise ValueError("scene_types must not be empty")
        object.__setattr__(self, "scene_types", tuple(self.scene_types))

    def dims(self) -> ModelDims:
        return ModelDims(feature_dim=self.feature_dim, exp_dim=self.exp_dim, heads=self.heads)


def save_config(config: TrainConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path: str) -> TrainConfig:
    with open(path) as fh:
        doc = json.load(fh)
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**doc)


def make_suite_scenes(config: TrainConfig) -> list[SceneGraph]:
    """Deterministic scene set cycling over the configured scene types."""
    return [
        generate_scene(
            seed=config.seed + i,
            scene_type=config.scene_types[i % len(config.scene_types)],
            n_nodes=config.n_nodes,
            feature_dim=config.feature_dim,
        )
        for i in range(config.n_scenes)
    ]


def make_suite_episodes(config: TrainConfig, scenes: list[SceneGraph]) -> dict[str, Episode]:
    """One fixed episode per scene; seeds keyed by scene id, not list order."""
    order = {sid: i for i, sid in enumerate(sorted(s.scene_id for s in scenes))}
    return {
        s.scene_id: generate_episode(
            s,
            seed=config.seed + order[s.scene_id],
            style=config.style,
            min_hops=config.min_hops,
            max_hops=config.max_hops,
        )
        for s in scenes
    }


def make_suite_params(config: TrainConfig, scenes: list[SceneGraph]) -> dict[str, PolicyParams]:
    order = {sid: i for i, sid in enumerate(sorted(s.scene_id for s in scenes))}
    return {
        s.scene_id: init_params(config.seed + 1 + order[s.scene_id], dims=config.dims())
        for s in scenes
    }


def compute_pads(scenes: list[SceneGraph], m_retrieve: int) -> tuple[int, int, int]:
    """Shared pad sizes that bound every step of every scene in a suite."""
    l_pad = max(scene.degree(n) for scene in scenes for n in scene.nodes)
    g_pad = max(len(scene.nodes) for scene in scenes)
    return l_pad, g_pad, max(m_retrieve, 1)


def teacher_action(scene: SceneGraph, episode: Episode, current: str) -> str:
    """Correct action at a node: next hop toward the goal, stop at the goal."""
    if current == episode.goal:
        return STOP
    return shortest_path(scene, current, episode.goal)[1]


def _step_loss_terms(fwd, target_idx: int) -> tuple[float, np.ndarray]:
    v = fwd.valid_scores()
    m = float(v.max())
    lse = m + float(np.log(np.exp(v - m).sum()))
    return lse - float(v[target_idx]), softmax(v)


def episode_loss(scene: SceneGraph, episode: Episode, result: EpisodeResult) -> float:
    """Mean teacher-forced cross-entropy over the episode's decisions."""
    total = 0.0
    for sc in result.steps:
        t_idx = sc.actions.index(teacher_action(scene, episode, sc.current))
        loss, _ = _step_loss_terms(sc.fwd, t_idx)
        total += loss
    return total / len(result.steps)


def episode_loss_and_grads(
    params: PolicyParams,
    scene: SceneGraph,
    episode: Episode,
    result: EpisodeResult,
) -> tuple[float, dict[str, np.ndarray]]:
    """Backpropagate the teacher-forced loss through the cached forwards."""
    grads = zero_grads(params)
    accum = new_accum(params, result.setup)
    n = len(result.steps)
    total = 0.0
    for sc in result.steps:
        t_idx = sc.actions.index(teacher_action(scene, episode, sc.current))
        loss, p = _step_loss_terms(sc.fwd, t_idx)
        total += loss
        dvalid = p.copy()
        dvalid[t_idx] -= 1.0
        dvalid /= n
        dscores = np.zeros_like(sc.fwd.scores)
        dscores[np.flatnonzero(sc.fwd.action_mask)] = dvalid
        step_backward(params, result.setup, sc.fwd, dscores, grads, accum)
    setup_backward(params, result.setup, accum, grads)
    return total / n, grads


def train_iteration(
    params: PolicyParams,
    scene: SceneGraph,
    episode: Episode,
    lr: float,
    library: ExperienceLibrary | None = None,
    now: float = 0.0,
    max_steps: int = DEFAULT_MAX_STEPS,
    deterministic_time: bool = True,
    pads: tuple[int, int, int] | None = None,
    teacher_forced: bool = True,
) -> tuple[float, EpisodeResult]:
    """One rollout plus one SGD step; returns the pre-update loss.

    Teacher-forced rollouts execute the reference actions so every update
    sees the goal-state stop decision; on-policy rollouts rarely reach the
    goal early in training, which starves the stop head and diverges.
    """
    l_pad, g_pad, m_pad = pads if pads else (None, None, None)
    override = (lambda cur: teacher_action(scene, episode, cur)) if teacher_forced else None
    result = run_episode(
        params,
        scene,
        episode,
        library=library,
        max_steps=max_steps,
        now=now,
        deterministic_time=deterministic_time,
        l_pad=l_pad,
        g_pad=g_pad,
        m_pad=m_pad,
        action_override=override,
    )
    loss, grads = episode_loss_and_grads(params, scene, episode, result)
    apply_sgd(params, grads, lr)
    return loss, result


def run_training(
    params: PolicyParams,
    scene: SceneGraph,
    episode: Episode,
    iterations: int,
    lr: float,
    library: ExperienceLibrary | None = None,
    backend: CompletionBackend | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
    eta_source: str = "llm",
    cleanup_every: int = 10,
    template_dir: str | None = None,
) -> list[float]:
    """Repeated training on one episode; the per-iteration loss trace."""
    losses = []
    for it in range(iterations):
        loss, result = train_iteration(
            params, scene, episode, lr, library=library, now=float(it), max_steps=max_steps
        )
        if library is not None and backend is not None:
            exp = reflect(backend, result.log, scene, now=float(it), eta_source=eta_source,
                          template_dir=template_dir)
            library.upsert(exp, now=float(it))
            if cleanup_every and (it + 1) % cleanup_every == 0:
                library.cleanup(now=float(it))
        losses.append(loss)
    return losses


@dataclass(frozen=True)
class EpisodeRow:
    """One scene visit in a suite run."""

    round_idx: int
    scene_id: str
    episode_id: str
    TL: float
    NE: float
    SR: int
    SPL: float
    nDTW: float
    n_steps: int
    loss: float
    lib_event: str
    n_retrieved: int
    setup_macs: int
    step_macs: tuple[int, ...]


@dataclass(frozen=True)
class RoundSummary:
    round_idx: int
    n: int
    mean_sr: float
    mean_spl: float
    mean_ndtw: float
    mean_steps: float
    mean_loss: float


@dataclass
class SuiteReport:
    rows: list[EpisodeRow]
    lib_size: int = 0

    def summary(self, round_idx: int) -> RoundSummary:
        rows = [r for r in self.rows if r.round_idx == round_idx]
        if not rows:
            raise ValueError(f"no rows for round {round_idx}")
        n = len(rows)
        return RoundSummary(
            round_idx=round_idx,
            n=n,
            mean_sr=sum(r.SR for r in rows) / n,
            mean_spl=sum(r.SPL for r in rows) / n,
            mean_ndtw=sum(r.nDTW for r in rows) / n,
            mean_steps=sum(r.n_steps for r in rows) / n,
            mean_loss=sum(r.loss for r in rows) / n,
        )

    def round_summaries(self) -> list[RoundSummary]:
        return [self.summary(t) for t in sorted({r.round_idx for r in self.rows})]

    def step_mac_values(self, min_round: int = 0) -> list[int]:
        vals = {m for r in self.rows if r.round_idx >= min_round for m in r.step_macs}
        return sorted(vals)


def save_report(report: SuiteReport, path: str) -> None:
    doc = {
        "format": "dualnav-report",
        "version": 1,
        "lib_size": report.lib_size,
        "rounds": [asdict(s) for s in report.round_summaries()],
        "rows": [asdict(r) for r in report.rows],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_report_csv(report: SuiteReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["round", "scene_id", "episode_id", "TL", "NE", "SR", "SPL", "nDTW",
             "steps", "loss", "lib_event", "retrieved", "setup_macs", "mean_step_macs"]
        )
        for r in report.rows:
            mean_macs = sum(r.step_macs) / len(r.step_macs) if r.step_macs else 0.0
            writer.writerow(
                [r.round_idx, r.scene_id, r.episode_id, f"{r.TL:.6f}", f"{r.NE:.6f}",
                 r.SR, f"{r.SPL:.6f}", f"{r.nDTW:.6f}", r.n_steps, f"{r.loss:.6f}",
                 r.lib_event, r.n_retrieved, r.setup_macs, f"{mean_macs:.1f}"]
            )


def _make_row(round_idx: int, scene: SceneGraph, result: EpisodeResult, loss: float, event: str) -> EpisodeRow:
    out = result.outcome
    return EpisodeRow(
        round_idx=round_idx,
        scene_id=scene.scene_id,
        episode_id=out.episode_id,
        TL=out.TL,
        NE=out.NE,
        SR=out.SR,
        SPL=out.SPL,
        nDTW=out.nDTW,
        n_steps=len(result.steps),
        loss=loss,
        lib_event=event,
        n_retrieved=len(result.retrieved),
        setup_macs=result.setup_macs,
        step_macs=tuple(result.step_macs),
    )


def evaluate_suite(
    scenes: list[SceneGraph],
    episodes: dict[str, Episode],
    params_by_scene: dict[str, PolicyParams],
    library: ExperienceLibrary | None = None,
    backend: CompletionBackend | None = None,
    rounds: int = 5,
    live: bool = False,
    lr: float = 0.5,
    max_steps: int = DEFAULT_MAX_STEPS,
    deterministic_time: bool = True,
    cleanup_every: int = 10,
    eta_source: str = "llm",
    workers: int | None = None,
    template_dir: str | None = None,
    updates_per_visit: int = 10,
) -> SuiteReport:
    """Tour every scene for several rounds.

    Live mode measures an on-policy rollout, reflects on it once, then
    trains that scene's parameters on teacher-forced rollouts; frozen mode
    only measures, optionally in parallel.  Round t is tour t: every scene
    is visited once per round, in order, under shared pad sizes so per-step
    compute is identical across scenes and rounds.  Reported metrics and
    losses always describe the measured rollout before that visit's
    updates.
    """
    if not scenes:
        raise ValueError("evaluate_suite needs at least one scene")
    if live and (library is None or backend is None):
        raise ValueError("live evaluation needs a library and a reflection backend")
    for s in scenes:
        if s.scene_id not in episodes:
            raise ValueError(f"no episode for scene {s.scene_id}")
        if s.scene_id not in params_by_scene:
            raise ValueError(f"no parameters for scene {s.scene_id}")
    m_retrieve = library.params.m_retrieve if library is not None else 1
    pads = compute_pads(scenes, m_retrieve)
    l_pad, g_pad, m_pad = pads

    def run_one(scene: SceneGraph, it: int) -> EpisodeResult:
        return run_episode(
            params_by_scene[scene.scene_id],
            scene,
            episodes[scene.scene_id],
            library=library,
            max_steps=max_steps,
            now=float(it),
            deterministic_time=deterministic_time,
            l_pad=l_pad,
            g_pad=g_pad,
            m_pad=m_pad,
        )

    rows: list[EpisodeRow] = []
    # Logical time continues the library's clock so quality never sees a
    # future entry when evaluating artifacts from an earlier run.
    it = 0
    if library is not None:
        newest = max((e.t_last for e in library.snapshot()), default=-1.0)
        it = int(newest) + 1
    for round_idx in range(rounds):
        if live:
            for scene in scenes:
                result = run_one(scene, it)
                episode = episodes[scene.scene_id]
                loss = episode_loss(scene, episode, result)
                experience = reflect(backend, result.log, scene, now=float(it),
                                     eta_source=eta_source, template_dir=template_dir)
                event = library.upsert(experience, now=float(it))
                # Train after the upsert so demonstrations run the same
                # fused pipeline later tours will be measured on.
                for _ in range(updates_per_visit):
                    train_iteration(
                        params_by_scene[scene.scene_id], scene, episode, lr,
                        library=library, now=float(it), max_steps=max_steps,
                        deterministic_time=deterministic_time, pads=pads,
                    )
                if cleanup_every and (it + 1) % cleanup_every == 0:
                    library.cleanup(now=float(it))
                rows.append(_make_row(round_idx, scene, result, loss, event))
                it += 1
        else:
            jobs = [(scene, it + i) for i, scene in enumerate(scenes)]
            if workers and workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(lambda job: run_one(*job), jobs))
            else:
                results = [run_one(*job) for job in jobs]
            for scene, result in zip(scenes, results):
                loss = episode_loss(scene, episodes[scene.scene_id], result)
                rows.append(_make_row(round_idx, scene, result, loss, "frozen"))
            it += len(scenes)
    return SuiteReport(rows=rows, lib_size=len(library) if library is not None else 0)


def train(
    config: TrainConfig,
    out_dir: str,
    scenes: list[SceneGraph] | None = None,
    backend: CompletionBackend | None = None,
    template_dir: str | None = None,
) -> SuiteReport:
    """Live suite run plus artifacts: scenes, checkpoints, library, report."""
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    scenes = scenes if scenes is not None else make_suite_scenes(config)
    episodes = make_suite_episodes(config, scenes)
    params_by_scene = make_suite_params(config, scenes)
    library = ExperienceLibrary(capacity=config.capacity)
    if backend is None:
        backend = RuleOracle({s.scene_id: s for s in scenes})
    report = evaluate_suite(
        scenes,
        episodes,
        params_by_scene,
        library=library,
        backend=backend,
        rounds=config.rounds,
        live=True,
        lr=config.lr,
        max_steps=config.max_steps,
        deterministic_time=config.deterministic_time,
        cleanup_every=config.cleanup_every,
        eta_source=config.eta_source,
        updates_per_visit=config.updates_per_visit,
        template_dir=template_dir,
    )
    save_config(config, str(out / "config.json"))
    for scene in scenes:
        save_scene(scene, str(out / "scenes" / f"{scene.scene_id}.json"))
        save_checkpoint(params_by_scene[scene.scene_id], str(out / "checkpoints" / f"{scene.scene_id}.json"))
    save_library(library, str(out / "library.jsonl"))
    save_report(report, str(out / "report.json"))
    write_report_csv(report, str(out / "metrics.csv"))
    return report


@dataclass
class RunArtifacts:
    config: TrainConfig
    scenes: list[SceneGraph]
    episodes: dict[str, Episode]
    params_by_scene: dict[str, PolicyParams]
    library: ExperienceLibrary


def load_run(out_dir: str) -> RunArtifacts:
    """Load a training run's artifacts for frozen evaluation."""
    out = Path(out_dir)
    config = load_config(str(out / "config.json"))
    scene_paths = sorted((out / "scenes").glob("*.json"))
    if not scene_paths:
        raise FileNotFoundError(f"no scenes under {out / 'scenes'}")
    scenes = [load_scene(str(p), feature_dim=config.feature_dim) for p in scene_paths]
    params_by_scene = {
        s.scene_id: load_checkpoint(str(out / "checkpoints" / f"{s.scene_id}.json"))
        for s in scenes
    }
    library = load_library(str(out / "library.jsonl"))
    return RunArtifacts(
        config=config,
        scenes=scenes,
        episodes=make_suite_episodes(config, scenes),
        params_by_scene=params_by_scene,
        library=library,
    )


def capacity_sweep(
    config: TrainConfig,
    capacities: list[int],
    scenes: list[SceneGraph] | None = None,
) -> dict[int, SuiteReport]:
    """Re-run the same live suite under different library capacities."""
    scenes = scenes if scenes is not None else make_suite_scenes(config)
    episodes = make_suite_episodes(config, scenes)
    backend = RuleOracle({s.scene_id: s for s in scenes})
    out: dict[int, SuiteReport] = {}
    for cap in capacities:
        out[cap] = evaluate_suite(
            scenes,
            episodes,
            make_suite_params(config, scenes),
            library=ExperienceLibrary(capacity=cap),
            backend=backend,
            rounds=config.rounds,
            live=True,
            lr=config.lr,
            max_steps=config.max_steps,
            deterministic_time=config.deterministic_time,
            cleanup_every=config.cleanup_every,
            eta_source=config.eta_source,
            updates_per_visit=config.updates_per_visit,
        )
    return out


@dataclass(frozen=True)
class BaselineResult:
    """Outcome of a threshold-switch run: fast policy, slow interventions."""

    trajectory: tuple[str, ...]
    outcome: MetricsReport
    slow_calls: int
    overrides: tuple[int, ...]
    n_steps: int


def run_baseline(
    params: PolicyParams,
    scene: SceneGraph,
    episode: Episode,
    backend: CompletionBackend,
    max_steps: int = DEFAULT_MAX_STEPS,
    dist_threshold: float = 0.8,
    patience: int = 2,
) -> BaselineResult:
    """Threshold-switch baseline: no library, slow reasoning in the loop.

    The fast policy scores raw features every step.  Whenever the agent
    drifts more than ``dist_threshold`` meters off the reference path and
    has gone more than ``patience`` consecutive steps without reducing its
    distance to the goal, a slow correction is requested and, when it
    parses to a legal action, overrides the fast choice.
    """
    setup = setup_episode(params, episode.instruction, [])
    topo = TopoMap.empty()
    current = episode.start
    trajectory = [current]
    best = scene.geodesic(current, episode.goal)
    stall = 0
    slow_calls = 0
    overrides: list[int] = []
    n_steps = 0
    for j_seq in range(1, max_steps + 1):
        obs = observe(scene, current)
        topo = update_topomap(topo, obs, current_feature=scene.nodes[current].feature)
        f_v = np.stack([c.feature for c in obs.candidates])
        extra = sorted(set(topo.frontier) - set(topo.local_ids))
        if extra:
            glob = np.stack([topo.features[g] for g in extra])
        else:
            glob = np.zeros((0, params.dims.feature_dim))
        fwd = step_forward(params, setup, f_v, glob)
        actions = action_space(topo)
        chosen = select_action(fwd.valid_scores(), actions)
        n_steps = j_seq

        off_reference = min(scene.geodesic(current, r) for r in episode.reference_path)
        if off_reference > dist_threshold and stall > patience:
            slow_calls += 1
            corrective = None
            try:
                completion = backend.complete(
                    build_correction_prompt(scene.scene_id, current, episode.goal)
                )
                corrective = parse_correction(completion)
            except BackendError:
                pass
            if corrective is not None and corrective in actions:
                chosen = corrective
                overrides.append(j_seq)
                stall = 0

        result = step(scene, current, chosen, visited=set(topo.visited))
        trajectory.extend(result.path[1:])
        current = result.node
        if result.stopped:
            break
        dist = scene.geodesic(current, episode.goal)
        if dist < best - 1e-9:
            best = dist
            stall = 0
        else:
            stall += 1
    outcome = evaluate(scene, episode, trajectory)
    return BaselineResult(
        trajectory=tuple(trajectory),
        outcome=outcome,
        slow_calls=slow_calls,
        overrides=tuple(overrides),
        n_steps=n_steps,
    )


__all__ = [
    "BaselineResult",
    "EpisodeRow",
    "RoundSummary",
    "RunArtifacts",
    "SuiteReport",
    "TrainConfig",
    "capacity_sweep",
    "compute_pads",
    "episode_loss",
    "episode_loss_and_grads",
    "evaluate_suite",
    "load_config",
    "load_run",
    "make_suite_episodes",
    "make_suite_params",
    "make_suite_scenes",
    "run_baseline",
    "run_training",
    "save_config",
    "save_report",
    "teacher_action",
    "train",
    "train_iteration",
    "write_report_csv",
]
