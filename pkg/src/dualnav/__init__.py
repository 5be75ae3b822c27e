"""Dual-process navigation on synthetic scene graphs.

A fast learned policy makes every step decision; a slow reflection pass
runs once per episode and distills what happened into a bounded library
of reusable experiences, which attention folds back into later decisions.
"""

from .agent import EpisodeResult, run_episode
from .backends import BackendError, CountingBackend, RemoteLLM
from .env import Episode, generate_episode, observe, step
from .explib import (
    Experience,
    ExperienceLibrary,
    LibraryParams,
    RetrievalKey,
    load_library,
    merge,
    quality,
    save_library,
    similarity,
)
from .fusion import attend, encode_experience, fuse
from .instructions import Instruction, tokenize
from .metrics import MetricsReport, evaluate, ndtw
from .params import ModelDims, PolicyParams, init_params, load_checkpoint, save_checkpoint
from .reflect import RuleOracle, build_context, build_prompt, make_retrieval_key, reflect
from .scene import SceneGraph, generate_scene, load_scene, save_scene, shortest_path
from .styleconv import RuleInverseBackend, apply_style, convert, invert_style
from .trainer import (
    BaselineResult,
    SuiteReport,
    TrainConfig,
    capacity_sweep,
    evaluate_suite,
    run_baseline,
    run_training,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "BaselineResult",
    "CountingBackend",
    "Episode",
    "EpisodeResult",
    "Experience",
    "ExperienceLibrary",
    "Instruction",
    "LibraryParams",
    "MetricsReport",
    "ModelDims",
    "PolicyParams",
    "RemoteLLM",
    "RetrievalKey",
    "RuleInverseBackend",
    "RuleOracle",
    "SceneGraph",
    "SuiteReport",
    "TrainConfig",
    "apply_style",
    "attend",
    "build_context",
    "build_prompt",
    "capacity_sweep",
    "convert",
    "encode_experience",
    "evaluate",
    "evaluate_suite",
    "fuse",
    "generate_episode",
    "generate_scene",
    "init_params",
    "invert_style",
    "load_checkpoint",
    "load_library",
    "load_scene",
    "make_retrieval_key",
    "merge",
    "ndtw",
    "observe",
    "quality",
    "reflect",
    "run_baseline",
    "run_episode",
    "run_training",
    "save_checkpoint",
    "save_library",
    "save_scene",
    "shortest_path",
    "similarity",
    "step",
    "tokenize",
    "train",
    "__version__",
]
