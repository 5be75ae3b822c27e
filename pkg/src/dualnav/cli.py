"""Command-line interface.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.  All
subcommands are deterministic given their seeds; artifacts carry no wall
clock unless deterministic time is switched off.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .backends import CountingBackend, RemoteLLM
from .explib import ExperienceLibrary, load_library, quality, save_library
from .instructions import Instruction
from .params import load_checkpoint
from .reflect import RuleOracle
from .scene import SCENE_TYPES, generate_scene, load_scene, save_scene
from .styleconv import CONFIDENCE_THRESHOLD, RuleInverseBackend, convert
from .trainer import (
    TrainConfig,
    evaluate_suite,
    load_config,
    make_suite_episodes,
    make_suite_params,
    make_suite_scenes,
    run_baseline,
    save_report,
    train,
    write_report_csv,
)


class UsageError(Exception):
    """Bad invocation or bad flag combination; exits with status 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; route through our exit codes.
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dualnav", description="Dual-process navigation agent tools")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="generate deterministic scene files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--types", default=",".join(SCENE_TYPES), help="comma-separated scene types")
    p.add_argument("--n-nodes", type=int, default=12)
    p.add_argument("--out", default="scenes")
    p.set_defaults(func=_cmd_gen_scenes)

    p = sub.add_parser("train", help="train per-scene policies with a live library")
    p.add_argument("--config", default=None, help="TrainConfig JSON file")
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--backend", choices=["oracle", "remote"], default="oracle")
    p.add_argument("--backend-url", default=None)
    p.add_argument("--template-dir", default=None)
    p.add_argument("--deterministic-time", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="frozen evaluation of saved checkpoints")
    p.add_argument("--params", required=True, help="checkpoint file, or directory of <scene_id>.json")
    p.add_argument("--library", default=None)
    p.add_argument("--scenes", required=True, help="directory of scene files")
    p.add_argument("--config", default=None)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--workers", type=int, default=None, help="default: available parallelism")
    p.add_argument("--out", default=None, help="write per-episode metrics CSV here")
    p.add_argument("--report", default=None, help="write the full JSON report here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("compare-baseline", help="dual-process run vs threshold-switch baseline")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None, help="paired report JSON (default: stdout)")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("lib", help="inspect or maintain an experience library file")
    p.add_argument("action", choices=["inspect", "export", "cleanup"])
    p.add_argument("--library", required=True)
    p.add_argument("--now", type=float, default=None, help="default: newest entry timestamp")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_lib)

    p = sub.add_parser("convert-instr", help="convert styled instructions from stdin (style<TAB>text)")
    p.add_argument("--backend", choices=["oracle", "remote"], default="oracle")
    p.add_argument("--backend-url", default=None)
    p.add_argument("--threshold", type=float, default=CONFIDENCE_THRESHOLD)
    p.add_argument("--template-dir", default=None)
    p.set_defaults(func=_cmd_convert)

    return parser


def _load_config_arg(path: str | None) -> TrainConfig:
    return load_config(path) if path else TrainConfig()


def _print_summaries(report) -> None:
    for s in report.round_summaries():
        print(
            f"round {s.round_idx}: n={s.n} sr={s.mean_sr:.2f} spl={s.mean_spl:.2f} "
            f"ndtw={s.mean_ndtw:.2f} steps={s.mean_steps:.1f} loss={s.mean_loss:.3f}"
        )


def _cmd_gen_scenes(args) -> int:
    types = [t.strip() for t in args.types.split(",") if t.strip()]
    unknown = [t for t in types if t not in SCENE_TYPES]
    if not types or unknown:
        raise UsageError(f"unknown scene types {unknown}; choose from {', '.join(SCENE_TYPES)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        scene = generate_scene(
            seed=args.seed + i, scene_type=types[i % len(types)], n_nodes=args.n_nodes
        )
        path = out / f"{scene.scene_id}.json"
        save_scene(scene, str(path))
        print(path)
    return 0


def _cmd_train(args) -> int:
    config = _load_config_arg(args.config)
    if args.deterministic_time:
        config = replace(config, deterministic_time=True)
    backend = RemoteLLM(args.backend_url) if args.backend == "remote" else None
    report = train(config, args.out, backend=backend, template_dir=args.template_dir)
    _print_summaries(report)
    print(f"library entries: {report.lib_size}")
    print(f"artifacts: {args.out}")
    return 0


def _cmd_eval(args) -> int:
    config = _load_config_arg(args.config)
    scene_paths = sorted(Path(args.scenes).glob("*.json"))
    if not scene_paths:
        raise UsageError(f"no scene files under {args.scenes}")
    scenes = [load_scene(str(p), feature_dim=config.feature_dim) for p in scene_paths]
    params_path = Path(args.params)
    if params_path.is_dir():
        params_by_scene = {
            s.scene_id: load_checkpoint(str(params_path / f"{s.scene_id}.json")) for s in scenes
        }
    else:
        shared = load_checkpoint(str(params_path))
        params_by_scene = {s.scene_id: shared for s in scenes}
    library = load_library(args.library) if args.library else None
    workers = args.workers if args.workers else (os.cpu_count() or 1)
    report = evaluate_suite(
        scenes,
        make_suite_episodes(config, scenes),
        params_by_scene,
        library=library,
        rounds=args.rounds,
        live=False,
        max_steps=config.max_steps,
        workers=workers,
    )
    _print_summaries(report)
    if args.out:
        write_report_csv(report, args.out)
        print(f"metrics: {args.out}")
    if args.report:
        save_report(report, args.report)
        print(f"report: {args.report}")
    return 0


def _cmd_compare(args) -> int:
    config = _load_config_arg(args.config)
    scenes = make_suite_scenes(config)
    episodes = make_suite_episodes(config, scenes)
    oracle = RuleOracle({s.scene_id: s for s in scenes})

    reflections = CountingBackend(oracle)
    ours = evaluate_suite(
        scenes,
        episodes,
        make_suite_params(config, scenes),
        library=ExperienceLibrary(capacity=config.capacity),
        backend=reflections,
        rounds=config.rounds,
        live=True,
        lr=config.lr,
        max_steps=config.max_steps,
        deterministic_time=config.deterministic_time,
        cleanup_every=config.cleanup_every,
        eta_source=config.eta_source,
        updates_per_visit=config.updates_per_visit,
    )

    corrections = CountingBackend(oracle)
    baseline_params = make_suite_params(config, scenes)
    base = [
        run_baseline(baseline_params[s.scene_id], s, episodes[s.scene_id], corrections,
                     max_steps=config.max_steps)
        for s in scenes
    ]
    n_ours = len(ours.rows)
    doc = {
        "format": "dualnav-compare",
        "version": 1,
        "ours": {
            "episodes": n_ours,
            "reflections": reflections.calls,
            "reflections_per_episode": reflections.calls / n_ours,
            "in_loop_slow_calls": 0,
            "first_round": asdict(ours.summary(0)),
            "last_round": asdict(ours.summary(config.rounds - 1)),
        },
        "baseline": {
            "episodes": len(base),
            "in_loop_slow_calls": sum(r.slow_calls for r in base),
            "slow_calls_per_episode": sum(r.slow_calls for r in base) / len(base),
            "mean_sr": sum(r.outcome.SR for r in base) / len(base),
            "mean_steps": sum(r.n_steps for r in base) / len(base),
        },
    }
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"report: {args.out}")
    else:
        print(text)
    return 0


def _cmd_lib(args) -> int:
    lib = load_library(args.library)
    entries = lib.snapshot()
    now = args.now if args.now is not None else max((e.t_last for e in entries), default=0.0)
    if args.action == "inspect":
        print(f"{len(lib)} entries (capacity {lib.capacity})")
        for idx, e in enumerate(entries):
            print(
                f"  [{idx}] eta={e.eta_s:.2f} f={e.f} t_last={e.t_last:g} "
                f"Q={quality(e, now, lib.params):.3f} S_t={' '.join(sorted(e.S_t))}"
            )
        return 0
    if args.action == "export":
        if not args.out:
            raise UsageError("lib export needs --out FILE")
        import csv

        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["idx", "eta_s", "f", "t_last", "quality", "S_t", "C_s", "R_s", "T_n"])
            for idx, e in enumerate(entries):
                writer.writerow(
                    [idx, f"{e.eta_s:.6f}", e.f, f"{e.t_last:g}", f"{quality(e, now, lib.params):.6f}",
                     " ".join(sorted(e.S_t)), " ".join(sorted(e.C_s)),
                     " ".join(sorted(e.R_s)), " ".join(sorted(e.T_n))]
                )
        print(f"exported {len(lib)} entries to {args.out}")
        return 0
    removed = lib.cleanup(now=now)
    target = args.out or args.library
    save_library(lib, target)
    print(f"removed {removed} entries, {len(lib)} remain ({target})")
    return 0


def _cmd_convert(args) -> int:
    if args.backend == "remote":
        backend = RemoteLLM(args.backend_url)
    else:
        backend = RuleInverseBackend()
    for lineno, raw in enumerate(sys.stdin, 1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if "\t" not in line:
            raise ValueError(f"stdin line {lineno}: expected style<TAB>text")
        style, text = line.split("\t", 1)
        instr = Instruction(text=text, style=style)
        out = convert(backend, instr, confidence_threshold=args.threshold,
                      template_dir=args.template_dir)
        print(f"{out.style}\t{out.text}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        if args.verbose:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
