"""CLI subcommands, exit codes, and artifact wiring."""

import io
import json
import subprocess
import sys

import pytest

from dualnav.cli import main
from dualnav.explib import ExperienceLibrary, save_library
from dualnav.instructions import Instruction
from dualnav.styleconv import apply_style
from dualnav.trainer import TrainConfig, save_config

from conftest import make_exp

SMOKE = TrainConfig(seed=11, n_scenes=2, n_nodes=6, rounds=2, updates_per_visit=1)


def run_cli(*argv):
    return main(list(argv))


# --- exit codes and parsing ---------------------------------------------------

def test_unknown_flag_is_usage_error(capsys):
    assert run_cli("gen-scenes", "--frobnicate") == 1
    assert "usage error" in capsys.readouterr().err


def test_missing_subcommand_is_usage_error(capsys):
    assert run_cli() == 1


def test_runtime_failure_exits_two(capsys, tmp_path):
    assert run_cli("lib", "inspect", "--library", str(tmp_path / "absent.jsonl")) == 2
    assert "error:" in capsys.readouterr().err


# --- gen-scenes ---------------------------------------------------------------

def test_gen_scenes_deterministic_bytes(tmp_path, capsys):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run_cli("gen-scenes", "--seed", "4", "--count", "3", "--types", "mall,office",
                   "--n-nodes", "7", "--out", str(out_a)) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert len(printed) == 3
    assert run_cli("gen-scenes", "--seed", "4", "--count", "3", "--types", "mall,office",
                   "--n-nodes", "7", "--out", str(out_b)) == 0
    files_a = sorted(p.name for p in out_a.glob("*.json"))
    files_b = sorted(p.name for p in out_b.glob("*.json"))
    assert files_a == files_b and len(files_a) == 3
    for name in files_a:
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_gen_scenes_rejects_unknown_type(capsys):
    assert run_cli("gen-scenes", "--types", "dungeon") == 1
    assert "dungeon" in capsys.readouterr().err


# --- lib ------------------------------------------------------------------------

def small_library(tmp_path):
    lib = ExperienceLibrary(
        capacity=4,
        entries=[
            make_exp(S_t=("office",), C_s=("kitchen",), eta=0.9, f=3, t_last=2.0),
            make_exp(S_t=("mall",), C_s=("atrium",), eta=0.1, f=1, t_last=0.0),
        ],
    )
    path = tmp_path / "lib.jsonl"
    save_library(lib, str(path))
    return path


def test_lib_inspect_empty(tmp_path, capsys):
    path = tmp_path / "empty.jsonl"
    save_library(ExperienceLibrary(capacity=7), str(path))
    assert run_cli("lib", "inspect", "--library", str(path)) == 0
    out = capsys.readouterr().out
    assert "0 entries (capacity 7)" in out


def test_lib_inspect_lists_entries(tmp_path, capsys):
    path = small_library(tmp_path)
    assert run_cli("lib", "inspect", "--library", str(path)) == 0
    out = capsys.readouterr().out
    assert "2 entries (capacity 4)" in out
    assert "eta=0.90" in out and "S_t=office" in out


def test_lib_export_silent_without_out(tmp_path, capsys):
    path = small_library(tmp_path)
    assert run_cli("lib", "export", "--library", str(path)) == 1
    assert "needs --out" in capsys.readouterr().err


def test_lib_export_csv(tmp_path, capsys):
    path = small_library(tmp_path)
    out = tmp_path / "entries.csv"
    assert run_cli("lib", "export", "--library", str(path), "--out", str(out)) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "idx,eta_s,f,t_last,quality,S_t,C_s,R_s,T_n"
    assert len(lines) == 3


def test_lib_cleanup_drops_weak_entries(tmp_path, capsys):
    path = small_library(tmp_path)
    target = tmp_path / "cleaned.jsonl"
    # At now=2 the eta=0.1 entry scores under tau_quality and is dropped.
    assert run_cli("lib", "cleanup", "--library", str(path), "--out", str(target)) == 0
    out = capsys.readouterr().out
    assert "removed 1 entries, 1 remain" in out
    assert target.exists()


# --- convert-instr ----------------------------------------------------------------

def feed_stdin(monkeypatch, text):
    monkeypatch.setattr(sys, "stdin", io.StringIO(text))


def test_convert_instr_round_trips(monkeypatch, capsys):
    basic = Instruction(text="go to the office with the golden clock", style="basic")
    styled = apply_style(basic, "user:pirate", seed=1)
    feed_stdin(monkeypatch, f"{styled.style}\t{styled.text}\n\nbasic\tgo on\n")
    assert run_cli("convert-instr") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == f"basic\t{basic.text}"
    assert lines[1] == "basic\tgo on"  # untouched passthrough


def test_convert_instr_rejects_malformed_line(monkeypatch, capsys):
    feed_stdin(monkeypatch, "no tab here\n")
    assert run_cli("convert-instr") == 2
    assert "style<TAB>text" in capsys.readouterr().err


# --- train / eval / compare-baseline ----------------------------------------------

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-train")
    config_path = root / "config.json"
    save_config(SMOKE, str(config_path))
    out = root / "run"
    code = main(["train", "--config", str(config_path), "--out", str(out)])
    assert code == 0
    return config_path, out


def test_train_writes_artifacts(trained, capsys):
    _, out = trained
    for name in ("config.json", "library.jsonl", "report.json", "metrics.csv"):
        assert (out / name).exists(), name
    assert sorted(p.name for p in (out / "scenes").glob("*.json"))
    assert sorted(p.name for p in (out / "checkpoints").glob("*.json"))


def test_eval_runs_on_artifacts(trained, tmp_path, capsys):
    config_path, out = trained
    csv_path = tmp_path / "metrics.csv"
    report_path = tmp_path / "report.json"
    code = run_cli(
        "eval",
        "--params", str(out / "checkpoints"),
        "--scenes", str(out / "scenes"),
        "--library", str(out / "library.jsonl"),
        "--config", str(config_path),
        "--out", str(csv_path),
        "--report", str(report_path),
    )
    assert code == 0
    printed = capsys.readouterr().out
    assert "round 0:" in printed
    assert csv_path.read_text().startswith("round,scene_id,episode_id")
    assert json.loads(report_path.read_text())["format"] == "dualnav-report"


def test_eval_needs_scene_files(tmp_path, capsys):
    assert run_cli("eval", "--params", "x", "--scenes", str(tmp_path)) == 1
    assert "no scene files" in capsys.readouterr().err


def test_compare_baseline_reports_both_modes(tmp_path, capsys):
    config_path = tmp_path / "config.json"
    save_config(SMOKE, str(config_path))
    out = tmp_path / "compare.json"
    assert run_cli("compare-baseline", "--config", str(config_path), "--out", str(out)) == 0
    doc = json.loads(out.read_text())
    assert doc["format"] == "dualnav-compare"
    assert doc["ours"]["reflections_per_episode"] == 1.0
    assert doc["ours"]["in_loop_slow_calls"] == 0
    assert "in_loop_slow_calls" in doc["baseline"]
    assert "slow_calls_per_episode" in doc["baseline"]


def test_console_script_is_wired():
    proc = subprocess.run(
        ["dualnav", "gen-scenes", "--count", "0", "--out", "/tmp/dualnav-smoke"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
