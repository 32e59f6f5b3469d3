import csv
import json

import pytest

from jobshop_rl.cli import main, read_overrides, ConfigError
from jobshop_rl.instance import generate_random, load_bundled, parse_standard, serialize_standard, validate
from jobshop_rl.manifest import RunManifest
from jobshop_rl.report import ComparisonRow, format_gap
from jobshop_rl.rules import brute_force_optimum

from conftest import WORKED_TEXT


@pytest.fixture
def worked_file(tmp_path):
    p = tmp_path / "worked.txt"
    p.write_text(WORKED_TEXT)
    return p


def test_parse_ok(worked_file, capsys):
    assert main(["parse", str(worked_file)]) == 0
    assert "2x3" in capsys.readouterr().out


def test_parse_corrupt(tmp_path, capsys):
    p = tmp_path / "bad.txt"
    p.write_text("2 3\n3 10 0 27 1 14\n1 20 2 12 0 12\n")
    assert main(["parse", str(p)]) == 1
    assert "machine id out of range" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["parse", str(tmp_path / "none.txt")]) == 1


def test_solve_spt_on_worked(worked_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["solve", str(worked_file), "--rule", "spt", "--out", str(out), "--trace"]) == 0
    assert "makespan: 51" in capsys.readouterr().out
    sched = json.loads((out / "schedule.json").read_text())
    assert sched["makespan"] == 51
    trace = [json.loads(line) for line in (out / "trace.jsonl").read_text().splitlines()]
    assert [t["clock"] for t in trace] == [0, 0, 10, 20, 37, 37]
    assert set(trace[0]) == {"clock", "mask", "action", "reward"}
    man = RunManifest.read(out)
    assert man.result["makespan"] == 51 and man.subcommand == "solve"


def test_solve_corrupt_writes_nothing(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("2 3\n2 10 0 27\n")
    out = tmp_path / "run"
    assert main(["solve", str(p), "--rule", "spt", "--out", str(out)]) == 1
    assert not (out / "schedule.json").exists()


def test_solve_needs_one_method(worked_file, tmp_path):
    assert main(["solve", str(worked_file), "--out", str(tmp_path)]) == 2


def test_taillard_format_flag(tmp_path, capsys):
    p = tmp_path / "one.dat"
    p.write_text("1 1\n7\n1\n")
    assert main(["solve", str(p), "--format", "taillard", "--rule", "spt", "--out", str(tmp_path / "o")]) == 0
    assert "makespan: 7" in capsys.readouterr().out


def test_unknown_config_key(worked_file, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("bogus = 3\n")
    assert main(["train", str(worked_file), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_config_overrides(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("trainer.hidden = 32\nclip_epsilon = 0.1\nosm.enabled = off\n# comment\nenv.rollout_budget = none\n")
    over = read_overrides(cfg)
    assert over["trainer"] == {"hidden": 32, "clip_epsilon": 0.1}
    assert over["osm"] == {"enabled": False}
    assert over["env"] == {"rollout_budget": None}
    cfg.write_text("nosection.x = 1\n")
    with pytest.raises(ConfigError):
        read_overrides(cfg)


def test_invalid_config_value(worked_file, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("clip_epsilon = 3\n")
    assert main(["train", str(worked_file), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_train_small_reaches_optimum(tmp_path):
    inst = generate_random(2, 2, (1, 9), seed=3)
    p = tmp_path / "tiny.txt"
    p.write_text(serialize_standard(inst))
    cfg = tmp_path / "c.cfg"
    cfg.write_text("hidden = 32\n")
    out = tmp_path / "train"
    assert main(["train", str(p), "--osm", "off", "--steps", "3000", "--config", str(cfg), "--out", str(out)]) == 0
    for name in ("checkpoint.npz", "train_log.csv", "best_schedule.json", "manifest.json"):
        assert (out / name).exists()
    rows = list(csv.DictReader((out / "train_log.csv").open()))
    best = min(int(r["makespan"]) for r in rows if r["makespan"])
    assert best == brute_force_optimum(inst)[0]


def test_train_records_tau(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("hidden = 16\nn_steps = 64\n")
    out = tmp_path / "t"
    assert main(["train", "ta01", "--osm-tau", "0.00667", "--steps", "64", "--config", str(cfg), "--out", str(out)]) == 0
    man = RunManifest.read(out)
    assert man.config["osm"]["tau"] == 0.00667 and man.config["osm"]["enabled"] is True
    assert man.result["osm_tau"] == 0.00667


def test_train_resume_matches_straight_run(tmp_path):
    inst = generate_random(3, 3, (1, 9), seed=5)
    p = tmp_path / "i.txt"
    p.write_text(serialize_standard(inst))
    cfg = tmp_path / "c.cfg"
    cfg.write_text("hidden = 16\n")
    straight, first, second = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["train", str(p), "--steps", "640", "--config", str(cfg), "--out", str(straight)]) == 0
    assert main(["train", str(p), "--steps", "640", "--config", str(cfg), "--out", str(first), "--stop-after", "300"]) == 0
    assert RunManifest.read(first).result["steps"] == 320
    assert main(["train", str(p), "--resume", str(first / "checkpoint.npz"), "--out", str(second)]) == 0
    assert (straight / "train_log.csv").read_text() == (second / "train_log.csv").read_text()
    assert RunManifest.read(straight).result["params_sha256"] == RunManifest.read(second).result["params_sha256"]


def test_evaluate_and_compare(tmp_path, capsys):
    inst = generate_random(3, 3, (1, 9), seed=5)
    p = tmp_path / "i.txt"
    p.write_text(serialize_standard(inst))
    cfg = tmp_path / "c.cfg"
    cfg.write_text("hidden = 16\n")
    assert main(["train", str(p), "--steps", "128", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
    ck = str(tmp_path / "t" / "checkpoint.npz")
    assert main(["evaluate", str(p), "--checkpoint", ck, "--out", str(tmp_path / "e")]) == 0
    assert "(greedy)" in capsys.readouterr().out
    out = tmp_path / "cmp"
    assert main(["compare", str(p), "--rule", "spt,mwkr", "--checkpoint", f"rl={ck}", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "comparison.csv").open()))
    assert rows[0]["instance"] == "i" and rows[0]["spt"] and rows[0]["rl"]


def test_compare_two_rule_columns(tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "la05", "--rule", "spt,mwkr", "--out", str(out)]) == 0
    header = next(csv.reader((out / "comparison.csv").open()))
    assert header == ["instance", "size", "spt", "mwkr", "lower_bound", "gap_spt", "gap_mwkr"]


def test_compare_transfer_rows(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("hidden = 16\nn_steps = 64\n")
    assert main(["train", "ta01", "--osm-tau", "0.00667", "--steps", "64", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
    ck = str(tmp_path / "t" / "checkpoint.npz")
    names = [f"ta{i:02d}" for i in range(2, 11)]
    out = tmp_path / "cmp"
    assert main(["compare", *names, "--checkpoint", f"osm={ck}", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "comparison.csv").open()))
    assert [r["instance"] for r in rows] == names


def test_compare_missing_input_marks_absent(tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "la05", str(tmp_path / "gone.txt"), "--rule", "spt", "--out", str(out)]) != 0
    rows = list(csv.DictReader((out / "comparison.csv").open()))
    assert rows[1]["spt"] == "absent"


def test_gap_formatting():
    row = ComparisonRow("ta41", "30x20", {"x": 2583}, 2005)
    assert format_gap(row.gap("x")) == "28.8%"


def test_perturb_zero_swaps_is_identity(worked_file, tmp_path):
    out = tmp_path / "p"
    assert main(["perturb", str(worked_file), "--swaps", "0", "--out", str(out)]) == 0
    assert parse_standard((out / "perturbed.txt").read_text()).ops == parse_standard(WORKED_TEXT).ops


def test_perturb_by_tau(tmp_path, capsys):
    out = tmp_path / "p"
    assert main(["perturb", "ta01", "--tau", "0.00667", "--tp", "100", "--out", str(out), "--seed", "4"]) == 0
    assert "swaps: 1" in capsys.readouterr().out
    back = parse_standard((out / "perturbed.txt").read_text())
    validate(back)
    base = load_bundled("ta01")
    changed = [j for j in range(15) if back.ops[j] != base.ops[j]]
    assert len(changed) == 1


def test_replay_reproduces_solve(worked_file, tmp_path, capsys):
    out = tmp_path / "a"
    assert main(["solve", str(worked_file), "--rule", "random", "--seed", "9", "--out", str(out)]) == 0
    assert main(["replay", str(out), "--out", str(tmp_path / "b")]) == 0
    assert (out / "schedule.json").read_bytes() == (tmp_path / "b" / "schedule.json").read_bytes()
    assert "identical" in capsys.readouterr().out


def test_replay_detects_mismatch(worked_file, tmp_path):
    out = tmp_path / "a"
    assert main(["solve", str(worked_file), "--rule", "spt", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    man["result"]["makespan"] = 50
    (out / "manifest.json").write_text(json.dumps(man))
    assert main(["replay", str(out), "--out", str(tmp_path / "b")]) == 4
