import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from advmm import snapshot
from advmm.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_INFEASIBLE, EXIT_OK, main
from advmm.policy import GaussianPolicy

SMOKE = """\
schema_version: 1
experiment: smoke
seed: {seed}
adversary: {{kind: {kind}, controlled: [b]}}
reward: {{eta: 1.0, zeta: 0.01}}
train: {{pretrain_episodes: 100, train_episodes: {episodes}, checkpoint_every: 500,
        checkpoint_eval_episodes: 100{extra}}}
"""


def write_config(tmp_path, name="run.yaml", seed=7, kind="strategic", episodes=1000, extra=""):
    path = tmp_path / name
    path.write_text(SMOKE.format(seed=seed, kind=kind, episodes=episodes, extra=extra))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("trained")
    cfg = write_config(root)
    assert main(["train", str(cfg), "--output", str(root / "run"), "--quiet"]) == EXIT_OK
    return root / "run"


def test_train_smoke_outputs(trained):
    names = sorted(p.name for p in trained.iterdir())
    assert names == ["ckpt_00000500.json", "ckpt_00001000.json", "final.json", "resolved_config.yaml",
                     "train_log.csv"]
    with open(trained / "train_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["checkpoint_episode"] for r in rows] == ["500", "1000"]


def test_resolved_config_reruns_identically(trained, tmp_path):
    out = tmp_path / "again"
    assert main(["train", str(trained / "resolved_config.yaml"), "--output", str(out), "--quiet"]) == EXIT_OK
    for name in ("final.json", "train_log.csv", "ckpt_00000500.json"):
        assert (out / name).read_bytes() == (trained / name).read_bytes()


def test_same_seed_byte_identical_and_new_seed_differs(trained, tmp_path):
    cfg = write_config(tmp_path, seed=8)
    assert main(["train", str(cfg), "--output", str(tmp_path / "s8"), "--quiet"]) == EXIT_OK
    assert (tmp_path / "s8" / "final.json").read_bytes() != (trained / "final.json").read_bytes()


def test_snapshot_round_trip(trained, tmp_path):
    ck = snapshot.load(trained / "final.json")
    assert ck.episode == 1000 and (ck.eta, ck.zeta) == (1.0, 0.01)
    assert ck.adversary_policy is not None and ck.regime.controlled == ("b",)
    snapshot.save(tmp_path / "copy.json", ck)
    assert (tmp_path / "copy.json").read_bytes() == (trained / "final.json").read_bytes()


def test_snapshot_rejects_other_versions(trained, tmp_path):
    d = json.loads((trained / "final.json").read_text())
    d["version"] = 2
    with pytest.raises(snapshot.SnapshotError, match="version"):
        snapshot.Checkpoint.from_dict(d)
    d["version"], d["format"] = 1, "something.else"
    with pytest.raises(snapshot.SnapshotError, match="format"):
        snapshot.Checkpoint.from_dict(d)


def test_evaluate_writes_matrix(trained, tmp_path, capsys):
    out = tmp_path / "ev"
    code = main(["evaluate", str(trained / "final.json"), "--regime", "fixed", "--regime", "random",
                 "--regime", "strategic", "--episodes", "300", "--seed", "5", "--output", str(out)])
    assert code == EXIT_OK
    with open(out / "eval.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["test"] for r in rows] == ["fixed", "random", "strategic"]
    assert {r["train"] for r in rows} == {"final"}
    assert all(int(r["n_episodes"]) == 300 for r in rows)
    printed = capsys.readouterr().out
    assert printed == (out / "eval.txt").read_text() and "±" in printed


def test_evaluate_is_reproducible(trained, tmp_path):
    for name in ("a", "b"):
        assert main(["evaluate", str(trained / "final.json"), "--episodes", "200", "--seed", "5",
                     "--output", str(tmp_path / name)]) == EXIT_OK
    assert (tmp_path / "a" / "eval.csv").read_bytes() == (tmp_path / "b" / "eval.csv").read_bytes()


def test_evaluate_rejects_zero_episodes(trained, capsys):
    assert main(["evaluate", str(trained / "final.json"), "--episodes", "0", "--seed", "1"]) == EXIT_CONFIG
    assert "--episodes" in capsys.readouterr().err


def test_evaluate_rejects_version_mismatch(trained, tmp_path, capsys):
    d = json.loads((trained / "final.json").read_text())
    d["version"] = 99
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    assert main(["evaluate", str(bad), "--episodes", "10", "--seed", "1"]) == EXIT_CONFIG
    assert "version" in capsys.readouterr().err


def test_evaluate_missing_snapshot(tmp_path):
    assert main(["evaluate", str(tmp_path / "nope.json"), "--seed", "1"]) == EXIT_CONFIG


def test_strategic_test_needs_adversary(tmp_path):
    ck = snapshot.Checkpoint(0, snapshot.sim_from_dict({}), 0.0, 0.0,
                             snapshot.regime_from_dict({"kind": "fixed"}), GaussianPolicy.zeros())
    snapshot.save(tmp_path / "fixed.json", ck)
    assert main(["evaluate", str(tmp_path / "fixed.json"), "--regime", "strategic", "--episodes", "10",
                 "--seed", "1"]) == EXIT_CONFIG


def test_train_rejects_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("schema_version: 1\nseed: 1\ntrain: {lr_policy: 0}\n")
    assert main(["train", str(path)]) == EXIT_CONFIG
    assert "train" in capsys.readouterr().err


def test_train_divergence_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, kind="fixed", episodes=100, extra=", weight_ceiling: 1.0e-9, pretrain_episodes: 0")
    cfg.write_text(cfg.read_text().replace("pretrain_episodes: 100, ", ""))
    assert main(["train", str(cfg), "--output", str(tmp_path / "d"), "--quiet"]) == EXIT_DIVERGED
    assert "last good checkpoint" in capsys.readouterr().err


def test_unknown_subcommand_and_missing_flag():
    with pytest.raises(SystemExit) as info:
        main(["fly"])
    assert info.value.code == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        main(["solve-stage"])
    assert info.value.code == EXIT_CONFIG


def solve(capsys, *args):
    code = main(["solve-stage", "--json", *args])
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == EXIT_OK else None)


def test_solve_stage_corner_record(capsys):
    code, rec = solve(capsys, "--b-range", "-0.5", "0.5", "--k", "1.5", "--h", "10", "--grid", "101")
    assert code == EXIT_OK
    assert rec["b"] == -0.5 and rec["h"] == 10.0 and rec["grid"] == 101
    assert {"delta_bid", "delta_ask", "payoff", "exploitability", "continuum"} <= set(rec)


def test_solve_stage_zero_inventory_flags_continuum(capsys):
    code, rec = solve(capsys, "--b-range", "-0.5", "0.5", "--k", "1.5", "--h", "0", "--grid", "51")
    assert code == EXIT_OK and rec["continuum"] is True


def test_solve_stage_infeasible_domain(capsys):
    assert main(["solve-stage", "--b-range", "-5", "5", "--k", "1.5", "--h", "10"]) == EXIT_INFEASIBLE
    assert "infeasible" in capsys.readouterr().err


def test_solve_stage_bad_bounds():
    assert main(["solve-stage", "--b-range", "1", "-1", "--h", "0"]) == EXIT_CONFIG


def test_audit_budget_zero_is_vacuous(trained, tmp_path, capsys):
    ck = str(trained / "final.json")
    code = main(["audit", "--mm", ck, "--adversary", ck, "--budget", "0", "--episodes", "200", "--seed", "3",
                 "--output", str(tmp_path / "au")])
    assert code == EXIT_OK
    assert (tmp_path / "au" / "verdict.txt").read_text() == "approximate NE (vacuous)\n"
    with open(tmp_path / "au" / "audit.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["delta"]) for r in rows] == [0.0, 0.0]


def test_audit_rejects_mismatched_environments(trained, tmp_path):
    ck = snapshot.load(trained / "final.json")
    ck.zeta = 0.5
    snapshot.save(tmp_path / "other.json", ck)
    code = main(["audit", "--mm", str(trained / "final.json"), "--adversary", str(tmp_path / "other.json"),
                 "--budget", "0", "--seed", "1"])
    assert code == EXIT_CONFIG


def test_audit_rejects_non_strategic_adversary(tmp_path):
    ck = snapshot.Checkpoint(0, snapshot.sim_from_dict({}), 0.0, 0.0,
                             snapshot.regime_from_dict({"kind": "random"}), GaussianPolicy.zeros())
    snapshot.save(tmp_path / "r.json", ck)
    assert main(["audit", "--mm", str(tmp_path / "r.json"), "--adversary", str(tmp_path / "r.json"),
                 "--budget", "0", "--seed", "1"]) == EXIT_CONFIG


def test_export_surfaces(trained, tmp_path):
    out = tmp_path / "mm.csv"
    assert main(["export-surface", str(trained / "final.json"), "--t-grid", "0:1:3", "--h-grid=-10:10:5",
                 "--output", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "t,h,p_tilde,psi" and len(lines) == 16
    adv = tmp_path / "adv.csv"
    assert main(["export-surface", str(trained / "final.json"), "--player", "adversary", "--output",
                 str(adv)]) == EXIT_OK
    assert adv.read_text().splitlines()[0].startswith("t,h,b")


def test_export_surface_bad_grid(trained):
    assert main(["export-surface", str(trained / "final.json"), "--h-grid=-10:10"]) == EXIT_CONFIG
    assert main(["export-surface", str(trained / "final.json"), "--h-grid=-90:90:3"]) == EXIT_CONFIG


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "advmm", "solve-stage", "--h", "10", "--b-range", "-5", "5",
                          "--k", "1.5"], capture_output=True, text=True)
    assert out.returncode == EXIT_INFEASIBLE
