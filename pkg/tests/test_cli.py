import csv
import os

import numpy as np
import pytest

from sgpg.cli import main

BASE_CONFIG = """
[run]
seed = 1
out_dir = "{out}"

[env]
name = "double_integrator"
max_episode_len = 60

[guide]
horizon = 20
eps = 0.001
delta = 0.1
kkt_tol = 1e-6

[train]
gamma = 0.97
beta = 1.5
lr = 0.001
batch_steps = 120
n_batches = 2
checkpoint_every = 1
"""


def write_config(tmp_path, text, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_train_writes_run_artifacts(tmp_path):
    out = tmp_path / "run1"
    cfg = write_config(tmp_path, BASE_CONFIG.format(out=out))
    assert main(["train", cfg]) == 0
    assert (out / "config.toml").exists()
    assert (out / "safe_set.poly").exists()
    assert (out / "terminal_set.poly").exists()
    assert (out / "checkpoint_final.bin").exists()
    assert (out / "checkpoint_00001.bin").exists()
    rows = read_csv(out / "progress.csv")
    assert len(rows) == 2
    assert set(rows[0]) >= {"batch", "env_steps", "mean_ep_reward",
                            "violations", "mean_kl", "mean_d", "grad_norm",
                            "wall_time"}
    # guided double integrator stays inside the true bounds
    assert all(int(r["violations"]) == 0 for r in rows)


def test_train_no_guide_flag(tmp_path):
    out = tmp_path / "run_v"
    cfg = write_config(tmp_path, BASE_CONFIG.format(out=out))
    assert main(["train", cfg, "--no-guide"]) == 0
    rows = read_csv(out / "progress.csv")
    assert all(float(r["mean_kl"]) == 0.0 for r in rows)


def test_train_reproducible_modulo_walltime(tmp_path):
    cfg_text = BASE_CONFIG.format(out=tmp_path / "ignored")
    cfg = write_config(tmp_path, cfg_text)
    assert main(["train", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["train", cfg, "--out", str(tmp_path / "b")]) == 0
    ra = read_csv(tmp_path / "a" / "progress.csv")
    rb = read_csv(tmp_path / "b" / "progress.csv")
    for x, y in zip(ra, rb):
        x.pop("wall_time"), y.pop("wall_time")
        assert x == y


def test_malformed_polytope_row_exits_2(tmp_path, capsys):
    bad = BASE_CONFIG.format(out=tmp_path / "x").replace(
        "[train]", 'safe = ["1 0 <= oops"]\n\n[train]')
    cfg = write_config(tmp_path, bad)
    code = main(["train", cfg])
    assert code == 2
    err = capsys.readouterr().err
    assert "guide.safe" in err


def test_missing_section_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "[run]\nseed = 1\n")
    assert main(["train", cfg]) == 2
    assert "env" in capsys.readouterr().err


def test_safesets_pass_and_report(tmp_path):
    out = tmp_path / "sets"
    cfg = write_config(tmp_path, BASE_CONFIG.format(out=out))
    assert main(["safesets", cfg, "--out", str(out)]) == 0
    report = (out / "safesets_report.txt").read_text()
    assert "PASS" in report
    assert (out / "safe_set.poly").exists()
    assert (out / "terminal_set.poly").exists()


def test_safesets_user_terminal_equals_safe_fails(tmp_path):
    # the full position slab has no velocity bound and is not invariant
    text = BASE_CONFIG.format(out=tmp_path / "sets2")
    text = text.replace(
        "[train]",
        'terminal = ["1.0 0.0 <= 0.9", "-1.0 0.0 <= 0.9"]\n\n[train]')
    cfg = write_config(tmp_path, text)
    assert main(["safesets", cfg, "--out", str(tmp_path / "sets2")]) == 1
    report = (tmp_path / "sets2" / "safesets_report.txt").read_text()
    assert "FAIL" in report


def test_safesets_delta_zero_keeps_configured_bounds(tmp_path):
    text = BASE_CONFIG.format(out=tmp_path / "sets3")
    text = text.replace("delta = 0.1", "delta = 0.0")
    cfg = write_config(tmp_path, text)
    assert main(["safesets", cfg, "--out", str(tmp_path / "sets3")]) == 0
    from sgpg.polytope import Polytope
    S = Polytope.load(tmp_path / "sets3" / "safe_set.poly")
    assert np.allclose(sorted(S.v), [1.0, 1.0])


def test_eval_runs_and_reports(tmp_path, capsys):
    out = tmp_path / "run_e"
    cfg = write_config(tmp_path, BASE_CONFIG.format(out=out))
    assert main(["train", cfg]) == 0
    ck = str(out / "checkpoint_final.bin")
    ev = str(tmp_path / "eval.csv")
    assert main(["eval", cfg, ck, "--episodes", "3", "--without-guide",
                 "--out", ev]) == 0
    rows = read_csv(ev)
    assert len(rows) == 3
    assert "mean_reward" in capsys.readouterr().out


def test_eval_dim_mismatch_fails(tmp_path):
    out = tmp_path / "run_m"
    cfg = write_config(tmp_path, BASE_CONFIG.format(out=out))
    from sgpg.policy import MlpPolicy
    MlpPolicy(6, 2, seed=0).save(tmp_path / "wrong.bin")
    assert main(["train", cfg]) == 0
    assert main(["eval", cfg, str(tmp_path / "wrong.bin")]) == 1


def test_summarize_two_conditions(tmp_path):
    cfg_text = BASE_CONFIG.format(out=tmp_path / "ignored")
    cfg = write_config(tmp_path, cfg_text)
    for seed in (1, 2):
        assert main(["train", cfg, "--seed", str(seed),
                     "--out", str(tmp_path / f"g_s{seed}")]) == 0
        assert main(["train", cfg, "--seed", str(seed), "--no-guide",
                     "--out", str(tmp_path / f"v_s{seed}")]) == 0
    out = str(tmp_path / "summary.csv")
    assert main(["summarize",
                 f"with guide={tmp_path}/g_s*",
                 f"without guide={tmp_path}/v_s*",
                 "--out", out]) == 0
    rows = read_csv(out)
    conds = {r["condition"] for r in rows}
    assert conds == {"with guide", "without guide"}
    assert all({"batch", "env_steps", "mean", "std"} <= set(r) for r in rows)


def test_summarize_top_k(tmp_path):
    cfg_text = BASE_CONFIG.format(out=tmp_path / "ignored")
    cfg = write_config(tmp_path, cfg_text)
    for seed in (1, 2, 3):
        assert main(["train", cfg, "--seed", str(seed), "--no-guide",
                     "--out", str(tmp_path / f"t_s{seed}")]) == 0
    out = str(tmp_path / "top.csv")
    assert main(["summarize", f"cond={tmp_path}/t_s*", "--top", "2",
                 "--out", out]) == 0
    assert len(read_csv(out)) == 2  # two batches, one condition
