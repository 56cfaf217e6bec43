from __future__ import annotations

import json
import subprocess
import sys

import pytest

PKG = [sys.executable, "-m", "alphaorder"]


def run_cli(*args, check=True):
    proc = subprocess.run(
        PKG + list(args), capture_output=True, text=True, timeout=120
    )
    if check and proc.returncode != 0:
        raise AssertionError(
            f"command {' '.join(args)} failed rc={proc.returncode}\n"
            f"stdout: {proc.stdout}\nstderr: {proc.stderr}"
        )
    return proc


def test_help_exits_zero():
    proc = run_cli("--help")
    assert proc.returncode == 0
    assert "gen-data" in proc.stdout and "simulate" in proc.stdout


def test_unknown_flag_exits_two():
    proc = run_cli("enumerate", "--bogus-flag", check=False)
    assert proc.returncode == 2


def test_missing_subcommand_exits_two():
    proc = run_cli(check=False)
    assert proc.returncode == 2


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Shared artifacts: a small dataset, a scenario file, and a checkpoint."""
    root = tmp_path_factory.mktemp("cliws")
    run_cli(
        "gen-data", "--n-vehicles", "5", "--count", "16", "--seed", "3",
        "--out", str(root / "data"),
    )
    run_cli(
        "train", "--dataset", str(root / "data" / "dataset.jsonl"),
        "--batch", "8", "--epochs", "2", "--embed-dim", "8", "--hidden-dim", "8",
        "--seed", "1", "--out", str(root / "run"),
    )
    from alphaorder.core import save_scenario
    from alphaorder.training import load_dataset

    ds = load_dataset(str(root / "data" / "dataset.jsonl"))
    save_scenario(ds.instances[0], str(root / "one.scn.json"))
    save_scenario(ds.instances[1], str(root / "two.scn.json"))
    return root


def test_gen_data_manifest(workspace):
    manifest = json.loads((workspace / "data" / "run_manifest.json").read_text())
    assert manifest["schema"] == "alphaorder/run-manifest"
    assert manifest["seed"] == 3
    assert any(p.endswith("dataset.jsonl") for p in manifest["outputs"])


def test_train_outputs(workspace):
    assert (workspace / "run" / "curve.csv").exists()
    assert (workspace / "run" / "final.ckpt").exists()
    header = (workspace / "run" / "curve.csv").read_text().splitlines()[0]
    assert header == "epoch,mean_J,enforceable_frac,lr"


def test_search_fifo_and_pointer(workspace):
    out = run_cli(
        "search", "--scenario", str(workspace / "one.scn.json"),
        "--candidate", "fifo", "--budget-iters", "200", "--seed", "2",
    )
    result = json.loads(out.stdout)
    assert set(result) >= {"order", "J_seconds", "J_candidate_seconds", "mu"}
    assert result["mu"] >= -1e-9

    ckpt = str(workspace / "run" / "final.ckpt")
    out2 = run_cli(
        "search", "--scenario", str(workspace / "one.scn.json"),
        "--candidate", f"pointer:{ckpt}", "--budget-iters", "200", "--seed", "2",
    )
    result2 = json.loads(out2.stdout)
    assert sorted(result2["order"]) == sorted(result["order"])


def test_enumerate_csv(workspace):
    out_csv = workspace / "enum.csv"
    run_cli(
        "enumerate", "--scenario", str(workspace / "one.scn.json"),
        "--out", str(out_csv),
    )
    lines = out_csv.read_text().strip().splitlines()
    assert lines[0] == "J_seconds"
    assert len(lines) > 1


def test_enumerate_refusal_exit_two(workspace, tmp_path):
    import numpy as np

    from alphaorder.core import random_scenario, save_scenario
    from alphaorder.geometry import default_geometry

    big = random_scenario(default_geometry(), 12, np.random.default_rng(0))
    path = tmp_path / "big.scn.json"
    save_scenario(big, str(path))
    proc = run_cli(
        "enumerate", "--scenario", str(path), "--limit", "0",
        "--out", str(tmp_path / "x.csv"), check=False,
    )
    assert proc.returncode == 2
    assert "refused" in proc.stderr


def test_simulate_csv(workspace):
    out_csv = workspace / "sim.csv"
    run_cli(
        "simulate", "--algo", "fifo", "--arrival-rate", "150",
        "--duration-s", "90", "--warmup-s", "30", "--seed", "4",
        "--out", str(out_csv),
    )
    lines = out_csv.read_text().strip().splitlines()
    assert lines[0] == "algo,seed,arrival_rate,p_left,p_straight,p_right,vehicles_served,mean_delay_s"
    assert lines[1].startswith("fifo,4,150.000000,")


def test_simulate_alphaorder_needs_ckpt(workspace):
    proc = run_cli(
        "simulate", "--algo", "alphaorder", "--arrival-rate", "100",
        "--duration-s", "30", "--out", str(workspace / "x.csv"), check=False,
    )
    assert proc.returncode == 2


def test_compare_report(workspace):
    out_csv = workspace / "cmp.csv"
    hist_csv = workspace / "hist.csv"
    ckpt = str(workspace / "run" / "final.ckpt")
    run_cli(
        "compare", "--n", "5", "--count", "6", "--seed", "1",
        "--algos", "fifo,mcts,alphaorder,optimal", "--ckpt", ckpt,
        "--budget-iters", "300", "--out", str(out_csv),
        "--histogram-out", str(hist_csv), "--histogram-samples", "500",
    )
    lines = out_csv.read_text().strip().splitlines()
    assert lines[0] == "algo,scenario_id,J_seconds,candidate_J_seconds,mu"
    means = {}
    for line in lines[1:]:
        parts = line.split(",")
        if parts[1] == "mean":
            means[parts[0]] = float(parts[2])
    assert set(means) == {"fifo", "mcts", "alphaorder", "optimal"}
    assert means["fifo"] >= means["optimal"] - 1e-9
    assert means["mcts"] >= means["optimal"] - 1e-9
    hist_lines = hist_csv.read_text().strip().splitlines()
    assert hist_lines[0] == "J_seconds" and len(hist_lines) == 501


def test_transfer_and_fine_tune(workspace, tmp_path):
    ckpt = str(workspace / "run" / "final.ckpt")
    out_ckpt = tmp_path / "transferred.ckpt"
    run_cli("transfer", "--ckpt", ckpt, "--seed", "0", "--out", str(out_ckpt))
    assert out_ckpt.exists()

    import numpy as np

    from alphaorder.baselines import enumerate_optimal
    from alphaorder.core import random_scenario
    from alphaorder.geometry import default_geometry
    from alphaorder.training import save_pairs

    geo = default_geometry()
    rng = np.random.default_rng(5)
    pairs = []
    for _ in range(4):
        s = random_scenario(geo, 4, rng)
        pairs.append((s, enumerate_optimal(s).best_order))
    pairs_path = tmp_path / "pairs.jsonl"
    save_pairs(pairs, str(pairs_path))
    tuned = tmp_path / "tuned.ckpt"
    run_cli(
        "fine-tune", "--ckpt", ckpt, "--pairs", str(pairs_path),
        "--steps", "10", "--lr", "0.001", "--out", str(tuned),
    )
    assert tuned.exists()


def test_byte_reproducibility(tmp_path):
    """Identical seed and config produce byte-identical artifacts."""
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        run_cli(
            "gen-data", "--n-vehicles", "4", "--count", "8", "--seed", "7",
            "--out", str(out),
        )
        outs.append((out / "dataset.jsonl").read_bytes())
    assert outs[0] == outs[1]

    sims = []
    for name in ("sa", "sb"):
        out = tmp_path / f"{name}.csv"
        run_cli(
            "simulate", "--algo", "mcts_baseline", "--arrival-rate", "200",
            "--duration-s", "60", "--warmup-s", "10", "--budget-iters", "50",
            "--seed", "9", "--out", str(out),
        )
        sims.append(out.read_bytes())
    assert sims[0] == sims[1]
