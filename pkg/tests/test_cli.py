import csv
import json

import numpy as np
import pytest

from trainmap.cli import main


def run(args):
    return main([str(a) for a in args])


@pytest.fixture
def small_script(tmp_path):
    stds = [0.4, 0.12, 0.04, 0.002, 0.002, 0.001, 0.01, 0.01, 0.001, 0.1, 0.05, 0.02, 0.02, 0.02]
    script = {
        "size": "tiny",
        "seeds": 4,
        "schedule": [0, 1, 2, 4, 8, 16, 32, 64, 128, 256],
        "regimes": [
            {"start": 0, "means": [40, 12, 3.3, 0.0, 0.0, 0.04, 0.0, 0.0, 0.01, 1.0, 4.0, 0.5, 2.0, 1.0], "stds": stds},
            {"start": 5, "means": [55, 18, 3.1, 0.05, 0.05, 0.09, 0.3, 0.3, 0.05, 2.0, 6.0, 0.7, 3.0, 1.5], "stds": stds},
        ],
    }
    path = tmp_path / "script.json"
    path.write_text(json.dumps(script))
    return path


def test_usage_errors_exit_2(capsys):
    assert run(["definitely-not-a-command"]) == 2
    assert run(["stats", "--no-such-flag"]) == 2
    assert run([]) == 2


def test_data_errors_exit_1(tmp_path, capsys):
    assert run(["stats", "--manifest", tmp_path / "missing.txt", "--out", tmp_path / "o.csv"]) == 1
    err = capsys.readouterr().err
    assert "error:" in err


def test_checkpoint_pipeline(tmp_path, small_script, capsys):
    runs = tmp_path / "runs"
    assert run(["synth", "--kind", "checkpoints", "--script", small_script, "--out", runs, "--seed", 0]) == 0
    assert (runs / "truth.csv").exists()
    assert (runs / "provenance.json").exists()

    stats = tmp_path / "stats.csv"
    manifests = sorted(runs.glob("tiny-seed*/manifest.txt"))
    assert len(manifests) == 4
    argv = ["stats"]
    for m in manifests:
        argv += ["--manifest", m]
    assert run(argv + ["--out", stats]) == 0
    assert (tmp_path / "stats.csv.provenance.json").exists()

    model = tmp_path / "model.json"
    assert run([
        "hmm-fit", "--stats", stats, "--states", 2, "--mode", "pooled",
        "--restarts", 3, "--max-iterations", 100, "--out", model,
        "--fit-report", tmp_path / "fitrep.json",
    ]) == 0
    report = json.loads((tmp_path / "fitrep.json").read_text())
    assert report["converged"] is True

    maps = tmp_path / "maps.csv"
    assert run(["map", "--stats", stats, "--model", model, "--mode", "pooled", "--out", maps]) == 0
    with open(maps) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["size", "seed", "step", "state", "is_fork"]
    assert len(rows) == 1 + 4 * 10

    # all seeds switch into state 1 at the scripted boundary (index 5 = step 16)
    trans = tmp_path / "trans.csv"
    assert run(["transitions", "--maps", maps, "--out", trans]) == 0
    with open(trans) as f:
        summary = list(csv.DictReader(f))
    assert summary[0]["num_runs"] == "4"
    assert float(summary[0]["mean_step"]) == pytest.approx(16.0)

    drivers = tmp_path / "drivers.csv"
    assert run(["drivers", "--model", model, "--out", drivers, "--top", 2]) == 0
    with open(drivers) as f:
        driver_rows = list(csv.DictReader(f))
    assert len(driver_rows) == 2
    assert driver_rows[0]["direction"] in ("up", "down")

    # accuracy table tied to state-1 occupancy; all runs share it, so add a spread
    acc = tmp_path / "acc.csv"
    with open(acc, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["size", "seed", "task", "accuracy"])
        for seed in range(4):
            for task in ("t1", "t2"):
                writer.writerow(["tiny", seed, task, 0.5 + 0.05 * seed])
    assert run(["predict", "--maps", maps, "--accuracy", acc, "--out", tmp_path / "reg.csv"]) == 0
    with open(tmp_path / "reg.csv") as f:
        reg_rows = list(csv.DictReader(f))
    assert len(reg_rows) == 4
    assert {r["seed"] for r in reg_rows} == {"0", "1", "2", "3"}

    assert run([
        "zero-shot", "--model", model, "--stats", stats, "--mode", "pooled",
        "--out", tmp_path / "zs.csv",
    ]) == 0
    assert (tmp_path / "zs.csv").read_text() == maps.read_text()

    assert run([
        "truncate", "--maps", maps, "--accuracy", acc, "--steps", "8,256",
        "--out", tmp_path / "curve.csv",
    ]) == 0
    assert run([
        "report", "--figure", "truncation", "--input", tmp_path / "curve.csv",
        "--out", tmp_path / "curve.svg",
    ]) == 0
    assert (tmp_path / "curve.svg").read_text().startswith("<svg")


def test_stats_idempotent(tmp_path, small_script):
    runs = tmp_path / "runs"
    assert run(["synth", "--kind", "series", "--script", small_script, "--out", runs]) == 0
    first = (runs / "stats.csv").read_bytes()
    assert run(["synth", "--kind", "series", "--script", small_script, "--out", runs]) == 0
    assert (runs / "stats.csv").read_bytes() == first


def test_hmm_select_cli(tmp_path, small_script):
    runs = tmp_path / "runs"
    assert run(["synth", "--kind", "series", "--script", small_script, "--out", runs]) == 0
    out = tmp_path / "bic.csv"
    assert run([
        "hmm-select", "--stats", runs / "stats.csv", "--kmin", 1, "--kmax", 3,
        "--mode", "pooled", "--restarts", 2, "--max-iterations", 60, "--out", out,
    ]) == 0
    with open(out) as f:
        rows = list(csv.DictReader(f))
    assert [r["num_states"] for r in rows] == ["1", "2", "3"]
    assert sum(int(r["chosen"]) for r in rows) == 1


def test_log_commands(tmp_path, capsys):
    logs = tmp_path / "logs"
    assert run([
        "synth", "--kind", "logs", "--out", logs, "--items", 2000, "--kappa", 0.6,
        "--accuracy", 0.4, "--raters", 3, "--step", 1000,
    ]) == 0
    files = sorted(logs.glob("log-seed*.jsonl"))
    assert len(files) == 3

    kappa_csv = tmp_path / "kappa.csv"
    argv = ["kappa"]
    for f in files:
        argv += ["--log", f]
    assert run(argv + ["--out", kappa_csv]) == 0
    with open(kappa_csv) as f:
        rows = list(csv.DictReader(f))
    by_seed = {r["seed"]: float(r["kappa"]) for r in rows}
    assert by_seed["0"] == 1.0
    assert by_seed["1"] == pytest.approx(0.6, abs=0.08)

    acc_csv = tmp_path / "acc.csv"
    assert run(argv[:1] and ["accuracy"] + argv[1:] + ["--out", acc_csv]) == 0
    with open(acc_csv) as f:
        acc_rows = list(csv.DictReader(f))
    assert float(acc_rows[0]["accuracy"]) == pytest.approx(0.4, abs=0.05)

    sc_csv = tmp_path / "sc.csv"
    one = ["self-consistency", "--log", files[0], "--out", sc_csv]
    assert run(one) == 0

    # downstream figure over the kappa CSV
    fig = tmp_path / "downstream.svg"
    assert run(["report", "--figure", "downstream", "--input", kappa_csv, "--out", fig]) == 0
    svg = fig.read_text()
    assert svg.startswith("<svg") and "polyline" in svg
    assert run(["report", "--figure", "downstream", "--input", kappa_csv, "--out", fig, "--aggregate", "mean"]) == 0


def test_outliers_cli(tmp_path):
    acc = tmp_path / "acc.csv"
    rng = np.random.default_rng(0)
    with open(acc, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["size", "seed", "task", "accuracy"])
        for seed in range(10):
            for t_idx, task in enumerate(("a", "b", "c", "d")):
                value = 0.6 + rng.normal(0, 0.004)
                if seed == 3 and task == "a":
                    value = 0.45
                writer.writerow(["s", seed, task, value])
    out = tmp_path / "outliers.csv"
    assert run(["outliers", "--accuracy", acc, "--out", out, "--zscores-out", tmp_path / "z.csv"]) == 0
    with open(out) as f:
        rows = list(csv.DictReader(f))
    assert [(r["size"], r["seed"]) for r in rows] == [("s", "3")]
    assert (tmp_path / "z.csv").exists()


def test_bias_cli(tmp_path):
    scores = tmp_path / "scores.csv"
    with open(scores, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["task", "size", "seed", "step", "score_preferred", "score_other"])
        for a, b in [(2.0, 1.0), (3.0, 1.0), (5.0, 4.0), (0.0, 1.0)]:
            writer.writerow(["cooccur", "s", 0, 100, a, b])
    out = tmp_path / "bias.csv"
    assert run(["bias", "--scores", scores, "--out", out]) == 0
    with open(out) as f:
        rows = list(csv.DictReader(f))
    assert float(rows[0]["proportion_preferred"]) == 0.75


def test_probe_cli(tmp_path):
    data_dir = tmp_path / "probe"
    assert run([
        "synth", "--kind", "probe", "--out", data_dir, "--separation", 5.0,
        "--tokens-per-class", 32, "--dim", 12,
    ]) == 0
    assert (data_dir / "reps.ptns").exists()
    assert (data_dir / "reps-step0.ptns").exists()

    base_probe = tmp_path / "probe0.json"
    base_report = tmp_path / "report0.json"
    assert run([
        "probe-train", "--data", data_dir / "reps-step0.ptns", "--epochs", 60,
        "--out", base_probe, "--report-out", base_report,
    ]) == 0

    model_probe = tmp_path / "probe1.json"
    model_report = tmp_path / "report1.json"
    assert run([
        "probe-train", "--data", data_dir / "reps.ptns", "--epochs", 120,
        "--out", model_probe, "--report-out", model_report,
        "--baseline-report", base_report,
    ]) == 0
    doc = json.loads(model_report.read_text())
    assert doc["macro_f1"] > 0.9
    assert doc["codelength_ratio"] < 1.0

    ssa_out = tmp_path / "ssa.csv"
    assert run(["ssa", "--probe-a", model_probe, "--probe-b", model_probe, "--out", ssa_out]) == 0
    with open(ssa_out) as f:
        angle_rows = list(csv.DictReader(f))
    assert float(angle_rows[0]["mean_angle"]) < 1e-6


def test_correlate_cli(tmp_path):
    metrics = tmp_path / "metrics.csv"
    rng = np.random.default_rng(1)
    signal = np.cumsum(rng.standard_normal(40))
    with open(metrics, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["name", "task", "step", "value"])
        for name, noise in (("14m", 0.1), ("31m", 0.1), ("70m", 0.1)):
            values = signal + rng.normal(0, noise * signal.std(), 40)
            for i, v in enumerate(values):
                writer.writerow([name, "taskA", i, v])
    out = tmp_path / "corr.csv"
    summary = tmp_path / "summary.json"
    assert run(["correlate", "--metrics", metrics, "--out", out, "--summary-out", summary]) == 0
    doc = json.loads(summary.read_text())
    assert doc["fisher_mean"] > 0.9
    with open(out) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 9  # 3x3 ordered pairs
