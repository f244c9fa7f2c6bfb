"""Acceptance suite: the fourteen release criteria, one test each.

Each test prints a single `[acceptance] criterion NN PASS/FAIL` line
(visible with `pytest -s` or in captured output on failure). Synthetic
generators provide the ground truth; tolerances are stated inline.
"""

import csv
import functools
import json
import math
import time

import numpy as np
import pytest

from trainmap import agreement, cartography, hmm, paramstats, probe, stability, synthlab
from trainmap.cli import main as cli_main
from trainmap.paramstats import STAT_NAMES
from trainmap.tensorstore import TensorRecord, read_checkpoint, write_checkpoint

D = len(STAT_NAMES)


def criterion(number, description):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[acceptance] criterion {number:2d} FAIL  {description}")
                raise
            print(f"[acceptance] criterion {number:2d} PASS  {description}")

        return wrapper

    return decorate


def three_regime_script(seeds, starts=(0, 40, 100), separation=3.0, std=1.0, schedule=None, anomaly=None, size="synth"):
    schedule = tuple(schedule) if schedule is not None else tuple(range(154))
    regimes = tuple(
        synthlab.Regime(start, np.full(D, i * separation * std), np.full(D, std))
        for i, start in enumerate(starts)
    )
    return synthlab.RegimeScript(regimes=regimes, seeds=seeds, schedule=schedule, anomaly=anomaly, size_label=size)


def fit_ensemble(ensemble, k, restarts=5, max_iterations=200, rng_seed=0):
    standardized = cartography.standardize(
        ensemble, cartography.StandardizationMode(cartography.POOLED)
    )
    cfg = hmm.FitConfig(restarts=restarts, max_iterations=max_iterations, rng_seed=rng_seed)
    model, report = hmm.fit(standardized.sequences(), k, cfg, STAT_NAMES)
    return model, report, standardized


def first_crossings(states, num_states):
    """Index at which each forward transition a -> a+1 first happens."""
    crossings = {}
    for i in range(1, len(states)):
        key = (states[i - 1], states[i])
        if key[1] == key[0] + 1 and key not in crossings:
            crossings[key] = i
    return crossings


@criterion(1, "HMM regime recovery: switches within +/-2 for >=95%, fit < 10 s")
def test_c01_hmm_regime_recovery():
    script = three_regime_script(seeds=10)
    ensemble, truth = synthlab.generate_stat_series(script, rng_seed=0)
    start = time.perf_counter()
    model, _, standardized = fit_ensemble(ensemble, 3)
    elapsed = time.perf_counter() - start
    maps = cartography.decode_maps(model, standardized)
    hits = total = 0
    for m in maps:
        crossings = first_crossings(m.states, 3)
        for transition, true_index in (((0, 1), 40), ((1, 2), 100)):
            total += 1
            if transition in crossings and abs(crossings[transition] - true_index) <= 2:
                hits += 1
    assert total == 20
    assert hits / total >= 0.95, f"only {hits}/{total} switches recovered"
    assert elapsed < 10.0, f"fit took {elapsed:.2f} s"


@criterion(2, "BIC selection: planted K=3 chosen from 2..8 in >=8/10 generator seeds")
def test_c02_bic_state_selection():
    chosen_counts = 0
    for gen_seed in range(10):
        script = three_regime_script(seeds=6, starts=(0, 20, 40), schedule=range(60))
        ensemble, _ = synthlab.generate_stat_series(script, rng_seed=gen_seed)
        standardized = cartography.standardize(
            ensemble, cartography.StandardizationMode(cartography.POOLED)
        )
        cfg = hmm.FitConfig(restarts=3, max_iterations=100, rng_seed=gen_seed)
        chosen, _ = hmm.select_num_states(standardized.sequences(), range(2, 9), cfg, STAT_NAMES)
        chosen_counts += int(chosen == 3)
    assert chosen_counts >= 8, f"K=3 chosen only {chosen_counts}/10 times"


@criterion(3, "fork detection: anomaly seeds flagged, zero false positives on 20 clean runs")
def test_c03_fork_detection():
    anomaly = synthlab.Anomaly(seeds=frozenset({20, 21}), spike_index=80, spike_regime=2, return_to_regime=0)
    script = three_regime_script(seeds=22, starts=(0, 50, 110), anomaly=anomaly)
    ensemble, _ = synthlab.generate_stat_series(script, rng_seed=1)
    model, _, standardized = fit_ensemble(ensemble, 3)
    maps = cartography.decode_maps(model, standardized)
    by_seed = {m.seed: m for m in maps}
    for seed in (20, 21):
        flagged, positions = cartography.detect_fork(by_seed[seed])
        assert flagged, f"anomalous seed {seed} not flagged"
        assert positions, "fork positions must be reported"
        assert any(abs(p - 110) <= 2 for p in positions), f"fork at {positions}, expected near 110"
    false_positives = [seed for seed in range(20) if by_seed[seed].has_fork]
    assert false_positives == [], f"clean runs flagged: {false_positives}"


def _late_signal_maps(shared_early=False):
    rng = np.random.default_rng(7)
    maps = []
    z_true = {}
    for seed in range(10):
        t0, t1 = 20, 50
        if shared_early:
            t2 = 90
            t3 = 110 + 4 * seed
            stuck = seed >= 8
        else:
            t2 = 90 + 2 * seed
            t3 = 120 + seed
            stuck = seed >= 8
        states = [0] * t0 + [1] * (t1 - t0) + [2] * (t2 - t1)
        if stuck:
            states += [2] * (154 - t2) if not shared_early else [3] * (154 - t2)
        else:
            states += [3] * (t3 - t2) + [4] * (154 - t3)
        states = states[:154]
        maps.append(
            cartography.TrainingMap(
                size="synth",
                seed=seed,
                steps=tuple(range(154)),
                states=tuple(states),
                fork_positions=cartography.fork_positions(states),
            )
        )
        counts = np.bincount(states, minlength=5)
        if shared_early:
            z_true[seed] = 0.02 * counts[4] - 1.0 + float(rng.normal(0, 0.05))
        else:
            z_true[seed] = 0.015 * counts[3] + 0.01 * counts[4] - 1.0 + float(rng.normal(0, 0.05))
    return maps, z_true


@criterion(4, "bag-of-states regression: R^2 >= 0.9 and planted seeds get the two lowest fits")
def test_c04_bag_of_states_regression():
    maps, z = _late_signal_maps()
    bags = [stability.bag_of_states(m, 5) for m in maps]
    result = stability.map_performance_regression(bags, z)
    assert result.r_squared >= 0.9, f"R^2 = {result.r_squared:.3f}"
    order = np.argsort(result.fitted)
    lowest_two = {bags[i].seed for i in order[:2]}
    assert lowest_two == {8, 9}, f"lowest fitted seeds were {lowest_two}"


@criterion(5, "truncation curve: R^2 < 0.5 early, >= 0.9 at full length, final == full exactly")
def test_c05_truncation_curve():
    maps, z = _late_signal_maps(shared_early=True)
    bags = [stability.bag_of_states(m, 5) for m in maps]
    full = stability.map_performance_regression(bags, z)
    curve = stability.truncation_curve(maps, z, [100, 153])
    early_r2 = curve[0][1]
    final_r2 = curve[-1][1]
    assert early_r2 < 0.5, f"early R^2 = {early_r2:.3f}"
    assert final_r2 >= 0.9, f"final R^2 = {final_r2:.3f}"
    assert final_r2 == full.r_squared, "final cutoff must equal the full regression"


@criterion(6, "zero-shot decoding: >=90% per-checkpoint agreement with native maps")
def test_c06_zero_shot_decoding():
    script_a = three_regime_script(seeds=8, starts=(0, 50, 110), std=1.0, size="a")
    script_b = three_regime_script(seeds=8, starts=(0, 50, 110), std=1.5, size="b")
    ensemble_a, _ = synthlab.generate_stat_series(script_a, rng_seed=2)
    ensemble_b, _ = synthlab.generate_stat_series(script_b, rng_seed=3)
    model_a, _, _ = fit_ensemble(ensemble_a, 3, rng_seed=0)
    model_b, _, standardized_b = fit_ensemble(ensemble_b, 3, rng_seed=0)
    native = cartography.decode_maps(model_b, standardized_b)
    zero_shot = stability.zero_shot_decode(model_a, standardized_b)
    native_states = np.array([m.states for m in native])
    foreign_states = np.array([m.states for m in zero_shot])
    agreement_rate = float(np.mean(native_states == foreign_states))
    assert agreement_rate >= 0.90, f"agreement {agreement_rate:.3f}"


@criterion(7, "kappa suite: exact hand cases, self-agreement, chance bounds, target generator")
def test_c07_kappa_suite():
    rng = np.random.default_rng(4)
    a = rng.integers(0, 4, 200)
    assert agreement.cohens_kappa(a, a).kappa == 1.0
    zero = agreement.cohens_kappa([0, 0, 1, 1], [0, 1, 0, 1])
    assert abs(zero.kappa - 0.0) <= 1e-12
    half = agreement.cohens_kappa([0, 0, 0, 1], [0, 0, 1, 1])
    assert abs(half.kappa - 0.5) <= 1e-12
    n = 10_000
    independent = agreement.cohens_kappa(rng.integers(0, 4, n), rng.integers(0, 4, n))
    assert abs(independent.kappa) <= 0.05
    logs = synthlab.generate_prediction_logs(
        synthlab.SynthLogConfig(items=n, target_kappa=0.5, rng_seed=5)
    )
    measured = agreement.inter_seed_agreement(logs)[1].kappa
    assert abs(measured - 0.5) <= 0.05, f"measured kappa {measured:.3f}"


@criterion(8, "outlier rule: exactly the two planted deviant seeds at threshold 2")
def test_c08_outlier_rule():
    rng = np.random.default_rng(6)
    tasks = ("arc", "lambada", "piqa", "sciq")
    cells = {}
    for seed in range(10):
        row = 0.6 + rng.normal(0, 0.004, 4)
        if seed == 3:
            row[0] = 0.45
        if seed == 4:
            row[2] = 0.45
        cells[("410m", seed)] = np.clip(row, 0, 1)
    table = stability.AccuracyTable(tasks=tasks, cells=cells)
    flags = stability.flag_outliers(stability.zscore(table), threshold=2.0, rule="any-task")
    assert {(f.size, f.seed) for f in flags} == {("410m", 3), ("410m", 4)}
    assert "arc" in dict(((f.size, f.seed), f.tasks) for f in flags)[("410m", 3)]


@criterion(9, "statistics exactness: hand cases to 1e-12, SVD vs Jacobi oracle to 1e-8, scaling law")
def test_c09_statistics_exactness():
    from test_paramstats import jacobi_singular_values

    ident = paramstats.matrix_statistics(np.eye(2))
    assert abs(ident.l1 - 2.0) <= 1e-12
    assert abs(ident.l2 - math.sqrt(2)) <= 1e-12
    assert abs(ident.lambda_max - 1.0) <= 1e-12
    assert abs(ident.trace_over_lambda_max - 2.0) <= 1e-12
    diag = paramstats.matrix_statistics(np.diag([3.0, 4.0]))
    assert abs(diag.l1 - 7.0) <= 1e-12
    assert abs(diag.l2 - 5.0) <= 1e-12
    assert abs(diag.l1_over_l2 - 1.4) <= 1e-12
    assert abs(diag.mu_lambda - 3.5) <= 1e-12
    assert abs(diag.sigma_lambda - 0.25) <= 1e-12

    rng = np.random.default_rng(8)
    for _ in range(5):
        m = rng.standard_normal((5, 3)) * rng.uniform(0.5, 4.0)
        s = paramstats.matrix_statistics(m)
        oracle = jacobi_singular_values(m)
        assert abs(s.lambda_max - oracle[0]) <= 1e-8 * oracle[0]
        assert abs(s.mu_lambda - oracle.mean()) <= 1e-8 * abs(oracle.mean())
        assert abs(s.sigma_lambda - np.var(oracle)) <= 1e-8 * max(np.var(oracle), 1e-12)

    base = paramstats.matrix_statistics(m)
    for c in (0.5, 2.0, 7.5):
        scaled = paramstats.matrix_statistics(c * m)
        assert scaled.l1 == pytest.approx(c * base.l1, rel=1e-9)
        assert scaled.l2 == pytest.approx(c * base.l2, rel=1e-9)
        assert scaled.lambda_max == pytest.approx(c * base.lambda_max, rel=1e-9)
        assert scaled.mu_lambda == pytest.approx(c * base.mu_lambda, rel=1e-9)
        assert scaled.sigma_lambda == pytest.approx(c * c * base.sigma_lambda, rel=1e-9)
        assert scaled.l1_over_l2 == pytest.approx(base.l1_over_l2, rel=1e-9)


@criterion(10, "probe gradients match finite differences (< 1e-4 rel) in < 1 s per prior")
def test_c10_probe_gradient_check():
    from test_probe import finite_difference_check

    for prior in ("standard-normal", "log-uniform"):
        start = time.perf_counter()
        worst = finite_difference_check(prior, seed=42)
        elapsed = time.perf_counter() - start
        assert worst < 1e-4, f"{prior}: worst relative error {worst:.2e}"
        assert elapsed < 1.0, f"{prior}: gradient check took {elapsed:.2f} s"


@criterion(11, "MDL behavior: separable F1 > 0.95, ratio < 0.8; random labels ratio in [0.9, 1.1]")
def test_c11_mdl_behavior():
    task = synthlab.SynthTaskConfig(separation=5.0, tokens_per_class=64, dim=16, rng_seed=9)
    separable = synthlab.generate_probe_task(task)
    random_reps = synthlab.generate_probe_task(
        synthlab.SynthTaskConfig(separation=0.0, tokens_per_class=64, dim=16, rng_seed=9)
    )
    config = probe.TrainConfig(epochs=200, rng_seed=0)
    _, report = probe.train(separable, config)
    _, baseline = probe.train(random_reps, config)
    ratio = probe.codelength_ratio(report, baseline)
    assert report.macro_f1 > 0.95, f"macro-F1 {report.macro_f1:.3f}"
    assert ratio < 0.8, f"codelength ratio {ratio:.3f}"

    rng = np.random.default_rng(10)
    shuffled = probe.ProbeDataset(
        separable.stacks,
        rng.permutation(separable.labels),
        separable.sequence_ids,
        separable.num_classes,
    )
    _, shuffled_report = probe.train(shuffled, config)
    shuffled_ratio = probe.codelength_ratio(shuffled_report, baseline)
    assert 0.9 <= shuffled_ratio <= 1.1, f"randomized-label ratio {shuffled_ratio:.3f}"


@criterion(12, "SSA suite: identical < 1e-6 deg, orthogonal 90 deg, 45 deg case, invariances")
def test_c12_ssa_suite():
    rng = np.random.default_rng(11)
    theta = rng.standard_normal((8, 4))
    angles, mean = probe.subspace_angles(theta, theta)
    assert mean < 1e-6 and np.all(angles < 1e-6)

    a = np.array([[1.0], [0.0]])
    b = np.array([[0.0], [1.0]])
    angles, _ = probe.subspace_angles(a, b)
    assert abs(angles[0] - 90.0) <= 1e-6

    c = np.array([[1.0], [1.0]]) / math.sqrt(2.0)
    angles, _ = probe.subspace_angles(a, c)
    assert abs(angles[0] - 45.0) <= 1e-9

    for _ in range(20):
        x = rng.standard_normal((10, 3))
        y = rng.standard_normal((10, 3))
        ab, _ = probe.subspace_angles(x, y)
        ba, _ = probe.subspace_angles(y, x)
        assert np.allclose(ab, ba, atol=1e-9)
        mixer = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
        mixed, _ = probe.subspace_angles(x @ mixer, y)
        assert np.allclose(mixed, ab, atol=1e-7)


@criterion(13, "Fisher averaging: fixed point, hand case to 1e-4, shared-signal r-bar > 0.9")
def test_c13_fisher_averaging():
    assert probe.fisher_average([0.37, 0.37, 0.37]) == pytest.approx(0.37, abs=1e-12)
    assert probe.fisher_average([0.5, 0.9]) == pytest.approx(0.7660773415974732, abs=1e-4)
    rng = np.random.default_rng(12)
    signal = np.cumsum(rng.standard_normal(250))
    noise_scale = float(signal.std()) / math.sqrt(10.0)
    trajectories = {f"m{i}": signal + rng.normal(0, noise_scale, 250) for i in range(5)}
    summary = probe.trajectory_correlations(trajectories)
    assert summary.fisher_mean > 0.9, f"r-bar = {summary.fisher_mean:.3f}"


@criterion(14, "I/O round trips bit-exact; CLI pipeline < 60 s reproducing criteria 1, 3, 4")
def test_c14_io_and_end_to_end_pipeline(tmp_path):
    # container round trips, randomized
    rng = np.random.default_rng(13)
    for trial in range(20):
        records = [
            TensorRecord.from_array(
                f"t{j}", rng.standard_normal(tuple(rng.integers(1, 5, size=rng.integers(1, 3))))
            )
            for j in range(rng.integers(0, 4))
        ]
        path = tmp_path / f"rt{trial}.ptns"
        write_checkpoint(records, path)
        first = path.read_bytes()
        back = read_checkpoint(path)
        write_checkpoint(back, path)
        assert path.read_bytes() == first

    start = time.perf_counter()
    # full pipeline on a 10-run ensemble with two anomalous seeds
    anomaly = synthlab.Anomaly(seeds=frozenset({8, 9}), spike_index=80, spike_regime=2, return_to_regime=0)
    means0 = np.zeros(D)
    means0[STAT_NAMES.index("l2")] = 10.0
    means0[STAT_NAMES.index("mu_w")] = 0.01
    means1 = np.zeros(D)
    means1[STAT_NAMES.index("l2")] = 20.0
    means1[STAT_NAMES.index("mu_w")] = 0.05
    means2 = np.zeros(D)
    means2[STAT_NAMES.index("l2")] = 14.0
    means2[STAT_NAMES.index("mu_w")] = -0.03
    stds = np.full(D, 1e-2)
    script = {
        "size": "synth",
        "seeds": 10,
        "schedule": list(range(154)),
        "regimes": [
            {"start": 0, "means": means0.tolist(), "stds": stds.tolist()},
            {"start": 50, "means": means1.tolist(), "stds": stds.tolist()},
            {"start": 110, "means": means2.tolist(), "stds": stds.tolist()},
        ],
        "anomaly": {"seeds": [8, 9], "spike_index": 80, "spike_regime": 2, "return_to": 0},
    }
    script_path = tmp_path / "script.json"
    script_path.write_text(json.dumps(script))

    runs = tmp_path / "runs"
    assert cli_main(["synth", "--kind", "checkpoints", "--script", str(script_path), "--out", str(runs), "--seed", "0"]) == 0

    stats_csv = tmp_path / "stats.csv"
    argv = ["stats"]
    for manifest in sorted(runs.glob("synth-seed*/manifest.txt")):
        argv += ["--manifest", str(manifest)]
    assert cli_main(argv + ["--out", str(stats_csv)]) == 0

    model_json = tmp_path / "model.json"
    assert cli_main([
        "hmm-fit", "--stats", str(stats_csv), "--states", "3", "--mode", "pooled",
        "--restarts", "4", "--max-iterations", "200", "--out", str(model_json),
    ]) == 0

    maps_csv = tmp_path / "maps.csv"
    assert cli_main([
        "map", "--stats", str(stats_csv), "--model", str(model_json), "--mode", "pooled",
        "--out", str(maps_csv),
    ]) == 0

    maps = cartography.read_maps_csv(maps_csv)
    by_seed = {m.seed: m for m in maps}

    # criterion-1 analogue: clean-run switches at the scripted indices
    hits = total = 0
    for seed in range(8):
        crossings = first_crossings(by_seed[seed].states, 3)
        for transition, true_index in (((0, 1), 50), ((1, 2), 110)):
            total += 1
            if transition in crossings and abs(crossings[transition] - true_index) <= 2:
                hits += 1
    assert hits / total >= 0.95, f"pipeline recovered {hits}/{total} switches"

    # criterion-3 analogue: anomalies forked, clean runs not
    assert by_seed[8].has_fork and by_seed[9].has_fork
    assert not any(by_seed[s].has_fork for s in range(8))

    # criterion-4 analogue: accuracy tied to state-2 occupancy
    acc_csv = tmp_path / "acc.csv"
    task_jitter = {"arc": 0.000, "lambada": 0.001, "piqa": -0.001, "sciq": 0.002}
    with open(acc_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["size", "seed", "task", "accuracy"])
        for seed in range(10):
            true_counts2 = 44 if seed < 8 else 30
            for task, jitter in task_jitter.items():
                writer.writerow(["synth", seed, task, 0.5 + 0.003 * true_counts2 + jitter])
    reg_csv = tmp_path / "reg.csv"
    assert cli_main(["predict", "--maps", str(maps_csv), "--accuracy", str(acc_csv), "--out", str(reg_csv)]) == 0
    with open(reg_csv) as f:
        rows = list(csv.DictReader(f))
    r2 = float(rows[0]["r_squared"])
    assert r2 >= 0.9, f"pipeline regression R^2 = {r2:.3f}"
    fitted = {int(r["seed"]): float(r["fitted_z"]) for r in rows}
    lowest_two = set(sorted(fitted, key=fitted.get)[:2])
    assert lowest_two == {8, 9}, f"lowest fitted seeds {lowest_two}"

    # report renders from the documented CSV schema alone
    kappa_like = tmp_path / "metric.csv"
    with open(kappa_like, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["task", "size", "seed", "step", "accuracy"])
        for seed in range(10):
            for step in (1, 10, 100, 1000, 10000):
                writer.writerow(["arc", "synth", seed, step, 0.3 + 0.05 * math.log10(step) + 0.01 * seed])
    fig = tmp_path / "fig.svg"
    assert cli_main(["report", "--figure", "downstream", "--input", str(kappa_like), "--out", str(fig)]) == 0
    assert fig.read_text().startswith("<svg")

    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"pipeline took {elapsed:.1f} s"
