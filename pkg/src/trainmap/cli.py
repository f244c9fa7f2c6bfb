"""Command line interface.

Every subcommand reads/writes the documented CSV, JSON, or container
formats, exits 0 on success, 2 on usage errors, and 1 on data errors,
and drops a provenance record (inputs with digests, config hash, tool
version, timestamp) next to its primary output. Outputs are byte-stable
for identical inputs; the provenance timestamp is the only exception.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__, _svg, agreement, cartography, hmm, paramstats, probe, stability, synthlab
from .errors import DataError
from .paramstats import STAT_NAMES
from .tensorstore import load_manifest


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_provenance(args: argparse.Namespace, inputs: Iterable[str | Path], primary_output: str | Path) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func" and not callable(v)}
    config_repr = json.dumps(config, sort_keys=True, default=str)
    record = {
        "tool": "trainmap",
        "version": __version__,
        "command": getattr(args, "command", ""),
        "config": config,
        "config_hash": hashlib.sha256(config_repr.encode()).hexdigest(),
        "inputs": {
            str(p): _sha256_file(Path(p)) for p in inputs if Path(p).is_file()
        },
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    out = Path(primary_output)
    dest = out / "provenance.json" if out.is_dir() else out.with_name(out.name + ".provenance.json")
    dest.write_text(json.dumps(record, indent=1, default=str) + "\n", encoding="utf-8")


def _load_size_ensemble(stats_path: str, size: str | None) -> list[paramstats.StatSeries]:
    ensemble = paramstats.read_stats_csv(stats_path)
    if not ensemble:
        raise DataError(f"{stats_path}: no series found")
    sizes = sorted({s.size for s in ensemble})
    if size is None:
        if len(sizes) > 1:
            raise DataError(f"{stats_path} holds sizes {sizes}; pass --size")
        return ensemble
    selected = [s for s in ensemble if s.size == size]
    if not selected:
        raise DataError(f"{stats_path}: no series for size {size!r} (have {sizes})")
    return selected


def _standardization(args: argparse.Namespace) -> cartography.StandardizationMode:
    return cartography.StandardizationMode(kind=args.mode, epsilon=args.epsilon)


def _fit_config(args: argparse.Namespace) -> hmm.FitConfig:
    return hmm.FitConfig(
        restarts=args.restarts,
        max_iterations=args.max_iterations,
        tolerance=args.tolerance,
        variance_floor=args.variance_floor,
        rng_seed=args.seed,
    )


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args: argparse.Namespace) -> None:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs: list[str] = []
    if args.kind in ("checkpoints", "series"):
        if not args.script:
            raise DataError(f"--script is required for --kind {args.kind}")
        script = synthlab.RegimeScript.from_json(args.script)
        inputs.append(args.script)
        if args.kind == "checkpoints":
            manifests, realized, truth = synthlab.generate_checkpoints(script, out_dir, rng_seed=args.seed)
            paramstats.write_stats_csv(realized, out_dir / "realized_stats.csv")
            print(f"wrote {len(manifests)} runs under {out_dir}")
        else:
            ensemble, truth = synthlab.generate_stat_series(script, rng_seed=args.seed)
            paramstats.write_stats_csv(ensemble, out_dir / "stats.csv")
            print(f"wrote stats for {len(ensemble)} runs to {out_dir / 'stats.csv'}")
        synthlab.write_truth_csv(truth, script.schedule, out_dir / "truth.csv")
    elif args.kind == "probe":
        cfg = synthlab.SynthTaskConfig(
            classes=args.classes,
            dim=args.dim,
            layers=args.layers,
            informative_layer=args.informative_layer,
            separation=args.separation,
            tokens_per_class=args.tokens_per_class,
            rng_seed=args.seed,
        )
        dataset = synthlab.generate_probe_task(cfg)
        meta = {"task": "synth", "size": "synth", "seed": args.seed, "step": 143000}
        probe.write_representation_dump(dataset, meta, out_dir / "reps.ptns")
        random_cfg = synthlab.SynthTaskConfig(
            classes=args.classes,
            dim=args.dim,
            layers=args.layers,
            informative_layer=args.informative_layer,
            separation=0.0,
            tokens_per_class=args.tokens_per_class,
            rng_seed=args.seed,
        )
        random_dataset = synthlab.generate_probe_task(random_cfg)
        meta0 = {"task": "synth", "size": "synth", "seed": args.seed, "step": 0}
        probe.write_representation_dump(random_dataset, meta0, out_dir / "reps-step0.ptns")
        synthlab.echo_config_jsonl(out_dir / "echo.jsonl", cfg, {"tokens": dataset.num_tokens})
        print(f"wrote {out_dir / 'reps.ptns'} and the step-0 baseline dump")
    elif args.kind == "logs":
        cfg = synthlab.SynthLogConfig(
            items=args.items,
            options=args.options,
            target_kappa=args.kappa,
            accuracy=args.accuracy,
            rng_seed=args.seed,
            raters=args.raters,
            task=args.task,
            size=args.size or "synth",
            step=args.step,
        )
        logs = synthlab.generate_prediction_logs(cfg)
        for log in logs:
            agreement.write_log(log, out_dir / f"log-seed{log.seed}.jsonl")
        realized = {
            "accuracy_seed0": agreement.accuracy(logs[0]),
            "kappa_vs_seed0": agreement.inter_seed_agreement(logs)[logs[-1].seed].kappa,
        }
        synthlab.echo_config_jsonl(out_dir / "echo.jsonl", cfg, realized)
        print(f"wrote {len(logs)} logs to {out_dir}")
    _write_provenance(args, inputs, out_dir)


# ---------------------------------------------------------------------------
# stats


def _cmd_stats(args: argparse.Namespace) -> None:
    cfg = paramstats.StatConfig(
        include_patterns=tuple(args.include) if args.include else ("*",),
        exclude_patterns=tuple(args.exclude) if args.exclude else (),
    )
    series = []
    for manifest_path in args.manifest:
        manifest = load_manifest(manifest_path)
        series.append(paramstats.run_statistics(manifest, cfg))
    paramstats.write_stats_csv(series, args.out)
    print(f"wrote statistics of {len(series)} runs to {args.out}")
    _write_provenance(args, args.manifest, args.out)


# ---------------------------------------------------------------------------
# hmm


def _cmd_hmm_fit(args: argparse.Namespace) -> None:
    ensemble = _load_size_ensemble(args.stats, args.size)
    standardized = cartography.standardize(ensemble, _standardization(args))
    model, report = hmm.fit(standardized.sequences(), args.states, _fit_config(args), STAT_NAMES)
    # saved models carry canonical state labels for their training ensemble
    model, _ = cartography.canonicalize_model(model, standardized)
    hmm.save_model(model, args.out)
    if args.fit_report:
        doc = {
            "restart_log_likelihoods": list(report.restart_log_likelihoods),
            "chosen_restart": report.chosen_restart,
            "iteration_log_likelihoods": list(report.iteration_log_likelihoods),
            "converged": report.converged,
            "backend": hmm.BACKEND,
        }
        Path(args.fit_report).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print(
        f"fitted {args.states}-state model on {len(ensemble)} runs "
        f"(final log-likelihood {report.iteration_log_likelihoods[-1]:.3f}, "
        f"converged={report.converged})"
    )
    _write_provenance(args, [args.stats], args.out)


def _cmd_hmm_select(args: argparse.Namespace) -> None:
    if args.kmin > args.kmax:
        raise DataError(f"--kmin {args.kmin} exceeds --kmax {args.kmax}")
    ensemble = _load_size_ensemble(args.stats, args.size)
    standardized = cartography.standardize(ensemble, _standardization(args))
    chosen, table = hmm.select_num_states(
        standardized.sequences(), range(args.kmin, args.kmax + 1), _fit_config(args), STAT_NAMES
    )
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["num_states", "bic", "chosen"])
        for k, bic in table:
            writer.writerow([k, repr(bic), int(k == chosen)])
    print(f"chose {chosen} states by BIC; table written to {args.out}")
    _write_provenance(args, [args.stats], args.out)


# ---------------------------------------------------------------------------
# maps


def _cmd_map(args: argparse.Namespace) -> None:
    ensemble = _load_size_ensemble(args.stats, args.size)
    standardized = cartography.standardize(ensemble, _standardization(args))
    model = hmm.load_model(args.model)
    maps = cartography.decode_maps(model, standardized)
    cartography.write_maps_csv(maps, args.out)
    forked = [m.seed for m in maps if m.has_fork]
    print(f"decoded {len(maps)} maps; forked seeds: {forked if forked else 'none'}")
    _write_provenance(args, [args.stats, args.model], args.out)


def _cmd_drivers(args: argparse.Namespace) -> None:
    model = hmm.load_model(args.model)
    if (args.from_state is None) != (args.to_state is None):
        raise DataError("--from-state and --to-state must be given together")
    if args.from_state is not None:
        transitions = [(args.from_state, args.to_state)]
    else:
        transitions = [(a, a + 1) for a in range(model.num_states - 1)]
    drivers: list[cartography.TransitionDriver] = []
    for a, b in transitions:
        drivers.extend(cartography.transition_drivers(model, (a, b), args.top))
    cartography.write_drivers_csv(drivers, args.out)
    print(f"wrote {len(drivers)} drivers to {args.out}")
    _write_provenance(args, [args.model], args.out)


def _cmd_transitions(args: argparse.Namespace) -> None:
    maps = cartography.read_maps_csv(args.maps)
    summaries = cartography.transition_step_summary(maps, exclude_seeds=args.exclude_seed or ())
    cartography.write_transition_summary_csv(summaries, args.out)
    print(f"wrote {len(summaries)} transition summaries to {args.out}")
    _write_provenance(args, [args.maps], args.out)


# ---------------------------------------------------------------------------
# regression


def _single_size(maps: Sequence[cartography.TrainingMap]) -> str:
    sizes = sorted({m.size for m in maps})
    if len(sizes) != 1:
        raise DataError(f"maps mix sizes {sizes}")
    return sizes[0]


def _z_for_maps(maps: Sequence[cartography.TrainingMap], accuracy_path: str) -> dict[int, float]:
    size = _single_size(maps)
    table = stability.read_accuracy_csv(accuracy_path)
    return stability.zscore(table).averages(size)


def _cmd_predict(args: argparse.Namespace) -> None:
    maps = cartography.read_maps_csv(args.maps)
    z = _z_for_maps(maps, args.accuracy)
    k = args.states if args.states is not None else max(max(m.states) for m in maps) + 1
    bags = [stability.bag_of_states(m, k) for m in sorted(maps, key=lambda m: m.seed)]
    result = stability.map_performance_regression(bags, z)
    stability.write_regression_csv(bags, z, result, args.out)
    coef = ", ".join(f"state{i}={c:.4g}" for i, c in enumerate(result.coefficients))
    print(f"R^2 = {result.r_squared:.4f}; coefficients: {coef}; intercept = {result.intercept:.4g}")
    _write_provenance(args, [args.maps, args.accuracy], args.out)


def _cmd_zero_shot(args: argparse.Namespace) -> None:
    model = hmm.load_model(args.model)
    ensemble = _load_size_ensemble(args.stats, args.size)
    standardized = cartography.standardize(ensemble, _standardization(args))
    maps = stability.zero_shot_decode(model, standardized)
    cartography.write_maps_csv(maps, args.out)
    print(f"zero-shot decoded {len(maps)} runs of size {standardized.size} to {args.out}")
    _write_provenance(args, [args.model, args.stats], args.out)


def _cmd_truncate(args: argparse.Namespace) -> None:
    maps = cartography.read_maps_csv(args.maps)
    try:
        steps = [int(s) for s in args.steps.split(",") if s.strip()]
    except ValueError:
        raise DataError(f"--steps must be comma-separated integers, got {args.steps!r}") from None
    z = _z_for_maps(maps, args.accuracy)
    curve = stability.truncation_curve(maps, z, steps)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "r_squared"])
        for step, r2 in curve:
            writer.writerow([step, repr(r2)])
    print(f"wrote truncation curve with {len(curve)} points to {args.out}")
    _write_provenance(args, [args.maps, args.accuracy], args.out)


# ---------------------------------------------------------------------------
# agreement

_KAPPA_HEADER = ("task", "size", "seed", "step", "kappa", "observed_agreement", "expected_agreement", "n_items")


def _cmd_kappa(args: argparse.Namespace) -> None:
    logs = [agreement.read_log(p) for p in args.log]
    results = agreement.inter_seed_agreement(logs, reference_seed=args.reference)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(_KAPPA_HEADER)
        for log in sorted(logs, key=lambda lg: lg.seed):
            r = results[log.seed]
            writer.writerow(
                [log.task, log.size, log.seed, log.step, repr(r.kappa), repr(r.observed_agreement), repr(r.expected_agreement), r.n_items]
            )
    print(f"wrote inter-seed agreement for {len(results)} seeds to {args.out}")
    _write_provenance(args, args.log, args.out)


def _cmd_self_consistency(args: argparse.Namespace) -> None:
    logs = [agreement.read_log(p) for p in args.log]
    results = agreement.self_consistency(logs)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(_KAPPA_HEADER)
        for log in sorted(logs, key=lambda lg: lg.step):
            r = results[log.step]
            writer.writerow(
                [log.task, log.size, log.seed, log.step, repr(r.kappa), repr(r.observed_agreement), repr(r.expected_agreement), r.n_items]
            )
    print(f"wrote self-consistency for {len(results)} steps to {args.out}")
    _write_provenance(args, args.log, args.out)


def _cmd_accuracy(args: argparse.Namespace) -> None:
    logs = [agreement.read_log(p) for p in args.log]
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["task", "size", "seed", "step", "accuracy"])
        for log in logs:
            writer.writerow([log.task, log.size, log.seed, log.step, repr(agreement.accuracy(log))])
    print(f"wrote accuracy of {len(logs)} logs to {args.out}")
    _write_provenance(args, args.log, args.out)


def _cmd_outliers(args: argparse.Namespace) -> None:
    table = stability.read_accuracy_csv(args.accuracy)
    z = stability.zscore(table)
    flags = stability.flag_outliers(z, threshold=args.threshold, rule=args.rule)
    stability.write_outliers_csv(flags, args.out)
    if args.zscores_out:
        with open(args.zscores_out, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["size", "seed", "task", "z", "avg_z"])
            for (size, seed), values in sorted(z.cells.items()):
                for task, value in zip(z.tasks, values):
                    writer.writerow([size, seed, task, repr(float(value)), repr(z.row_average[(size, seed)])])
    labels = [f"{f.size}/seed{f.seed}" for f in flags]
    print(f"flagged {len(flags)} outlier runs: {labels if labels else 'none'}")
    _write_provenance(args, [args.accuracy], args.out)


def _cmd_bias(args: argparse.Namespace) -> None:
    groups: dict[tuple[str, str, int, int], list[tuple[float, float]]] = {}
    with open(args.scores, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        expected = ("task", "size", "seed", "step", "score_preferred", "score_other")
        if header is None or tuple(header) != expected:
            raise DataError(f"{args.scores}: expected header {','.join(expected)}")
        for row in reader:
            if not row:
                continue
            key = (row[0], row[1], int(row[2]), int(row[3]))
            groups.setdefault(key, []).append((float(row[4]), float(row[5])))
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["task", "size", "seed", "step", "proportion_preferred"])
        for key in sorted(groups):
            writer.writerow(list(key) + [repr(agreement.preference_proportion(groups[key]))])
    print(f"wrote preference proportions for {len(groups)} groups to {args.out}")
    _write_provenance(args, [args.scores], args.out)


# ---------------------------------------------------------------------------
# probing


def _cmd_probe_train(args: argparse.Namespace) -> None:
    dataset, meta = probe.read_representation_dump(args.data)
    config = probe.TrainConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        batch_size=args.batch_size,
        rng_seed=args.seed,
        prior=args.prior,
        heldout_fraction=args.heldout_fraction,
    )
    model, report = probe.train(dataset, config)
    probe.save_probe(model, args.out)
    doc = {
        "data_bits": report.data_bits,
        "kl_bits": report.kl_bits,
        "total_bits": report.total_bits,
        "macro_f1": report.macro_f1,
        "meta": meta,
    }
    inputs = [args.data]
    if args.baseline_report:
        baseline = json.loads(Path(args.baseline_report).read_text(encoding="utf-8"))
        base = probe.CodelengthReport(
            data_bits=float(baseline["data_bits"]),
            kl_bits=float(baseline["kl_bits"]),
            macro_f1=float(baseline["macro_f1"]),
        )
        doc["codelength_ratio"] = probe.codelength_ratio(report, base)
        inputs.append(args.baseline_report)
    if args.report_out:
        Path(args.report_out).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    ratio = f", ratio {doc['codelength_ratio']:.3f}" if "codelength_ratio" in doc else ""
    print(
        f"trained probe: {report.total_bits:.1f} bits total "
        f"({report.data_bits:.1f} data + {report.kl_bits:.1f} kl), "
        f"macro-F1 {report.macro_f1:.3f}{ratio}"
    )
    _write_provenance(args, inputs, args.out)


def _cmd_ssa(args: argparse.Namespace) -> None:
    a = probe.load_probe(args.probe_a)
    b = probe.load_probe(args.probe_b)
    angles, mean_angle = probe.subspace_angles(a.weight_means, b.weight_means)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "angle_degrees", "mean_angle"])
        for i, angle in enumerate(angles):
            writer.writerow([i, repr(float(angle)), repr(mean_angle)])
    print(f"mean subspace angle {mean_angle:.4f} degrees over {len(angles)} directions")
    _write_provenance(args, [args.probe_a, args.probe_b], args.out)


def _cmd_correlate(args: argparse.Namespace) -> None:
    rows: dict[str, dict[tuple[str, int], float]] = {}
    with open(args.metrics, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        expected = ("name", "task", "step", "value")
        if header is None or tuple(header) != expected:
            raise DataError(f"{args.metrics}: expected header {','.join(expected)}")
        for row in reader:
            if not row:
                continue
            rows.setdefault(row[0], {})[(row[1], int(row[2]))] = float(row[3])
    if not rows:
        raise DataError(f"{args.metrics}: no rows")
    key_sets = {name: set(points) for name, points in rows.items()}
    reference = sorted(key_sets[next(iter(rows))])
    for name, keys in key_sets.items():
        if keys != set(reference):
            raise DataError(f"{args.metrics}: {name!r} covers different (task, step) cells")
    trajectories = {name: [rows[name][k] for k in reference] for name in sorted(rows)}
    summary = probe.trajectory_correlations(trajectories)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["name_a", "name_b", "r", "p_value"])
        for i, a in enumerate(summary.names):
            for j, b in enumerate(summary.names):
                writer.writerow([a, b, repr(float(summary.r_matrix[i, j])), repr(float(summary.p_values[i, j]))])
    if args.summary_out:
        Path(args.summary_out).write_text(
            json.dumps({"fisher_mean": summary.fisher_mean, "names": list(summary.names)}, indent=1) + "\n",
            encoding="utf-8",
        )
    print(f"Fisher-averaged correlation over {len(summary.names)}^2 pairs: {summary.fisher_mean:.4f}")
    _write_provenance(args, [args.metrics], args.out)


# ---------------------------------------------------------------------------
# report


def _aggregate(values: np.ndarray, how: str) -> tuple[float, float, float]:
    if how == "mean":
        center = float(np.mean(values))
        spread = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
        return center, center - spread, center + spread
    return (
        float(np.median(values)),
        float(np.percentile(values, 25)),
        float(np.percentile(values, 75)),
    )


def _figure_downstream(args: argparse.Namespace) -> list[_svg.Panel]:
    with open(args.input, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or len(header) < 5 or tuple(header[:4]) != ("task", "size", "seed", "step"):
            raise DataError(f"{args.input}: expected a task,size,seed,step,<metric> CSV")
        metric = args.value_column or header[4]
        if metric not in header:
            raise DataError(f"{args.input}: no column {metric!r}")
        value_idx = header.index(metric)
        data: dict[str, dict[str, dict[int, list[float]]]] = {}
        for row in reader:
            if not row:
                continue
            task, size, step = row[0], row[1], int(row[3])
            data.setdefault(size, {}).setdefault(task, {}).setdefault(step, []).append(float(row[value_idx]))
    panels = []
    for size in sorted(data):
        panel = _svg.Panel(title=size, x_label="step (log scale)", y_label=metric, log10_x=True)
        for task in sorted(data[size]):
            by_step = data[size][task]
            xs, centers, lows, highs = [], [], [], []
            for step in sorted(by_step):
                center, low, high = _aggregate(np.asarray(by_step[step]), args.aggregate)
                xs.append(np.log10(step + 1.0))
                centers.append(center)
                lows.append(low)
                highs.append(high)
            panel.series.append(_svg.Series(label=task, xs=xs, centers=centers, lows=lows, highs=highs))
        panels.append(panel)
    return panels


def _figure_truncation(args: argparse.Namespace) -> list[_svg.Panel]:
    with open(args.input, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != ("step", "r_squared"):
            raise DataError(f"{args.input}: expected a step,r_squared CSV")
        points = [(int(row[0]), float(row[1])) for row in reader if row]
    if not points:
        raise DataError(f"{args.input}: empty curve")
    points.sort()
    panel = _svg.Panel(title="prediction quality vs truncation", x_label="truncation step", y_label="R^2")
    panel.series.append(
        _svg.Series(
            label="R^2",
            xs=[float(p[0]) for p in points],
            centers=[p[1] for p in points],
        )
    )
    return [panel]


def _cmd_report(args: argparse.Namespace) -> None:
    if args.figure == "downstream":
        panels = _figure_downstream(args)
    else:
        panels = _figure_truncation(args)
    _svg.render(panels, args.out)
    print(f"wrote {args.figure} figure ({len(panels)} panels) to {args.out}")
    _write_provenance(args, [args.input], args.out)


# ---------------------------------------------------------------------------
# parser


def _add_standardize_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", default=cartography.PER_CHECKPOINT, choices=cartography.MODE_CHOICES, help="standardization mode")
    p.add_argument("--epsilon", type=float, default=1e-12, help="degenerate-feature std guard")


def _add_fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--variance-floor", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0, help="rng seed for restarts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trainmap",
        description="Seed-stability analysis of LM pre-training runs.",
    )
    parser.add_argument("--version", action="version", version=f"trainmap {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")

    p = sub.add_parser("synth", help="generate synthetic runs, probing data, or prediction logs")
    p.add_argument("--kind", required=True, choices=("checkpoints", "series", "probe", "logs"))
    p.add_argument("--script", help="regime script JSON (checkpoints/series)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--informative-layer", type=int, default=1)
    p.add_argument("--separation", type=float, default=5.0)
    p.add_argument("--tokens-per-class", type=int, default=64)
    p.add_argument("--items", type=int, default=10_000)
    p.add_argument("--options", type=int, default=4)
    p.add_argument("--kappa", type=float, default=0.5)
    p.add_argument("--accuracy", type=float, default=0.5)
    p.add_argument("--raters", type=int, default=2)
    p.add_argument("--task", default="synth")
    p.add_argument("--size", default=None)
    p.add_argument("--step", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("stats", help="compute the 14 parameter statistics per checkpoint")
    p.add_argument("--manifest", action="append", required=True, help="run manifest (repeatable)")
    p.add_argument("--include", action="append", help="tensor name glob to include (repeatable)")
    p.add_argument("--exclude", action="append", help="tensor name glob to exclude (repeatable)")
    p.add_argument("--out", required=True, help="stats CSV")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("hmm-fit", help="fit the training-map HMM on one size's runs")
    p.add_argument("--stats", required=True)
    p.add_argument("--size", default=None)
    p.add_argument("--states", type=int, default=hmm.DEFAULT_NUM_STATES)
    _add_standardize_options(p)
    _add_fit_options(p)
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--fit-report", default=None, help="optional fit-report JSON")
    p.set_defaults(func=_cmd_hmm_fit)

    p = sub.add_parser("hmm-select", help="choose the state count by BIC")
    p.add_argument("--stats", required=True)
    p.add_argument("--size", default=None)
    p.add_argument("--kmin", type=int, default=2)
    p.add_argument("--kmax", type=int, default=8)
    _add_standardize_options(p)
    _add_fit_options(p)
    p.add_argument("--out", required=True, help="BIC table CSV")
    p.set_defaults(func=_cmd_hmm_select)

    p = sub.add_parser("map", help="decode training maps with a fitted model")
    p.add_argument("--stats", required=True)
    p.add_argument("--size", default=None)
    p.add_argument("--model", required=True)
    _add_standardize_options(p)
    p.add_argument("--out", required=True, help="maps CSV")
    p.set_defaults(func=_cmd_map)

    p = sub.add_parser("drivers", help="rank features driving a state transition")
    p.add_argument("--model", required=True)
    p.add_argument("--from-state", type=int, default=None)
    p.add_argument("--to-state", type=int, default=None)
    p.add_argument("--top", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_drivers)

    p = sub.add_parser("transitions", help="summarize transition steps across seeds")
    p.add_argument("--maps", required=True)
    p.add_argument("--exclude-seed", action="append", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_transitions)

    p = sub.add_parser("predict", help="regress final z-scores on bag-of-states")
    p.add_argument("--maps", required=True)
    p.add_argument("--accuracy", required=True, help="accuracy CSV (size,seed,task,accuracy)")
    p.add_argument("--states", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("zero-shot", help="decode one size's runs with another size's model")
    p.add_argument("--model", required=True, help="foreign model JSON")
    p.add_argument("--stats", required=True, help="target size's stats CSV")
    p.add_argument("--size", default=None)
    _add_standardize_options(p)
    p.add_argument("--out", required=True, help="maps CSV")
    p.set_defaults(func=_cmd_zero_shot)

    p = sub.add_parser("truncate", help="prediction quality from truncated runs")
    p.add_argument("--maps", required=True)
    p.add_argument("--accuracy", required=True)
    p.add_argument("--steps", required=True, help="comma-separated truncation steps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_truncate)

    p = sub.add_parser("kappa", help="inter-seed agreement at one step")
    p.add_argument("--log", action="append", required=True, help="prediction log (repeatable)")
    p.add_argument("--reference", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_kappa)

    p = sub.add_parser("self-consistency", help="agreement of each step with the final step")
    p.add_argument("--log", action="append", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_self_consistency)

    p = sub.add_parser("accuracy", help="accuracy of prediction logs")
    p.add_argument("--log", action="append", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_accuracy)

    p = sub.add_parser("outliers", help="flag outlier (size, seed) runs from accuracies")
    p.add_argument("--accuracy", required=True)
    p.add_argument("--threshold", type=float, default=2.0)
    p.add_argument("--rule", default="any-task", choices=("any-task", "majority"))
    p.add_argument("--zscores-out", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_outliers)

    p = sub.add_parser("bias", help="preference proportions from paired scores")
    p.add_argument("--scores", required=True, help="CSV: task,size,seed,step,score_preferred,score_other")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bias)

    p = sub.add_parser("probe-train", help="train an MDL probe on a representation dump")
    p.add_argument("--data", required=True, help="representation dump (.ptns)")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prior", default="log-uniform", choices=probe.PRIORS)
    p.add_argument("--heldout-fraction", type=float, default=0.25)
    p.add_argument("--baseline-report", default=None, help="report JSON of the random baseline probe")
    p.add_argument("--report-out", default=None, help="codelength report JSON")
    p.add_argument("--out", required=True, help="probe JSON")
    p.set_defaults(func=_cmd_probe_train)

    p = sub.add_parser("ssa", help="principal subspace angles between two probes")
    p.add_argument("--probe-a", required=True)
    p.add_argument("--probe-b", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ssa)

    p = sub.add_parser("correlate", help="Fisher-averaged trajectory correlations")
    p.add_argument("--metrics", required=True, help="CSV: name,task,step,value")
    p.add_argument("--summary-out", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_correlate)

    p = sub.add_parser("report", help="render SVG figures from report CSVs")
    p.add_argument("--figure", required=True, choices=("downstream", "truncation"))
    p.add_argument("--input", required=True)
    p.add_argument("--value-column", default=None)
    p.add_argument("--aggregate", default="median", choices=("median", "mean"))
    p.add_argument("--out", required=True, help="SVG file")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
