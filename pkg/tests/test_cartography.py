import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trainmap import hmm
from trainmap.cartography import (
    PER_CHECKPOINT,
    POOLED,
    StandardizationMode,
    TrainingMap,
    TransitionDriver,
    canonical_relabeling,
    canonicalize_model,
    decode_maps,
    detect_fork,
    fork_positions,
    read_maps_csv,
    standardize,
    transition_drivers,
    transition_step_summary,
    write_maps_csv,
)
from trainmap.errors import DataError
from trainmap.paramstats import STAT_NAMES, StatSeries, StatVector

D = len(STAT_NAMES)


def make_series(values: np.ndarray, seed: int, size: str = "s", steps=None) -> StatSeries:
    steps = steps if steps is not None else list(range(values.shape[0]))
    return StatSeries(
        size=size,
        seed=seed,
        stats=tuple(StatVector.from_array(v, step=s) for v, s in zip(values, steps)),
    )


def make_map(states, seed=0, size="s"):
    states = tuple(states)
    return TrainingMap(
        size=size,
        seed=seed,
        steps=tuple(range(len(states))),
        states=states,
        fork_positions=fork_positions(states),
    )


def test_per_checkpoint_hand_example(rng):
    base = rng.standard_normal((4, D))
    ensemble = [make_series(base + offset, seed) for seed, offset in enumerate((-1.0, 0.0, 1.0))]
    out = standardize(ensemble, StandardizationMode(PER_CHECKPOINT))
    # each feature at each step sees values {x-1, x, x+1}: sample std 1
    assert np.allclose(out.data[0], -1.0)
    assert np.allclose(out.data[1], 0.0)
    assert np.allclose(out.data[2], 1.0)


def test_standardized_columns_are_centered(rng):
    ensemble = [make_series(rng.standard_normal((6, D)) * 3 + 5, seed) for seed in range(5)]
    out = standardize(ensemble, StandardizationMode(PER_CHECKPOINT))
    assert np.max(np.abs(out.data.mean(axis=0))) < 1e-9
    assert np.max(np.abs(out.data.std(axis=0, ddof=1) - 1.0)) < 1e-9


def test_degenerate_feature_flagged(rng):
    values = rng.standard_normal((3, D))
    ensemble = [make_series(values.copy(), seed) for seed in range(3)]  # identical seeds
    out = standardize(ensemble, StandardizationMode(PER_CHECKPOINT))
    assert np.all(out.degenerate)
    assert np.allclose(out.data, 0.0)


def test_pooled_idempotent(rng):
    ensemble = [make_series(rng.standard_normal((5, D)), seed) for seed in range(4)]
    once = standardize(ensemble, StandardizationMode(POOLED))
    again_input = [make_series(once.data[i], seed=i) for i in range(4)]
    twice = standardize(again_input, StandardizationMode(POOLED))
    assert np.allclose(twice.data, once.data, atol=1e-9)


def test_standardize_errors(rng):
    single = [make_series(rng.standard_normal((4, D)), 0)]
    with pytest.raises(DataError, match="2 seeds"):
        standardize(single, StandardizationMode(PER_CHECKPOINT))
    misaligned = [
        make_series(rng.standard_normal((4, D)), 0, steps=[0, 1, 2, 3]),
        make_series(rng.standard_normal((4, D)), 1, steps=[0, 1, 2, 4]),
    ]
    with pytest.raises(DataError, match="steps"):
        standardize(misaligned, StandardizationMode(PER_CHECKPOINT))


def test_fork_definitions():
    assert detect_fork(make_map([0, 1, 2, 3, 4])) == (False, ())
    assert detect_fork(make_map([0, 1, 2, 1, 2, 3])) == (True, (3, 4))
    assert detect_fork(make_map([0, 0, 1, 1])) == (False, ())
    assert detect_fork(make_map([0, 1, 0])) == (True, (2,))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=4), min_size=1, max_size=30))
def test_fork_iff_rle_repeats(states):
    rle = [states[0]]
    for s in states[1:]:
        if s != rle[-1]:
            rle.append(s)
    has_fork, positions = detect_fork(make_map(states))
    assert has_fork == (len(set(rle)) != len(rle))
    assert has_fork == bool(positions)


def test_canonical_relabeling_single_run():
    raw = np.array([[2, 2, 0, 0, 1]])
    perm = canonical_relabeling(raw, 3)
    assert perm[raw[0]].tolist() == [0, 0, 1, 1, 2]


def test_canonical_relabeling_consistent_across_runs():
    raw = np.array([[1, 1, 0, 2], [1, 0, 0, 2], [1, 1, 0, 2]])
    perm = canonical_relabeling(raw, 3)
    # majority order of appearance: 1, then 0, then 2
    assert perm.tolist() == [1, 0, 2]
    relabeled = perm[raw]
    assert relabeled[0].tolist() == [0, 0, 1, 2]


def test_canonical_relabeling_preserves_forks(rng):
    for _ in range(20):
        states = rng.integers(0, 3, size=12)
        raw = states[None, :]
        perm = canonical_relabeling(raw, 3)
        relabeled = perm[states]
        assert bool(fork_positions(states)) == bool(fork_positions(relabeled.tolist()))


def _separated_model(k):
    means = np.zeros((k, D))
    for s in range(k):
        means[s, 0] = 10.0 * s
    return hmm.HmmModel(
        initial=np.full(k, 1.0 / k),
        transition=np.full((k, k), 1.0 / k),
        means=means,
        variances=np.full((k, D), 0.5),
        feature_names=STAT_NAMES,
    )


def _ensemble_from_paths(paths: np.ndarray, model: hmm.HmmModel, rng):
    # emissions already live in the model's (standardized) feature space
    from trainmap.cartography import StandardizedEnsemble

    data = model.means[paths] + 0.1 * rng.standard_normal(paths.shape + (D,))
    return StandardizedEnsemble(
        size="s",
        seeds=tuple(range(paths.shape[0])),
        steps=tuple(range(paths.shape[1])),
        data=data,
        feature_names=STAT_NAMES,
        mode=POOLED,
        scaler_mean=np.zeros(D),
        scaler_std=np.ones(D),
        degenerate=np.zeros(D, dtype=bool),
    )


def test_decode_maps_canonical_and_anomaly(rng):
    model = _separated_model(3)
    clean = [0] * 5 + [1] * 5 + [2] * 5
    anomalous = [0] * 5 + [1] * 3 + [0] * 2 + [2] * 5
    paths = np.array([clean, clean, clean, anomalous])
    # emissions carry the state identity; pooled standardization keeps it
    ensemble = _ensemble_from_paths(paths, model, rng)
    maps = decode_maps(model, ensemble)
    assert [m.states for m in maps[:3]] == [tuple(clean)] * 3
    assert maps[3].states != tuple(clean)
    assert maps[3].has_fork
    assert not any(m.has_fork for m in maps[:3])


def test_canonicalize_model_aligns_labels(rng):
    base = _separated_model(3)
    shuffled = hmm.permute_states(base, (2, 0, 1))
    paths = np.array([[0, 0, 1, 1, 2, 2]] * 3)
    ensemble = _ensemble_from_paths(paths, base, rng)
    canonical, maps = canonicalize_model(shuffled, ensemble)
    assert maps[0].states == (0, 0, 1, 1, 2, 2)
    # decoding with the permuted model directly now yields canonical labels
    assert hmm.viterbi(canonical, ensemble.sequences()[0]).tolist() == [0, 0, 1, 1, 2, 2]


def test_transition_step_summary_hand_case():
    m1 = TrainingMap(size="s", seed=0, steps=(0, 5000, 10000), states=(0, 1, 1), fork_positions=())
    m2 = TrainingMap(size="s", seed=1, steps=(0, 6000, 10000), states=(0, 0, 1), fork_positions=())
    wait = transition_step_summary([m1, m2])
    assert len(wait) == 1
    summary = wait[0]
    assert (summary.from_state, summary.to_state) == (0, 1)
    assert summary.steps_by_seed == {0: 5000, 1: 10000}
    mean = np.mean([5000, 10000])
    assert summary.mean_step == pytest.approx(mean)
    # the quoted 5000/6000 example: first crossings at those steps
    m3 = TrainingMap(size="s", seed=2, steps=(0, 5000), states=(0, 1), fork_positions=())
    m4 = TrainingMap(size="s", seed=3, steps=(0, 6000), states=(0, 1), fork_positions=())
    summary = transition_step_summary([m3, m4])[0]
    assert summary.mean_step == pytest.approx(5500.0)
    assert summary.std_step == pytest.approx(707.1067811865476, abs=1e-6)


def test_transition_summary_missing_and_excluded():
    with_transition = make_map([0, 0, 1], seed=0)
    without = make_map([0, 0, 0], seed=1)
    summaries = transition_step_summary([with_transition, without])
    assert summaries[0].missing_seeds == (1,)
    assert summaries[0].steps_by_seed == {0: 2}
    excluded = transition_step_summary([with_transition, without], exclude_seeds={0})
    assert excluded[0].steps_by_seed == {}
    assert np.isnan(excluded[0].mean_step)


def test_transition_drivers_constructed_model():
    means = np.zeros((2, D))
    means[1, 0] = 2.0  # feature "l1" up
    means[1, 1] = -1.0  # feature "l2" down
    model = hmm.HmmModel(
        initial=np.array([0.5, 0.5]),
        transition=np.full((2, 2), 0.5),
        means=means,
        variances=np.ones((2, D)),
        feature_names=STAT_NAMES,
    )
    top2 = transition_drivers(model, (0, 1), 2)
    assert top2[0] == TransitionDriver(0, 1, STAT_NAMES[0], "up", 2.0)
    assert top2[1] == TransitionDriver(0, 1, STAT_NAMES[1], "down", 1.0)
    same = transition_drivers(model, (1, 1), 3)
    assert all(d.magnitude == 0.0 for d in same)
    everything = transition_drivers(model, (0, 1), D + 10)
    assert len(everything) == D
    with pytest.raises(DataError):
        transition_drivers(model, (0, 5), 2)


def test_driver_order_breaks_ties_by_name():
    means = np.zeros((2, D))
    means[1, :] = 1.0  # every feature changes by the same amount
    model = hmm.HmmModel(
        initial=np.array([1.0, 0.0]),
        transition=np.full((2, 2), 0.5),
        means=means,
        variances=np.ones((2, D)),
        feature_names=STAT_NAMES,
    )
    drivers = transition_drivers(model, (0, 1), D)
    assert [d.feature for d in drivers] == sorted(STAT_NAMES)


def test_maps_csv_round_trip(tmp_path):
    maps = [make_map([0, 1, 2, 1], seed=0), make_map([0, 1, 2, 2], seed=1)]
    path = tmp_path / "maps.csv"
    write_maps_csv(maps, path)
    back = read_maps_csv(path)
    assert back == maps
