import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binetkit.thresholding import (
    BEST,
    ELBOW_DOWN,
    ELBOW_UP,
    GLOBAL,
    HEURISTICS,
    LP_CENTER,
    LP_LEFT,
    LP_RIGHT,
    PER_ATTRIBUTE,
    PER_EVENT,
    PER_EVENT_ATTRIBUTE,
    ThresholdAssignment,
    ThresholdingError,
    anomaly_ratio,
    anomaly_score,
    apply_strategy,
    apply_thresholds,
    candidate_thresholds,
    find_plateaus,
    ratio_derivatives,
    scores_from_distributions,
    select_threshold,
)


# ---------------------------------------------------------------- oracles

def brute_sigma(p, p_v):
    """Reference anomaly score: direct loop over the distribution."""
    return sum(float(x) for x in p if x > p_v)


def brute_second_derivative(taus, ratios, i):
    """Second derivative of the quadratic through points i-1, i, i+1."""
    coeffs = np.polyfit(taus[i - 1 : i + 2], ratios[i - 1 : i + 2], 2)
    return 2.0 * coeffs[0]


def brute_f1(scores, labels, tau):
    pred = scores > tau
    tp = int((pred & labels).sum())
    fp = int((pred & ~labels).sum())
    fn = int((~pred & labels).sum())
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def random_scores(rng, num_cases=6, num_events=5, num_attrs=2):
    lengths = rng.integers(1, num_events + 1, size=num_cases)
    scores = rng.random((num_cases, num_events, num_attrs))
    for i, n in enumerate(lengths):
        scores[i, n:, :] = 0.0
    return scores, lengths


# ---------------------------------------------------------------- scores

def test_anomaly_score_examples():
    p = np.array([0.5, 0.3, 0.2])
    assert anomaly_score(p, 0.5) == 0.0
    assert anomaly_score(p, 0.3) == pytest.approx(0.5)
    assert anomaly_score(p, 0.2) == pytest.approx(0.8)
    assert anomaly_score(p, 0.0) == pytest.approx(1.0)


def test_anomaly_score_ties_do_not_count():
    p = np.array([0.4, 0.4, 0.2])
    assert anomaly_score(p, 0.4) == 0.0
    assert anomaly_score(p, 0.2) == pytest.approx(0.8)


@given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=12), st.data())
def test_anomaly_score_matches_brute_force(raw, data):
    p = np.array(raw) / np.sum(raw)
    idx = data.draw(st.integers(0, len(raw) - 1))
    got = anomaly_score(p, p[idx])
    assert got == pytest.approx(brute_sigma(p, p[idx]))
    assert 0.0 <= got <= 1.0
    assert anomaly_score(p, p.max()) == 0.0


def test_scores_from_distributions_matches_scalar():
    rng = np.random.default_rng(7)
    probs = rng.random((4, 3, 6))
    probs /= probs.sum(axis=-1, keepdims=True)
    observed = rng.integers(0, 6, size=(4, 3))
    got = scores_from_distributions(probs, observed)
    for i in range(4):
        for j in range(3):
            expected = brute_sigma(probs[i, j], probs[i, j, observed[i, j]])
            assert got[i, j] == pytest.approx(expected)


# ---------------------------------------------------------------- flagging

def test_apply_thresholds_strict_and_padded():
    scores = np.zeros((2, 3, 2))
    scores[0, :, 0] = [0.5, 0.7, 0.9]
    scores[0, :, 1] = [0.7, 0.1, 0.2]
    scores[1, 0, :] = [0.9, 0.9]
    lengths = np.array([3, 1])
    flags = apply_thresholds(scores, ThresholdAssignment(GLOBAL, np.float64(0.7)), lengths)
    assert flags.dtype == np.uint8
    assert flags[0, :, 0].tolist() == [0, 0, 1]   # 0.7 is not > 0.7
    assert flags[0, :, 1].tolist() == [0, 0, 0]
    assert flags[1].tolist() == [[1, 1], [0, 0], [0, 0]]


def test_apply_thresholds_per_attribute_broadcast():
    scores = np.full((1, 2, 2), 0.5)
    lengths = np.array([2])
    flags = apply_thresholds(
        scores, ThresholdAssignment(PER_ATTRIBUTE, np.array([0.4, 0.6])), lengths
    )
    assert flags[0, :, 0].tolist() == [1, 1]
    assert flags[0, :, 1].tolist() == [0, 0]


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30)
def test_padding_never_flagged(seed):
    rng = np.random.default_rng(seed)
    scores, lengths = random_scores(rng)
    tau = ThresholdAssignment(GLOBAL, np.float64(-1.0))  # would flag everything valid
    flags = apply_thresholds(scores, tau, lengths)
    for i, n in enumerate(lengths):
        assert flags[i, n:, :].sum() == 0
        assert flags[i, :n, :].all()


def test_anomaly_ratio_hand_count():
    scores = np.zeros((2, 2, 2))
    scores[0, 0] = [0.9, 0.1]
    scores[0, 1] = [0.4, 0.8]
    scores[1, 0] = [0.2, 0.3]
    lengths = np.array([2, 1])
    # 6 valid slots, of which {0.9, 0.8} exceed 0.5
    assert anomaly_ratio(scores, 0.5, lengths) == pytest.approx(2 / 6)
    assert anomaly_ratio(scores, 0.05, lengths) == pytest.approx(1.0)
    assert anomaly_ratio(scores, 1.0, lengths) == 0.0


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25)
def test_anomaly_ratio_non_increasing(seed):
    rng = np.random.default_rng(seed)
    scores, lengths = random_scores(rng)
    taus = np.linspace(0, 1, 9)
    ratios = [anomaly_ratio(scores, t, lengths) for t in taus]
    assert all(0.0 <= r <= 1.0 for r in ratios)
    assert all(a >= b for a, b in zip(ratios, ratios[1:]))


# ---------------------------------------------------------------- candidates

def test_candidate_thresholds_distinct_sorted():
    got = candidate_thresholds(np.array([0.3, 0.1, 0.3, 0.7, 0.1]))
    assert got.tolist() == [0.1, 0.3, 0.7]


def test_candidate_thresholds_cap_keeps_endpoints():
    values = np.linspace(0, 1, 25_000)
    got = candidate_thresholds(values)
    assert got.size <= 10_000
    assert got[0] == 0.0 and got[-1] == 1.0
    assert np.all(np.diff(got) > 0)
    # subsample is roughly uniform over the distinct values
    assert np.max(np.diff(got)) < 4 * (1.0 / 10_000)


# ---------------------------------------------------------------- derivatives

HAND_TAUS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
HAND_RATIOS = np.array([1.0, 0.5, 0.5, 0.5, 0.0])


def test_ratio_derivatives_hand_curve():
    first, second = ratio_derivatives(HAND_TAUS, HAND_RATIOS)
    assert first.tolist() == [-2.0, 0.0, 0.0, -2.0, -2.0]
    assert second.tolist() == [8.0, 8.0, 0.0, -8.0, -8.0]


def test_second_derivative_matches_quadratic_fit():
    rng = np.random.default_rng(3)
    taus = np.sort(rng.random(9))
    ratios = np.sort(rng.random(9))[::-1].copy()
    _, second = ratio_derivatives(taus, ratios)
    for i in range(1, 8):
        assert second[i] == pytest.approx(brute_second_derivative(taus, ratios, i))
    assert second[0] == second[1]
    assert second[-1] == second[-2]


def test_ratio_derivatives_needs_three_points():
    with pytest.raises(ThresholdingError):
        ratio_derivatives(np.array([0.0, 1.0]), np.array([1.0, 0.0]))


# ---------------------------------------------------------------- plateaus

def test_find_plateaus_hand_curve():
    plateaus = find_plateaus(HAND_TAUS, HAND_RATIOS)
    assert len(plateaus) == 1
    p = plateaus[0]
    assert (p.start, p.end) == (1, 3)
    assert p.level == pytest.approx(0.5)


def test_find_plateaus_constant_curve_is_whole_range():
    taus = np.array([0.0, 0.3, 0.6, 1.0])
    ratios = np.full(4, 0.25)
    plateaus = find_plateaus(taus, ratios)
    assert len(plateaus) == 1
    assert (plateaus[0].start, plateaus[0].end) == (0, 3)
    assert plateaus[0].level == pytest.approx(0.25)


def test_find_plateaus_multiple_runs():
    taus = np.array([0.0, 0.1, 0.2, 0.5, 0.6, 0.7])
    ratios = np.array([1.0, 0.98, 0.96, 0.3, 0.28, 0.26])
    plateaus = find_plateaus(taus, ratios)
    assert [(p.start, p.end) for p in plateaus] == [(0, 2), (3, 5)]
    assert plateaus[1].level == pytest.approx(0.28)


# ---------------------------------------------------------------- heuristics

def lp_fixture_scores():
    # the ratio curve over the grid [0, 0.8] is a staircase: 0.5 below 0.2,
    # then 0.2, then 0.05 from 0.21 up to the top score 0.8
    return np.concatenate(
        [np.zeros(50), np.full(30, 0.2), np.full(15, 0.21), np.full(5, 0.8)]
    )


def test_lp_heuristics_pick_lowest_plateau():
    scores = lp_fixture_scores()
    # grid step 0.0008; the 0.05-level shelf runs from the first grid point
    # past 0.21 (0.2104) to the last one before the drop at 0.8 (0.7992)
    assert select_threshold(scores, LP_LEFT) == pytest.approx(0.2104)
    assert select_threshold(scores, LP_RIGHT) == pytest.approx(0.7992)
    assert select_threshold(scores, LP_CENTER) == pytest.approx(0.5048)


def test_lp_ignores_noise_sized_flat_runs():
    # two stray scores at 0.99 and 0.999 create a flat run at ratio 1/142
    # that spans under 1% of the curve; the heuristic must stay on the wide
    # shelf between the cluster at 0.5 and the stragglers
    scores = np.concatenate(
        [np.full(100, 0.05), np.full(40, 0.5), np.array([0.99, 0.999])]
    )
    center = select_threshold(scores, LP_CENTER)
    assert 0.5 < center < 0.9
    assert select_threshold(scores, LP_LEFT) < 0.6


def test_elbow_heuristics_on_hand_curve():
    # scores whose ratio curve reproduces the hand-check curve shape
    scores = np.concatenate(
        [np.full(10, 0.0), np.full(10, 0.25), np.full(10, 0.5), np.full(10, 0.75), np.full(10, 1.0)]
    )
    # candidates (0,.25,.5,.75,1); ratios (0.8, 0.6, 0.4, 0.2, 0.0): linear, plateau everywhere
    down = select_threshold(scores, ELBOW_DOWN)
    up = select_threshold(scores, ELBOW_UP)
    assert 0.0 <= down <= 1.0 and 0.0 <= up <= 1.0
    # a genuine elbow: ratio hugs 1 then drops sharply after 0.6
    scores = np.concatenate([np.linspace(0.6, 0.99, 40), np.full(2, 0.1)])
    tau = select_threshold(scores, ELBOW_DOWN)
    assert tau >= 0.1


def test_empty_section_flags_nothing():
    assert select_threshold(np.array([]), LP_CENTER) == 1.0
    assert select_threshold(np.array([]), BEST, np.array([])) == 1.0


def test_tiny_candidate_sets_fall_back_to_largest():
    assert select_threshold(np.array([0.4, 0.4, 0.4]), LP_CENTER) == pytest.approx(0.4)
    assert select_threshold(np.array([0.1, 0.9]), ELBOW_UP) == pytest.approx(0.9)


def test_best_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(25):
        scores = rng.choice([0.0, 0.1, 0.3, 0.5, 0.8, 0.95], size=60)
        labels = rng.random(60) < 0.3
        tau = select_threshold(scores, BEST, labels)
        candidates = candidate_thresholds(scores)
        oracle = [brute_f1(scores, labels, t) for t in candidates]
        best_f1 = max(oracle)
        assert brute_f1(scores, labels, tau) == pytest.approx(best_f1)
        # smallest tau among the argmax ties
        expected = candidates[int(np.argmax(oracle))]
        assert tau == pytest.approx(float(expected))


def test_best_requires_labels():
    with pytest.raises(ThresholdingError):
        select_threshold(np.array([0.1, 0.2, 0.3]), BEST)


def test_best_all_negative_labels_picks_smallest_tau():
    scores = np.array([0.1, 0.5, 0.9])
    labels = np.zeros(3, dtype=bool)
    assert select_threshold(scores, BEST, labels) == pytest.approx(0.1)


def test_best_dominates_other_heuristics():
    rng = np.random.default_rng(23)
    for _ in range(10):
        scores = rng.random(200) ** 2
        labels = scores + rng.normal(0, 0.2, 200) > 0.7
        best_tau = select_threshold(scores, BEST, labels)
        best_f1 = brute_f1(scores, labels, best_tau)
        for kind in HEURISTICS:
            if kind == BEST:
                continue
            tau = select_threshold(scores, kind)
            assert best_f1 >= brute_f1(scores, labels, tau) - 1e-12


# ---------------------------------------------------------------- strategies

def strategy_fixture():
    scores = np.zeros((4, 3, 2))
    # attribute 0 clean except one clear outlier; attribute 1 noisier with its
    # own outlier at a much lower score than attribute 0's
    scores[:, :, 0] = 0.05
    scores[1, 1, 0] = 0.9
    scores[:, :, 1] = [[0.3, 0.4, 0.0], [0.5, 0.2, 0.0], [0.6, 0.1, 0.0], [0.35, 0.45, 0.0]]
    lengths = np.array([2, 2, 2, 2])
    labels = np.zeros((4, 3, 2), dtype=np.int8)
    labels[1, 1, 0] = 1
    labels[2, 0, 1] = 1  # the 0.6 slot
    return scores, lengths, labels


def test_apply_strategy_shapes():
    scores, lengths, labels = strategy_fixture()
    a = apply_strategy(scores, lengths, BEST, GLOBAL, labels)
    assert a.values.shape == ()
    a = apply_strategy(scores, lengths, BEST, PER_ATTRIBUTE, labels)
    assert a.values.shape == (2,)
    a = apply_strategy(scores, lengths, BEST, PER_EVENT, labels)
    assert a.values.shape == (3,)
    a = apply_strategy(scores, lengths, BEST, PER_EVENT_ATTRIBUTE, labels)
    assert a.values.shape == (3, 2)


def test_apply_strategy_empty_sections_get_tau_one():
    scores, lengths, labels = strategy_fixture()
    # event position 2 has no valid slots anywhere (all lengths are 2)
    a = apply_strategy(scores, lengths, BEST, PER_EVENT, labels)
    assert a.values[2] == 1.0
    a = apply_strategy(scores, lengths, LP_CENTER, PER_EVENT_ATTRIBUTE)
    assert a.values[2, 0] == 1.0 and a.values[2, 1] == 1.0


def test_per_attribute_best_separates_attributes():
    scores, lengths, labels = strategy_fixture()
    a = apply_strategy(scores, lengths, BEST, PER_ATTRIBUTE, labels)
    assert a.values[0] != a.values[1]
    flags = apply_thresholds(scores, a, lengths)
    assert flags[:, :, 0].sum() == 1 and flags[1, 1, 0] == 1
    assert flags[:, :, 1].sum() == 1 and flags[2, 0, 1] == 1


def test_global_strategy_uses_all_slots():
    scores, lengths, labels = strategy_fixture()
    a = apply_strategy(scores, lengths, BEST, GLOBAL, labels)
    flags = apply_thresholds(scores, a, lengths)
    # one global cut cannot separate both planted outliers: 0.9 is found but a
    # cut low enough for the 0.6 slot would also flag unlabelled 0.x noise
    assert flags[1, 1, 0] == 1


def test_apply_strategy_rejects_unknown_names():
    scores, lengths, _ = strategy_fixture()
    with pytest.raises(ThresholdingError):
        apply_strategy(scores, lengths, LP_LEFT, "per_case")
    with pytest.raises(ThresholdingError):
        select_threshold(np.array([0.1]), "steepest")
