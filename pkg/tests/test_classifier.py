import json

import numpy as np
import pytest

from binetkit.classifier import (
    ATTRIBUTE,
    DEFAULT_RULE_ORDER,
    EARLY,
    INSERT,
    LATE,
    NORMAL,
    REWORK,
    RULE_EARLY,
    RULE_INSERT,
    RULE_LATE,
    RULE_REWORK,
    RULE_SHIFT,
    RULE_SKIP,
    SHIFT,
    SKIP,
    ClassifierError,
    classification_report,
    classify,
    confusion_csv,
    export_classified,
    prediction_sets,
)
from binetkit.event_log import Case, Event, EventLog, encode, load_log
from binetkit.thresholding import GLOBAL, PER_ATTRIBUTE, ThresholdAssignment


def make_enc(sequences, attributes=(), values=None):
    """Encode activity sequences; `values` gives per-event data attribute values."""
    cases = []
    for i, seq in enumerate(sequences):
        events = []
        for j, activity in enumerate(seq):
            attrs = {name: (values[i][j] if values else "u") for name in attributes}
            events.append(Event(activity=activity, attributes=attrs))
        cases.append(Case(case_id=f"c{i}", events=events))
    return encode(EventLog(name="t", attributes=list(attributes), cases=cases))


def flag_slots(enc, slots):
    C, E, A = enc.features.shape
    flags = np.zeros((C, E - 1, A), dtype=np.uint8)
    for slot in slots:
        flags[slot] = 1
    return flags


# ------------------------------------------------------------------ rules


def test_skip_when_no_prediction_occurs_in_case():
    enc = make_enc([["A", "B", "D"]])
    flags = flag_slots(enc, [(0, 2, 0)])
    out = classify(enc, flags, {(0, 2, 0): ("C",)})
    assert out[0, 2, 0] == SKIP


def test_insert_when_prediction_occurs_unflagged():
    enc = make_enc([["A", "X", "B"]])
    flags = flag_slots(enc, [(0, 1, 0)])
    out = classify(enc, flags, {(0, 1, 0): ("B",)})
    assert out[0, 1, 0] == INSERT


def test_rework_when_own_activity_repeats_unflagged():
    enc = make_enc([["A", "B", "A"]])
    flags = flag_slots(enc, [(0, 1, 0), (0, 2, 0)])
    preds = {(0, 1, 0): ("C",), (0, 2, 0): ("B",)}
    out = classify(enc, flags, preds)
    assert out[0, 1, 0] == SKIP       # its only prediction occurs nowhere
    assert out[0, 2, 0] == REWORK     # B occurs flagged, but A repeats unflagged


def test_late_and_early_for_swapped_neighbours():
    enc = make_enc([["A", "B"]])
    flags = flag_slots(enc, [(0, 0, 0), (0, 1, 0)])
    preds = {(0, 0, 0): ("B",), (0, 1, 0): ("A",)}
    out = classify(enc, flags, preds)
    # B was expected first: position 1 holds it too late, position 0 holds an
    # activity that belongs where a later flagged slot expected it.
    assert out[0, 1, 0] == LATE
    assert out[0, 0, 0] == EARLY


def test_shift_when_prediction_occurs_flagged_and_no_displacement_match():
    enc = make_enc([["A", "B"]])
    flags = flag_slots(enc, [(0, 0, 0), (0, 1, 0)])
    preds = {(0, 0, 0): ("B",), (0, 1, 0): ("C",)}
    out = classify(enc, flags, preds)
    assert out[0, 0, 0] == SHIFT
    assert out[0, 1, 0] == SKIP


def test_swapping_shift_and_late_precedence_changes_output():
    enc = make_enc([["A", "B"]])
    flags = flag_slots(enc, [(0, 0, 0), (0, 1, 0)])
    # position 1 matches both explanations: its own value sits in an earlier
    # flagged slot's prediction set, and one of its predictions occurs flagged
    preds = {(0, 0, 0): ("B",), (0, 1, 0): ("A", "B")}
    default = classify(enc, flags, preds)
    swapped_order = (RULE_SKIP, RULE_INSERT, RULE_REWORK,
                     RULE_SHIFT, RULE_LATE, RULE_EARLY)
    swapped = classify(enc, flags, preds, rule_order=swapped_order)
    assert default[0, 1, 0] == LATE
    assert swapped[0, 1, 0] == SHIFT
    assert not np.array_equal(default, swapped)


def test_early_event_explained_as_shift_when_true_gap_is_missed():
    # C executed first although it belongs at the end. If the detector misses
    # the spot where C should have been, no later flagged slot predicts C, so
    # the moved event can only be explained as Shift.
    enc = make_enc([["C", "A", "B"]])
    flags = flag_slots(enc, [(0, 0, 0), (0, 1, 0)])
    preds = {(0, 0, 0): ("A",), (0, 1, 0): ("B",)}
    out = classify(enc, flags, preds)
    assert out[0, 0, 0] == SHIFT

    # with the gap flagged and predicting C, the same event becomes Early
    flags = flag_slots(enc, [(0, 0, 0), (0, 1, 0), (0, 2, 0)])
    preds = {(0, 0, 0): ("A",), (0, 1, 0): ("B",), (0, 2, 0): ("C",)}
    out = classify(enc, flags, preds)
    assert out[0, 0, 0] == EARLY


def test_flagged_data_attributes_are_always_attribute():
    enc = make_enc([["A", "B"]], attributes=("user",),
                   values=[["u1", "u2"]])
    flags = flag_slots(enc, [(0, 0, 1), (0, 1, 0), (0, 1, 1)])
    out = classify(enc, flags, {(0, 1, 0): ("A",)})
    assert out[0, 0, 1] == ATTRIBUTE
    assert out[0, 1, 1] == ATTRIBUTE
    assert out[0, 1, 0] == INSERT  # activity rules untouched by data flags


def test_classify_flags_and_classes_agree_everywhere():
    rng = np.random.default_rng(7)
    alphabet = ["A", "B", "C", "D"]
    sequences = [list(rng.choice(alphabet, size=rng.integers(1, 6))) for _ in range(20)]
    enc = make_enc(sequences, attributes=("user",),
                   values=[["u%d" % rng.integers(3) for _ in seq] for seq in sequences])
    C, E, A = enc.features.shape
    flags = (rng.random((C, E - 1, A)) < 0.3).astype(np.uint8)
    from binetkit.event_log import valid_mask
    flags &= valid_mask(enc.case_lengths, E - 1)[:, :, None]
    preds = {
        (int(c), int(e), 0): tuple(rng.choice(alphabet, size=2, replace=False))
        for c, e in np.argwhere(flags[:, :, 0])
    }
    out = classify(enc, flags, preds)
    assert np.array_equal(out != NORMAL, flags.astype(bool))


def test_missing_prediction_set_raises():
    enc = make_enc([["A", "B"]])
    flags = flag_slots(enc, [(0, 1, 0)])
    with pytest.raises(ClassifierError, match="prediction set"):
        classify(enc, flags, {})


def test_flags_on_padding_raise():
    enc = make_enc([["A", "B"], ["A"]])
    flags = flag_slots(enc, [(1, 1, 0)])  # case 1 has a single event
    with pytest.raises(ClassifierError, match="padding"):
        classify(enc, flags, {(1, 1, 0): ("B",)})


def test_invalid_rule_order_rejected():
    enc = make_enc([["A"]])
    flags = flag_slots(enc, [])
    with pytest.raises(ClassifierError, match="rule_order"):
        classify(enc, flags, {}, rule_order=(RULE_SKIP,))
    with pytest.raises(ClassifierError, match="rule_order"):
        classify(enc, flags, {}, rule_order=DEFAULT_RULE_ORDER[:-1] + (RULE_SKIP,))


# ------------------------------------------------------------ prediction sets


def brute_sigma(p, value_index):
    return float(sum(q for q in p if q > p[value_index]))


def probs_for(enc, table):
    """One (C, E', vocab) tensor per attribute from {(c, e, a): vector}."""
    C, E, A = enc.features.shape
    out = [np.zeros((C, E - 1, len(d))) for d in enc.decoders]
    for (c, e, a), vec in table.items():
        out[a][c, e] = vec
    return out


def test_prediction_sets_threshold_membership():
    enc = make_enc([["A", "B", "C"]])
    flags = flag_slots(enc, [(0, 1, 0)])
    vec = np.array([0.0, 0.0, 0.5, 0.3, 0.2])  # pad, bos, A, B, C
    probs = probs_for(enc, {(0, 1, 0): vec})
    for tau, expected in [(0.45, ("A",)), (0.5, ("A", "B")), (0.9, ("A", "B", "C"))]:
        sets = prediction_sets(probs, enc, flags,
                               ThresholdAssignment(GLOBAL, np.float64(tau)))
        assert sets == {(0, 1, 0): expected}
        for sym in expected:
            assert brute_sigma(vec, enc.decoders[0].index(sym)) <= tau or sym == "A"


def test_prediction_sets_argmax_always_included():
    enc = make_enc([["A", "B"]])
    flags = flag_slots(enc, [(0, 0, 0)])
    probs = probs_for(enc, {(0, 0, 0): np.array([0.0, 0.0, 0.6, 0.4])})
    sets = prediction_sets(probs, enc, flags,
                           ThresholdAssignment(GLOBAL, np.float64(0.0)))
    assert sets[(0, 0, 0)] == ("A",)


def test_prediction_sets_never_contain_special_entries():
    enc = make_enc([["A", "B", "C"]])
    flags = flag_slots(enc, [(0, 0, 0)])
    vec = np.array([0.6, 0.0, 0.2, 0.1, 0.1])  # most mass on the padding entry
    probs = probs_for(enc, {(0, 0, 0): vec})
    sets = prediction_sets(probs, enc, flags,
                           ThresholdAssignment(GLOBAL, np.float64(1.0)))
    assert sets[(0, 0, 0)] == ("A", "B", "C")


def test_prediction_sets_only_for_flagged_slots():
    enc = make_enc([["A", "B"]], attributes=("user",), values=[["u1", "u2"]])
    flags = flag_slots(enc, [(0, 1, 1)])
    vocab = len(enc.decoders[1])
    probs = probs_for(enc, {(0, 1, 1): np.full(vocab, 1.0 / vocab)})
    sets = prediction_sets(probs, enc, flags,
                           ThresholdAssignment(PER_ATTRIBUTE, np.array([0.1, 0.1])))
    assert list(sets) == [(0, 1, 1)]


def test_prediction_sets_exclude_the_flagged_value_under_detection_tau():
    # the slot is flagged because its observed value scores above tau, so the
    # same tau can never re-admit that value into the prediction set
    enc = make_enc([["A", "B", "C"]])
    flags = flag_slots(enc, [(0, 1, 0)])          # observed value is B
    vec = np.array([0.0, 0.0, 0.7, 0.2, 0.1])
    probs = probs_for(enc, {(0, 1, 0): vec})
    tau = 0.5                                      # sigma(B) = 0.7 > tau: flagged
    sets = prediction_sets(probs, enc, flags,
                           ThresholdAssignment(GLOBAL, np.float64(tau)))
    assert "B" not in sets[(0, 1, 0)]


# ----------------------------------------------------------------- reporting


def brute_f1(truth, pred, code):
    tp = sum(1 for t, p in zip(truth, pred) if t == code and p == code)
    fp = sum(1 for t, p in zip(truth, pred) if t != code and p == code)
    fn = sum(1 for t, p in zip(truth, pred) if t == code and p != code)
    return 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else None


def test_report_perfect_prediction():
    truth = np.zeros((2, 3, 1), dtype=np.int8)
    truth[0, 1, 0] = SKIP
    truth[1, 0, 0] = ATTRIBUTE
    report = classification_report(truth, truth, np.array([3, 2]))
    assert np.all(report.confusion == np.diag(np.diagonal(report.confusion)))
    assert report.macro_f1 == 1.0
    assert report.joint_macro_f1 == 1.0


def test_report_hand_counts_and_macro():
    lengths = np.array([4])
    truth = np.array([[[SKIP], [LATE], [NORMAL], [INSERT]]], dtype=np.int8)
    pred = np.array([[[SKIP], [SHIFT], [INSERT], [NORMAL]]], dtype=np.int8)
    report = classification_report(pred, truth, lengths)

    assert report.confusion[SKIP, SKIP] == 1
    assert report.confusion[LATE, SHIFT] == 1
    assert report.confusion[NORMAL, INSERT] == 1
    assert report.confusion[INSERT, NORMAL] == 1
    assert report.confusion.sum() == 4

    # restricted view: only slots anomalous on both sides -> (Skip, Skip), (Late, Shift)
    t, p = [SKIP, LATE], [SKIP, SHIFT]
    expected = {}
    for name, code in [("Skip", SKIP), ("Late", LATE), ("Shift", SHIFT)]:
        f1 = brute_f1(t, p, code)
        if f1 is not None:
            expected[name] = f1
    assert report.per_class_f1 == pytest.approx(expected)
    assert report.macro_f1 == pytest.approx(np.mean(list(expected.values())))

    # joint view counts the detection mistakes too
    t_all = [SKIP, LATE, NORMAL, INSERT]
    p_all = [SKIP, SHIFT, INSERT, NORMAL]
    joint = {}
    for code, name in [(SKIP, "Skip"), (INSERT, "Insert"), (LATE, "Late"), (SHIFT, "Shift")]:
        f1 = brute_f1(t_all, p_all, code)
        if f1 is not None:
            joint[name] = f1
    assert report.joint_per_class_f1 == pytest.approx(joint)
    assert report.joint_macro_f1 == pytest.approx(np.mean(list(joint.values())))


def test_report_detection_misses_hit_joint_but_not_restricted():
    lengths = np.array([2])
    truth = np.array([[[SKIP], [SKIP]]], dtype=np.int8)
    pred = np.array([[[SKIP], [NORMAL]]], dtype=np.int8)  # one detection miss
    report = classification_report(pred, truth, lengths)
    assert report.macro_f1 == 1.0
    assert report.joint_macro_f1 == pytest.approx(2 / 3)  # Skip: tp=1, fn=1


def test_report_all_flagged_classified_skip_pools_in_skip_column():
    lengths = np.array([3])
    truth = np.array([[[INSERT], [REWORK], [LATE]]], dtype=np.int8)
    pred = np.full((1, 3, 1), SKIP, dtype=np.int8)
    report = classification_report(pred, truth, lengths)
    assert report.confusion[:, SKIP].sum() == 3
    assert report.confusion[INSERT, SKIP] == 1
    assert report.macro_f1 == 0.0


def test_report_ignores_padding_positions():
    lengths = np.array([1])
    truth = np.zeros((1, 3, 1), dtype=np.int8)
    pred = np.zeros((1, 3, 1), dtype=np.int8)
    garbage_truth = truth.copy()
    garbage_truth[0, 2, 0] = REWORK
    garbage_pred = pred.copy()
    garbage_pred[0, 1, 0] = SKIP
    a = classification_report(pred, truth, lengths)
    b = classification_report(garbage_pred, garbage_truth, lengths)
    assert np.array_equal(a.confusion, b.confusion)
    assert a.macro_f1 == b.macro_f1


def test_report_requires_labels_and_matching_shapes():
    pred = np.zeros((1, 2, 1), dtype=np.int8)
    with pytest.raises(ClassifierError):
        classification_report(pred, None, np.array([2]))
    with pytest.raises(ClassifierError):
        classification_report(pred, np.zeros((1, 3, 1), dtype=np.int8), np.array([2]))


def test_confusion_csv_layout():
    truth = np.zeros((1, 2, 1), dtype=np.int8)
    truth[0, 0, 0] = SKIP
    pred = truth.copy()
    pred[0, 0, 0] = INSERT
    report = classification_report(pred, truth, np.array([2]))
    text = confusion_csv(report)
    lines = text.strip().split("\n")
    assert lines[0].startswith("truth\\predicted,Normal,Skip,Insert")
    assert len(lines) == 9
    skip_row = lines[2].split(",")
    assert skip_row[0] == "Skip"
    assert skip_row[1 + INSERT] == "1"


def test_export_classified_round_trip(tmp_path):
    from binetkit.event_log import AnomalyLabel, normal_labels

    events = [
        Event(activity="A", attributes={"user": "u1"},
              labels=normal_labels(["activity", "user"])),
        Event(activity="B", attributes={"user": "u2"},
              labels=normal_labels(["activity", "user"])),
    ]
    log = EventLog(name="t", attributes=["user"],
                   cases=[Case(case_id="c0", events=events)])
    predicted = np.zeros((1, 2, 2), dtype=np.int8)
    predicted[0, 1, 0] = SKIP
    path = tmp_path / "classified.json"
    export_classified(log, predicted, str(path))

    obj = json.loads(path.read_text())
    assert obj["cases"][0]["events"][0]["predicted"] == {"activity": "Normal", "user": "Normal"}
    assert obj["cases"][0]["events"][1]["predicted"]["activity"] == "Skip"
    again = load_log(str(path))   # the extra field must not break parsing
    assert again.cases[0].events[1].activity == "B"
