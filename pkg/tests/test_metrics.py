import numpy as np
import pytest

from nanyin_hgnn import toy
from nanyin_hgnn.errors import LengthMismatch, NoInModeTargets
from nanyin_hgnn.midi_io import Instrument, NoteEvent, Role, Score
from nanyin_hgnn.metrics import (ORSConfig, band_closeness, closeness, evaluate_scores, mode_aware_f1,
                                 ornament_rationality_score, per_class_f1, structural_score, weighted_f1)


def test_perfect_and_wrong():
    t = [60, 62, 64, 62]
    assert weighted_f1(t, t) == 1.0
    assert weighted_f1([67, 67, 67, 67], t) == 0.0


def test_two_class_by_hand():
    # class 0: tp 1, fp 1, fn 0 -> 2/3; class 1: tp 1, fp 0, fn 1 -> 2/3
    assert weighted_f1([0, 0, 1], [0, 1, 1]) == pytest.approx(2 / 3)
    assert per_class_f1([0, 0, 1], [0, 1, 1]) == pytest.approx({0: 2 / 3, 1: 2 / 3})


def test_frequency_weighting():
    # class 0 F1 2/3 with weight 1/4, class 1 F1 4/5 with weight 3/4
    assert weighted_f1([0, 0, 1, 1], [0, 1, 1, 1]) == pytest.approx(0.25 * 2 / 3 + 0.75 * 0.8)
    assert weighted_f1([0, 0, 1, 1], [0, 1, 1, 1], weights={0: 1, 1: 1}) == pytest.approx((2 / 3 + 0.8) / 2)


def test_length_mismatch_and_empty():
    with pytest.raises(LengthMismatch):
        weighted_f1([1], [1, 2])
    assert weighted_f1([], []) == 0.0


def test_mode_aware_equals_weighted_when_all_in_mode():
    rng = np.random.default_rng(0)
    pool = [60, 62, 64, 67, 69, 71, 74]
    for _ in range(50):
        t = rng.choice(pool, 20).tolist()
        p = rng.choice(pool, 20).tolist()
        assert mode_aware_f1(p, t) == weighted_f1(p, t)


def test_mode_aware_drops_out_of_mode_targets():
    p = [60, 61, 62, 66]
    t = [60, 61, 64, 66]
    assert mode_aware_f1(p, t) == weighted_f1([60, 62], [60, 64])
    with pytest.raises(NoInModeTargets):
        mode_aware_f1([61], [61])


def test_closeness_helpers():
    assert closeness(0.8, 0.8) == 1.0 and closeness(0.0, 0.8) == 0.0 and closeness(2.0, 0.8) == 0.0
    assert band_closeness(0.2, (0.2, 0.6)) == band_closeness(0.6, (0.2, 0.6)) == 1.0
    assert band_closeness(0.1, (0.2, 0.6)) == pytest.approx(0.5)


@pytest.mark.parametrize("density", [0.2, 0.4, 0.6])
def test_structural_one_at_targets(density):
    assert structural_score(density, 0.8, 0.7) == 1.0


def _random_tagged(rng):
    notes = list(toy.random_score(rng, int(rng.integers(1, 30))).notes)
    for n in list(notes):
        if rng.random() < 0.5:
            notes.append(NoteEvent(int(rng.integers(30, 100)), float(rng.uniform(0, n.onset + 1)),
                                   0.2, 80, role=Role.ORNAMENT))
    return notes


def test_ors_in_unit_interval():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        r = ornament_rationality_score(_random_tagged(rng))
        assert 0.0 <= r["ors"] <= 1.0
        assert 0.0 <= r["stylistic"] <= 1.0 and 0.0 <= r["structural"] <= 1.0


def test_ors_by_hand():
    mains = [NoteEvent(p, float(k), 1.0, 80) for k, p in enumerate([60, 62, 64, 62, 60, 62, 64, 62, 60, 62])]
    orns = [NoteEvent(64, t, 0.3, 80, role=Role.ORNAMENT) for t in (0.0, 3.0, 6.0, 9.0)]
    r = ornament_rationality_score(mains + orns)
    # every ornament is on the grid and within 4 semitones of its neighbourhood mean
    assert r["stylistic"] == 1.0
    # density 0.4 in band, coverage 1 -> 1 - 0.3/0.7, evenness 1 -> 1 - 0.2/0.8
    expected_structural = (1.0 + (1 - 0.3 / 0.7) + (1 - 0.2 / 0.8)) / 3
    assert r["structural"] == pytest.approx(expected_structural)
    assert r["ors"] == pytest.approx(0.5 + 0.5 * expected_structural)


def test_ors_weights_configurable():
    notes = _random_tagged(np.random.default_rng(3))
    r = ornament_rationality_score(notes, ORSConfig(stylistic_weight=1.0, structural_weight=0.0))
    assert r["ors"] == r["stylistic"]


def test_no_ornaments_scores_zero():
    assert ornament_rationality_score(toy.random_score(0).notes)["ors"] == 0.0


def test_evaluate_scores():
    ref = toy.skeleton_fixture()
    report = evaluate_scores(ref, ref)
    assert report["weighted_f1"] == 1.0 and report["mode_aware_f1"] == 1.0
    assert report["aligned_notes"] == len(ref.notes)
    empty = Score(tracks={Instrument.PIPA: (NoteEvent(61, 0.0, 1.0, 80),)})
    assert evaluate_scores(empty, empty)["mode_aware_f1"] is None
