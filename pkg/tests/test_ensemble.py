import math

import numpy as np
import pytest

from nanyin_hgnn import toy
from nanyin_hgnn.ensemble import (EnsembleConfig, generate_ensemble, instrument_transform, nianzhi_plan,
                                  recover_skeleton, rule_nianzhi, sample_density)
from nanyin_hgnn.errors import EmptyScore, PitchOutOfRange
from nanyin_hgnn.gnn.model import ModelConfig
from nanyin_hgnn.gnn.train import ModelParams
from nanyin_hgnn.midi_io import ENSEMBLE_ORDER, Instrument, NoteEvent, Role, Score, parse_midi, write_midi
from nanyin_hgnn.nianzhi import NianzhiConfig, first_ioi
from nanyin_hgnn.ornament import is_special
from nanyin_hgnn.tokenizer import detect_nianzhi

SMALL = ModelConfig(hidden=8, heads=2)


@pytest.fixture(scope="module")
def result():
    return generate_ensemble(toy.skeleton_fixture(), ModelParams.initial(SMALL, rng=0), rng=0)


def test_four_tracks(result):
    assert set(result.score.tracks) == set(ENSEMBLE_ORDER)
    data = write_midi(result.score)
    assert len(parse_midi(data).tracks) == 4


def test_transforms_note_by_note():
    mel = toy.skeleton_fixture().notes
    for inst, check in [
        (Instrument.PIPA, lambda a, b: (b.pitch, b.duration) == (a.pitch, a.duration)),
        (Instrument.SANXIAN, lambda a, b: b.pitch == a.pitch and b.duration == a.duration * 0.8),
        (Instrument.DONGXIAO, lambda a, b: (b.pitch, b.duration) == (a.pitch - 12, a.duration)),
        (Instrument.ERXIAN, lambda a, b: (b.pitch, b.duration) == (a.pitch + 12, a.duration)),
    ]:
        out = instrument_transform(mel, inst)
        assert len(out) == len(mel)
        for a, b in zip(mel, out):
            assert check(a, b) and b.onset == a.onset and b.velocity == a.velocity and b.instrument == inst


def test_generated_tracks_follow_transforms(result):
    skel = toy.skeleton_fixture().notes
    for inst, shift, factor in [(Instrument.SANXIAN, 0, 0.8), (Instrument.DONGXIAO, -12, 1.0),
                                (Instrument.ERXIAN, 12, 1.0)]:
        mains = [n for n in result.score.track(inst) if n.role == Role.NOTE]
        assert len(mains) == len(skel)
        for a, b in zip(skel, mains):
            assert b.pitch == a.pitch + shift and b.onset == a.onset
            assert b.duration == a.duration * factor


def test_pitch_out_of_range():
    with pytest.raises(PitchOutOfRange):
        instrument_transform([NoteEvent(120, 0.0, 1.0, 80)], Instrument.ERXIAN)
    with pytest.raises(PitchOutOfRange):
        instrument_transform([NoteEvent(5, 0.0, 1.0, 80)], Instrument.DONGXIAO)


def test_empty_skeleton():
    with pytest.raises(EmptyScore):
        generate_ensemble(Score(tracks={Instrument.PIPA: ()}), rng=0)


def test_tracks_share_bars(result):
    last_bar = math.floor(max(n.onset for n in toy.skeleton_fixture().notes) / 4)
    for inst in ENSEMBLE_ORDER:
        assert math.floor(max(n.onset for n in result.score.track(inst)) / 4) == last_bar


def test_density_sampling():
    rng = np.random.default_rng(0)
    raw = [sample_density(rng, clamp=False) for _ in range(10_000)]
    assert abs(np.mean(raw) - 0.6) <= 0.02
    clamped = [sample_density(rng) for _ in range(1000)]
    assert min(clamped) >= 0.2 and max(clamped) <= 0.6


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(order=("Erxian", "Pipa", "Sanxian", "Dongxiao"))
    with pytest.raises(ValueError):
        EnsembleConfig(density_sd=-1.0)


def test_skeleton_recovered(result):
    pipa = result.score.track(Instrument.PIPA)
    assert recover_skeleton(pipa, result.nianzhi) == [n.pitch for n in toy.skeleton_fixture().notes]
    assert result.report["nianzhi_runs"] == len(result.nianzhi) > 0


def test_nianzhi_runs_redetected(result):
    pipa = sorted((n for n in result.score.track(Instrument.PIPA) if n.role != Role.ORNAMENT),
                  key=lambda n: n.onset)
    spans = detect_nianzhi(pipa)
    assert len(spans) == len(result.nianzhi)
    assert all(pipa[s.start_index].role == Role.NIANZHI for s in spans)


def test_rule_plan_spacing_and_filter():
    mel = list(toy.skeleton_fixture().notes)
    plan = rule_nianzhi(mel, NianzhiConfig(), rng=0)
    onsets = [mel[i].onset for i, _ in plan]
    assert all(b - a >= 4.0 for a, b in zip(onsets, onsets[1:]))
    kept = nianzhi_plan(mel, None, NianzhiConfig(), 0, 1.0)
    for i, p in kept:
        assert first_ioi(mel[i].duration, p.repetitions, p.decay_rate) <= 0.5


def test_pipa_has_special_note_at_host_onset(result):
    pipa = result.score.track(Instrument.PIPA)
    hosts = {n.onset for n in pipa if n.role == Role.NOTE}
    specials = [n for n in pipa if n.role == Role.ORNAMENT and is_special(n.pitch) and n.onset in hosts]
    assert specials


def test_same_seed_same_bytes():
    skel = toy.skeleton_fixture()
    params = ModelParams.initial(SMALL, rng=0)
    a = write_midi(generate_ensemble(skel, params, rng=5).score)
    b = write_midi(generate_ensemble(skel, params, rng=5).score)
    c = write_midi(generate_ensemble(skel, params, rng=6).score)
    assert a == b and a != c


def test_without_model():
    res = generate_ensemble(toy.skeleton_fixture(), None, rng=1)
    assert set(res.report["tracks"]) == {i.value for i in ENSEMBLE_ORDER}
    # the pipa also carries special notes, so only the supporting tracks sit in the band exactly
    for inst in ENSEMBLE_ORDER[1:]:
        assert 0.2 - 1e-9 <= res.report["tracks"][inst.value]["density"] <= 0.6 + 1e-9
