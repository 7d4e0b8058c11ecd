import itertools

import numpy as np
import pytest

from nanyin_hgnn import toy
from nanyin_hgnn.errors import ConfigError, EmptyScore, MalformedStream
from nanyin_hgnn.midi_io import Instrument, NoteEvent, Score
from nanyin_hgnn.tokenizer import (DURATION_STEP, GONGQE_PITCHES, VELOCITY_BINS, WU_KONG, NianzhiCategory,
                                   NianzhiDetectConfig, Token, TokenKind, TokenSeq, build_vocabulary, decode,
                                   detect_nianzhi, encode, get_mode, helmholtz_to_midi, mode_contains)


def score_of(*notes):
    return Score(tracks={Instrument.PIPA: tuple(notes)})


@pytest.mark.parametrize("name, midi", [("d", 50), ("c1", 60), ("#f1", 66), ("bb1", 70), ("b2", 83)])
def test_helmholtz(name, midi):
    assert helmholtz_to_midi(name) == midi


def test_gongqe_table_consistent():
    assert len(GONGQE_PITCHES) == 23
    assert all(helmholtz_to_midi(n) == m for n, m in GONGQE_PITCHES)


def test_vocabulary_has_23_pitches_and_is_deterministic():
    v = build_vocabulary()
    assert len(v.pitches) == 23
    assert build_vocabulary().tokens == v.tokens
    assert len(set(v.tokens)) == len(v)
    assert all(v.token_of(v.id_of(t)) == t for t in v.tokens)


@pytest.mark.parametrize("pitch, expected", [(50, True), (54, False), (83, True), (61, False), (66, False),
                                             (49, False), (84, False), (71, True)])
def test_mode_membership(pitch, expected):
    assert mode_contains(WU_KONG, pitch) is expected


def test_unknown_mode():
    with pytest.raises(ConfigError):
        get_mode("yi-shang")


def test_single_note_layout():
    seq = encode(score_of(NoteEvent(62, 1.0, 1.0, 100)))
    kinds = [t.kind for t in seq]
    assert kinds == [TokenKind.BAR, TokenKind.POSITION, TokenKind.PITCH, TokenKind.VELOCITY,
                     TokenKind.DURATION, TokenKind.MICROTIMING]
    assert seq.tokens[1].value == 4 and seq.tokens[2].value == 62 and seq.tokens[5].value == 0


def test_out_of_mode_pitch_is_unk():
    # F sharp (pitch class 6) is in the GongQe table but outside Wu-Kong
    seq = encode(score_of(NoteEvent(66, 0.0, 1.0, 80)))
    assert seq.tokens[2] == Token(TokenKind.UNK)


def test_nianzhi_token_precedes_position():
    notes = [NoteEvent(64, 0.1 * k, 0.1, 100 - 10 * k) for k in range(3)]
    toks = list(encode(score_of(*notes)))
    assert toks[1] == Token(TokenKind.TECH_NIANZHI, int(NianzhiCategory.FAST))
    assert toks[2].kind == TokenKind.POSITION


def test_encode_empty():
    with pytest.raises(EmptyScore):
        encode(Score(tracks={Instrument.PIPA: ()}))


@pytest.mark.parametrize("tokens", [
    [Token(TokenKind.BAR), Token(TokenKind.PITCH, 62)],
    [Token(TokenKind.POSITION, 0)],
    [Token(TokenKind.BAR), Token(TokenKind.POSITION, 0), Token(TokenKind.PITCH, 62), Token(TokenKind.VELOCITY, 3)],
    [Token(TokenKind.BAR), Token(TokenKind.TECH_NIANZHI, 1), Token(TokenKind.BAR)],
])
def test_malformed_streams(tokens):
    with pytest.raises(MalformedStream):
        decode(tokens)


def test_round_trip_within_half_bin():
    half_vel = (VELOCITY_BINS[1] - VELOCITY_BINS[0]) / 2
    for seed in range(50):
        s = toy.random_score(seed, 30)
        out = decode(encode(s)).notes
        assert len(out) == len(s.notes)
        for a, b in zip(s.notes, out):
            assert a.pitch == b.pitch
            assert abs(a.onset - b.onset) <= 1 / 128 + 1e-12
            assert abs(a.duration - b.duration) <= DURATION_STEP / 2 + 1e-12
            assert abs(a.velocity - b.velocity) <= half_vel + 1e-9


def test_text_and_json_round_trip():
    seq = encode(toy.with_nianzhi(3))
    assert TokenSeq.from_text(seq.to_text()).tokens == seq.tokens
    assert TokenSeq.from_json(seq.to_json()).tokens == seq.tokens
    assert len(seq.ids()) == len(seq)


def test_unk_decodes_to_in_mode_pitch_below_previous():
    out = decode(encode(score_of(NoteEvent(67, 0.0, 1.0, 80), NoteEvent(66, 1.0, 1.0, 80)))).notes
    assert out[1].pitch == 64


# ---------------------------------------------------------------------------
# nianzhi detection against an exhaustive oracle


def oracle_spans(notes, cfg=NianzhiDetectConfig()):
    """Every maximal interval [i, j) whose consecutive pairs satisfy the run rule."""
    def ok(a, b):
        return a.pitch == b.pitch and b.onset - a.onset <= cfg.max_ioi + 1e-12 and b.velocity <= a.velocity

    n = len(notes)
    good = set()
    for i, j in itertools.combinations(range(n + 1), 2):
        if j - i >= cfg.min_run and all(ok(notes[k], notes[k + 1]) for k in range(i, j - 1)):
            good.add((i, j))
    return sorted((i, j) for i, j in good if (i - 1, j) not in good and (i, j + 1) not in good)


@pytest.mark.parametrize("seed", range(60))
def test_detection_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 13))
    notes, onset = [], 0.0
    for _ in range(n):
        notes.append(NoteEvent(int(rng.choice([60, 62])), onset, 0.25, int(rng.integers(60, 70))))
        onset += float(rng.choice([0.125, 0.25, 0.5, 0.75]))
    got = [(s.start_index, s.start_index + s.repetitions) for s in detect_nianzhi(notes)]
    assert got == oracle_spans(notes)


def test_categories():
    def run(ioi):
        return [NoteEvent(62, k * ioi, ioi, 100 - k) for k in range(4)]

    assert detect_nianzhi(run(0.1))[0].category == NianzhiCategory.FAST
    assert detect_nianzhi(run(0.25))[0].category == NianzhiCategory.STANDARD
    assert detect_nianzhi(run(0.4))[0].category == NianzhiCategory.SLOW


def test_crescendo_is_not_nianzhi():
    notes = [NoteEvent(62, k * 0.25, 0.25, 60 + 10 * k) for k in range(4)]
    assert detect_nianzhi(notes) == []
