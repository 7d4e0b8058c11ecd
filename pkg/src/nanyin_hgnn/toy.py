"""Synthetic scores used by the tests, demos and the packaged MIDI fixtures."""

from __future__ import annotations

import numpy as np

from .midi_io import Instrument, NoteEvent, Role, Score
from .tokenizer import GONGQE_MIDI, WU_KONG, Mode, mode_contains


def in_mode_pitches(mode: Mode = WU_KONG) -> list[int]:
    return sorted(p for p in GONGQE_MIDI if mode_contains(mode, p))


def random_score(rng, n_notes: int = 16, mode: Mode = WU_KONG, out_of_mode: float = 0.0,
                 instrument: Instrument = Instrument.PIPA) -> Score:
    """Monophonic score with strictly increasing onsets.

    Onsets move on a 1/64-beat grid with IOIs of 1/4 to 2 beats; durations are
    multiples of 1/8 beat up to 2 beats. A fraction ``out_of_mode`` of notes
    uses pitches outside the mode.
    """
    rng = np.random.default_rng(rng)
    pool = in_mode_pitches(mode)
    outside = [p for p in range(48, 90) if not mode_contains(mode, p)]
    notes = []
    onset = rng.integers(0, 8) / 64
    for _ in range(n_notes):
        if rng.random() < out_of_mode:
            pitch = int(rng.choice(outside))
        else:
            pitch = int(rng.choice(pool))
        dur = int(rng.integers(1, 17)) / 8
        vel = int(rng.integers(20, 128))
        notes.append(NoteEvent(pitch, float(onset), dur, vel, instrument))
        onset += int(rng.integers(16, 129)) / 64
    return Score(tracks={instrument: tuple(notes)})


def scale_run(rng, length: int = 10, mode: Mode = WU_KONG, direction: int = 0) -> Score:
    """Stepwise run through the mode's scale.

    ``direction`` is +1 (ascending), -1 (descending) or 0 (random).
    """
    rng = np.random.default_rng(rng)
    scale = in_mode_pitches(mode)
    step = direction or (1 if rng.random() < 0.5 else -1)
    lo = 0 if step == 1 else length - 1
    hi = len(scale) - length if step == 1 else len(scale) - 1
    start = int(rng.integers(lo, hi + 1))
    notes = []
    for k in range(length):
        pitch = scale[start + step * k]
        notes.append(NoteEvent(pitch, k * 0.5, 0.5, int(rng.integers(60, 110))))
    return Score(tracks={Instrument.PIPA: tuple(notes)})


def with_nianzhi(rng, n_notes: int = 24, n_runs: int = 3, mode: Mode = WU_KONG) -> Score:
    """Score containing ``n_runs`` decrescendo repeated-note runs of 3-4 notes."""
    rng = np.random.default_rng(rng)
    pool = [p for p in in_mode_pitches(mode) if 55 <= p <= 83]
    run_at = set(rng.choice(np.arange(1, n_notes - 1), size=n_runs, replace=False).tolist())
    notes = []
    onset = 0.0
    prev = None
    for k in range(n_notes):
        pitch = int(rng.choice([p for p in pool if p != prev]))
        if k in run_at:
            reps = int(rng.integers(3, 5))
            ioi = float(rng.choice([0.125, 0.25, 0.375]))
            vel = int(rng.integers(90, 120))
            for r in range(reps):
                notes.append(NoteEvent(pitch, onset, ioi, max(1, int(vel * 0.8 ** r)), role=Role.NOTE))
                onset += ioi
        else:
            dur = float(rng.choice([0.5, 1.0, 1.5]))
            notes.append(NoteEvent(pitch, onset, dur, int(rng.integers(50, 100))))
            onset += dur
        prev = pitch
    return Score(tracks={Instrument.PIPA: tuple(notes)})


def skeleton_fixture() -> Score:
    """A short hand-written skeletal melody in Wu-Kong (10 bars)."""
    phrase = [
        (62, 1.0), (64, 0.5), (67, 0.5), (69, 1.0), (67, 1.0),
        (64, 1.0), (62, 0.5), (60, 0.5), (62, 2.0),
        (57, 1.0), (60, 1.0), (62, 1.0), (64, 1.0),
        (67, 1.5), (69, 0.5), (71, 1.0), (69, 1.0),
        (67, 1.0), (64, 1.0), (62, 2.0),
    ]
    notes = []
    onset = 0.0
    for _ in range(2):
        for pitch, dur in phrase:
            vel = 96 if onset % 4 == 0 else 80
            notes.append(NoteEvent(pitch, onset, dur, vel))
            onset += dur
    return Score(tracks={Instrument.PIPA: tuple(notes)})
