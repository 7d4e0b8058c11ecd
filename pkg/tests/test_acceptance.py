"""
Acceptance suite. Each test checks one numbered criterion at its stated
tolerance; a PASS/FAIL line per criterion is printed in the terminal summary.
"""

import io
import math
import time
from pathlib import Path

import mido
import numpy as np
import pytest

from nanyin_hgnn import toy
from nanyin_hgnn.cli import run
from nanyin_hgnn.ensemble import generate_ensemble, recover_skeleton
from nanyin_hgnn.gnn.loss import grad_check
from nanyin_hgnn.gnn.model import ModelConfig
from nanyin_hgnn.gnn.train import ModelParams
from nanyin_hgnn.graph import (EdgeKind, OrnamentType, apply_technique_rules, build_graph,
                               inject_pentatonic_enhancement, place_ornaments, validate_graph)
from nanyin_hgnn.metrics import mode_aware_f1, ornament_rationality_score, structural_score, weighted_f1
from nanyin_hgnn.midi_io import ENSEMBLE_ORDER, Instrument, NoteEvent, Role, parse_midi, write_midi
from nanyin_hgnn.nianzhi import NianzhiPrediction, expand_nianzhi, first_ioi, loss_nianzhi
from nanyin_hgnn.ornament import SPECS, is_special, select_ornament_pitch
from nanyin_hgnn.tokenizer import (DURATION_STEP, VELOCITY_BINS, WU_KONG, TokenKind, decode, detect_nianzhi, encode,
                                   mode_contains)

SKELETON = Path(__file__).parent / "fixtures" / "skeleton.mid"


@pytest.mark.criterion(1, "tokenizer round trip on 200 in-mode scores, out-of-mode -> UNK")
def test_criterion_1_tokenizer_round_trip():
    start = time.perf_counter()
    half_velocity_bin = (VELOCITY_BINS[1] - VELOCITY_BINS[0]) / 2
    half_micro_bin = 1 / 128
    for seed in range(200):
        s = toy.random_score(seed, 24)
        out = decode(encode(s)).notes
        assert len(out) == len(s.notes)
        for a, b in zip(s.notes, out):
            assert a.pitch == b.pitch
            assert abs(a.onset - b.onset) <= half_micro_bin + 1e-12
            assert abs(a.duration - b.duration) <= DURATION_STEP / 2 + 1e-12
            assert abs(a.velocity - b.velocity) <= half_velocity_bin + 1e-9
    outside = unk = 0
    for seed in range(200):
        s = toy.random_score(seed, 24, out_of_mode=0.3)
        pitch_slots = [t for t in encode(s) if t.kind in (TokenKind.PITCH, TokenKind.UNK)]
        for n, t in zip(s.notes, pitch_slots):
            if not mode_contains(WU_KONG, n.pitch):
                outside += 1
                unk += t.kind == TokenKind.UNK
    assert outside > 0 and unk == outside
    assert time.perf_counter() - start < 10.0


@pytest.mark.criterion(2, "graph pipeline invariants, density within 1/n of 0.6, enhancement exactly x2")
def test_criterion_2_graph_invariants():
    rng = np.random.default_rng(2)
    for k in range(100):
        s = toy.with_nianzhi(rng, 20) if k % 4 == 0 else toy.random_score(rng, int(rng.integers(4, 40)))
        g = build_graph(s)
        placed = place_ornaments(g, 0.6, rng)
        enhanced = inject_pentatonic_enhancement(placed, WU_KONG, 2.0)
        final = apply_technique_rules(enhanced)
        for stage in (g, placed, enhanced, final):
            validate_graph(stage)
        n = len(g.notes)
        assert abs(len(final.ornaments) / n - 0.6) <= 1 / n
        for before, after in zip(placed.edges, enhanced.edges):
            if before.kind != EdgeKind.DECORATIVE:
                continue
            o, host = placed.ornaments[before.src.index], placed.notes[before.dst.index]
            if mode_contains(WU_KONG, o.pitch) and mode_contains(WU_KONG, host.pitch):
                assert after.weight == 2.0 * before.weight
            else:
                assert after.weight == before.weight


@pytest.mark.criterion(3, "10 000 ornament pitch draws: +2 in [0.88, 0.92], +3 in [0.08, 0.12]")
def test_criterion_3_interval_distribution():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    spec = SPECS[OrnamentType.STANDARD]
    steps = np.array([select_ornament_pitch(62, spec, rng) - 62 for _ in range(10_000)])
    assert 0.88 <= np.mean(steps == 2) <= 0.92
    assert 0.08 <= np.mean(steps == 3) <= 0.12
    assert time.perf_counter() - start < 5.0


@pytest.mark.criterion(4, "finite-difference check of the full stage-1 loss, 6 nodes, hidden 8")
def test_criterion_4_gradient(gradcheck_case):
    g, params, fn, _, _ = gradcheck_case
    assert len(g.notes) + len(g.ornaments) + len(g.techs) == 6
    assert params.config.hidden == 8
    assert params.train_config.lambda1 == 0.0001 and params.train_config.lambda2 == 0.1
    worst, _ = grad_check(params.arrays, fn, step=1e-5)
    assert worst < 1e-4


@pytest.mark.criterion(5, "overfit 20 toy graphs to CE < 0.05 in 500 epochs; lr trace matches closed form")
def test_criterion_5_overfit(overfit_run):
    _, params, seconds = overfit_run
    hist = params.history
    assert len(hist) <= 500
    assert min(r["train_ce"] for r in hist) < 0.05

    def closed_form(epoch, lr0=0.0003, eta_min=0.00002):
        start, length = 0, 20
        while epoch >= start + length:
            start, length = start + length, 2 * length
        return eta_min + (lr0 - eta_min) * (1 + math.cos(math.pi * (epoch - start) / length)) / 2

    for epoch in (0, 10, 20, 60):
        assert abs(hist[epoch]["lr"] - closed_form(epoch)) <= 1e-9
    assert seconds < 300


@pytest.mark.criterion(6, "nianzhi expansion (100, 80, 64), duration kept, re-detected; loss 0.35")
def test_criterion_6_nianzhi():
    pred = NianzhiPrediction(0.9, 3, (1.0, 0.8, 0.64), 0.8)
    note = NoteEvent(67, 4.0, 1.0, 100)
    out = expand_nianzhi(note, pred)
    assert [n.velocity for n in out] == [100, 80, 64]
    assert abs(sum(n.duration for n in out) - note.duration) <= 1e-9
    assert {n.pitch for n in out} == {67}
    for k in (3, 4):
        p = NianzhiPrediction(0.9, k, tuple(0.8 ** i for i in range(k)), 0.8)
        for dur in np.linspace(0.25, 1.5, 26):
            if first_ioi(dur, k, 0.8) > 0.5:
                continue
            for vel in (20, 64, 100, 127):
                run_notes = expand_nianzhi(NoteEvent(67, 4.0, float(dur), vel), p)
                assert abs(sum(n.duration for n in run_notes) - dur) <= 1e-9
                spans = detect_nianzhi([NoteEvent(64, 3.0, 1.0, 80)] + run_notes)
                assert [(s.start_index, s.repetitions) for s in spans] == [(1, k)]
    # only the position term is non-zero, with BCE 1
    assert loss_nianzhi({"position": [math.exp(-1)], "speed": [0.5], "intensity": [0.5]},
                        {"position": [1.0], "speed": [0.5], "intensity": [0.5]}) == pytest.approx(0.35, abs=1e-12)


@pytest.mark.criterion(7, "ensemble has 4 tracks, transforms note by note, same seed -> same bytes")
def test_criterion_7_ensemble():
    skel = parse_midi(SKELETON.read_bytes())
    params = ModelParams.initial(ModelConfig(hidden=8, heads=2), rng=0)
    base = skel.notes
    for seed in range(3):
        res = generate_ensemble(skel, params, rng=seed)
        assert len(res.score.tracks) == 4 and set(res.score.tracks) == set(ENSEMBLE_ORDER)
        # pipa is untransformed: its plain notes are skeleton notes, expanded ones collapse back to skeleton pitches
        skeleton_keys = {(n.pitch, n.onset, n.duration, n.velocity) for n in base}
        pipa = res.score.track(Instrument.PIPA)
        assert all((n.pitch, n.onset, n.duration, n.velocity) in skeleton_keys for n in pipa if n.role == Role.NOTE)
        assert recover_skeleton(pipa, res.nianzhi) == [n.pitch for n in base]
        for inst, shift, factor in [(Instrument.SANXIAN, 0, 0.8), (Instrument.DONGXIAO, -12, 1.0),
                                    (Instrument.ERXIAN, 12, 1.0)]:
            mains = [n for n in res.score.track(inst) if n.role == Role.NOTE]
            assert len(mains) == len(base)
            for a, b in zip(base, mains):
                assert (b.pitch, b.onset, b.velocity) == (a.pitch + shift, a.onset, a.velocity)
                assert b.duration == a.duration * factor
        a = write_midi(res.score)
        b = write_midi(generate_ensemble(skel, params, rng=seed).score)
        assert a == b


@pytest.mark.criterion(8, "weighted/mode-aware F1 identities, ORS in [0, 1], structural 1.0 at targets")
def test_criterion_8_metrics():
    rng = np.random.default_rng(8)
    pool = [p for p in range(50, 84) if mode_contains(WU_KONG, p)]
    for _ in range(100):
        t = rng.choice(pool, 16).tolist()
        assert weighted_f1(t, t) == 1.0
        wrong = [pool[(pool.index(x) + 1) % len(pool)] for x in t]
        assert weighted_f1(wrong, t) == 0.0
        p = rng.choice(pool, 16).tolist()
        assert mode_aware_f1(p, t) == weighted_f1(p, t)
    for _ in range(1000):
        notes = list(toy.random_score(rng, int(rng.integers(1, 25))).notes)
        for n in list(notes):
            if rng.random() < 0.6:
                notes.append(NoteEvent(int(rng.integers(40, 100)), float(rng.uniform(0, n.end)), 0.2, 70,
                                       role=Role.ORNAMENT))
        assert 0.0 <= ornament_rationality_score(notes)["ors"] <= 1.0
    for density in (0.2, 0.4, 0.6):
        assert structural_score(density, 0.8, 0.7) == 1.0


@pytest.mark.criterion(9, "CLI generate on the skeleton fixture: valid SMF, C# / F# ornament at a host onset")
def test_criterion_9_end_to_end(tmp_path):
    out = tmp_path / "ensemble.mid"
    assert run(["generate", "--skeleton", str(SKELETON), "-o", str(out), "--seed", "0"]) == 0
    data = out.read_bytes()
    score = parse_midi(data)
    assert len(score.tracks) == 4
    mid = mido.MidiFile(file=io.BytesIO(data))
    assert mid.type == 1 and len(mid.tracks) == 5
    note_ons = sum(1 for t in mid.tracks for m in t if m.type == "note_on" and m.velocity > 0)
    assert note_ons == len(score.notes)
    pipa = score.track(Instrument.PIPA)
    hosts = {n.onset for n in pipa if n.role == Role.NOTE}
    specials = [n for n in pipa if n.role == Role.ORNAMENT and is_special(n.pitch) and n.onset in hosts]
    assert len(specials) >= 1
