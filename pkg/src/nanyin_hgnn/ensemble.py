"""
Four-instrument heterophonic ensemble from a pipa skeleton.

Instruments are generated one after another (pipa, sanxian, dongxiao,
erxian). Each track is ornamented with a density drawn around 0.6, guided by
the stage-1 model run on a graph that also holds the previously generated
tracks, then transformed for its instrument. The pipa additionally receives
nianzhi expansions. A final pass regenerates every track with the full
ensemble as context.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyScore, PitchOutOfRange
from .gnn.model import UNK_CLASS, Adjacency, make_batch, pitch_class_index, predict_proba
from .gnn.train import ModelParams
from .graph import build_graph
from .midi_io import ENSEMBLE_ORDER, Instrument, NoteEvent, Role, Score, sort_notes
from .nianzhi import DetectorParams, NianzhiConfig, NianzhiPrediction, expand_nianzhi, first_ioi, predict
from .ornament import STYLE_TYPE, OrnamentConfig, Style, apply_ornamentation, ornament_metrics, special_note_seed
from .tokenizer import WU_KONG, Mode, NianzhiDetectConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnsembleConfig:
    order: tuple = tuple(i.value for i in ENSEMBLE_ORDER)
    density_mean: float = 0.6
    density_sd: float = 0.1
    density_clamp: tuple[float, float] = (0.2, 0.6)
    refinement_passes: int = 1
    style: str = "standard"
    special_notes: bool = True
    sanxian_duration: float = 0.8
    dongxiao_shift: int = -12
    erxian_shift: int = 12
    rule_min_duration: float = 1.0
    rule_spacing: float = 4.0

    def __post_init__(self):
        if tuple(Instrument(i) for i in self.order) != ENSEMBLE_ORDER:
            raise ValueError("instrument order is fixed to pipa, sanxian, dongxiao, erxian")
        if self.density_sd < 0:
            raise ValueError("density_sd must be non-negative")
        if self.refinement_passes < 0:
            raise ValueError("refinement_passes must be non-negative")


def instrument_transform(melody, instrument: Instrument, cfg: EnsembleConfig = EnsembleConfig()) -> list[NoteEvent]:
    """Sanxian shortens notes, dongxiao drops an octave, erxian rises one; pipa is unchanged."""
    instrument = Instrument(instrument)
    out = []
    for n in melody:
        pitch, dur = n.pitch, n.duration
        if instrument == Instrument.SANXIAN:
            dur = n.duration * cfg.sanxian_duration
        elif instrument == Instrument.DONGXIAO:
            pitch = n.pitch + cfg.dongxiao_shift
        elif instrument == Instrument.ERXIAN:
            pitch = n.pitch + cfg.erxian_shift
        if not 0 <= pitch <= 127:
            raise PitchOutOfRange(f"{instrument.value}: pitch {n.pitch} -> {pitch} leaves 0..127")
        out.append(n if (pitch, dur, n.instrument) == (n.pitch, n.duration, instrument)
                   else n.with_(pitch=pitch, duration=dur, instrument=instrument))
    return out


def sample_density(rng, cfg: EnsembleConfig = EnsembleConfig(), clamp: bool = True) -> float:
    d = float(rng.normal(cfg.density_mean, cfg.density_sd))
    if clamp:
        lo, hi = cfg.density_clamp
        d = min(max(d, lo), hi)
    return d


# ---------------------------------------------------------------------------
# conditioning


def conditioned_proba(params: ModelParams, melody, context_tracks) -> np.ndarray:
    """Next-pitch probabilities for ``melody`` given the other tracks.

    The melody graph and one graph per context track are batched, and every
    context note sends an extra edge to each melody note sharing its onset.
    Returns one row per melody note.
    """
    graphs = [build_graph(melody)]
    ctx = [[n for n in t if n.role != Role.ORNAMENT] for t in context_tracks]
    ctx = [c for c in ctx if c]
    graphs += [build_graph(c) for c in ctx]
    batch = make_batch(graphs)
    adj = batch.adjacency
    n_plain = len(adj.src) - adj.size
    src, dst, w = list(adj.src[:n_plain]), list(adj.dst[:n_plain]), list(adj.weight[:n_plain])
    offsets = np.cumsum([0] + [len(g.notes) + len(g.ornaments) + len(g.techs) for g in graphs])
    by_onset: dict[float, list[int]] = {}
    for i, n in enumerate(melody):
        by_onset.setdefault(round(n.onset, 9), []).append(i)
    for k, track in enumerate(ctx):
        for j, n in enumerate(track):
            for i in by_onset.get(round(n.onset, 9), ()):
                src.append(offsets[k + 1] + j)
                dst.append(i)
                w.append(1.0)
    batch.adjacency = Adjacency.build(src, dst, w, adj.size)
    proba = predict_proba(params.arrays, batch, params.config)
    return proba[:len(melody)]


def _guide(proba: np.ndarray | None, melody, positions, table):
    """Interval-table weights for host ``k`` from the prediction at the note before it."""
    if proba is None:
        return None

    def guide(k):
        i = positions[k]
        if i == 0:
            return None
        row = proba[i - 1]
        host = melody[i].pitch
        out = []
        for step, _ in table:
            p = host + step
            out.append(row[pitch_class_index(p)] if 0 <= p <= 127 else row[UNK_CLASS])
        return out

    return guide


# ---------------------------------------------------------------------------
# nianzhi positions


def rule_nianzhi(melody, cfg: NianzhiConfig = NianzhiConfig(), rng=None,
                 min_duration: float = 1.0, spacing: float = 4.0):
    """Fallback without a detector: long in-range notes at least ``spacing`` beats apart."""
    rng = np.random.default_rng(rng)
    out = []
    last = -np.inf
    for i, n in enumerate(melody):
        if n.onset - last < spacing or n.duration < min_duration or not cfg.pitch_low <= n.pitch <= cfg.pitch_high:
            continue
        reps = int(rng.integers(cfg.repetitions[0], cfg.repetitions[1] + 1))
        out.append((i, NianzhiPrediction(1.0, reps, tuple(cfg.decay_rate ** j for j in range(reps)), cfg.decay_rate)))
        last = n.onset
    return out


def nianzhi_plan(melody, detector: DetectorParams | None, cfg: NianzhiConfig, rng, min_duration: float,
                 spacing: float = 4.0,
                 detect_cfg: NianzhiDetectConfig = NianzhiDetectConfig()):
    """Accepted predictions whose expansion stays detectable as a nianzhi run."""
    if detector is None:
        plan = rule_nianzhi(melody, cfg, rng, min_duration, spacing)
    else:
        plan = predict(melody, detector, cfg, rng)
    keep = []
    for i, pred in plan:
        n = melody[i]
        if first_ioi(n.duration, pred.repetitions, pred.decay_rate) > detect_cfg.max_ioi + 1e-12:
            k = 4 if pred.repetitions == 3 else 3
            if first_ioi(n.duration, k, pred.decay_rate) > detect_cfg.max_ioi + 1e-12:
                continue
            pred = NianzhiPrediction(pred.position_prob, k, tuple(pred.decay_rate ** j for j in range(k)),
                                     pred.decay_rate)
        if pred.accepted:
            keep.append((i, pred))
    return keep


# ---------------------------------------------------------------------------
# generation


@dataclass
class EnsembleResult:
    score: Score
    report: dict
    nianzhi: list = field(default_factory=list)  # (skeleton index, NianzhiPrediction)
    densities: dict = field(default_factory=dict)

    def nianzhi_json(self) -> list:
        return [{"skeleton_index": i, **p.to_dict()} for i, p in self.nianzhi]


def _render_track(skeleton, instrument, density, plan, params, context, cfg: EnsembleConfig,
                  ocfg: OrnamentConfig, rng):
    melody = [n.with_(instrument=instrument) for n in skeleton]
    proba = conditioned_proba(params, melody, context) if params is not None else None
    planned = {i for i, _ in plan}
    positions = [i for i in range(len(melody)) if i not in planned]
    hosts = [melody[i] for i in positions]
    style = Style(cfg.style)
    table = ocfg.spec(STYLE_TYPE[style]).interval_table
    notes = apply_ornamentation(hosts, style, ocfg, rng, density=density,
                                guide=_guide(proba, melody, positions, table))
    if instrument == Instrument.PIPA and cfg.special_notes:
        notes = special_note_seed(notes, ocfg, rng)
    for i, pred in plan:
        notes.extend(expand_nianzhi(melody[i], pred))
    return instrument_transform(sort_notes(notes), instrument, cfg)


def generate_ensemble(skeleton: Score, params: ModelParams | None = None, cfg: EnsembleConfig = EnsembleConfig(),
                      rng=None, detector: DetectorParams | None = None, mode: Mode = WU_KONG,
                      ornament_cfg: OrnamentConfig = OrnamentConfig(),
                      nianzhi_cfg: NianzhiConfig = NianzhiConfig()) -> EnsembleResult:
    """Generate the four tracks; a pure function of its arguments and the seed."""
    rng = np.random.default_rng(rng)
    base = skeleton.main_track() if isinstance(skeleton, Score) else tuple(skeleton)
    base = [n.with_(instrument=Instrument.PIPA) for n in base if n.role == Role.NOTE]
    if not base:
        raise EmptyScore("skeleton has no notes")
    plan = nianzhi_plan(base, detector, nianzhi_cfg, rng, cfg.rule_min_duration, cfg.rule_spacing)
    densities = {inst: sample_density(rng, cfg) for inst in ENSEMBLE_ORDER}
    tracks: dict[Instrument, list[NoteEvent]] = {}
    for inst in ENSEMBLE_ORDER:
        context = [tracks[i] for i in ENSEMBLE_ORDER if i in tracks]
        tracks[inst] = _render_track(base, inst, densities[inst], plan if inst == Instrument.PIPA else [],
                                     params, context, cfg, ornament_cfg, rng)
    for _ in range(cfg.refinement_passes):
        for inst in ENSEMBLE_ORDER:
            context = [tracks[i] for i in ENSEMBLE_ORDER if i != inst]
            tracks[inst] = _render_track(base, inst, densities[inst], plan if inst == Instrument.PIPA else [],
                                         params, context, cfg, ornament_cfg, rng)
    tpq = skeleton.ticks_per_quarter if isinstance(skeleton, Score) else 480
    tempo = skeleton.tempo_map if isinstance(skeleton, Score) else ((0.0, 500000),)
    score = Score(tracks={k: tuple(v) for k, v in tracks.items()}, ticks_per_quarter=tpq, tempo_map=tempo)
    report = {"seed_density": {k.value: densities[k] for k in ENSEMBLE_ORDER},
              "nianzhi_runs": len(plan),
              "tracks": {}}
    for inst in ENSEMBLE_ORDER:
        notes = score.track(inst)
        report["tracks"][inst.value] = {
            "notes": sum(1 for n in notes if n.role == Role.NOTE),
            "ornaments": sum(1 for n in notes if n.role == Role.ORNAMENT),
            "nianzhi_notes": sum(1 for n in notes if n.role == Role.NIANZHI),
            **ornament_metrics(notes, ornament_cfg),
        }
    log.info("generated ensemble: %d nianzhi runs, densities %s", len(plan),
             {k.value: round(v, 3) for k, v in densities.items()})
    return EnsembleResult(score, report, plan, densities)


def recover_skeleton(pipa_track, nianzhi) -> list[int]:
    """Main-note pitch sequence of a generated pipa track.

    Ornaments are dropped and each exported nianzhi expansion collapses back
    to one note, so the result lines up with the skeleton.
    """
    plain = [(n.onset, n.pitch) for n in pipa_track if n.role == Role.NOTE]
    runs = sorted((n for n in pipa_track if n.role == Role.NIANZHI), key=lambda n: n.onset)
    starts, i = [], 0
    for _, pred in sorted(nianzhi, key=lambda x: x[0]):
        starts.append((runs[i].onset, runs[i].pitch))
        i += pred.repetitions
    return [p for _, p in sorted(plain + starts)]
