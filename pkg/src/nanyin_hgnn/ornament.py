"""
Rule-guided ornamentation.

Three ornament styles share one mechanism: each main note is considered with
a fixed probability, accepted ornaments keep a minimum gap, a 6-note context
window can downgrade an ornament to a light appoggiatura, and the final count
is pushed into the density band. Special notes (C sharp / F sharp) are seeded
separately with a small scoring rule and temperature sampling.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import OrnamentWarning, PitchOverflow
from .graph import OrnamentType
from .midi_io import NoteEvent, Role, sort_notes


class Placement(enum.Enum):
    GRACE = "Grace"
    AFTER_NOTE = "AfterNote"


class Style(enum.Enum):
    STANDARD = "standard"
    LIGHT = "light"
    MELODIC = "melodic"


UPPER_TABLE = ((2, 0.9), (3, 0.1))
NEIGHBOUR_TABLE = ((2, 0.9), (-2, 0.1))


@dataclass(frozen=True)
class OrnamentSpec:
    type: OrnamentType
    duration_factor: float
    velocity_factor: float
    interval_table: tuple = UPPER_TABLE

    def __post_init__(self):
        probs = [p for _, p in self.interval_table]
        if not self.interval_table or any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError("interval probabilities must be non-negative and sum to 1")
        if self.duration_factor <= 0 or self.velocity_factor <= 0:
            raise ValueError("factors must be positive")


SPECS = {
    OrnamentType.STANDARD: OrnamentSpec(OrnamentType.STANDARD, 0.3, 0.9),
    OrnamentType.LIGHT_APPOGGIATURA: OrnamentSpec(OrnamentType.LIGHT_APPOGGIATURA, 0.2, 0.8),
    OrnamentType.MELODIC_INTEGRATION: OrnamentSpec(OrnamentType.MELODIC_INTEGRATION, 0.3, 0.9),
}

STYLE_TYPE = {
    Style.STANDARD: OrnamentType.STANDARD,
    Style.LIGHT: OrnamentType.LIGHT_APPOGGIATURA,
    Style.MELODIC: OrnamentType.MELODIC_INTEGRATION,
}


@dataclass(frozen=True)
class OrnamentConfig:
    ornament_probability: float = 0.4
    min_gap_units: int = 3
    grid_unit: float = 0.25
    density_range: tuple[float, float] = (0.2, 0.6)
    coverage_target: float = 0.7
    evenness_target: float = 0.8
    grace_offset: float = 0.015
    context_window: int = 6
    temperature: float = 0.8
    light_ioi: float = 0.25
    lower_second: bool = False
    special_density: float = 0.05
    window_beats: float = 4.0

    @property
    def min_gap(self) -> float:
        return self.min_gap_units * self.grid_unit

    def spec(self, kind: OrnamentType) -> OrnamentSpec:
        base = SPECS[kind]
        if self.lower_second:
            return OrnamentSpec(base.type, base.duration_factor, base.velocity_factor, NEIGHBOUR_TABLE)
        return base


def pitch_for_draw(main_pitch: int, spec: OrnamentSpec, u: float, weights=None) -> int:
    """Inverse-CDF pick from the interval table for a uniform draw ``u``.

    ``weights`` (one per table row) reweights the table before the pick.
    """
    steps = [s for s, _ in spec.interval_table]
    probs = np.array([p for _, p in spec.interval_table], dtype=np.float64)
    if weights is not None:
        w = probs * np.asarray(weights, dtype=np.float64)
        if w.sum() > 0:
            probs = w
    probs = probs / probs.sum()
    if main_pitch + max(steps) > 127 or main_pitch + min(steps) < 0:
        raise PitchOverflow(f"ornament around pitch {main_pitch} leaves the MIDI range")
    k = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return main_pitch + steps[min(k, len(steps) - 1)]


def select_ornament_pitch(main_pitch: int, spec: OrnamentSpec, rng, weights=None) -> int:
    rng = np.random.default_rng(rng)
    return pitch_for_draw(main_pitch, spec, rng.random(), weights)


def place_ornament(note: NoteEvent, kind: Placement, spec: OrnamentSpec, cfg: OrnamentConfig = OrnamentConfig(),
                   pitch: int | None = None) -> NoteEvent:
    """Ornament event for ``note``; the pitch defaults to the host pitch."""
    hold = note.duration * spec.duration_factor
    if kind == Placement.GRACE:
        onset = note.onset - cfg.grace_offset
    else:
        onset = note.onset + note.duration + cfg.grace_offset - hold
    if onset < 0:
        warnings.warn(f"ornament onset {onset:.4f} clamped to 0", OrnamentWarning, stacklevel=2)
        onset = 0.0
    vel = min(127, max(1, int(math.floor(note.velocity * spec.velocity_factor + 0.5))))
    return NoteEvent(note.pitch if pitch is None else pitch, onset, hold, vel, note.instrument, Role.ORNAMENT)


def _local_median_ioi(melody, i: int, window: int) -> float:
    lo = max(0, i - window // 2)
    hi = min(len(melody), lo + window)
    lo = max(0, hi - window)
    onsets = [n.onset for n in melody[lo:hi]]
    iois = np.diff(onsets)
    return float(np.median(iois)) if len(iois) else math.inf


def density_bounds(n: int, cfg: OrnamentConfig) -> tuple[int, int]:
    lo, hi = cfg.density_range
    return math.ceil(lo * n - 1e-9), math.floor(hi * n + 1e-9)


@dataclass
class OrnamentResult:
    notes: list
    hosts: list = field(default_factory=list)
    types: list = field(default_factory=list)


def apply_ornamentation(melody, style: Style | str = Style.STANDARD, cfg: OrnamentConfig = OrnamentConfig(),
                        rng=None, density: float | None = None, guide=None, return_hosts: bool = False):
    """Ornament a monophonic melody and return it merged with its ornaments.

    Each note is kept as a host with ``cfg.ornament_probability`` when it is at
    least ``cfg.min_gap`` beats from every accepted ornament. The count is then
    moved into ``cfg.density_range``, or to ``round(density * n)`` clipped to
    that band when ``density`` is given: excess ornaments are rejected at
    random and missing ones filled from the remaining admissible notes.
    ``guide(i)`` may return one weight per interval-table row for host ``i``.
    """
    style = Style(style)
    rng = np.random.default_rng(rng)
    melody = list(melody)
    n = len(melody)
    if n == 0:
        return OrnamentResult([], [], []) if return_hosts else []
    spec = cfg.spec(STYLE_TYPE[style])
    placement = Placement.AFTER_NOTE if style == Style.MELODIC else Placement.GRACE

    light = cfg.spec(OrnamentType.LIGHT_APPOGGIATURA)
    kinds = [light if _local_median_ioi(melody, i, cfg.context_window) < cfg.light_ioi else spec
             for i in range(n)]

    def anchor(i):
        note = melody[i]
        if placement == Placement.GRACE:
            return max(0.0, note.onset - cfg.grace_offset)
        return max(0.0, note.onset + note.duration + cfg.grace_offset - note.duration * kinds[i].duration_factor)

    def admissible(i, chosen):
        a = anchor(i)
        return all(abs(a - anchor(j)) >= cfg.min_gap - 1e-9 for j in chosen)

    def fits(i):
        steps = [s for s, _ in spec.interval_table]
        return 0 <= melody[i].pitch + min(steps) and melody[i].pitch + max(steps) <= 127

    chosen: list[int] = []
    draws = rng.random(n)
    for i in range(n):
        if draws[i] < cfg.ornament_probability and fits(i) and admissible(i, chosen):
            chosen.append(i)

    lo, hi = density_bounds(n, cfg)
    if density is not None:
        want = min(max(int(round(density * n)), lo), hi)
        lo = hi = want
    if len(chosen) > hi:
        keep = rng.choice(len(chosen), size=hi, replace=False)
        chosen = [chosen[k] for k in sorted(keep)]
    if len(chosen) < lo:
        for i in rng.permutation(n).tolist():
            if len(chosen) >= lo:
                break
            if i not in chosen and fits(i) and admissible(i, chosen):
                chosen.append(i)
        if len(chosen) < lo:
            warnings.warn(f"only {len(chosen)} of {lo} ornaments fit the gap constraint", OrnamentWarning,
                          stacklevel=2)
    chosen.sort()

    out = list(melody)
    types = []
    for i in chosen:
        kind = kinds[i]
        weights = guide(i) if guide is not None else None
        pitch = select_ornament_pitch(melody[i].pitch, kind, rng, weights)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OrnamentWarning)
            out.append(place_ornament(melody[i], placement, kind, cfg, pitch))
        types.append(kind.type)
    merged = list(sort_notes(out))
    if return_hosts:
        return OrnamentResult(merged, chosen, types)
    return merged


# ---------------------------------------------------------------------------
# special notes

SPECIAL_PCS = {1: 9, 6: 2}  # C sharp follows A, F sharp follows D


def special_candidates(host_pitch: int) -> list[int]:
    base = host_pitch - host_pitch % 12
    return [base + 1, base + 6]


def score_special(candidate: int, history, cfg: OrnamentConfig = OrnamentConfig()) -> float:
    """Suitability of a special pitch given the preceding notes (oldest first)."""
    history = list(history)[-cfg.context_window:]
    s = 0.0
    if history and SPECIAL_PCS.get(candidate % 12) == history[-1] % 12:
        s += 1.0
    if history and abs(candidate - float(np.mean(history))) <= 4:
        s += 0.5
    if candidate in history:
        s -= 1.0
    return s


def softmax_choice(scores, temperature: float, rng) -> int:
    scores = np.asarray(scores, dtype=np.float64)
    if temperature <= 0:
        return int(np.argmax(scores))
    z = (scores - scores.max()) / temperature
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(len(scores), p=p))


def special_note_seed(melody, cfg: OrnamentConfig = OrnamentConfig(), rng=None, count: int | None = None):
    """Add C sharp / F sharp ornaments at the host onsets of a few main notes.

    Positions are drawn without replacement by softmax over each position's
    best candidate score; the pitch at a position by softmax over its two
    candidates. ``count`` defaults to ``max(1, round(special_density * n))``.
    """
    rng = np.random.default_rng(rng)
    melody = list(melody)
    hosts = [i for i, n in enumerate(melody) if n.role == Role.NOTE]
    if not hosts:
        return list(melody)
    history_of = {}
    scores = {}
    for i in hosts:
        hist = [m.pitch for m in melody[max(0, i - cfg.context_window):i] if m.role != Role.ORNAMENT]
        history_of[i] = hist
        cands = [c for c in special_candidates(melody[i].pitch) if c != melody[i].pitch and 0 <= c <= 127]
        scores[i] = [(c, score_special(c, hist, cfg)) for c in cands]
    pool = [i for i in hosts if scores[i]]
    if count is None:
        count = max(1, int(round(cfg.special_density * len(hosts))))
    count = min(count, len(pool))
    out = list(melody)
    for _ in range(count):
        best = [max(s for _, s in scores[i]) for i in pool]
        i = pool.pop(softmax_choice(best, cfg.temperature, rng))
        cands = scores[i]
        pitch = cands[softmax_choice([s for _, s in cands], cfg.temperature, rng)][0]
        host = melody[i]
        spec = SPECS[OrnamentType.STANDARD]
        vel = min(127, max(1, int(math.floor(host.velocity * spec.velocity_factor + 0.5))))
        out.append(NoteEvent(pitch, host.onset, host.duration * spec.duration_factor, vel, host.instrument,
                             Role.ORNAMENT))
    return list(sort_notes(out))


def is_special(pitch: int) -> bool:
    return pitch % 12 in SPECIAL_PCS


# ---------------------------------------------------------------------------
# metrics


def gini(values) -> float:
    x = np.asarray(values, dtype=np.float64)
    if len(x) == 0:
        return 0.0
    mu = x.mean()
    if mu == 0:
        return 0.0
    return float(np.abs(x[:, None] - x[None, :]).sum() / (2 * len(x) ** 2 * mu))


def ornament_metrics(notes, cfg: OrnamentConfig = OrnamentConfig()) -> dict:
    """Density, coverage and evenness of the ornaments in a tagged note list.

    Density counts ornaments per main (``Role.NOTE``) note. Coverage is the
    fraction of ``cfg.window_beats`` windows holding an ornament onset.
    Evenness is ``1 - G * m / (m - 1)`` for the Gini coefficient G of the m
    gaps between consecutive ornament onsets; with fewer than two ornaments
    it is 0.
    """
    notes = list(notes)
    orns = sorted(n.onset for n in notes if n.role == Role.ORNAMENT)
    mains = [n for n in notes if n.role == Role.NOTE]
    density = len(orns) / len(mains) if mains else 0.0
    if notes:
        end = max(n.end for n in notes)
        n_win = max(1, math.ceil(end / cfg.window_beats - 1e-9))
        hit = {min(int(o // cfg.window_beats), n_win - 1) for o in orns}
        coverage = len(hit) / n_win
    else:
        coverage = 0.0
    if len(orns) >= 2:
        gaps = np.diff(orns)
        m = len(gaps)
        g = gini(gaps) * m / (m - 1) if m > 1 else 0.0
        evenness = float(np.clip(1.0 - g, 0.0, 1.0))
    else:
        evenness = 0.0
    return {"density": density, "coverage": coverage, "evenness": evenness}
