"""Pitch F1 scores and the Ornament Rationality Score (ORS)."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NoInModeTargets
from .midi_io import Role, Score
from .ornament import OrnamentConfig, ornament_metrics
from .tokenizer import WU_KONG, Mode, mode_contains


def frequency_weights(targets) -> dict:
    counts = Counter(targets)
    total = sum(counts.values())
    return {c: k / total for c, k in counts.items()}


def per_class_f1(preds, targets) -> dict:
    preds, targets = list(preds), list(targets)
    out = {}
    for c in set(preds) | set(targets):
        tp = sum(1 for p, t in zip(preds, targets) if p == c and t == c)
        fp = sum(1 for p, t in zip(preds, targets) if p == c and t != c)
        fn = sum(1 for p, t in zip(preds, targets) if p != c and t == c)
        out[c] = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return out


def weighted_f1(preds, targets, weights: dict | None = None) -> float:
    """Per-class F1 averaged with normalised class weights.

    ``weights`` maps class to weight and defaults to the class frequency in
    ``targets``. Classes that appear in neither sequence are ignored.
    """
    preds, targets = list(preds), list(targets)
    if len(preds) != len(targets):
        raise LengthMismatch(f"{len(preds)} predictions for {len(targets)} targets")
    if not targets:
        return 0.0
    if weights is None:
        weights = frequency_weights(targets)
    f1 = per_class_f1(preds, targets)
    used = {c: w for c, w in weights.items() if c in f1 and w > 0}
    total = sum(used.values())
    if total == 0:
        return 0.0
    return float(sum(w * f1[c] for c, w in used.items()) / total)


def mode_aware_f1(preds, targets, mode: Mode = WU_KONG, weights: dict | None = None) -> float:
    """Weighted F1 over the positions whose target pitch lies in ``mode``."""
    preds, targets = list(preds), list(targets)
    if len(preds) != len(targets):
        raise LengthMismatch(f"{len(preds)} predictions for {len(targets)} targets")
    keep = [(p, t) for p, t in zip(preds, targets) if mode_contains(mode, t)]
    if not keep:
        raise NoInModeTargets("no target pitch lies in the mode")
    p, t = zip(*keep)
    return weighted_f1(p, t, weights)


@dataclass(frozen=True)
class ORSConfig:
    stylistic_weight: float = 0.5
    structural_weight: float = 0.5
    coherence_semitones: float = 4.0
    neighbourhood: int = 6
    grid: float = 0.25
    alignment_tolerance: float = 0.05
    density_band: tuple[float, float] = (0.2, 0.6)
    evenness_target: float = 0.8
    coverage_target: float = 0.7


def closeness(value: float, target: float) -> float:
    return 1.0 - min(1.0, abs(value - target) / target)


def band_closeness(value: float, band: tuple[float, float]) -> float:
    lo, hi = band
    if lo <= value <= hi:
        return 1.0
    return closeness(value, lo if value < lo else hi)


def structural_score(density: float, evenness: float, coverage: float, cfg: ORSConfig = ORSConfig()) -> float:
    return float(np.mean([band_closeness(density, cfg.density_band),
                          closeness(evenness, cfg.evenness_target),
                          closeness(coverage, cfg.coverage_target)]))


def _track_ors(notes, cfg: ORSConfig) -> dict:
    mains = sorted((n for n in notes if n.role != Role.ORNAMENT), key=lambda n: n.onset)
    orns = [n for n in notes if n.role == Role.ORNAMENT]
    ocfg = OrnamentConfig(density_range=cfg.density_band, coverage_target=cfg.coverage_target,
                          evenness_target=cfg.evenness_target)
    m = ornament_metrics(notes, ocfg)
    if not orns or not mains:
        stylistic = 0.0
    else:
        onsets = np.array([n.onset for n in mains])
        pitches = np.array([n.pitch for n in mains], dtype=np.float64)
        half = cfg.neighbourhood // 2
        coherent = aligned = 0
        for o in orns:
            h = int(np.argmin(np.abs(onsets - o.onset)))
            lo = max(0, h - half)
            mean = pitches[lo:lo + cfg.neighbourhood].mean()
            coherent += abs(o.pitch - mean) <= cfg.coherence_semitones
            dev = abs(o.onset - round(o.onset / cfg.grid) * cfg.grid)
            aligned += dev <= cfg.alignment_tolerance + 1e-12
        stylistic = 0.5 * (coherent / len(orns) + aligned / len(orns))
    structural = structural_score(m["density"], m["evenness"], m["coverage"], cfg) if orns else 0.0
    ors = cfg.stylistic_weight * stylistic + cfg.structural_weight * structural
    return {"ors": float(ors), "stylistic": float(stylistic), "structural": float(structural), **m}


def ornament_rationality_score(score, cfg: ORSConfig = ORSConfig()) -> dict:
    """ORS of a tagged score; multi-track scores average their non-empty tracks.

    stylistic is the mean of melodic coherence and rhythmic alignment,
    structural the mean closeness of density, evenness and coverage to their
    targets, and ORS their weighted sum.
    """
    if isinstance(score, Score):
        tracks = [list(t) for t in score.tracks.values() if t]
    else:
        tracks = [list(score)]
    parts = [_track_ors(t, cfg) for t in tracks if t]
    if not parts:
        return {"ors": 0.0, "stylistic": 0.0, "structural": 0.0, "density": 0.0, "coverage": 0.0, "evenness": 0.0}
    return {k: float(np.mean([p[k] for p in parts])) for k in parts[0]}


def pitch_sequences(pred: Score, ref: Score):
    """Aligned main-note pitches of the main tracks, truncated to the shorter one."""
    p = [n.pitch for n in pred.main_track() if n.role == Role.NOTE]
    r = [n.pitch for n in ref.main_track() if n.role == Role.NOTE]
    k = min(len(p), len(r))
    return p[:k], r[:k]


def evaluate_scores(pred: Score, ref: Score, mode: Mode = WU_KONG, cfg: ORSConfig = ORSConfig()) -> dict:
    p, r = pitch_sequences(pred, ref)
    report = {"aligned_notes": len(p), "weighted_f1": weighted_f1(p, r) if p else 0.0}
    try:
        report["mode_aware_f1"] = mode_aware_f1(p, r, mode)
    except NoInModeTargets:
        report["mode_aware_f1"] = None
    report["ors"] = ornament_rationality_score(pred, cfg)
    return report
