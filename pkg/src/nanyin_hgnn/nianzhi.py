"""
Nianzhi prediction and expansion.

A small bidirectional LSTM reads per-note features (pitch, IOI, velocity,
duration) and scores every note as a nianzhi position; accepted notes are
expanded into 3-4 repetitions with geometric velocity and duration decay.
The detector is trained on pseudo-labels obtained by collapsing the runs
that :func:`~nanyin_hgnn.tokenizer.detect_nianzhi` finds in performances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidPrediction
from .gnn.loss import loss_and_grads
from .gnn.tensor import Tensor, as_tensor, concat
from .gnn.train import Adam
from .midi_io import NoteEvent, Role, Score
from .tokenizer import NianzhiDetectConfig, detect_nianzhi


@dataclass(frozen=True)
class NianzhiConfig:
    threshold: float = 0.7
    pitch_low: int = 55
    pitch_high: int = 85
    decay_rate: float = 0.8
    repetitions: tuple[int, int] = (3, 4)
    alpha_position: float = 0.35
    alpha_speed: float = 0.25
    alpha_intensity: float = 0.15
    hidden: int = 8
    epochs: int = 200
    lr: float = 0.01


@dataclass(frozen=True)
class NianzhiPrediction:
    position_prob: float
    repetitions: int
    intensity_curve: tuple[float, ...]
    decay_rate: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.position_prob <= 1.0:
            raise InvalidPrediction(f"position_prob {self.position_prob} outside [0, 1]")
        if self.repetitions not in (3, 4):
            raise InvalidPrediction(f"repetitions must be 3 or 4, got {self.repetitions}")
        # r = 1 is allowed as the uniform limit
        if not 0.0 < self.decay_rate <= 1.0:
            raise InvalidPrediction(f"decay_rate {self.decay_rate} outside (0, 1]")

    @property
    def accepted(self) -> bool:
        return self.position_prob >= 0.7

    def to_dict(self) -> dict:
        return {"position_prob": self.position_prob, "repetitions": self.repetitions,
                "intensity_curve": list(self.intensity_curve), "decay_rate": self.decay_rate}


# ---------------------------------------------------------------------------
# detector network

N_NOTE_FEATURES = 4


def note_features(notes) -> np.ndarray:
    """(pitch, IOI, velocity, duration) scaled to roughly unit range."""
    notes = list(notes)
    rows = []
    for i, n in enumerate(notes):
        ioi = notes[i + 1].onset - n.onset if i + 1 < len(notes) else n.duration
        rows.append((n.pitch / 127.0, min(ioi, 4.0) / 4.0, n.velocity / 127.0, min(n.duration, 4.0) / 4.0))
    return np.array(rows, dtype=np.float64).reshape(-1, N_NOTE_FEATURES)


def _uniform(rng, shape, fan_in):
    limit = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class DetectorParams:
    arrays: dict
    hidden: int = 8
    trained: bool = False

    @classmethod
    def initial(cls, hidden: int = 8, rng=None) -> "DetectorParams":
        rng = np.random.default_rng(rng)
        h = hidden
        p = {}
        for d in ("fwd", "bwd"):
            p[f"lstm.{d}.Wx"] = _uniform(rng, (N_NOTE_FEATURES, 4 * h), h)
            p[f"lstm.{d}.Wh"] = _uniform(rng, (h, 4 * h), h)
            b = np.zeros((1, 4 * h))
            b[0, h:2 * h] = 1.0  # forget-gate bias
            p[f"lstm.{d}.b"] = b
        p["fc1.W"] = _uniform(rng, (2 * h, 2 * h), 2 * h)
        p["fc1.b"] = np.zeros((1, 2 * h))
        p["fc2.W"] = _uniform(rng, (2 * h, h), 2 * h)
        p["fc2.b"] = np.zeros((1, h))
        for name in ("Wq", "Wk", "Wv"):
            p[f"att.{name}"] = _uniform(rng, (h, h), h)
        p["head.W"] = _uniform(rng, (h, 3), h)
        p["head.b"] = np.zeros((1, 3))
        return cls(p, hidden, False)

    def to_dict(self) -> dict:
        return {"hidden": self.hidden, "trained": self.trained,
                "arrays": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                           for k, v in sorted(self.arrays.items())}}

    @classmethod
    def from_dict(cls, obj: dict) -> "DetectorParams":
        arrays = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in obj["arrays"].items()}
        return cls(arrays, int(obj["hidden"]), bool(obj["trained"]))


def _lstm(x: Tensor, Wx, Wh, b, hidden: int, reverse: bool = False) -> Tensor:
    L = x.shape[0]
    h = Tensor(np.zeros((1, hidden)))
    c = Tensor(np.zeros((1, hidden)))
    outs = [None] * L
    steps = range(L - 1, -1, -1) if reverse else range(L)
    xw = x @ as_tensor(Wx)
    for t in steps:
        gates = xw.rows([t]) + h @ as_tensor(Wh) + as_tensor(b)
        i = gates.cols(0, hidden).sigmoid()
        f = gates.cols(hidden, 2 * hidden).sigmoid()
        g = gates.cols(2 * hidden, 3 * hidden).tanh()
        o = gates.cols(3 * hidden, 4 * hidden).sigmoid()
        c = f * c + i * g
        h = o * c.tanh()
        outs[t] = h
    return concat(outs, axis=0)


def detector_forward(tensors: dict, features: np.ndarray, hidden: int) -> dict:
    """Per-note outputs: position logit/probability, speed and intensity in [0, 1]."""
    x = Tensor(features)
    fwd = _lstm(x, tensors["lstm.fwd.Wx"], tensors["lstm.fwd.Wh"], tensors["lstm.fwd.b"], hidden)
    bwd = _lstm(x, tensors["lstm.bwd.Wx"], tensors["lstm.bwd.Wh"], tensors["lstm.bwd.b"], hidden, reverse=True)
    states = concat([fwd, bwd], axis=1)
    f = (states @ as_tensor(tensors["fc1.W"]) + as_tensor(tensors["fc1.b"])).elu()
    f = (f @ as_tensor(tensors["fc2.W"]) + as_tensor(tensors["fc2.b"])).elu()
    q = f @ as_tensor(tensors["att.Wq"])
    k = f @ as_tensor(tensors["att.Wk"])
    v = f @ as_tensor(tensors["att.Wv"])
    f = f + ((q @ k.T) * (1.0 / math.sqrt(hidden))).softmax(axis=1) @ v
    out = f @ as_tensor(tensors["head.W"]) + as_tensor(tensors["head.b"])
    logit = out.cols(0, 1)
    return {"states": states, "position_logit": logit, "position": logit.sigmoid(),
            "speed": out.cols(1, 2).sigmoid(), "intensity": out.cols(2, 3).sigmoid()}


def position_scores(notes, detector: DetectorParams) -> np.ndarray:
    notes = list(notes)
    if not notes:
        return np.zeros(0)
    out = detector_forward(detector.arrays, note_features(notes), detector.hidden)
    return out["position"].data[:, 0]


def detect_positions(score, detector: DetectorParams, cfg: NianzhiConfig = NianzhiConfig()) -> list[tuple[int, float]]:
    """Notes whose position score reaches the threshold and whose pitch is in range."""
    notes = list(score.main_track() if isinstance(score, Score) else score)
    scores = position_scores(notes, detector)
    return [(i, float(s)) for i, (n, s) in enumerate(zip(notes, scores))
            if s >= cfg.threshold and cfg.pitch_low <= n.pitch <= cfg.pitch_high]


# ---------------------------------------------------------------------------
# loss


def loss_nianzhi(pred, target, cfg: NianzhiConfig = NianzhiConfig()):
    """Weighted sum of position BCE, speed MSE and intensity MSE.

    ``pred`` and ``target`` map ``position``, ``speed`` and ``intensity`` to
    aligned per-note values; predicted positions are probabilities.
    """
    p = np.asarray(pred["position"], dtype=np.float64).reshape(-1)
    t = np.asarray(target["position"], dtype=np.float64).reshape(-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        pos_term = np.where(t > 0, -t * np.log(p), 0.0) + np.where(t < 1, -(1 - t) * np.log1p(-p), 0.0)
    bce = float(np.mean(pos_term)) if len(p) else 0.0

    def mse(key):
        a = np.asarray(pred[key], dtype=np.float64).reshape(-1)
        b = np.asarray(target[key], dtype=np.float64).reshape(-1)
        return float(np.mean((a - b) ** 2)) if len(a) else 0.0

    return cfg.alpha_position * bce + cfg.alpha_speed * mse("speed") + cfg.alpha_intensity * mse("intensity")


def _loss_nianzhi_tensor(out: dict, target: dict, cfg: NianzhiConfig) -> Tensor:
    z = out["position_logit"]
    t = Tensor(np.asarray(target["position"], dtype=np.float64).reshape(-1, 1))
    # BCE from logits: softplus(z) - t z, written with stable pieces
    softplus = (z.relu() + ((-(z.abs())).exp() + 1.0).log())
    bce = (softplus - z * t).mean()
    ds = out["speed"] - Tensor(np.asarray(target["speed"], dtype=np.float64).reshape(-1, 1))
    di = out["intensity"] - Tensor(np.asarray(target["intensity"], dtype=np.float64).reshape(-1, 1))
    return bce * cfg.alpha_position + ds.square().mean() * cfg.alpha_speed + di.square().mean() * cfg.alpha_intensity


# ---------------------------------------------------------------------------
# pseudo-labels and training


def collapse_spans(notes, spans) -> list[NoteEvent]:
    """Replace each span by one note covering it (pitch and first velocity kept)."""
    notes = list(notes)
    starts = {s.start_index: s for s in spans}
    out, i = [], 0
    while i < len(notes):
        if i in starts:
            s = starts[i]
            group = notes[i:i + s.repetitions]
            end = max(n.end for n in group)
            out.append(group[0].with_(duration=end - group[0].onset, role=Role.NOTE))
            i += s.repetitions
        else:
            out.append(notes[i])
            i += 1
    return out


def pseudo_labels(notes, detect_cfg: NianzhiDetectConfig = NianzhiDetectConfig()):
    """(collapsed notes, targets) built from the runs found in a performance."""
    notes = list(notes)
    spans = detect_nianzhi(notes, detect_cfg)
    collapsed = collapse_spans(notes, spans)
    by_onset = {notes[s.start_index].onset: s for s in spans}
    pos, speed, inten = [], [], []
    for n in collapsed:
        s = by_onset.get(n.onset)
        if s is not None and n.pitch == notes[s.start_index].pitch:
            group = notes[s.start_index:s.start_index + s.repetitions]
            pos.append(1.0)
            speed.append(float(np.clip(s.repetitions - 3, 0, 1)))
            inten.append(group[-1].velocity / group[0].velocity)
        else:
            pos.append(0.0)
            speed.append(0.0)
            inten.append(0.0)
    return collapsed, {"position": np.array(pos), "speed": np.array(speed), "intensity": np.array(inten)}


def train_detector(performances, cfg: NianzhiConfig = NianzhiConfig(), rng=None,
                   detect_cfg: NianzhiDetectConfig = NianzhiDetectConfig()) -> DetectorParams:
    """Fit the detector on pseudo-labels from performed tracks (one sequence per step)."""
    rng = np.random.default_rng(rng)
    data = []
    for perf in performances:
        notes = perf.main_track() if isinstance(perf, Score) else list(perf)
        if notes:
            collapsed, target = pseudo_labels(notes, detect_cfg)
            data.append((note_features(collapsed), target))
    det = DetectorParams.initial(cfg.hidden, rng)
    if not data:
        return det
    opt = Adam(det.arrays)
    for _ in range(cfg.epochs):
        for k in rng.permutation(len(data)):
            feats, target = data[k]

            def fn(tensors, feats=feats, target=target):
                return _loss_nianzhi_tensor(detector_forward(tensors, feats, det.hidden), target, cfg)

            _, grads = loss_and_grads(det.arrays, fn)
            opt.step(det.arrays, grads, cfg.lr)
    det.trained = True
    return det


def predict(notes, detector: DetectorParams, cfg: NianzhiConfig = NianzhiConfig(), rng=None):
    """(index, NianzhiPrediction) for every accepted position."""
    notes = list(notes)
    rng = np.random.default_rng(rng)
    if not notes:
        return []
    out = detector_forward(detector.arrays, note_features(notes), detector.hidden)
    speed = out["speed"].data[:, 0]
    result = []
    for i, score in detect_positions(notes, detector, cfg):
        lo, hi = cfg.repetitions
        if detector.trained:
            reps = lo if speed[i] < 0.5 else hi
        else:
            reps = int(rng.integers(lo, hi + 1))
        curve = tuple(cfg.decay_rate ** j for j in range(reps))
        result.append((i, NianzhiPrediction(score, reps, curve, cfg.decay_rate)))
    return result


# ---------------------------------------------------------------------------
# expansion


def expand_nianzhi(note: NoteEvent, pred: NianzhiPrediction, threshold: float = 0.7) -> list[NoteEvent]:
    """Split ``note`` into ``pred.repetitions`` same-pitch notes with geometric decay.

    Note i gets velocity ``round(v0 * r**i)`` (at least 1) and a share
    ``r**i / sum(r**j)`` of the original duration; onsets tile the original
    interval without gaps.
    """
    if pred.position_prob < threshold:
        raise InvalidPrediction(f"position probability {pred.position_prob} below {threshold}")
    k = pred.repetitions
    r = pred.decay_rate
    if k < 1 or not 0 < r <= 1:
        raise InvalidPrediction("need repetitions >= 1 and 0 < decay_rate <= 1")
    weights = [r ** i for i in range(k)]
    total = sum(weights)
    out = []
    onset = note.onset
    for i, w in enumerate(weights):
        dur = note.duration * w / total
        if i == k - 1:
            dur = note.end - onset
        vel = max(1, int(math.floor(note.velocity * w + 0.5)))
        out.append(note.with_(onset=onset, duration=dur, velocity=min(vel, 127), role=Role.NIANZHI))
        onset += dur
    return out


def first_ioi(duration: float, repetitions: int, decay_rate: float) -> float:
    return duration / sum(decay_rate ** i for i in range(repetitions))
