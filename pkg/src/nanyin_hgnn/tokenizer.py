"""
NanyinTok: REMI-style tokens with a GongQe pitch vocabulary, modal masking,
nianzhi technique tokens and microtiming.

Stream grammar, checked by :func:`check_grammar`::

    stream := (Bar | note)*         first token is Bar
    note   := [TechNianzhi] Position (Pitch | UNK) Velocity Duration Microtiming
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyScore, MalformedStream
from .midi_io import Instrument, NoteEvent, Role, Score

# GongQe pitch set as Helmholtz names (c1 = middle C = MIDI 60).
GONGQE_PITCHES: tuple[tuple[str, int], ...] = (
    ("d", 50), ("e", 52), ("f", 53), ("#f", 54), ("g", 55), ("a", 57), ("b", 59),
    ("c1", 60), ("#c1", 61), ("d1", 62), ("e1", 64), ("f1", 65), ("#f1", 66),
    ("g1", 67), ("a1", 69), ("bb1", 70), ("b1", 71),
    ("c2", 72), ("d2", 74), ("e2", 76), ("g2", 79), ("a2", 81), ("b2", 83),
)

BEATS_PER_BAR = 4
POSITIONS_PER_BAR = 16
POSITION_STEP = BEATS_PER_BAR / POSITIONS_PER_BAR  # 0.25 beat
MICROTIMING_STEP = 1 / 64
MICROTIMING_MAX = 8  # steps, i.e. +-1/8 beat
VELOCITY_BINS = tuple(int(v) for v in np.round(np.linspace(1, 127, 16)))
DURATION_STEP = 1 / 8
DURATION_BINS = tuple((k + 1) * DURATION_STEP for k in range(32))


def helmholtz_to_midi(name: str) -> int:
    """Convert a Helmholtz name such as ``'#f1'`` or ``'bb1'`` to a MIDI number.

    A leading ``#`` sharpens, a ``b`` after the letter flattens; ``c`` is
    MIDI 48 and ``c1`` is 60.
    """
    s = name.strip()
    shift = 0
    if s.startswith("#"):
        shift, s = 1, s[1:]
    letter, rest = s[0].lower(), s[1:]
    if rest.startswith("b"):
        shift, rest = -1, rest[1:]
    octave = int(rest) if rest else 0
    return 48 + 12 * octave + _LETTER_PC[letter] + shift


_LETTER_PC = {"c": 0, "d": 2, "e": 4, "f": 5, "g": 7, "a": 9, "b": 11}


@dataclass(frozen=True)
class Mode:
    """A pentatonic mode as a list of (low, high, pitch classes) registers."""

    name: str
    registers: tuple[tuple[int, int, frozenset[int]], ...]

    def __post_init__(self):
        regs = tuple((int(lo), int(hi), frozenset(pcs)) for lo, hi, pcs in self.registers)
        object.__setattr__(self, "registers", regs)
        if not regs:
            raise ValueError("a mode needs at least one register")
        for lo, hi, pcs in regs:
            if lo > hi:
                raise ValueError(f"register low {lo} above high {hi}")
            if len(pcs) != 5 or not all(0 <= pc < 12 for pc in pcs):
                raise ValueError("each register needs exactly 5 pitch classes")
        lows = [r[0] for r in regs]
        highs = [r[1] for r in regs]
        if lows != sorted(lows) or highs != sorted(highs):
            raise ValueError("registers must be ordered from low to high")

    def contains(self, pitch: int) -> bool:
        return mode_contains(self, pitch)


WU_KONG = Mode(
    "wukong",
    (
        (50, 69, frozenset({0, 2, 4, 7, 9})),   # d .. a1, C pentatonic
        (62, 83, frozenset({7, 9, 11, 2, 4})),  # d1 .. b2, G pentatonic
    ),
)

MODES = {"wukong": WU_KONG}


def get_mode(name: str) -> Mode:
    try:
        return MODES[name.lower().replace("-", "").replace("_", "")]
    except KeyError:
        raise ConfigError(f"unknown mode {name!r}; available: {sorted(MODES)}") from None


def mode_contains(mode: Mode, pitch: int) -> bool:
    """True when some register spans ``pitch`` and lists its pitch class."""
    return any(lo <= pitch <= hi and pitch % 12 in pcs for lo, hi, pcs in mode.registers)


class TokenKind(enum.Enum):
    BAR = "Bar"
    POSITION = "Position"
    PITCH = "Pitch"
    VELOCITY = "Velocity"
    DURATION = "Duration"
    TECH_NIANZHI = "TechNianzhi"
    MICROTIMING = "Microtiming"
    UNK = "UNK"


class NianzhiCategory(enum.IntEnum):
    FAST = 0
    STANDARD = 1
    SLOW = 2


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    value: int = 0

    def __str__(self):
        if self.kind == TokenKind.TECH_NIANZHI:
            return f"{self.kind.value}={NianzhiCategory(self.value).name.title()}"
        return f"{self.kind.value}={self.value}"

    @classmethod
    def parse(cls, text: str) -> "Token":
        kind, _, value = text.strip().partition("=")
        kind = TokenKind(kind)
        if kind == TokenKind.TECH_NIANZHI and not value.lstrip("-").isdigit():
            return cls(kind, int(NianzhiCategory[value.upper()]))
        return cls(kind, int(value or 0))


@dataclass(frozen=True)
class Vocabulary:
    """Bijection between tokens and integer ids."""

    tokens: tuple[Token, ...]
    modes: tuple[Mode, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._ids

    def id_of(self, token: Token) -> int:
        return self._ids[token]

    def token_of(self, idx: int) -> Token:
        return self.tokens[idx]

    @property
    def pitches(self) -> tuple[int, ...]:
        return tuple(t.value for t in self.tokens if t.kind == TokenKind.PITCH)


def build_vocabulary(modes: Sequence[Mode] = (WU_KONG,)) -> Vocabulary:
    if not modes:
        raise ValueError("at least one mode is required")
    toks = [Token(TokenKind.UNK), Token(TokenKind.BAR)]
    toks += [Token(TokenKind.POSITION, p) for p in range(POSITIONS_PER_BAR)]
    toks += [Token(TokenKind.PITCH, midi) for _, midi in GONGQE_PITCHES]
    toks += [Token(TokenKind.VELOCITY, b) for b in range(len(VELOCITY_BINS))]
    toks += [Token(TokenKind.DURATION, b) for b in range(len(DURATION_BINS))]
    toks += [Token(TokenKind.TECH_NIANZHI, int(c)) for c in NianzhiCategory]
    toks += [Token(TokenKind.MICROTIMING, m) for m in range(-MICROTIMING_MAX, MICROTIMING_MAX + 1)]
    return Vocabulary(tuple(toks), tuple(modes))


GONGQE_MIDI = frozenset(m for _, m in GONGQE_PITCHES)


# ---------------------------------------------------------------------------
# nianzhi detection


@dataclass(frozen=True)
class NianzhiDetectConfig:
    min_run: int = 3
    max_ioi: float = 0.5
    fast_below: float = 0.15
    slow_above: float = 0.3


@dataclass(frozen=True)
class NianzhiSpan:
    start_index: int
    repetitions: int
    category: NianzhiCategory

    def __post_init__(self):
        if self.repetitions < 2:
            raise ValueError("a nianzhi span needs at least two notes")

    @property
    def indices(self) -> range:
        return range(self.start_index, self.start_index + self.repetitions)


def _continues(a: NoteEvent, b: NoteEvent, cfg: NianzhiDetectConfig) -> bool:
    return a.pitch == b.pitch and b.onset - a.onset <= cfg.max_ioi + 1e-12 and b.velocity <= a.velocity


def categorize(mean_ioi: float, cfg: NianzhiDetectConfig = NianzhiDetectConfig()) -> NianzhiCategory:
    if mean_ioi < cfg.fast_below:
        return NianzhiCategory.FAST
    if mean_ioi > cfg.slow_above:
        return NianzhiCategory.SLOW
    return NianzhiCategory.STANDARD


def detect_nianzhi(notes, cfg: NianzhiDetectConfig = NianzhiDetectConfig()) -> list[NianzhiSpan]:
    """Maximal runs of repeated, closely spaced, non-crescendo notes.

    ``notes`` is a sorted track or a :class:`Score` (its main track is used).
    """
    if isinstance(notes, Score):
        notes = notes.main_track()
    notes = list(notes)
    spans = []
    start = 0
    for i in range(1, len(notes) + 1):
        if i < len(notes) and _continues(notes[i - 1], notes[i], cfg):
            continue
        length = i - start
        if length >= cfg.min_run:
            iois = [notes[k + 1].onset - notes[k].onset for k in range(start, i - 1)]
            spans.append(NianzhiSpan(start, length, categorize(float(np.mean(iois)), cfg)))
        start = i
    return spans


def span_beats(notes: Sequence[NoteEvent], spans: Iterable[NianzhiSpan]) -> list[tuple[float, float]]:
    """[start, end) beat intervals covered by ``spans``."""
    out = []
    for s in spans:
        group = [notes[i] for i in s.indices]
        out.append((group[0].onset, max(n.end for n in group)))
    return out


# ---------------------------------------------------------------------------
# encode / decode


@dataclass
class TokenSeq:
    tokens: list[Token]
    mode: Mode = WU_KONG
    vocabulary: Vocabulary = field(default_factory=build_vocabulary)

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def ids(self) -> list[int]:
        return [self.vocabulary.id_of(t) for t in self.tokens]

    def to_text(self) -> str:
        return "".join(f"{t}\n" for t in self.tokens)

    def to_json(self) -> str:
        return json.dumps({"mode": self.mode.name, "tokens": [str(t) for t in self.tokens]}, indent=1)

    @classmethod
    def from_text(cls, text: str, mode: Mode = WU_KONG) -> "TokenSeq":
        return cls([Token.parse(line) for line in text.splitlines() if line.strip()], mode)

    @classmethod
    def from_json(cls, text: str) -> "TokenSeq":
        obj = json.loads(text)
        return cls([Token.parse(t) for t in obj["tokens"]], get_mode(obj.get("mode", "wukong")))


def quantize_velocity(v: int) -> int:
    return int(np.argmin([abs(v - b) for b in VELOCITY_BINS]))


def _duration_bin(d: float) -> int:
    return int(np.clip(np.floor(d / DURATION_STEP + 0.5) - 1, 0, len(DURATION_BINS) - 1))


def encode(score, mode: Mode = WU_KONG, vocabulary: Vocabulary | None = None,
           nianzhi: NianzhiDetectConfig = NianzhiDetectConfig(),
           instrument: Instrument | None = None) -> TokenSeq:
    """Encode the main (pipa) track of ``score`` as a token stream.

    Out-of-mode or out-of-vocabulary pitches become ``UNK``.
    """
    vocab = vocabulary or build_vocabulary([mode])
    if isinstance(score, Score):
        notes = list(score.track(instrument) if instrument else score.main_track())
    else:
        notes = sorted(score, key=lambda n: (n.onset, n.pitch))
    if not notes:
        raise EmptyScore("cannot encode an empty score")
    span_starts = {s.start_index: s for s in detect_nianzhi(notes, nianzhi)}
    tokens: list[Token] = []
    bar = -1
    for i, n in enumerate(notes):
        grid = int(np.floor(n.onset / POSITION_STEP + 0.5))
        micro = int(np.clip(np.floor((n.onset - grid * POSITION_STEP) / MICROTIMING_STEP + 0.5),
                            -MICROTIMING_MAX, MICROTIMING_MAX))
        note_bar, pos = divmod(grid, POSITIONS_PER_BAR)
        while bar < note_bar:
            tokens.append(Token(TokenKind.BAR))
            bar += 1
        if i in span_starts:
            tokens.append(Token(TokenKind.TECH_NIANZHI, int(span_starts[i].category)))
        tokens.append(Token(TokenKind.POSITION, pos))
        if n.pitch in GONGQE_MIDI and mode_contains(mode, n.pitch):
            tokens.append(Token(TokenKind.PITCH, n.pitch))
        else:
            tokens.append(Token(TokenKind.UNK))
        tokens.append(Token(TokenKind.VELOCITY, quantize_velocity(n.velocity)))
        tokens.append(Token(TokenKind.DURATION, _duration_bin(n.duration)))
        tokens.append(Token(TokenKind.MICROTIMING, micro))
    check_grammar(tokens)
    return TokenSeq(tokens, mode, vocab)


_NOTE_TAIL = (TokenKind.VELOCITY, TokenKind.DURATION, TokenKind.MICROTIMING)


def check_grammar(tokens: Sequence[Token]) -> None:
    """Raise :class:`MalformedStream` unless ``tokens`` follows the stream grammar."""
    i = 0
    seen_bar = False
    n = len(tokens)
    while i < n:
        t = tokens[i]
        if t.kind == TokenKind.BAR:
            seen_bar = True
            i += 1
            continue
        if not seen_bar:
            raise MalformedStream(f"token {i} ({t}) before the first Bar")
        if t.kind == TokenKind.TECH_NIANZHI:
            if t.value not in tuple(NianzhiCategory):
                raise MalformedStream(f"bad TechNianzhi value {t.value}")
            i += 1
            if i >= n or tokens[i].kind != TokenKind.POSITION:
                raise MalformedStream("TechNianzhi must precede a Position")
            t = tokens[i]
        if t.kind != TokenKind.POSITION:
            raise MalformedStream(f"unexpected {t} at {i}")
        if not 0 <= t.value < POSITIONS_PER_BAR:
            raise MalformedStream(f"position {t.value} out of range")
        if i + 1 >= n or tokens[i + 1].kind not in (TokenKind.PITCH, TokenKind.UNK):
            raise MalformedStream(f"Position at {i} not followed by a pitch")
        if tokens[i + 1].kind == TokenKind.PITCH and tokens[i + 1].value not in GONGQE_MIDI:
            raise MalformedStream(f"pitch {tokens[i + 1].value} outside the GongQe vocabulary")
        for k, kind in enumerate(_NOTE_TAIL):
            j = i + 2 + k
            if j >= n or tokens[j].kind != kind:
                raise MalformedStream(f"dangling pitch at {i + 1}: expected {kind.value}")
        i += 2 + len(_NOTE_TAIL)


def unk_fallback(mode: Mode, previous: int | None) -> int:
    """Nearest in-mode vocabulary pitch strictly below ``previous`` (60 if none)."""
    ref = 60 if previous is None else previous
    in_mode = sorted(p for p in GONGQE_MIDI if mode_contains(mode, p))
    below = [p for p in in_mode if p < ref]
    return below[-1] if below else in_mode[0]


def decode(tokens, mode: Mode | None = None, instrument: Instrument = Instrument.PIPA) -> Score:
    """Inverse of :func:`encode` up to bin quantization."""
    if isinstance(tokens, TokenSeq):
        mode = mode or tokens.mode
        tokens = tokens.tokens
    mode = mode or WU_KONG
    tokens = list(tokens)
    check_grammar(tokens)
    notes = []
    bar = -1
    prev = None
    i = 0
    while i < len(tokens):
        t = tokens[i]
        if t.kind == TokenKind.BAR:
            bar += 1
            i += 1
            continue
        if t.kind == TokenKind.TECH_NIANZHI:
            i += 1
            continue
        pos = t.value
        ptok, vtok, dtok, mtok = tokens[i + 1:i + 5]
        pitch = ptok.value if ptok.kind == TokenKind.PITCH else unk_fallback(mode, prev)
        onset = bar * BEATS_PER_BAR + pos * POSITION_STEP + mtok.value * MICROTIMING_STEP
        notes.append(NoteEvent(pitch, max(onset, 0.0), DURATION_BINS[dtok.value],
                               VELOCITY_BINS[vtok.value], instrument, Role.NOTE))
        prev = pitch
        i += 5
    return Score(tracks={instrument: tuple(notes)})
