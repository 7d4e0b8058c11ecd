"""
Standard MIDI File reading/writing and score segmentation.

Times are kept in beats (quarter note = 1.0). Parsed onsets are exact
``tick / ticks_per_quarter`` values, so writing a parsed score with the same
resolution reproduces the original ticks.

Note roles survive a MIDI round trip through the channel number: channel
``i`` carries main notes of instrument ``i``, channel ``i + 4`` its ornaments
and channel ``i + 10`` its nianzhi repetitions (channel 9 is left to
percussion).
"""

from __future__ import annotations

import enum
import io
import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .errors import MalformedFile, SegmentationError, UnsplittableSpan, UnsupportedFormat

DEFAULT_TPQ = 480
DEFAULT_TEMPO = 500_000  # 120 bpm


class Instrument(enum.Enum):
    PIPA = "Pipa"
    SANXIAN = "Sanxian"
    DONGXIAO = "Dongxiao"
    ERXIAN = "Erxian"

    @property
    def index(self) -> int:
        return ENSEMBLE_ORDER.index(self)


ENSEMBLE_ORDER = (Instrument.PIPA, Instrument.SANXIAN, Instrument.DONGXIAO, Instrument.ERXIAN)

# General MIDI programs (0-based): Koto, Shamisen, Shakuhachi, Fiddle.
GM_PROGRAMS = {
    Instrument.PIPA: 107,
    Instrument.SANXIAN: 106,
    Instrument.DONGXIAO: 77,
    Instrument.ERXIAN: 110,
}


class Role(enum.Enum):
    NOTE = "note"
    ORNAMENT = "ornament"
    NIANZHI = "nianzhi"


_ROLE_CHANNEL_BASE = {Role.NOTE: 0, Role.ORNAMENT: 4, Role.NIANZHI: 10}


def channel_for(instrument: Instrument, role: Role) -> int:
    return _ROLE_CHANNEL_BASE[role] + instrument.index


def decode_channel(channel: int) -> tuple[Instrument, Role]:
    for role, base in _ROLE_CHANNEL_BASE.items():
        if base <= channel < base + 4:
            return ENSEMBLE_ORDER[channel - base], role
    return Instrument.PIPA, Role.NOTE


@dataclass(frozen=True)
class NoteEvent:
    """One performed note. ``onset`` and ``duration`` are in beats."""

    pitch: int
    onset: float
    duration: float
    velocity: int
    instrument: Instrument = Instrument.PIPA
    role: Role = Role.NOTE

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0..127")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside 1..127")
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if not self.onset >= 0:
            raise ValueError(f"onset must be non-negative, got {self.onset}")

    @property
    def end(self) -> float:
        return self.onset + self.duration

    def with_(self, **changes) -> "NoteEvent":
        return replace(self, **changes)


def sort_notes(notes: Iterable[NoteEvent]) -> tuple[NoteEvent, ...]:
    return tuple(sorted(notes, key=lambda n: (n.onset, n.pitch, n.role.value)))


@dataclass(frozen=True)
class Score:
    """A multi-track score: instrument -> notes sorted by (onset, pitch)."""

    tracks: Mapping[Instrument, tuple[NoteEvent, ...]] = field(default_factory=dict)
    ticks_per_quarter: int = DEFAULT_TPQ
    tempo_map: tuple[tuple[float, int], ...] = ((0.0, DEFAULT_TEMPO),)
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        tracks = {Instrument(k): sort_notes(v) for k, v in self.tracks.items()}
        object.__setattr__(self, "tracks", tracks)
        tempo = tuple(sorted((float(b), int(t)) for b, t in self.tempo_map))
        if not tempo or tempo[0][0] != 0.0:
            tempo = ((0.0, DEFAULT_TEMPO),) + tempo
        object.__setattr__(self, "tempo_map", tempo)
        if self.ticks_per_quarter <= 0:
            raise ValueError("ticks_per_quarter must be positive")

    @classmethod
    def from_notes(cls, notes: Iterable[NoteEvent], **kwargs) -> "Score":
        tracks: dict[Instrument, list[NoteEvent]] = {}
        for n in notes:
            tracks.setdefault(n.instrument, []).append(n)
        return cls(tracks={k: tuple(v) for k, v in tracks.items()}, **kwargs)

    @property
    def notes(self) -> list[NoteEvent]:
        return [n for inst in ENSEMBLE_ORDER for n in self.tracks.get(inst, ())]

    def track(self, instrument: Instrument = Instrument.PIPA) -> tuple[NoteEvent, ...]:
        return self.tracks.get(instrument, ())

    def main_track(self) -> tuple[NoteEvent, ...]:
        """The pipa track, or the only non-empty track when there is no pipa."""
        if self.tracks.get(Instrument.PIPA):
            return self.tracks[Instrument.PIPA]
        non_empty = [t for t in self.tracks.values() if t]
        if len(non_empty) == 1:
            return non_empty[0]
        if not non_empty:
            return ()
        raise ValueError("score has several tracks and no pipa track")

    @property
    def end_beat(self) -> float:
        return max((n.end for n in self.notes), default=0.0)

    def seconds_at(self, beat: float) -> float:
        return beats_to_seconds(self.tempo_map, beat)

    @property
    def duration_seconds(self) -> float:
        return self.seconds_at(self.end_beat)


def beats_to_seconds(tempo_map: Sequence[tuple[float, int]], beat: float) -> float:
    seconds = 0.0
    for k, (start, tempo) in enumerate(tempo_map):
        if beat <= start:
            break
        stop = tempo_map[k + 1][0] if k + 1 < len(tempo_map) else math.inf
        seconds += (min(beat, stop) - start) * tempo / 1e6
    return seconds


# ---------------------------------------------------------------------------
# reading


def _read_vlq(data: bytes, pos: int, end: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= end:
            raise MalformedFile("truncated variable-length quantity")
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MalformedFile("variable-length quantity longer than 4 bytes")


_DATA_BYTES = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _parse_track(data: bytes, pos: int, end: int):
    """Yield (tick, kind, payload) for one MTrk body."""
    tick = 0
    status = None
    events = []
    while pos < end:
        delta, pos = _read_vlq(data, pos, end)
        tick += delta
        if pos >= end:
            raise MalformedFile("truncated event")
        byte = data[pos]
        if byte == 0xFF:
            if pos + 2 > end:
                raise MalformedFile("truncated meta event")
            meta_type = data[pos + 1]
            length, pos = _read_vlq(data, pos + 2, end)
            if pos + length > end:
                raise MalformedFile("truncated meta event")
            events.append((tick, "meta", (meta_type, data[pos:pos + length])))
            pos += length
            if meta_type == 0x2F:
                break
            continue
        if byte in (0xF0, 0xF7):
            length, pos = _read_vlq(data, pos + 1, end)
            if pos + length > end:
                raise MalformedFile("truncated sysex event")
            pos += length
            status = None
            continue
        if byte & 0x80:
            status = byte
            pos += 1
        elif status is None:
            raise MalformedFile("running status without a previous status byte")
        kind = status & 0xF0
        n = _DATA_BYTES.get(kind)
        if n is None:
            raise MalformedFile(f"unexpected status byte 0x{status:02X}")
        if pos + n > end:
            raise MalformedFile("truncated channel event")
        payload = data[pos:pos + n]
        pos += n
        events.append((tick, "channel", (kind, status & 0x0F, bytes(payload))))
    return events, tick


def parse_midi(data: bytes) -> Score:
    """Parse an SMF type-0 or type-1 file into a :class:`Score`.

    Note-on/note-off pairs are matched first-in first-out per (track, channel,
    pitch). Note-ons left open at the end of a track are closed there and
    reported in ``Score.warnings``.
    """
    data = bytes(data)
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedFile("missing MThd header chunk")
    hlen = struct.unpack(">I", data[4:8])[0]
    if hlen < 6 or len(data) < 8 + hlen:
        raise MalformedFile("bad header chunk length")
    fmt, ntrks, division = struct.unpack(">HHH", data[8:14])
    if fmt == 2:
        raise UnsupportedFormat("SMF type 2 is not supported")
    if fmt not in (0, 1):
        raise MalformedFile(f"unknown SMF format {fmt}")
    if division & 0x8000:
        raise UnsupportedFormat("SMPTE time division is not supported")
    if division == 0:
        raise MalformedFile("zero ticks per quarter")
    tpq = division

    pos = 8 + hlen
    found = 0
    tempo_events: list[tuple[int, int]] = []
    notes: list[NoteEvent] = []
    problems: list[str] = []
    while found < ntrks:
        if pos + 8 > len(data):
            raise MalformedFile(f"expected {ntrks} tracks, found {found}")
        cid = data[pos:pos + 4]
        clen = struct.unpack(">I", data[pos + 4:pos + 8])[0]
        body = pos + 8
        if body + clen > len(data):
            raise MalformedFile("truncated track chunk")
        pos = body + clen
        if cid != b"MTrk":
            continue
        events, last_tick = _parse_track(data, body, body + clen)
        name = None
        open_notes: dict[tuple[int, int], list[tuple[int, int]]] = {}
        finished: list[tuple[int, int, int, int, int]] = []
        for tick, kind, payload in events:
            if kind == "meta":
                meta_type, raw = payload
                if meta_type == 0x51 and len(raw) == 3:
                    tempo_events.append((tick, int.from_bytes(raw, "big")))
                elif meta_type == 0x03 and name is None:
                    name = raw.decode("latin-1")
                continue
            status, channel, raw = payload
            if status == 0x90 and raw[1] > 0:
                open_notes.setdefault((channel, raw[0]), []).append((tick, raw[1]))
            elif status == 0x80 or (status == 0x90 and raw[1] == 0):
                stack = open_notes.get((channel, raw[0]))
                if stack:
                    start, vel = stack.pop(0)
                    finished.append((channel, raw[0], start, tick, vel))
        for (channel, pitch), stack in open_notes.items():
            for start, vel in stack:
                problems.append(f"unmatched note-on pitch {pitch} channel {channel} at tick {start}")
                finished.append((channel, pitch, start, last_tick, vel))
        track_inst = _instrument_from_name(name)
        for channel, pitch, start, stop, vel in finished:
            if stop <= start:
                problems.append(f"zero-length note pitch {pitch} at tick {start} dropped")
                continue
            inst, role = decode_channel(channel)
            if track_inst is not None:
                inst = track_inst
            notes.append(NoteEvent(pitch, start / tpq, (stop - start) / tpq, vel, inst, role))
        found += 1

    for p in problems:
        warnings.warn(p, stacklevel=2)
    tempo_events.sort()
    tempo_map = [(t / tpq, us) for t, us in tempo_events]
    if not tempo_map or tempo_map[0][0] != 0:
        tempo_map.insert(0, (0.0, DEFAULT_TEMPO))
    # a later event at the same tick wins
    dedup: dict[float, int] = {}
    for b, us in tempo_map:
        dedup[b] = us
    score = Score.from_notes(notes, ticks_per_quarter=tpq,
                             tempo_map=tuple(dedup.items()), warnings=tuple(problems))
    return score


def _instrument_from_name(name):
    if not name:
        return None
    for inst in Instrument:
        if name.strip().lower() == inst.value.lower():
            return inst
    return None


def read_midi(path) -> Score:
    with open(path, "rb") as fh:
        return parse_midi(fh.read())


# ---------------------------------------------------------------------------
# writing


def _vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _chunk(events: list[tuple[int, int, bytes]]) -> bytes:
    """Serialize (tick, order, raw) events, sorted, as an MTrk chunk."""
    body = io.BytesIO()
    now = 0
    for tick, _, raw in sorted(events, key=lambda e: (e[0], e[1])):
        body.write(_vlq(tick - now))
        body.write(raw)
        now = tick
    body.write(_vlq(0) + b"\xFF\x2F\x00")
    payload = body.getvalue()
    return b"MTrk" + struct.pack(">I", len(payload)) + payload


def _meta(meta_type: int, raw: bytes) -> bytes:
    return bytes([0xFF, meta_type]) + _vlq(len(raw)) + raw


def _ticks(beat: float, tpq: int) -> int:
    return int(math.floor(beat * tpq + 0.5))


def write_midi(score: Score, ticks_per_quarter: int | None = None) -> bytes:
    """Encode ``score`` as SMF type 1: a tempo track plus one track per instrument.

    Running status is never emitted. When two notes of one pitch overlap on a
    channel, the earlier one is cut at the later onset.
    """
    tpq = ticks_per_quarter or score.ticks_per_quarter
    chunks = []
    tempo_events = [(0, 0, _meta(0x58, bytes([4, 2, 24, 8])))]
    for beat, us in score.tempo_map:
        tempo_events.append((_ticks(beat, tpq), 1, _meta(0x51, us.to_bytes(3, "big"))))
    chunks.append(_chunk(tempo_events))

    for inst in ENSEMBLE_ORDER:
        if inst not in score.tracks:
            continue
        events = [(0, 0, _meta(0x03, inst.value.encode("latin-1")))]
        channels = sorted({channel_for(inst, n.role) for n in score.tracks[inst]} or {channel_for(inst, Role.NOTE)})
        for ch in channels:
            events.append((0, 1, bytes([0xC0 | ch, GM_PROGRAMS[inst]])))
        by_key: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
        for n in score.tracks[inst]:
            start = _ticks(n.onset, tpq)
            stop = max(_ticks(n.end, tpq), start + 1)
            by_key.setdefault((channel_for(inst, n.role), n.pitch), []).append((start, stop, n.velocity))
        for (ch, pitch), spans in by_key.items():
            spans.sort()
            for k, (start, stop, vel) in enumerate(spans):
                if k + 1 < len(spans) and start < spans[k + 1][0] < stop:
                    stop = spans[k + 1][0]
                events.append((stop, 2, bytes([0x80 | ch, pitch, 0])))
                events.append((start, 3, bytes([0x90 | ch, pitch, vel])))
        chunks.append(_chunk(events))

    header = b"MThd" + struct.pack(">IHHH", 6, 1, len(chunks), tpq)
    return header + b"".join(chunks)


def save_midi(score: Score, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_midi(score))


# ---------------------------------------------------------------------------
# segmentation


def segment_bounds(score: Score, max_seconds: float,
                   nianzhi_spans: Sequence[tuple[float, float]] = ()) -> list[float]:
    """Cut points (in beats) for :func:`segment_score`, starting with 0.0.

    Cuts happen only at note onsets that do not fall strictly inside a
    nianzhi span; the cut furthest from the previous one that keeps the
    segment within ``max_seconds`` is taken.
    """
    if max_seconds <= 0:
        raise ValueError("max_seconds must be positive")
    notes = score.notes
    if not notes:
        return [0.0]
    for start, stop in nianzhi_spans:
        if score.seconds_at(stop) - score.seconds_at(start) > max_seconds:
            raise UnsplittableSpan(f"nianzhi span [{start}, {stop}) exceeds {max_seconds} s")

    def inside_span(beat):
        return any(a < beat < b for a, b in nianzhi_spans)

    candidates = sorted({n.onset for n in notes if not inside_span(n.onset)} - {0.0})
    ends_by_onset = sorted((n.onset, n.end) for n in notes)

    def seg_end(lo, hi):
        last = lo
        for onset, end in ends_by_onset:
            if lo <= onset < hi:
                last = max(last, end)
        return max(last, hi if hi != math.inf else last)

    bounds = [0.0]
    while True:
        lo = bounds[-1]
        if score.seconds_at(seg_end(lo, math.inf)) - score.seconds_at(lo) <= max_seconds:
            return bounds
        best = None
        for c in candidates:
            if c <= lo:
                continue
            if score.seconds_at(seg_end(lo, c)) - score.seconds_at(lo) <= max_seconds:
                best = c
            else:
                break
        if best is None:
            following = [n.onset for n in notes if n.onset > lo]
            if following and inside_span(min(following)):
                raise UnsplittableSpan(f"no admissible cut after beat {lo}")
            raise SegmentationError(f"no admissible cut after beat {lo}; a single note is too long")
        bounds.append(best)


def segment_score(score: Score, max_seconds: float = 180.0,
                  nianzhi_spans: Sequence[tuple[float, float]] = ()) -> list[Score]:
    """Split ``score`` into pieces no longer than ``max_seconds``.

    Each segment is rebased to start at beat 0 with the tempo in force at its
    cut point. ``nianzhi_spans`` are ``[start, end)`` beat intervals that are
    never cut.
    """
    bounds = segment_bounds(score, max_seconds, nianzhi_spans)
    if len(bounds) == 1:
        return [score]
    edges = bounds + [math.inf]
    out = []
    for lo, hi in zip(edges, edges[1:]):
        tracks = {}
        for inst, notes in score.tracks.items():
            tracks[inst] = tuple(n.with_(onset=n.onset - lo) for n in notes if lo <= n.onset < hi)
        tempo = [(0.0, _tempo_at(score.tempo_map, lo))]
        tempo += [(b - lo, us) for b, us in score.tempo_map if lo < b < hi]
        out.append(Score(tracks=tracks, ticks_per_quarter=score.ticks_per_quarter, tempo_map=tuple(tempo)))
    return out


def _tempo_at(tempo_map, beat):
    current = tempo_map[0][1]
    for b, us in tempo_map:
        if b <= beat:
            current = us
    return current
