"""
Heterogeneous note/ornament/technique graphs and the rule-injection transforms.

Graphs are immutable; every transform returns a new, re-validated graph.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import EmptyScore, InvalidGraph, RuleAlreadyApplied, SchemaMismatch
from .midi_io import NoteEvent, Score
from .tokenizer import Mode, NianzhiSpan, WU_KONG, detect_nianzhi, mode_contains

SCHEMA_VERSION = 1


class NodeType(enum.Enum):
    NOTE = "note"
    ORNAMENT = "ornament"
    TECH = "tech"


class EdgeKind(enum.Enum):
    TEMPORAL = "temporal"
    DECORATIVE = "decorative"
    TRIGGER = "trigger"


class OrnamentType(enum.Enum):
    STANDARD = "standard"
    LIGHT_APPOGGIATURA = "light_appoggiatura"
    MELODIC_INTEGRATION = "melodic_integration"


class TechKind(enum.Enum):
    NIANZHI = "nianzhi"
    DIANTIAO_GUAN = "diantiao_guan"
    DIANTIAO_JIE = "diantiao_jie"


@dataclass(frozen=True)
class NoteFeature:
    pitch: int
    velocity: int
    onset: float
    duration: float
    nianzhi_vec: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def end(self) -> float:
        return self.onset + self.duration

    @property
    def in_nianzhi(self) -> bool:
        return self.nianzhi_vec[0] == 1


@dataclass(frozen=True)
class OrnamentFeature:
    ornament_type: OrnamentType
    weight: float
    pitch: int
    offset: float


@dataclass(frozen=True)
class TechFeature:
    tech_kind: TechKind
    params: tuple[float, float, float]


@dataclass(frozen=True)
class NodeRef:
    type: NodeType
    index: int

    def __post_init__(self):
        object.__setattr__(self, "type", NodeType(self.type))

    def key(self):
        return (list(NodeType).index(self.type), self.index)


@dataclass(frozen=True)
class Edge:
    src: NodeRef
    dst: NodeRef
    kind: EdgeKind
    weight: float = 1.0


@dataclass(frozen=True)
class HeteroGraph:
    notes: tuple[NoteFeature, ...] = ()
    ornaments: tuple[OrnamentFeature, ...] = ()
    techs: tuple[TechFeature, ...] = ()
    edges: tuple[Edge, ...] = ()
    rules_applied: tuple[str, ...] = ()

    def nodes(self, kind: NodeType):
        return {NodeType.NOTE: self.notes, NodeType.ORNAMENT: self.ornaments, NodeType.TECH: self.techs}[kind]

    def edges_of(self, kind: EdgeKind) -> list[Edge]:
        return [e for e in self.edges if e.kind == kind]

    def host_of(self, ornament_index: int) -> int:
        for e in self.edges:
            if e.kind == EdgeKind.DECORATIVE and e.src.index == ornament_index:
                return e.dst.index
        raise InvalidGraph(f"ornament {ornament_index} has no host")


def validate_graph(g: HeteroGraph) -> None:
    """Raise :class:`InvalidGraph` if any structural invariant is broken."""
    for n in g.notes:
        vec = n.nianzhi_vec
        if vec[0] not in (0, 1):
            raise InvalidGraph("is_nianzhi must be 0 or 1")
        if vec[0] == 0 and (vec[1] != 0 or vec[2] != 0):
            raise InvalidGraph("nianzhi components must be zero outside a span")
        if not all(0 <= v <= 1 for v in vec):
            raise InvalidGraph("nianzhi components must lie in [0, 1]")
    for o in g.ornaments:
        if not 0 <= o.weight <= 1:
            raise InvalidGraph("ornament weight outside [0, 1]")
    for e in g.edges:
        for ref in (e.src, e.dst):
            if not 0 <= ref.index < len(g.nodes(ref.type)):
                raise InvalidGraph(f"dangling edge reference {ref}")
        if not (e.weight >= 0 and math.isfinite(e.weight)):
            raise InvalidGraph("edge weights must be finite and non-negative")
        if e.kind == EdgeKind.TEMPORAL:
            if e.src.type != NodeType.NOTE or e.dst.type != NodeType.NOTE:
                raise InvalidGraph("temporal edges connect notes only")
            if not g.notes[e.src.index].onset < g.notes[e.dst.index].onset:
                raise InvalidGraph("temporal edges need strictly increasing onsets")
        elif e.kind == EdgeKind.DECORATIVE:
            if e.src.type != NodeType.ORNAMENT or e.dst.type != NodeType.NOTE:
                raise InvalidGraph("decorative edges go ornament -> note")
        elif e.kind == EdgeKind.TRIGGER:
            if e.src.type != NodeType.TECH or e.dst.type == NodeType.TECH:
                raise InvalidGraph("trigger edges go tech -> note/ornament")
    temporal = g.edges_of(EdgeKind.TEMPORAL)
    n = len(g.notes)
    if n and len(temporal) != n - 1:
        raise InvalidGraph("temporal edges must form one path over all notes")
    succ = {}
    for e in temporal:
        if e.src.index in succ:
            raise InvalidGraph("temporal path branches")
        succ[e.src.index] = e.dst.index
    if n:
        heads = set(range(n)) - set(succ.values())
        if len(heads) != 1:
            raise InvalidGraph("temporal path is not a single chain")
        seen, cur = 1, heads.pop()
        while cur in succ:
            cur = succ[cur]
            seen += 1
        if seen != n:
            raise InvalidGraph("temporal path does not visit every note")
    for i in range(len(g.ornaments)):
        hosts = [e for e in g.edges if e.kind == EdgeKind.DECORATIVE and e.src.index == i]
        if len(hosts) != 1:
            raise InvalidGraph(f"ornament {i} must have exactly one host")


def _minmax(values: Sequence[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi - lo <= 0:
        return [0.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def build_graph(score, spans: Sequence[NianzhiSpan] | None = None) -> HeteroGraph:
    """Note chain plus one Tech(Nianzhi) node per span.

    ``score`` is a :class:`Score` (main track used) or a sorted note list. When
    ``spans`` is None they are detected with default thresholds.
    """
    notes = list(score.main_track() if isinstance(score, Score) else score)
    if not notes:
        raise EmptyScore("cannot build a graph from an empty score")
    if spans is None:
        spans = detect_nianzhi(notes)
    vecs = [(0.0, 0.0, 0.0)] * len(notes)
    techs = []
    edges = []
    for s in spans:
        idx = list(s.indices)
        group = [notes[i] for i in idx]
        iois = [group[k + 1].onset - group[k].onset for k in range(len(group) - 1)]
        iois.append(iois[-1] if iois else group[-1].duration)
        speed = _minmax(iois)
        intensity = _minmax([n.velocity for n in group])
        for k, i in enumerate(idx):
            vecs[i] = (1.0, speed[k], intensity[k])
        t = len(techs)
        techs.append(TechFeature(TechKind.NIANZHI, (float(s.repetitions), float(int(s.category)), float(np.mean(iois)))))
        for i in idx:
            edges.append(Edge(NodeRef(NodeType.TECH, t), NodeRef(NodeType.NOTE, i), EdgeKind.TRIGGER, 1.0))
    feats = tuple(NoteFeature(n.pitch, n.velocity, n.onset, n.duration, vecs[i]) for i, n in enumerate(notes))
    chain = [Edge(NodeRef(NodeType.NOTE, i), NodeRef(NodeType.NOTE, i + 1), EdgeKind.TEMPORAL, 1.0)
             for i in range(len(notes) - 1)]
    g = HeteroGraph(feats, (), tuple(techs), tuple(chain + edges))
    validate_graph(g)
    return g


def place_ornaments(g: HeteroGraph, target_density: float = 0.6, rng=None,
                    upper_probability: float = 0.9, edge_weight: float = 0.5,
                    grace_offset: float = 0.015) -> HeteroGraph:
    """Add neighbour-tone ornament nodes until ornaments/notes reaches the target.

    Hosts are drawn uniformly without replacement among notes outside nianzhi
    spans that carry no ornament yet. The ornament sits a major second above
    the host with ``upper_probability``, otherwise a major second below.
    """
    if not 0 <= target_density <= 1:
        raise ValueError("target_density must lie in [0, 1]")
    rng = np.random.default_rng(rng)
    n = len(g.notes)
    needed = max(0, math.ceil(target_density * n - 1e-9) - len(g.ornaments))
    if needed == 0 or n == 0:
        return g
    hosted = {e.dst.index for e in g.edges_of(EdgeKind.DECORATIVE)}
    eligible = [i for i, note in enumerate(g.notes) if not note.in_nianzhi and i not in hosted]
    k = min(needed, len(eligible))
    if k == 0:
        return g
    hosts = sorted(rng.choice(eligible, size=k, replace=False).tolist())
    ornaments = list(g.ornaments)
    edges = list(g.edges)
    for h in hosts:
        pitch = g.notes[h].pitch
        step = 2 if rng.random() < upper_probability else -2
        if not 0 <= pitch + step <= 127:
            step = -step
        ornaments.append(OrnamentFeature(OrnamentType.STANDARD, edge_weight, pitch + step, -grace_offset))
        edges.append(Edge(NodeRef(NodeType.ORNAMENT, len(ornaments) - 1), NodeRef(NodeType.NOTE, h),
                          EdgeKind.DECORATIVE, edge_weight))
    out = replace(g, ornaments=tuple(ornaments), edges=tuple(edges))
    validate_graph(out)
    return out


PENTATONIC_RULE = "pentatonic_enhancement"
TECHNIQUE_RULE = "technique_rules"


def inject_pentatonic_enhancement(g: HeteroGraph, mode: Mode = WU_KONG, factor: float = 2.0) -> HeteroGraph:
    """Multiply decorative edges with in-mode ornament and host by ``factor``.

    Afterwards, any host whose largest decorative weight exceeds 1 has all its
    decorative weights divided by that maximum. Applying the rule twice raises
    :class:`RuleAlreadyApplied`.
    """
    if PENTATONIC_RULE in g.rules_applied:
        raise RuleAlreadyApplied("pentatonic enhancement already applied to this graph")
    edges = list(g.edges)
    touched = False
    for k, e in enumerate(edges):
        if e.kind != EdgeKind.DECORATIVE:
            continue
        if mode_contains(mode, g.ornaments[e.src.index].pitch) and mode_contains(mode, g.notes[e.dst.index].pitch):
            edges[k] = replace(e, weight=e.weight * factor)
            touched = True
    if touched:
        peak: dict[int, float] = {}
        for e in edges:
            if e.kind == EdgeKind.DECORATIVE:
                peak[e.dst.index] = max(peak.get(e.dst.index, 0.0), e.weight)
        for k, e in enumerate(edges):
            if e.kind == EdgeKind.DECORATIVE and peak[e.dst.index] > 1.0:
                edges[k] = replace(e, weight=e.weight / peak[e.dst.index])
    ornaments = list(g.ornaments)
    for e in edges:
        if e.kind == EdgeKind.DECORATIVE:
            ornaments[e.src.index] = replace(ornaments[e.src.index], weight=e.weight)
    out = replace(g, ornaments=tuple(ornaments), edges=tuple(edges),
                  rules_applied=g.rules_applied + (PENTATONIC_RULE,))
    validate_graph(out)
    return out


def apply_technique_rules(g: HeteroGraph, window: float = 4.0, phrase_gap: float = 1.0) -> HeteroGraph:
    """Attach Guan (before a nianzhi) and Jie (phrase end, no nianzhi ahead) nodes.

    A note ends a phrase when it is the last note or is followed by a rest of
    at least ``phrase_gap`` beats.
    """
    if TECHNIQUE_RULE in g.rules_applied:
        raise RuleAlreadyApplied("technique rules already applied to this graph")
    techs = list(g.techs)
    edges = list(g.edges)
    span_starts = []
    for t, tech in enumerate(g.techs):
        if tech.tech_kind != TechKind.NIANZHI:
            continue
        members = [e.dst.index for e in g.edges
                   if e.kind == EdgeKind.TRIGGER and e.src.index == t and e.dst.type == NodeType.NOTE]
        if members:
            span_starts.append((min(members), tech))
    for first, tech in sorted(span_starts, key=lambda s: s[0]):
        prev = first - 1
        if prev < 0:
            continue
        lead = g.notes[first].onset - g.notes[prev].onset
        if lead > window:
            continue
        techs.append(TechFeature(TechKind.DIANTIAO_GUAN, (lead, tech.params[1], 0.0)))
        edges.append(Edge(NodeRef(NodeType.TECH, len(techs) - 1), NodeRef(NodeType.NOTE, prev), EdgeKind.TRIGGER, 1.0))
    start_onsets = [g.notes[i].onset for i, _ in span_starts]
    notes = g.notes
    for i, note in enumerate(notes):
        last = i == len(notes) - 1
        if not last and notes[i + 1].onset - note.end < phrase_gap:
            continue
        if any(note.onset < s <= note.onset + window for s in start_onsets):
            continue
        gap = 0.0 if last else notes[i + 1].onset - note.end
        techs.append(TechFeature(TechKind.DIANTIAO_JIE, (note.duration, gap, 0.0)))
        edges.append(Edge(NodeRef(NodeType.TECH, len(techs) - 1), NodeRef(NodeType.NOTE, i), EdgeKind.TRIGGER, 1.0))
    out = replace(g, techs=tuple(techs), edges=tuple(edges), rules_applied=g.rules_applied + (TECHNIQUE_RULE,))
    validate_graph(out)
    return out


def convert(score, mode: Mode = WU_KONG, rng=None, density: float = 0.6,
            spans: Sequence[NianzhiSpan] | None = None, **place_kwargs) -> HeteroGraph:
    """Full converter pipeline: build, place ornaments, enhance, technique rules."""
    g = build_graph(score, spans)
    g = place_ornaments(g, density, rng, **place_kwargs)
    g = inject_pentatonic_enhancement(g, mode)
    g = apply_technique_rules(g)
    assert g.rules_applied == (PENTATONIC_RULE, TECHNIQUE_RULE)
    return g


# ---------------------------------------------------------------------------
# JSON schema v1


def graph_to_dict(g: HeteroGraph) -> dict:
    def ref(r):
        return {"type": r.type.value, "index": r.index}

    edges = sorted(g.edges, key=lambda e: (list(EdgeKind).index(e.kind), e.src.key(), e.dst.key()))
    return {
        "version": SCHEMA_VERSION,
        "notes": [{"pitch": n.pitch, "velocity": n.velocity, "onset": n.onset, "duration": n.duration,
                   "nianzhi_vec": list(n.nianzhi_vec)} for n in g.notes],
        "ornaments": [{"type": o.ornament_type.value, "weight": o.weight, "pitch": o.pitch, "offset": o.offset}
                      for o in g.ornaments],
        "techs": [{"kind": t.tech_kind.value, "params": list(t.params)} for t in g.techs],
        "edges": [{"src": ref(e.src), "dst": ref(e.dst), "kind": e.kind.value, "weight": e.weight} for e in edges],
        "rules_applied": list(g.rules_applied),
    }


def graph_from_dict(obj: dict) -> HeteroGraph:
    if obj.get("version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"graph schema version {obj.get('version')!r}, expected {SCHEMA_VERSION}")
    try:
        notes = tuple(NoteFeature(int(n["pitch"]), int(n["velocity"]), float(n["onset"]), float(n["duration"]),
                                  tuple(float(v) for v in n["nianzhi_vec"])) for n in obj["notes"])
        orns = tuple(OrnamentFeature(OrnamentType(o["type"]), float(o["weight"]), int(o["pitch"]), float(o["offset"]))
                     for o in obj["ornaments"])
        techs = tuple(TechFeature(TechKind(t["kind"]), tuple(float(v) for v in t["params"])) for t in obj["techs"])
        edges = tuple(Edge(NodeRef(NodeType(e["src"]["type"]), int(e["src"]["index"])),
                           NodeRef(NodeType(e["dst"]["type"]), int(e["dst"]["index"])),
                           EdgeKind(e["kind"]), float(e["weight"])) for e in obj["edges"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"graph document does not match schema v{SCHEMA_VERSION}: {exc}") from exc
    g = HeteroGraph(notes, orns, techs, edges, tuple(obj.get("rules_applied", ())))
    validate_graph(g)
    return g


def serialize_graph(g: HeteroGraph) -> bytes:
    return json.dumps(graph_to_dict(g), sort_keys=True, separators=(",", ":")).encode("utf-8")


def deserialize_graph(data: bytes) -> HeteroGraph:
    try:
        obj = json.loads(data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaMismatch(f"not a graph document: {exc}") from exc
    if not isinstance(obj, dict):
        raise SchemaMismatch("graph document must be a JSON object")
    return graph_from_dict(obj)


def canonical(g: HeteroGraph) -> HeteroGraph:
    """Same graph with edges in serialization order (for structural equality)."""
    return graph_from_dict(graph_to_dict(g))
