"""
Nanyin-aware symbolic music pipeline: MIDI I/O, GongQe tokenization,
heterogeneous graphs, a numpy GATv2 skeleton model, nianzhi expansion,
rule-guided ornamentation and four-instrument ensemble generation.
"""

from .ensemble import EnsembleConfig, generate_ensemble, instrument_transform
from .graph import HeteroGraph, build_graph, convert
from .metrics import mode_aware_f1, ornament_rationality_score, weighted_f1
from .midi_io import Instrument, NoteEvent, Role, Score, parse_midi, read_midi, save_midi, write_midi
from .nianzhi import NianzhiPrediction, detect_positions, expand_nianzhi, loss_nianzhi
from .ornament import OrnamentConfig, apply_ornamentation, ornament_metrics, special_note_seed
from .tokenizer import WU_KONG, decode, detect_nianzhi, encode

__version__ = "0.1.0"

__all__ = [
    "Instrument", "NoteEvent", "Role", "Score", "parse_midi", "read_midi", "write_midi", "save_midi",
    "WU_KONG", "encode", "decode", "detect_nianzhi",
    "HeteroGraph", "build_graph", "convert",
    "NianzhiPrediction", "detect_positions", "expand_nianzhi", "loss_nianzhi",
    "OrnamentConfig", "apply_ornamentation", "special_note_seed", "ornament_metrics",
    "EnsembleConfig", "generate_ensemble", "instrument_transform",
    "weighted_f1", "mode_aware_f1", "ornament_rationality_score",
]
