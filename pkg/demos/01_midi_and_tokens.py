"""
MIDI files and NanyinTok tokens.

Write the bundled skeleton melody to a MIDI file, read it back, and turn it
into a REMI-style token stream with the Wu-Kong pitch vocabulary.
"""

import tempfile
from pathlib import Path

from nanyin_hgnn import toy
from nanyin_hgnn.midi_io import read_midi, save_midi, segment_score
from nanyin_hgnn.tokenizer import WU_KONG, build_vocabulary, decode, detect_nianzhi, encode

out_dir = Path(tempfile.mkdtemp(prefix="nanyin_demo_"))

# A skeletal melody: 40 notes, 20 bars, pipa only.
skeleton = toy.skeleton_fixture()
path = out_dir / "skeleton.mid"
save_midi(skeleton, path)
score = read_midi(path)
print(f"{path}: {len(score.notes)} notes, {score.end_beat:.1f} beats, {score.duration_seconds:.1f} s")

vocab = build_vocabulary([WU_KONG])
print("vocabulary size", len(vocab), "with", len(vocab.pitches), "GongQe pitches")

seq = encode(score, WU_KONG, vocab)
print("first tokens:", " ".join(str(t) for t in seq.tokens[:13]))

# decode is the inverse up to bin quantization
back = decode(seq)
print("round trip keeps", len(back.notes), "notes; pitches equal:",
      [n.pitch for n in back.notes] == [n.pitch for n in score.notes])

# A performance with repeated-note runs gets TechNianzhi tokens in front of each run.
perf = toy.with_nianzhi(7)
spans = detect_nianzhi(perf)
print("nianzhi spans:", [(s.start_index, s.repetitions, s.category.name) for s in spans])
print("TechNianzhi tokens:", [str(t) for t in encode(perf) if t.kind.value == "TechNianzhi"])

# Long pieces are cut into segments of at most 180 s without splitting a run.
long_piece = toy.random_score(0, 400)
parts = segment_score(long_piece, 180.0)
print("segments:", [round(p.duration_seconds, 1) for p in parts])
