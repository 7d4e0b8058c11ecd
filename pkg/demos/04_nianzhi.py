"""
Nianzhi (repeated-note decrescendo) modelling.

Train the small BiLSTM detector on pseudo-labels taken from performances,
ask it where a skeleton could carry nianzhi, and expand one note.
"""

import numpy as np

from nanyin_hgnn import toy
from nanyin_hgnn.midi_io import NoteEvent
from nanyin_hgnn.nianzhi import (NianzhiConfig, NianzhiPrediction, expand_nianzhi, loss_nianzhi, predict,
                                 pseudo_labels, train_detector)
from nanyin_hgnn.tokenizer import detect_nianzhi

performances = [toy.with_nianzhi(s) for s in range(8)]
collapsed, target = pseudo_labels(performances[0].main_track())
print("pseudo-label positions:", np.flatnonzero(target["position"]).tolist())

det = train_detector(performances, NianzhiConfig(epochs=40), rng=0)
held_out = pseudo_labels(toy.with_nianzhi(123).main_track())
for i, p in predict(held_out[0], det, rng=0):
    print(f"note {i}: p={p.position_prob:.2f}  repetitions={p.repetitions}  "
          f"(true run: {bool(held_out[1]['position'][i])})")

# Expansion: v0 = 100, k = 3, r = 0.8
note = NoteEvent(67, 0.0, 1.0, 100)
run = expand_nianzhi(note, NianzhiPrediction(0.9, 3, (1.0, 0.8, 0.64), 0.8))
for n in run:
    print(f"  onset {n.onset:.3f}  dur {n.duration:.3f}  vel {n.velocity}")
print("re-detected:", [(s.start_index, s.repetitions) for s in detect_nianzhi(run)])

# the weighted loss: only the position term is off here (BCE = 1)
print("loss:", loss_nianzhi({"position": [np.exp(-1)], "speed": [0.0], "intensity": [1.0]},
                            {"position": [1.0], "speed": [0.0], "intensity": [1.0]}))
