"""
Rule-guided ornamentation and special notes.

Ornament the skeleton in each of the three styles, then seed C sharp / F sharp
special notes, and report density, coverage and evenness.
"""

import numpy as np

from nanyin_hgnn import toy
from nanyin_hgnn.midi_io import Role
from nanyin_hgnn.ornament import OrnamentConfig, Style, apply_ornamentation, is_special, ornament_metrics, \
    special_note_seed

melody = list(toy.skeleton_fixture().notes)
cfg = OrnamentConfig()

for style in Style:
    res = apply_ornamentation(melody, style, cfg, rng=np.random.default_rng(0), return_hosts=True)
    m = ornament_metrics(res.notes, cfg)
    print(f"{style.value:9s} hosts {res.hosts[:8]}...  density {m['density']:.2f}  "
          f"coverage {m['coverage']:.2f}  evenness {m['evenness']:.2f}")

seeded = special_note_seed(melody, cfg, rng=0, count=3)
for n in seeded:
    if n.role == Role.ORNAMENT and is_special(n.pitch):
        print(f"special note {n.pitch} at beat {n.onset}")
