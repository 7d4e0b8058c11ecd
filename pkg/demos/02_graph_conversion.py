"""
Heterogeneous graph conversion.

Notes, ornaments and techniques become typed nodes. The converter places
neighbour-tone ornaments at density 0.6, doubles the weight of in-mode
decorative edges, and attaches Guan / Jie technique nodes.
"""

from collections import Counter

import numpy as np

from nanyin_hgnn import toy
from nanyin_hgnn.graph import (EdgeKind, apply_technique_rules, build_graph, deserialize_graph,
                               inject_pentatonic_enhancement, place_ornaments, serialize_graph)

rng = np.random.default_rng(0)
score = toy.with_nianzhi(rng, 16)

g = build_graph(score)
print("built:", len(g.notes), "notes,", len(g.techs), "nianzhi nodes")

g = place_ornaments(g, 0.6, rng)
print("placed:", len(g.ornaments), "ornaments, density", round(len(g.ornaments) / len(g.notes), 3))
print("ornament intervals:", Counter(o.pitch - g.notes[g.host_of(i)].pitch for i, o in enumerate(g.ornaments)))

before = [e.weight for e in g.edges_of(EdgeKind.DECORATIVE)]
g = inject_pentatonic_enhancement(g)
after = [e.weight for e in g.edges_of(EdgeKind.DECORATIVE)]
print("decorative weights before/after:", sorted(set(zip(before, after))))

g = apply_technique_rules(g)
print("techniques:", Counter(t.tech_kind.value for t in g.techs))

# JSON schema v1 round trip
data = serialize_graph(g)
assert serialize_graph(deserialize_graph(data)) == data
print("serialized graph:", len(data), "bytes")
