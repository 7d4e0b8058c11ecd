"""
Stage-1 skeletal-melody model.

Train the GATv2 next-pitch model on ascending scale runs. The full schedule
(lr 0.0003, cosine warm restarts, early stopping) is used, but the epoch
budget is cut so the demo runs in well under a minute.
"""

import argparse

import numpy as np

from nanyin_hgnn import toy
from nanyin_hgnn.gnn.loss import grad_check
from nanyin_hgnn.gnn.model import ModelConfig, make_batch, predict_proba
from nanyin_hgnn.gnn.train import ModelParams, TrainConfig, _stage1_loss_fn, train_stage1
from nanyin_hgnn.graph import convert

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--epochs", type=int, default=60)
args = parser.parse_args()

rng = np.random.default_rng(1)
graphs = [convert(toy.scale_run(rng, 10, direction=1), rng=rng) for _ in range(20)]

cfg = TrainConfig(max_epochs=args.epochs)
params = train_stage1(graphs, cfg, rng=np.random.default_rng(1), val_graphs=graphs,
                      model_config=ModelConfig(hidden=32))
for rec in params.history[::10]:
    print(f"epoch {rec['epoch']:3d}  lr {rec['lr']:.6f}  train CE {rec['train_ce']:.4f}  "
          f"acc {rec['train_accuracy']:.2f}")

# next-pitch prediction on one run
batch = make_batch(graphs[:1])
proba = predict_proba(params.arrays, batch, params.config)
print("predicted next-pitch classes:", proba[:len(graphs[0].notes) - 1].argmax(axis=1).tolist())
print("target classes:              ", batch.targets[:len(graphs[0].notes) - 1].tolist())

# the analytic gradients agree with central differences
small = make_batch([convert(toy.scale_run(0, 4), rng=0)])
p = ModelParams.initial(ModelConfig(hidden=8, heads=2), rng=0)
worst, _ = grad_check(p.arrays, _stage1_loss_fn(small, p, TrainConfig()), step=1e-6, max_entries=20, rng=0)
print(f"gradient check: max relative error {worst:.2e}")
