"""
Training loop for the stage-1 model: Adam, global-norm clipping, cosine
annealing with warm restarts, early stopping, epoch-wise class centres.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import EmptyDataset, SchemaMismatch
from .loss import inverse_frequency_weights, loss_and_grads, loss_stage1
from .model import N_CLASSES, ModelConfig, forward, init_params, make_batch

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.0003
    batch_size: int = 8
    clip: float = 1.0
    t0: int = 20
    t_mult: int = 2
    eta_min: float = 0.00002
    patience: int = 35
    min_delta: float = 0.0003
    lambda1: float = 0.0001
    lambda2: float = 0.1
    max_epochs: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_fraction: float = 432 / 507

    def __post_init__(self):
        for name in ("lr", "batch_size", "clip", "t0", "t_mult", "eta_min", "patience",
                     "min_delta", "lambda1", "lambda2", "max_epochs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def cosine_warm_restarts(epoch: int, lr0: float = 0.0003, eta_min: float = 0.00002,
                         t0: int = 20, t_mult: int = 2) -> float:
    """Learning rate at ``epoch`` for cycles of length t0, t0*t_mult, ..."""
    length, start = t0, 0
    while epoch >= start + length:
        start += length
        length *= t_mult
    e = epoch - start
    return eta_min + (lr0 - eta_min) * (1 + math.cos(math.pi * e / length)) / 2


def is_restart(epoch: int, t0: int = 20, t_mult: int = 2) -> bool:
    length, start = t0, 0
    while start < epoch:
        start += length
        length *= t_mult
    return start == epoch


class Adam:
    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k in sorted(params):
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1 ** self.t)
            v_hat = self.v[k] / (1 - b2 ** self.t)
            params[k] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for _, g in sorted(grads.items())))
    if norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


@dataclass
class ModelParams:
    """Trained stage-1 weights plus everything needed to reuse them."""

    arrays: dict
    config: ModelConfig = field(default_factory=ModelConfig)
    centers: np.ndarray | None = None
    class_weights: np.ndarray | None = None
    train_config: TrainConfig = field(default_factory=TrainConfig)
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.centers is None:
            self.centers = np.zeros((N_CLASSES, self.config.hidden))
        if self.class_weights is None:
            self.class_weights = np.ones(N_CLASSES)

    @classmethod
    def initial(cls, config: ModelConfig = ModelConfig(), rng=None, **kwargs) -> "ModelParams":
        return cls(init_params(config, rng), config, **kwargs)

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "model_config": asdict(self.config),
            "train_config": asdict(self.train_config),
            "arrays": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in sorted(self.arrays.items())},
            "centers": self.centers.tolist(),
            "class_weights": self.class_weights.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelParams":
        if obj.get("version") != CHECKPOINT_VERSION:
            raise SchemaMismatch(f"checkpoint version {obj.get('version')!r}, expected {CHECKPOINT_VERSION}")
        mc = dict(obj["model_config"])
        mc["windows"] = tuple(mc["windows"])
        arrays = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in obj["arrays"].items()}
        return cls(arrays, ModelConfig(**mc), np.array(obj["centers"]), np.array(obj["class_weights"]),
                   TrainConfig(**obj["train_config"]))


def split_dataset(items: list, fraction: float = 432 / 507, rng=None) -> tuple[list, list]:
    """Shuffle then split; the validation part is never empty when len >= 2."""
    rng = np.random.default_rng(rng)
    order = rng.permutation(len(items))
    n_train = int(round(fraction * len(items)))
    if len(items) >= 2:
        n_train = min(max(n_train, 1), len(items) - 1)
    return [items[i] for i in order[:n_train]], [items[i] for i in order[n_train:]]


def _stage1_loss_fn(batch, params: ModelParams, cfg: TrainConfig, parts=None):
    def fn(tensors):
        out = forward(tensors, batch, params.config)
        total, info = loss_stage1(out["logits"], batch.targets, out["feats"], params.centers,
                                  params.class_weights, cfg.lambda1, cfg.lambda2,
                                  params=tensors.values(), return_parts=True)
        if parts is not None:
            parts.update(info)
        return total
    return fn


def evaluate(params: ModelParams, batch, cfg: TrainConfig | None = None) -> dict:
    cfg = cfg or params.train_config
    parts: dict = {}
    total = _stage1_loss_fn(batch, params, cfg, parts)(params.arrays).item()
    out = forward(params.arrays, batch, params.config)
    logits = out["logits"].data
    rows = batch.targets >= 0
    logp = logits - logits.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    t = batch.targets[rows]
    plain_ce = float(-logp[rows][np.arange(len(t)), t].mean()) if len(t) else 0.0
    acc = float((logits[rows].argmax(axis=1) == t).mean()) if len(t) else 1.0
    return {"loss": total, "ce": parts["ce"], "plain_ce": plain_ce, "accuracy": acc}


def update_centers(params: ModelParams, batch) -> None:
    feats = forward(params.arrays, batch, params.config)["feats"].data
    rows = batch.targets >= 0
    t = batch.targets[rows]
    f = feats[rows]
    for c in np.unique(t):
        params.centers[c] = f[t == c].mean(axis=0)


def train_stage1(train_graphs: list, cfg: TrainConfig = TrainConfig(), rng=None,
                 val_graphs: list | None = None, model_config: ModelConfig = ModelConfig(),
                 init: ModelParams | None = None, callback=None) -> ModelParams:
    """Fit the stage-1 model; returns the parameters with the best validation loss.

    When ``val_graphs`` is None the training list is shuffled and split with
    ``cfg.train_fraction``. ``history`` on the result holds one dict per epoch.
    """
    if not train_graphs:
        raise EmptyDataset("no training graphs")
    rng = np.random.default_rng(rng)
    if val_graphs is None:
        train_graphs, val_graphs = split_dataset(list(train_graphs), cfg.train_fraction, rng)
    params = init or ModelParams.initial(model_config, rng, train_config=cfg)
    params.train_config = cfg
    full_train = make_batch(train_graphs)
    params.class_weights = inverse_frequency_weights(full_train.targets, N_CLASSES)
    val_batch = make_batch(val_graphs) if val_graphs else full_train
    opt = Adam(params.arrays, cfg.beta1, cfg.beta2, cfg.eps)

    best_val, best_arrays, best_centers, stale = math.inf, None, None, 0
    history = []
    for epoch in range(cfg.max_epochs):
        lr = cosine_warm_restarts(epoch, cfg.lr, cfg.eta_min, cfg.t0, cfg.t_mult)
        order = rng.permutation(len(train_graphs))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = make_batch([train_graphs[i] for i in order[start:start + cfg.batch_size]])
            loss, grads = loss_and_grads(params.arrays, _stage1_loss_fn(batch, params, cfg))
            norm = clip_global_norm(grads, cfg.clip)
            opt.step(params.arrays, grads, lr)
            losses.append(loss)
        update_centers(params, full_train)
        tr = evaluate(params, full_train, cfg)
        va = evaluate(params, val_batch, cfg)
        record = {"epoch": epoch, "lr": lr, "batch_loss": float(np.mean(losses)), "train_loss": tr["loss"],
                  "train_ce": tr["ce"], "train_plain_ce": tr["plain_ce"], "train_accuracy": tr["accuracy"],
                  "val_loss": va["loss"], "grad_norm": norm}
        history.append(record)
        if callback:
            callback(record)
        log.debug("epoch %d lr %.6g train %.4f val %.4f", epoch, lr, tr["loss"], va["loss"])
        if va["loss"] < best_val - cfg.min_delta:
            best_val, stale = va["loss"], 0
            best_arrays = {k: v.copy() for k, v in params.arrays.items()}
            best_centers = params.centers.copy()
        else:
            stale += 1
            if stale >= cfg.patience:
                log.info("early stop at epoch %d (best val %.4f)", epoch, best_val)
                break
    if best_arrays is not None:
        params.arrays, params.centers = best_arrays, best_centers
    params.history = history
    return params


def save_checkpoint(path, params: ModelParams, detector=None, extra: dict | None = None) -> None:
    doc = {"stage1": params.to_dict()}
    if detector is not None:
        doc["detector"] = detector.to_dict()
    if extra:
        doc["config"] = extra
    doc["version"] = CHECKPOINT_VERSION
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path):
    """Return (ModelParams, detector or None, config echo or None)."""
    from ..nianzhi import DetectorParams

    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise SchemaMismatch(f"checkpoint version {doc.get('version')!r}, expected {CHECKPOINT_VERSION}")
    detector = DetectorParams.from_dict(doc["detector"]) if "detector" in doc else None
    return ModelParams.from_dict(doc["stage1"]), detector, doc.get("config")


def write_loss_csv(path, history: list) -> None:
    if not history:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0]))
        writer.writeheader()
        writer.writerows(history)
