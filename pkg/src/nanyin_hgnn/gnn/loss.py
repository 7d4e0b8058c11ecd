"""Stage-1 objective and a finite-difference gradient checker."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteGradient
from .tensor import Tensor, as_tensor, parameter


def loss_stage1(logits, targets, feats, centers, class_weights, lam1: float = 1e-4, lam2: float = 0.1,
                params=(), return_parts: bool = False):
    """Class-weighted cross-entropy + ``lam1`` * L1(params) + ``lam2`` * consistency.

    The cross-entropy is the weighted mean ``sum w[t] CE / sum w[t]`` over
    rows with a target (``targets >= 0``). Consistency is the mean Euclidean
    distance between a row's representation and the centre of its target
    class; centres are constants.
    """
    logits = as_tensor(logits)
    feats = as_tensor(feats)
    targets = np.asarray(targets, dtype=np.int64)
    rows = np.flatnonzero(targets >= 0)
    t = targets[rows]
    zero = Tensor(0.0)
    if len(rows):
        logp = logits.rows(rows).log_softmax(axis=1)
        picked = (logp * Tensor(np.eye(logits.shape[1])[t])).sum(axis=1)
        w = np.asarray(class_weights, dtype=np.float64)[t]
        ce = -(picked * Tensor(w / w.sum())).sum()
        dist = (feats.rows(rows) - Tensor(np.asarray(centers)[t])).row_norm()
        consistency = dist.mean()
    else:
        ce, consistency = zero, zero
    l1 = zero
    for p in params:
        l1 = l1 + as_tensor(p).abs().sum()
    total = ce + l1 * lam1 + consistency * lam2
    if return_parts:
        return total, {"ce": ce.item(), "l1": l1.item(), "consistency": consistency.item()}
    return total


def inverse_frequency_weights(targets, n_classes: int) -> np.ndarray:
    """``N / (K * count_c)`` for the K classes present; absent classes get 1."""
    targets = np.asarray(targets)
    targets = targets[targets >= 0]
    counts = np.bincount(targets, minlength=n_classes).astype(np.float64)
    present = counts > 0
    w = np.ones(n_classes)
    if present.any():
        w[present] = len(targets) / (present.sum() * counts[present])
    return w


def loss_and_grads(params: dict, loss_fn):
    """Evaluate ``loss_fn(tensors)`` and return (loss, {name: gradient})."""
    tensors = {k: parameter(v, name=k) for k, v in params.items()}
    loss = loss_fn(tensors)
    loss.backward()
    grads = {}
    for k, t in tensors.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {k}")
        grads[k] = g
    return loss.item(), grads


def grad_check(params: dict, loss_fn, step: float = 1e-5, skip_zero: bool = True,
               max_entries: int | None = None, rng=None, floor: float = 1e-6) -> tuple[float, dict]:
    """Compare analytic gradients with central differences.

    Returns the maximum relative error ``|a - n| / max(|a|, |n|, floor)`` and a
    per-parameter breakdown. Entries within ``step`` of zero are skipped when
    ``skip_zero`` is set: the L1 term is not differentiable there.
    ``max_entries`` subsamples each parameter array.
    """
    _, analytic = loss_and_grads(params, loss_fn)
    rng = np.random.default_rng(rng)
    report = {}
    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        errs = []
        for i in idx:
            if skip_zero and abs(flat[i]) <= 2 * step:
                continue
            shifted = {k: v.copy() for k, v in params.items()}
            shifted[name].reshape(-1)[i] += step
            up = loss_fn(shifted).item()
            shifted[name].reshape(-1)[i] -= 2 * step
            down = loss_fn(shifted).item()
            num = (up - down) / (2 * step)
            ana = analytic[name].reshape(-1)[i]
            errs.append(abs(ana - num) / max(abs(ana), abs(num), floor))
        report[name] = max(errs, default=0.0)
        worst = max(worst, report[name])
    return worst, report
