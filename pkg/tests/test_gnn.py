import math

import numpy as np
import pytest

from nanyin_hgnn import toy
from nanyin_hgnn.errors import DimensionMismatch, EmptyDataset, NonFiniteGradient
from nanyin_hgnn.gnn.loss import grad_check, inverse_frequency_weights, loss_and_grads, loss_stage1
from nanyin_hgnn.gnn.model import (FEATURE_DIM, N_CLASSES, Adjacency, ModelConfig, feature_enhance, forward,
                                   gatv2_forward, init_params, make_batch, pooling_matrix, split_params)
from nanyin_hgnn.gnn.tensor import Tensor, concat, parameter, segment_softmax
from nanyin_hgnn.gnn.train import (ModelParams, TrainConfig, clip_global_norm, cosine_warm_restarts, is_restart,
                                   load_checkpoint, save_checkpoint, train_stage1)
from nanyin_hgnn.graph import convert


def head(rng, d_in, d_out):
    return (rng.normal(size=(d_in, d_out)), rng.normal(size=(d_in, d_out)), rng.normal(size=(d_out, 1)),
            np.zeros((1, d_out)))


def random_adjacency(rng, n, n_edges):
    src = rng.integers(0, n, n_edges)
    dst = rng.integers(0, n, n_edges)
    return Adjacency.build(src, dst, rng.uniform(0.1, 2.0, n_edges), n)


# ---------------------------------------------------------------------------
# autodiff primitives


@pytest.mark.parametrize("op", [
    lambda a, b: (a * b + a / (b.abs() + Tensor(1.0))).sum(),
    lambda a, b: (a @ b.T).tanh().sum(),
    lambda a, b: a.log_softmax(axis=1).rows(np.array([0, 2, 2])).sum(),
    lambda a, b: (a - b).row_norm().mean(),
    lambda a, b: concat([a.sigmoid(), b.exp()], axis=1).cols(1, 4).square().sum(),
    lambda a, b: segment_softmax(a.cols(0, 1), np.array([0, 0, 1]), 2).scatter_rows(np.array([1, 1, 0]), 2).sum(),
])
def test_primitive_gradients(op):
    rng = np.random.default_rng(0)
    params = {"a": rng.normal(size=(3, 3)), "b": rng.normal(size=(3, 3))}

    def fn(t):
        return op(*(x if isinstance(x, Tensor) else Tensor(x) for x in (t["a"], t["b"])))

    worst, _ = grad_check(params, fn, step=1e-6)
    assert worst < 1e-6


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gradient_raises():
    with pytest.raises(NonFiniteGradient):
        loss_and_grads({"w": np.zeros((1, 1))}, lambda t: t["w"].sqrt().sum())


def test_zero_loss_gives_zero_gradients():
    _, grads = loss_and_grads({"w": np.ones((2, 2))}, lambda t: (t["w"] * Tensor(0.0)).sum())
    assert not grads["w"].any()


# ---------------------------------------------------------------------------
# layers


def test_single_node_attention_is_one():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 4))
    layer = [head(rng, 4, 3)]
    h, alphas = gatv2_forward(x, Adjacency.build([], [], [], 1), layer, return_attention=True)
    assert alphas[0].tolist() == [1.0]
    W_src = layer[0][0]
    assert np.allclose(h.data, Tensor(x @ W_src).elu().data)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(1)
    for _ in range(20):
        adj = random_adjacency(rng, 8, 20)
        _, alphas = gatv2_forward(rng.normal(size=(8, 5)), adj, [head(rng, 5, 4) for _ in range(3)],
                                  return_attention=True)
        for a in alphas:
            sums = np.bincount(adj.dst, weights=a, minlength=8)
            assert np.allclose(sums, 1.0, atol=1e-6)


def test_permutation_equivariance():
    rng = np.random.default_rng(2)
    adj = random_adjacency(rng, 8, 20)
    x = rng.normal(size=(8, 5))
    layer = [head(rng, 5, 4) for _ in range(2)]
    base = gatv2_forward(x, adj, layer).data
    for _ in range(5):
        perm = rng.permutation(8)
        xp = np.empty_like(x)
        xp[perm] = x
        out = gatv2_forward(xp, adj.permuted(perm), layer).data
        assert np.allclose(out[perm], base, atol=1e-12)


def test_dimension_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionMismatch):
        gatv2_forward(rng.normal(size=(3, 4)), Adjacency.build([], [], [], 2), [head(rng, 4, 2)])
    with pytest.raises(DimensionMismatch):
        gatv2_forward(rng.normal(size=(2, 4)), Adjacency.build([], [], [], 2), [head(rng, 5, 2)])


def _enhancer(rng, H, windows=(1, 3, 5)):
    p = {f"w{w}": rng.normal(size=(H, H)) for w in windows}
    p.update({f"b{w}": rng.normal(size=(1, H)) for w in windows})
    p["out"] = rng.normal(size=(H * len(windows), H))
    p["out_b"] = rng.normal(size=(1, H))
    return p


def test_enhancer_constant_rows_stay_constant():
    rng = np.random.default_rng(0)
    H, n = 6, 7
    x = np.tile(rng.normal(size=(1, H)), (n, 1))
    pools = {w: pooling_matrix([np.arange(n)], n, w) for w in (1, 3, 5)}
    out = feature_enhance(x, _enhancer(rng, H), pools).data
    assert out.shape == (n, H)
    assert np.allclose(out, out[0], atol=1e-12)


def test_pooling_edge_padding():
    P = pooling_matrix([np.arange(3)], 3, 5)
    assert np.allclose(P.sum(axis=1), 1.0)
    assert np.allclose(P[0], [3 / 5, 1 / 5, 1 / 5])


def test_forward_shapes():
    cfg = ModelConfig(hidden=8, heads=2)
    batch = make_batch([convert(toy.random_score(0, 6), rng=0), convert(toy.random_score(1, 4), rng=1)])
    out = forward(init_params(cfg, 0), batch, cfg, return_attention=True)
    assert out["logits"].shape == (batch.size, N_CLASSES)
    assert out["feats"].shape == (batch.size, 8)
    assert len(out["attention"]) == 3
    assert batch.features.shape[1] == FEATURE_DIM


def test_param_layout():
    cfg = ModelConfig()
    layers, enh, pred = split_params(init_params(cfg, 0), cfg)
    assert len(layers) == 3 and all(len(h) == 4 for h, _ in layers)
    assert layers[0][0][0][0].shape == (FEATURE_DIM, 8) and layers[2][0][0][0].shape == (32, 32)


# ---------------------------------------------------------------------------
# loss


def test_perfect_logits():
    t = np.array([0, 3, 5])
    logits = np.full((3, 6), -1e3)
    logits[np.arange(3), t] = 1e3
    feats = np.zeros((3, 2))
    assert loss_stage1(logits, t, feats, np.zeros((6, 2)), np.ones(6), 0.0, 0.0).item() <= 1e-6


def test_l1_isolation():
    t = np.array([0])
    logits = np.array([[1e3, -1e3]])
    L = loss_stage1(logits, t, np.zeros((1, 2)), np.zeros((2, 2)), np.ones(2), lam1=1.0, lam2=0.0,
                    params=[np.array([2.0])])
    assert L.item() == pytest.approx(2.0, abs=1e-12)


def test_consistency_zero_at_centres():
    rng = np.random.default_rng(0)
    centers = rng.normal(size=(4, 3))
    t = np.array([0, 1, 3, -1])
    feats = np.vstack([centers[[0, 1, 3]], rng.normal(size=(1, 3))])
    _, parts = loss_stage1(rng.normal(size=(4, 4)), t, feats, centers, np.ones(4), return_parts=True)
    assert parts["consistency"] == 0.0


def test_weighted_ce_by_hand():
    logits = np.array([[0.0, 0.0], [0.0, math.log(3.0)]])
    t = np.array([0, 1])
    w = np.array([1.0, 3.0])
    # CE row 0 = log 2, row 1 = log(4/3); weighted mean with weights 1 and 3
    expected = (math.log(2) + 3 * math.log(4 / 3)) / 4
    got = loss_stage1(logits, t, np.zeros((2, 1)), np.zeros((2, 1)), w, 0.0, 0.0).item()
    assert got == pytest.approx(expected, rel=1e-12)


def test_inverse_frequency_weights():
    w = inverse_frequency_weights(np.array([0, 0, 0, 1, -1]), 3)
    assert w.tolist() == [4 / 6, 4 / 2, 1.0]


def test_full_gradient_check(gradcheck_case):
    _, params, fn, _, _ = gradcheck_case
    worst, report = grad_check(params.arrays, fn, step=1e-5)
    assert worst < 1e-4, max(report.items(), key=lambda kv: kv[1])


def test_l1_kink_skipped():
    params = {"w": np.array([[0.0, 1.0]])}
    worst, _ = grad_check(params, lambda t: as_sum_abs(t["w"]), step=1e-5)
    assert worst < 1e-8


def as_sum_abs(w):
    return (w if isinstance(w, Tensor) else Tensor(w)).abs().sum()


# ---------------------------------------------------------------------------
# training


@pytest.mark.parametrize("epoch, lr", [(0, 0.0003), (10, 0.00016), (20, 0.0003), (40, 0.00016), (60, 0.0003)])
def test_cosine_schedule(epoch, lr):
    assert cosine_warm_restarts(epoch) == pytest.approx(lr, abs=1e-15)


def test_restart_epochs():
    assert [e for e in range(200) if is_restart(e)] == [0, 20, 60, 140]


def test_train_config_defaults():
    c = TrainConfig()
    assert (c.lr, c.batch_size, c.clip, c.t0, c.t_mult, c.eta_min, c.patience, c.min_delta, c.lambda1, c.lambda2) == (
        0.0003, 8, 1.0, 20, 2, 0.00002, 35, 0.0003, 0.0001, 0.1)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_global_norm(g, 1.0) == 5.0
    assert np.allclose([g["a"][0], g["b"][0]], [0.6, 0.8])


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        train_stage1([])


def _small_run(seed):
    graphs = [convert(toy.scale_run(s, 6), rng=s) for s in range(4)]
    cfg = TrainConfig(max_epochs=3, batch_size=2)
    return train_stage1(graphs, cfg, rng=seed, model_config=ModelConfig(hidden=8, heads=2))


def test_training_is_bit_deterministic():
    a, b = _small_run(7), _small_run(7)
    assert a.history == b.history
    assert all(np.array_equal(a.arrays[k], b.arrays[k]) for k in a.arrays)


def test_lr_trace_and_loss_windows(overfit_run):
    _, params, _ = overfit_run
    hist = params.history
    for rec in hist:
        assert rec["lr"] == cosine_warm_restarts(rec["epoch"])
    restarts = {e for e in range(len(hist)) if is_restart(e)}
    loss = [r["train_loss"] for r in hist]
    for e in range(len(loss) - 50):
        if e + 50 in restarts or e + 50 - 1 in restarts:
            continue  # a spike right after a warm restart is allowed
        assert loss[e + 50] <= loss[e]


def test_checkpoint_round_trip(tmp_path, overfit_run):
    graphs, params, _ = overfit_run
    path = tmp_path / "model.json"
    save_checkpoint(path, params, extra={"note": "x"})
    back, detector, echo = load_checkpoint(path)
    assert detector is None and echo == {"note": "x"}
    assert back.config == params.config and back.train_config == params.train_config
    batch = make_batch(graphs[:2])
    a = forward(params.arrays, batch, params.config)["logits"].data
    b = forward(back.arrays, batch, back.config)["logits"].data
    assert np.array_equal(a, b)


def test_initial_params_are_seeded():
    a, b = ModelParams.initial(rng=3), ModelParams.initial(rng=3)
    assert all(np.array_equal(a.arrays[k], b.arrays[k]) for k in a.arrays)
    p = parameter(np.ones(2))
    assert p.requires_grad
