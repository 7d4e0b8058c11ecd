import time

import numpy as np
import pytest

from nanyin_hgnn import toy
from nanyin_hgnn.gnn.train import TrainConfig, train_stage1
from nanyin_hgnn.graph import convert


_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        _CRITERIA[number] = (title, "FAIL" if failed else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def overfit_run():
    """Stage-1 model trained on 20 ascending scale runs, validated on the same set.

    Shared by the training-property tests and the acceptance suite because
    it takes a couple of minutes. Returns (graphs, params, seconds).
    """
    rng = np.random.default_rng(1)
    graphs = [convert(toy.scale_run(rng, 10, direction=1), rng=rng) for _ in range(20)]
    start = time.perf_counter()
    params = train_stage1(graphs, TrainConfig(), rng=np.random.default_rng(1), val_graphs=graphs)
    return graphs, params, time.perf_counter() - start


def _kink_margin(loss_fn, arrays):
    """Smallest |input| seen by a leaky-ReLU or ELU during one forward pass."""
    from nanyin_hgnn.gnn.tensor import Tensor

    seen = []
    lrelu, elu = Tensor.leaky_relu, Tensor.elu

    def spy(fn):
        def wrapped(self, *a, **k):
            seen.append(float(np.abs(self.data).min()))
            return fn(self, *a, **k)
        return wrapped

    Tensor.leaky_relu, Tensor.elu = spy(lrelu), spy(elu)
    try:
        loss_fn(arrays)
    finally:
        Tensor.leaky_relu, Tensor.elu = lrelu, elu
    return min(seen)


@pytest.fixture(scope="session")
def gradcheck_case():
    """Six-node graph, hidden 8, full stage-1 loss with random centres and class weights.

    Central differences are only meaningful away from activation kinks, so the
    first seed whose pre-activations all sit at least 1e-3 from zero is used.
    """
    from nanyin_hgnn.gnn.model import N_CLASSES, ModelConfig, make_batch
    from nanyin_hgnn.gnn.train import ModelParams, _stage1_loss_fn
    from nanyin_hgnn.graph import build_graph, place_ornaments
    from nanyin_hgnn.midi_io import NoteEvent

    notes = [NoteEvent(p, float(k), 1.0, 80) for k, p in enumerate([60, 62, 64, 67])]
    g = place_ornaments(build_graph(notes), 0.5, rng=0)
    batch = make_batch([g])
    cfg = ModelConfig(hidden=8, heads=2)
    for seed in range(50):
        r = np.random.default_rng(seed)
        params = ModelParams.initial(cfg, r)
        params.centers = r.normal(size=(N_CLASSES, cfg.hidden))
        params.class_weights = r.uniform(0.5, 2.0, N_CLASSES)
        fn = _stage1_loss_fn(batch, params, TrainConfig())
        margin = _kink_margin(fn, params.arrays)
        if margin > 1e-3:
            return g, params, fn, seed, margin
    raise RuntimeError("no smooth initialisation found")
