import numpy as np
import pytest

from starfcdc.config import StarConfig
from starfcdc.encoder import EncoderParams, encode, init_encoder
from starfcdc.neighborhood import MomentumQueue, neighbor_weight_matrix
from starfcdc.objective import batch_objective

MODES = {"CE": "pretrain", "CE+DOWN": "down", "CE+STAR": "star"}


def random_units(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture
def small_problem():
    """d_in=8, d=8, |Q|=32, k=4, M=2 instance with a batch of 6 queries."""
    rng = np.random.default_rng(7)
    config = StarConfig(K=2, M=2, d_in=8, hidden=(10,), d=8, k=4, tau=0.5, gamma=0.8,
                        base_init=4.0)
    params = init_encoder(8, [10], 8, 2, seed=3, base=4.0)
    x = rng.normal(size=(6, 8))
    coarse = rng.integers(0, 2, size=6)
    ids = np.arange(6)
    queue = MomentumQueue(32)
    queue.push(np.arange(100, 132), random_units(rng, 32, 8), rng.integers(0, 2, size=32))
    snap = queue.snapshot()
    weights = neighbor_weight_matrix(encode(params, x), ids, snap, 4, 5.0)
    return dict(config=config, params=params, batch=(x, coarse, ids), snapshot=snap,
                weights=weights)


def finite_difference(params, loss_fn, step=1e-4):
    """Central differences of ``loss_fn(params)`` for every parameter entry."""
    arrays = {k: np.array(v, dtype=np.float64) for k, v in params.as_dict().items()}
    grads = {}
    for name, value in arrays.items():
        g = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            vals = []
            for sign in (1.0, -1.0):
                trial = {k: v.copy() for k, v in arrays.items()}
                trial[name][idx] += sign * step
                vals.append(loss_fn(EncoderParams.from_dict(trial)))
            g[idx] = (vals[0] - vals[1]) / (2 * step)
        grads[name] = g
    return grads


def batch_loss(problem, spec):
    x, coarse, ids = problem["batch"]

    def fn(p):
        out, _, _ = batch_objective(p, x, coarse, ids, problem["snapshot"], 0, problem["config"],
                                    mode=MODES[spec], weights=problem["weights"])
        return out.total
    return fn


# acceptance summary ---------------------------------------------------------

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")
    config.stash[_CRITERIA] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n, title = mark.args
    entry = item.config.stash[_CRITERIA].setdefault(n, {"title": title, "ok": True, "notes": []})
    if rep.failed or rep.skipped:
        entry["ok"] = False
    if rep.when == "call":
        entry["notes"].extend(v for k, v in item.user_properties if k == "note")


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        r = results[n]
        line = f"{'PASS' if r['ok'] else 'FAIL'}  {n:>2}. {r['title']}"
        if r["notes"]:
            line += "  [" + "; ".join(r["notes"]) + "]"
        terminalreporter.write_line(line)
