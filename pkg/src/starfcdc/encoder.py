"""Feature encoder, coarse classifier head, momentum copy and AdamW.

The encoder is a small tanh MLP followed by L2 normalization::

    x -> W0 x + b0 -> tanh -> ... -> W_L h + b_L -> normalize -> q

The coarse head maps the unit embedding to M logits. ``b_raw`` parametrizes
the exponential base of the STAR denominator as ``B = exp(b_raw)``.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import rng_stream
from .vecmath import normalize

CHECKPOINT_VERSION = 1


class ShapeMismatchError(ValueError):
    pass


@dataclass
class EncoderParams:
    weights: list
    biases: list
    head_w: np.ndarray
    head_b: np.ndarray
    b_raw: float

    @property
    def base(self):
        return math.exp(self.b_raw)

    @property
    def d_in(self):
        return self.weights[0].shape[1]

    @property
    def d(self):
        return self.weights[-1].shape[0]

    def as_dict(self):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        out["head_W"] = self.head_w
        out["head_b"] = self.head_b
        out["b_raw"] = np.array(self.b_raw)
        return out

    @classmethod
    def from_dict(cls, arrays):
        n_layers = sum(1 for name in arrays if name.startswith("W"))
        return cls(
            weights=[np.array(arrays[f"W{i}"], dtype=np.float64) for i in range(n_layers)],
            biases=[np.array(arrays[f"b{i}"], dtype=np.float64) for i in range(n_layers)],
            head_w=np.array(arrays["head_W"], dtype=np.float64),
            head_b=np.array(arrays["head_b"], dtype=np.float64),
            b_raw=float(arrays["b_raw"]),
        )

    def copy(self):
        return EncoderParams.from_dict({k: np.copy(v) for k, v in self.as_dict().items()})

    def n_params(self):
        return sum(int(np.size(v)) for v in self.as_dict().values())

    def momentum_copy(self):
        return MomentumParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class MomentumParams:
    """Encoder-only parameters of the slowly updated copy (never trained directly)."""

    weights: list
    biases: list


def init_encoder(d_in, hidden, d, M, seed, base=10.0):
    """Deterministic Glorot-uniform initialization.

    ``b_raw`` starts at ``log(base)``.
    """
    dims = [d_in, *hidden, d]
    if any(int(x) < 1 for x in dims) or M < 1:
        raise ValueError(f"invalid dimensions d_in={d_in} hidden={list(hidden)} d={d} M={M}")
    if base <= 0:
        raise ValueError("base must be positive")
    rng = rng_stream(seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    limit = math.sqrt(6.0 / (d + M))
    head_w = rng.uniform(-limit, limit, size=(M, d))
    return EncoderParams(weights, biases, head_w, np.zeros(M), math.log(base))


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != params.weights[0].shape[1]:
        raise ShapeMismatchError(
            f"input has dimension {x.shape[1]}, encoder expects {params.weights[0].shape[1]}")
    return x, single


def encode_with_cache(params, x):
    """Forward pass over a batch, keeping activations for :func:`encode_backward`."""
    x, _ = _check_input(params, x)
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    q = normalize(h)
    return q, (acts, np.linalg.norm(h, axis=1, keepdims=True), q)


def encode(params, x):
    """Unit embeddings of ``x`` (one vector or a batch of rows).

    ``params`` may be :class:`EncoderParams` or :class:`MomentumParams`.
    """
    x, single = _check_input(params, x)
    q, _ = encode_with_cache(params, x)
    return q[0] if single else q


def encode_backward(params, cache, grad_q):
    """Backpropagate ``dL/dq`` through normalization and the MLP.

    Returns a dict of gradients keyed like :meth:`EncoderParams.as_dict`
    (encoder layers only).
    """
    acts, norms, q = cache
    g = (grad_q - q * np.sum(q * grad_q, axis=1, keepdims=True)) / norms
    grads = {}
    for i in range(len(params.weights) - 1, -1, -1):
        grads[f"W{i}"] = g.T @ acts[i]
        grads[f"b{i}"] = g.sum(axis=0)
        if i > 0:
            g = (g @ params.weights[i]) * (1.0 - acts[i] ** 2)
    return grads


def classify_coarse(params, q):
    """Coarse logits for unit embedding(s) ``q``."""
    return np.asarray(q, dtype=np.float64) @ params.head_w.T + params.head_b


def momentum_update(momentum, params, m):
    """``theta_k <- m * theta_k + (1 - m) * theta`` on the encoder layers."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum coefficient must lie in [0, 1], got {m}")
    return MomentumParams(
        [m * wk + (1.0 - m) * w for wk, w in zip(momentum.weights, params.weights)],
        [m * bk + (1.0 - m) * b for bk, b in zip(momentum.biases, params.biases)],
    )


@dataclass
class OptimizerState:
    lr: float
    weight_decay: float = 0.01
    clip: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)
    # decay pulls toward zero; for b_raw that would drag B toward 1
    no_decay: frozenset = frozenset({"b_raw"})
    frozen: frozenset = frozenset()


def clip_by_global_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        return {k: g * scale for k, g in grads.items()}, total
    return dict(grads), total


def adamw_step(params, grads, state):
    """One AdamW update with global-norm clipping.

    ``grads`` holds an array for each entry of ``params.as_dict()`` (missing
    entries count as zero). Returns ``(new_params, state)``; ``state`` is
    updated in place.
    """
    arrays = params.as_dict()
    grads = {k: np.asarray(grads.get(k, np.zeros_like(v)), dtype=np.float64)
             for k, v in arrays.items() if k not in state.frozen}
    for k, g in grads.items():
        if g.shape != np.shape(arrays[k]):
            raise ShapeMismatchError(f"gradient for {k} has shape {g.shape}, expected {np.shape(arrays[k])}")
    grads, _ = clip_by_global_norm(grads, state.clip)

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    out = {}
    for k, p in arrays.items():
        if k in state.frozen:
            out[k] = np.copy(p)
            continue
        g = grads[k]
        m = state.exp_avg.get(k, np.zeros_like(g))
        v = state.exp_avg_sq.get(k, np.zeros_like(g))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.exp_avg[k], state.exp_avg_sq[k] = m, v
        p = np.asarray(p, dtype=np.float64)
        if k not in state.no_decay:
            p = p * (1.0 - state.lr * state.weight_decay)
        out[k] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return EncoderParams.from_dict(out), state


def save_checkpoint(path, params, *, opt_state=None, epoch=0, config_hash="", extra=None):
    """Write parameters (+ optimizer moments) to an ``.npz`` with a JSON header."""
    arrays = {f"param/{k}": v for k, v in params.as_dict().items()}
    meta = {"version": CHECKPOINT_VERSION, "epoch": int(epoch), "config_hash": config_hash,
            "extra": extra or {}}
    if opt_state is not None:
        meta["optimizer"] = {"lr": opt_state.lr, "weight_decay": opt_state.weight_decay,
                             "clip": opt_state.clip, "beta1": opt_state.beta1,
                             "beta2": opt_state.beta2, "eps": opt_state.eps,
                             "step": opt_state.step, "frozen": sorted(opt_state.frozen)}
        for k, v in opt_state.exp_avg.items():
            arrays[f"exp_avg/{k}"] = v
        for k, v in opt_state.exp_avg_sq.items():
            arrays[f"exp_avg_sq/{k}"] = v
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, expected=None):
    """Read a checkpoint written by :func:`save_checkpoint`.

    ``expected`` may be an :class:`EncoderParams` (or anything with the same
    ``as_dict``) whose array shapes the loaded parameters must match.
    Returns ``(params, opt_state_or_None, meta)``.
    """
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
        params = EncoderParams.from_dict(
            {k.split("/", 1)[1]: data[k] for k in data.files if k.startswith("param/")})
        opt_state = None
        if "optimizer" in meta:
            o = dict(meta["optimizer"])
            o["frozen"] = frozenset(o["frozen"])
            opt_state = OptimizerState(**o)
            opt_state.exp_avg = {k.split("/", 1)[1]: data[k] for k in data.files
                                 if k.startswith("exp_avg/")}
            opt_state.exp_avg_sq = {k.split("/", 1)[1]: data[k] for k in data.files
                                    if k.startswith("exp_avg_sq/")}
    if expected is not None:
        want = {k: np.shape(v) for k, v in expected.as_dict().items()}
        got = {k: np.shape(v) for k, v in params.as_dict().items()}
        if want != got:
            raise ShapeMismatchError(f"checkpoint shapes {got} do not match expected {want}")
    return params, opt_state, meta
