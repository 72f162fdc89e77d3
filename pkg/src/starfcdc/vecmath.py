"""Vector primitives shared by the encoder, the losses and the inference code.

Everything here operates on float64 numpy arrays. Functions accept a single
vector or a 2-D batch (one vector per row) unless noted otherwise.
"""

import numpy as np

#: Probabilities are floored at this value before any KL divergence.
PROB_FLOOR = 1e-8
#: Softmax temperature used to turn an embedding into a distribution.
PROB_TEMPERATURE = 1.0

_NORM_EPS = 1e-12


class DegenerateInputError(ValueError):
    """Raised for inputs a primitive cannot handle (zero vectors, empty input)."""


def normalize(v):
    """Scale ``v`` (or every row of ``v``) to unit Euclidean norm.

    Raises
    ------
    DegenerateInputError
        If a vector is non-finite or has norm at most 1e-12.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DegenerateInputError("cannot normalize a non-finite vector")
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms <= _NORM_EPS):
        raise DegenerateInputError("cannot normalize a zero or near-zero vector")
    return v / norms


def cosine_sim(u, v):
    """Cosine similarity of two unit vectors (their dot product)."""
    return float(np.dot(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)))


def log_sum_exp(xs, axis=-1):
    """``log(sum(exp(xs)))`` along ``axis`` with max subtraction."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0 or xs.shape[axis] == 0:
        raise DegenerateInputError("log_sum_exp of an empty sequence")
    m = np.max(xs, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(xs - m), axis=axis, keepdims=True))
    out = np.squeeze(out, axis=axis)
    return float(out) if out.ndim == 0 else out


def softmax(xs, axis=-1):
    xs = np.asarray(xs, dtype=np.float64)
    e = np.exp(xs - np.max(xs, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def embed_to_prob(q, temperature=PROB_TEMPERATURE, floor=PROB_FLOOR):
    """Map an embedding to a probability vector over its coordinates.

    Softmax over the ``d`` coordinates at ``temperature``, then every entry is
    raised to at least ``floor`` and the result renormalized, so that KL
    divergences between two such vectors are always finite.
    """
    p = np.maximum(softmax(np.asarray(q, dtype=np.float64) / temperature), floor)
    return p / np.sum(p, axis=-1, keepdims=True)


def pairwise_kl(p, h):
    """Bidirectional KL divergence between every row of ``p`` and every row of ``h``.

    ``p`` is (n, d) and ``h`` is (m, d), both rows of probability vectors.
    Returns an (n, m) matrix with entries ``KL(p_i||h_k) + KL(h_k||p_i)``,
    using ``sum_c (p_ic - h_kc) (log p_ic - log h_kc)``.
    """
    p = np.atleast_2d(p)
    h = np.atleast_2d(h)
    logp = np.log(p)
    logh = np.log(h)
    self_p = np.sum(p * logp, axis=1)
    self_h = np.sum(h * logh, axis=1)
    d = self_p[:, None] + self_h[None, :] - p @ logh.T - logp @ h.T
    # tiny negative values from cancellation when rows coincide
    return np.maximum(d, 0.0)


def bidirectional_kl(q, h, temperature=PROB_TEMPERATURE, floor=PROB_FLOOR):
    """Symmetric KL divergence between the distributions of two unit embeddings."""
    pq = embed_to_prob(q, temperature, floor)
    ph = embed_to_prob(h, temperature, floor)
    return float(np.sum((pq - ph) * (np.log(pq) - np.log(ph))))


def embed_to_prob_backward(q, grad_p, temperature=PROB_TEMPERATURE, floor=PROB_FLOOR):
    """Vector-Jacobian product of :func:`embed_to_prob` for a batch of rows."""
    q = np.atleast_2d(q)
    s = softmax(q / temperature)
    f = np.maximum(s, floor)
    total = np.sum(f, axis=1, keepdims=True)
    p = f / total
    grad_f = (grad_p - np.sum(grad_p * p, axis=1, keepdims=True)) / total
    grad_s = grad_f * (s > floor)
    grad_z = s * (grad_s - np.sum(grad_s * s, axis=1, keepdims=True))
    return grad_z / temperature


def pairwise_kl_backward(p, h, grad_d):
    """Gradient of ``sum(grad_d * pairwise_kl(p, h))`` with respect to ``p``.

    ``h`` is treated as a constant.
    """
    logp = np.log(p)
    logh = np.log(h)
    row = np.sum(grad_d, axis=1, keepdims=True)
    return row * (logp + 1.0) - grad_d @ logh - (grad_d @ h) / p
