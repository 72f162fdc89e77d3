"""Loss functions: coarse cross-entropy, the DOWN contrastive loss and STAR.

For a query ``q`` with neighbor weights ``w_j`` over a queue ``h_1..h_n``:

DOWN::

    L1 = -sum_j w_j [ q.h_j / tau - LSE_k(q.h_k / tau) ]

STAR::

    kl_term     = -gamma sum_j w_j [ -D_j / tau - LSE_k(-D_k / tau) ]
    euclid_term = -sum_j w_j [ q.h_j / tau - LSE_k(q.h_k / tau + D_k ln B) ]

where ``D_k`` is the bidirectional KL divergence between ``q`` and ``h_k``.
The factor ``B**D_k`` of each denominator term is folded into the logits as
the additive shift ``D_k ln B``. All denominators run over the whole queue.

The batched helpers work on a dense (batch, n) weight matrix ``W`` whose
rows hold the neighbor weights (zero elsewhere), and return analytic
gradients with respect to the query embeddings and ``ln B``.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .encoder import classify_coarse, encode_backward, encode_with_cache
from .neighborhood import alpha_for_epoch, neighbor_weight_matrix
from .vecmath import (embed_to_prob, embed_to_prob_backward, log_sum_exp, pairwise_kl,
                      pairwise_kl_backward, softmax)

LOSS_SPECS = ("CE", "CE+DOWN", "CE+STAR")
_MODE_FOR_SPEC = {"CE": "pretrain", "CE+DOWN": "down", "CE+STAR": "star"}


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class LossBreakdown:
    ce: float = 0.0
    contrastive: float = 0.0
    kl_term: float = 0.0
    euclid_term: float = 0.0
    total: float = 0.0
    log_base: float = 0.0  # ln B actually applied in the denominators (0 when absent)

    def as_dict(self):
        return asdict(self)


def ce_loss(logits, label):
    """Softmax cross-entropy of one logit vector against an integer label."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < len(logits):
        raise ValueError(f"label {label} outside [0, {len(logits)})")
    return float(log_sum_exp(logits) - logits[label])


def _check_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise NonFiniteLossError(f"non-finite value in {name}")


def down_terms(Q, H, W, tau, need_grad=False):
    """Per-query DOWN losses (and ``dL/dQ`` of their sum if requested)."""
    S = Q @ H.T / tau
    lse = log_sum_exp(S, axis=1)
    wsum = W.sum(axis=1)
    loss = wsum * lse - np.sum(W * S, axis=1)
    _check_finite("contrastive term", loss)
    if not need_grad:
        return loss, None
    gS = wsum[:, None] * softmax(S, axis=1) - W
    return loss, gS @ H / tau


def star_terms(Q, H, W, tau, gamma, log_base, prob_temperature=1.0, need_grad=False):
    """Per-query STAR terms.

    Returns ``kl_term, euclid_term`` (arrays over queries) and, with
    ``need_grad``, the gradient of ``sum(kl_term + euclid_term)`` with
    respect to ``Q`` and to ``log_base``.
    """
    P = embed_to_prob(Q, prob_temperature)
    Hp = embed_to_prob(H, prob_temperature)
    D = pairwise_kl(P, Hp)
    wsum = W.sum(axis=1)

    A_logits = -D / tau
    lse_a = log_sum_exp(A_logits, axis=1)
    kl_term = gamma * (wsum * lse_a - np.sum(W * A_logits, axis=1))
    _check_finite("kl_term", kl_term)

    S = Q @ H.T / tau
    C_logits = S + D * log_base
    lse_c = log_sum_exp(C_logits, axis=1)
    euclid = wsum * lse_c - np.sum(W * S, axis=1)
    _check_finite("euclid_term", euclid)
    if not need_grad:
        return kl_term, euclid, None, None

    A = softmax(A_logits, axis=1)
    C = softmax(C_logits, axis=1)
    gD = gamma / tau * (W - wsum[:, None] * A) + wsum[:, None] * C * log_base
    gS = wsum[:, None] * C - W
    gP = pairwise_kl_backward(P, Hp, gD)
    gQ = gS @ H / tau + embed_to_prob_backward(Q, gP, prob_temperature)
    g_log_base = float(np.sum(wsum[:, None] * C * D))
    return kl_term, euclid, gQ, g_log_base


# single-query views ---------------------------------------------------------

def _single(q, neighbors, snapshot):
    W = np.zeros((1, len(snapshot)))
    W[0, neighbors.index] = neighbors.weights
    return np.atleast_2d(np.asarray(q, dtype=np.float64)), np.asarray(snapshot.embeddings), W


def down_loss_l1(q, neighbors, snapshot, tau):
    if len(snapshot) == 0:
        raise ValueError("empty queue")
    Q, H, W = _single(q, neighbors, snapshot)
    return float(down_terms(Q, H, W, tau)[0][0])


def star_loss_l2(q, neighbors, snapshot, tau, gamma, B, prob_temperature=1.0):
    """``(kl_term, euclid_term)`` of the STAR loss for one query."""
    if B <= 0:
        raise ValueError("B must be positive")
    Q, H, W = _single(q, neighbors, snapshot)
    kl, eu, _, _ = star_terms(Q, H, W, tau, gamma, np.log(B), prob_temperature)
    return float(kl[0]), float(eu[0])


def expanded_l22(q, neighbors, snapshot, tau, B, prob_temperature=1.0):
    """Literal evaluation of ``sum_j w_j (log sum_k B**D_k exp(q.h_k/tau) - q.h_j/tau)``.

    Kept deliberately naive (no log-domain tricks): it serves as a check on
    the stable implementation.
    """
    q = np.asarray(q, dtype=np.float64)
    H = np.asarray(snapshot.embeddings)
    pq = embed_to_prob(q, prob_temperature)
    denom = 0.0
    for h in H:
        ph = embed_to_prob(h, prob_temperature)
        d_kl = np.sum((pq - ph) * (np.log(pq) - np.log(ph)))
        denom += B ** d_kl * np.exp(q @ h / tau)
    total = 0.0
    for idx, w in zip(neighbors.index, neighbors.weights):
        total += w * (np.log(denom) - q @ H[idx] / tau)
    return float(total)


# batch objective ------------------------------------------------------------

def effective_log_base(params, config):
    """``ln B`` used in the denominators, and whether it receives gradient."""
    if config.no_kl_weight:
        return 0.0, False
    if config.fix_base is not None:
        return float(np.log(config.fix_base)), False
    return float(params.b_raw), True


def batch_objective(params, x, coarse, ids, snapshot, epoch, config, mode=None,
                    weights=None, need_grad=False):
    """Mean training loss over a batch, optionally with parameter gradients.

    ``mode`` defaults to ``config.objective``. Neighbors are retrieved from
    ``snapshot`` with the epoch's alpha unless a dense ``weights`` matrix is
    supplied, in which case it is used as a constant.

    Returns ``(LossBreakdown, grads_or_None, weights)``.
    """
    mode = mode or config.objective
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    coarse = np.asarray(coarse, dtype=np.int64)
    b = len(x)
    if b == 0:
        raise ValueError("empty batch")
    Q, cache = encode_with_cache(params, x)
    gQ = np.zeros_like(Q)
    grads = {}
    out = LossBreakdown()

    use_ce = mode == "pretrain" or not config.no_ce
    if use_ce:
        logits = classify_coarse(params, Q)
        if np.any(coarse < 0) or np.any(coarse >= logits.shape[1]):
            raise ValueError("coarse label out of range")
        lse = log_sum_exp(logits, axis=1)
        out.ce = float(np.mean(lse - logits[np.arange(b), coarse]))
        _check_finite("ce", out.ce)
        if need_grad:
            g_logits = softmax(logits, axis=1)
            g_logits[np.arange(b), coarse] -= 1.0
            g_logits /= b
            grads["head_W"] = g_logits.T @ Q
            grads["head_b"] = g_logits.sum(axis=0)
            gQ += g_logits @ params.head_w

    g_log_base = 0.0
    if mode in ("down", "star"):
        if weights is None:
            alpha = alpha_for_epoch(epoch, config.alpha_schedule, config.alpha_period)
            restrict = coarse if config.same_coarse_neighbors else None
            weights = neighbor_weight_matrix(Q, ids, snapshot, config.k, alpha, coarse=restrict)
        H = np.asarray(snapshot.embeddings)
        if mode == "down":
            per, g = down_terms(Q, H, weights, config.tau, need_grad)
            out.contrastive = float(np.mean(per))
            if need_grad:
                gQ += g / b
        else:
            log_base, trainable = effective_log_base(params, config)
            gamma = 0.0 if config.no_kl_loss else config.gamma
            kl, eu, g, g_lb = star_terms(Q, H, weights, config.tau, gamma, log_base,
                                         config.prob_temperature, need_grad)
            out.kl_term = float(np.mean(kl))
            out.euclid_term = float(np.mean(eu))
            out.contrastive = out.kl_term + out.euclid_term
            out.log_base = log_base
            if need_grad:
                gQ += g / b
                if trainable:
                    g_log_base = g_lb / b
    elif mode != "pretrain":
        raise ValueError(f"unknown mode {mode!r}")

    out.total = out.ce + out.contrastive
    _check_finite("total loss", out.total)
    if not need_grad:
        return out, None, weights
    grads.update(encode_backward(params, cache, gQ))
    for k, v in params.as_dict().items():
        grads.setdefault(k, np.zeros_like(v))
    grads["b_raw"] = np.array(g_log_base)
    return out, grads, weights


def compute_gradients(params, batch, snapshot, loss_spec, config, epoch=0, weights=None):
    """Exact gradients of the batch loss for ``loss_spec`` in ``LOSS_SPECS``.

    ``batch`` is ``(x, coarse, ids)``. Queue features are constants: no
    gradient reaches them. Returns ``(total_loss, grads, breakdown)``.
    """
    if loss_spec not in _MODE_FOR_SPEC:
        raise ValueError(f"loss_spec must be one of {LOSS_SPECS}")
    x, coarse, ids = batch
    breakdown, grads, _ = batch_objective(params, x, coarse, ids, snapshot, epoch, config,
                                          mode=_MODE_FOR_SPEC[loss_spec], weights=weights,
                                          need_grad=True)
    return breakdown.total, grads, breakdown
