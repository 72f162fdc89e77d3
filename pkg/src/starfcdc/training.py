"""Pretraining, the retrieve-and-train loop, early stopping and run directories.

Run directory layout written by :func:`fit` when ``run_dir`` is given::

    run_dir/
      config.json          full StarConfig + config hash
      history.jsonl        one JSON record per epoch (pretrain record first)
      checkpoints/best.npz parameters of the best-silhouette epoch
      checkpoints/final.npz parameters after the last epoch run
"""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .config import rng_stream
from .encoder import (OptimizerState, adamw_step, encode, init_encoder, momentum_update,
                      save_checkpoint)
from .inference import kmeans
from .metrics import silhouette
from .neighborhood import MomentumQueue, alpha_for_epoch
from .objective import batch_objective

log = logging.getLogger(__name__)

LOSS_FIELDS = ("ce", "contrastive", "kl_term", "euclid_term", "total")


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _optimizer(config, frozen=()):
    return OptimizerState(lr=config.lr, weight_decay=config.weight_decay, clip=config.clip,
                          frozen=frozenset(frozen))


def embed_dataset(params, ds, batch_size=512):
    return np.concatenate([encode(params, ds.features[i:i + batch_size])
                           for i in range(0, len(ds), batch_size)])


def pretrain(train, config, params=None, history=None):
    """Coarse-label cross-entropy training for ``config.pretrain_epochs`` epochs.

    Appends the mean CE of each epoch to ``history`` when a list is given.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    if train.coarse.min() < 0 or train.coarse.max() >= config.M:
        raise ValueError(f"coarse labels must lie in [0, {config.M})")
    if params is None:
        params = init_encoder(config.d_in, config.hidden, config.d, config.M, config.seed,
                              base=config.fix_base or config.base_init)
    rng = rng_stream(config.seed, "pretrain-shuffle")
    opt = _optimizer(config, frozen=("b_raw",))
    for _ in range(config.pretrain_epochs):
        losses = []
        for idx in _batches(len(train), config.batch_size, rng):
            out, grads, _ = batch_objective(params, train.features[idx], train.coarse[idx],
                                            train.ids[idx], None, 0, config, mode="pretrain",
                                            need_grad=True)
            params, opt = adamw_step(params, grads, opt)
            losses.append(out.ce * len(idx))
        if history is not None:
            history.append(float(np.sum(losses) / len(train)))
    return params


def queue_capacity(config, n_train):
    return config.queue_capacity or min(n_train, 8192)


def init_queue(momentum, train, config):
    """Fill a queue with one momentum-encoder pass over the training set."""
    queue = MomentumQueue(queue_capacity(config, len(train)))
    emb = embed_dataset(momentum, train)
    queue.push(train.ids, emb, train.coarse)
    return queue


@dataclass
class EarlyStopper:
    """Stops after ``patience`` consecutive scores without a strict improvement."""

    patience: int = 5
    best_score: float = -np.inf
    best_index: int = -1
    since_improvement: int = 0
    n_seen: int = 0

    def update(self, score):
        """Record ``score``; return True when training should stop."""
        if score > self.best_score:
            self.best_score = score
            self.best_index = self.n_seen
            self.since_improvement = 0
        else:
            self.since_improvement += 1
        self.n_seen += 1
        return self.since_improvement >= self.patience


@dataclass
class TrainState:
    params: object
    momentum: object
    opt: OptimizerState
    queue: MomentumQueue
    rng: np.random.Generator
    epoch: int = 0
    stopper: EarlyStopper = field(default_factory=EarlyStopper)
    history: list = field(default_factory=list)
    best_params: object = None


def train_epoch(state, train, config):
    """One pass of retrieve -> loss -> AdamW -> momentum update -> enqueue.

    Appends a record with the epoch's alpha and mean losses to
    ``state.history`` and advances ``state.epoch``.
    """
    alpha = alpha_for_epoch(state.epoch, config.alpha_schedule, config.alpha_period)
    sums = dict.fromkeys(LOSS_FIELDS, 0.0)
    log_base = 0.0
    for idx in _batches(len(train), config.batch_size, state.rng):
        snap = state.queue.snapshot()
        out, grads, _ = batch_objective(state.params, train.features[idx], train.coarse[idx],
                                        train.ids[idx], snap, state.epoch, config,
                                        need_grad=True)
        for f in LOSS_FIELDS:
            sums[f] += getattr(out, f) * len(idx)
        log_base = out.log_base
        state.params, state.opt = adamw_step(state.params, grads, state.opt)
        state.momentum = momentum_update(state.momentum, state.params, config.m)
        state.queue.push(train.ids[idx], encode(state.momentum, train.features[idx]),
                         train.coarse[idx])
    record = {"epoch": state.epoch, "phase": "train", "alpha": alpha}
    record.update({f: sums[f] / len(train) for f in LOSS_FIELDS})
    record["log_base"] = log_base
    record["base"] = float(np.exp(state.params.b_raw))
    state.history.append(record)
    state.epoch += 1
    return state


def clustering_silhouette(params, train, config, seed_name="silhouette"):
    emb = embed_dataset(params, train)
    if config.silhouette_sample and config.silhouette_sample < len(emb):
        rng = rng_stream(config.seed, seed_name)
        emb = emb[rng.choice(len(emb), config.silhouette_sample, replace=False)]
    labels = kmeans(emb, config.K, seed=config.seed).assignments
    return silhouette(emb, labels)


@dataclass
class FitResult:
    params: object
    history: list
    best_epoch: int
    pretrained: object
    final_params: object


def _write_history(run_dir, history):
    with open(os.path.join(run_dir, "history.jsonl"), "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def fit(train, config, run_dir=None):
    """Full pipeline: pretrain, then iterate train epochs with silhouette stopping.

    Returns the parameters of the epoch with the highest silhouette (the
    pretrained encoder when no training epoch runs).
    """
    pre_hist = []
    params = pretrain(train, config, history=pre_hist)
    pretrained = params.copy()
    sil0 = clustering_silhouette(params, train, config)
    history = [{"epoch": -1, "phase": "pretrain", "ce": pre_hist[-1] if pre_hist else None,
                "silhouette": sil0}]
    if run_dir is not None:
        os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
        with open(os.path.join(run_dir, "config.json"), "w") as fh:
            json.dump({"config": config.to_dict(), "config_hash": config.config_hash()}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")

    best_epoch = -1
    best = params
    if config.objective != "pretrain" and config.train_epochs > 0:
        frozen = () if config.fix_base is None and not config.no_kl_weight and \
            config.objective == "star" else ("b_raw",)
        momentum = params.momentum_copy()
        state = TrainState(params=params, momentum=momentum, opt=_optimizer(config, frozen),
                           queue=init_queue(momentum, train, config),
                           rng=rng_stream(config.seed, "train-shuffle"),
                           stopper=EarlyStopper(config.patience))
        while state.epoch < config.train_epochs:
            state = train_epoch(state, train, config)
            sil = clustering_silhouette(state.params, train, config)
            rec = state.history[-1]
            rec["silhouette"] = sil
            stop = state.stopper.update(sil)
            if state.stopper.best_index == state.stopper.n_seen - 1:
                state.best_params = state.params.copy()
            log.info("epoch %d alpha=%g total=%.4f silhouette=%.4f", rec["epoch"], rec["alpha"],
                     rec["total"], sil)
            if stop:
                break
        history.extend(state.history)
        best = state.best_params
        best_epoch = state.stopper.best_index
        params = state.params

    if run_dir is not None:
        _write_history(run_dir, history)
        h = config.config_hash()
        save_checkpoint(os.path.join(run_dir, "checkpoints", "best.npz"), best,
                        epoch=best_epoch, config_hash=h)
        save_checkpoint(os.path.join(run_dir, "checkpoints", "final.npz"), params,
                        epoch=len(history) - 2, config_hash=h)
    return FitResult(best, history, best_epoch, pretrained, params)
