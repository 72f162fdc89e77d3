"""Run configuration and seeded random streams."""

import dataclasses
import hashlib
import json
import math
import zlib
from dataclasses import dataclass

import numpy as np

OBJECTIVES = ("pretrain", "down", "star")


class ConfigError(ValueError):
    """A configuration value violates its constraints."""


@dataclass(frozen=True)
class StarConfig:
    """All hyperparameters of one training run.

    Defaults follow the published settings where they exist (temperature,
    momentum, batch size, optimizer, epoch caps, alpha schedule). Fields the
    method leaves open (``gamma``, ``base_init``, ``queue_capacity``) carry
    documented choices.
    """

    K: int = 9
    M: int = 3
    d_in: int = 32
    hidden: tuple = (64,)
    d: int = 16
    objective: str = "star"
    tau: float = 0.07
    gamma: float = 1.0
    m: float = 0.99
    k: int = 50
    queue_capacity: int = 0  # 0 -> min(n_train, 8192)
    batch_size: int = 64
    lr: float = 5e-5
    weight_decay: float = 0.01
    clip: float = 1.0
    pretrain_epochs: int = 100
    train_epochs: int = 20
    patience: int = 5
    alpha_schedule: tuple = (150.0, 10.0, 5.0, 2.0)
    alpha_period: int = 5
    base_init: float = 10.0
    fix_base: float | None = None
    prob_temperature: float = 1.0
    no_ce: bool = False
    no_kl_loss: bool = False
    no_kl_weight: bool = False
    same_coarse_neighbors: bool = False
    renormalize_centroids: bool = True
    silhouette_sample: int = 0  # 0 -> full training set
    seed: int = 0

    def __post_init__(self):
        # lists from JSON become tuples so the config stays hashable
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "alpha_schedule", tuple(float(a) for a in self.alpha_schedule))
        self.validate()

    def validate(self):
        checks = [
            ("tau", self.tau > 0, "must be > 0"),
            ("gamma", self.gamma >= 0, "must be >= 0"),
            ("m", 0 <= self.m <= 1, "must lie in [0, 1]"),
            ("k", self.k >= 1, "must be >= 1"),
            ("M", self.M >= 1, "must be >= 1"),
            ("K", self.K >= self.M, "must be >= M"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("d_in", self.d_in >= 1, "must be >= 1"),
            ("d", self.d >= 1, "must be >= 1"),
            ("hidden", all(h >= 1 for h in self.hidden), "entries must be >= 1"),
            ("objective", self.objective in OBJECTIVES, f"must be one of {OBJECTIVES}"),
            ("lr", self.lr > 0, "must be > 0"),
            ("weight_decay", self.weight_decay >= 0, "must be >= 0"),
            ("clip", self.clip > 0, "must be > 0"),
            ("pretrain_epochs", self.pretrain_epochs >= 0, "must be >= 0"),
            ("train_epochs", self.train_epochs >= 0, "must be >= 0"),
            ("patience", self.patience >= 1, "must be >= 1"),
            ("alpha_schedule", len(self.alpha_schedule) >= 1
             and all(a > 0 for a in self.alpha_schedule), "needs positive entries"),
            ("alpha_period", self.alpha_period >= 1, "must be >= 1"),
            ("base_init", self.base_init > 0, "must be > 0"),
            ("fix_base", self.fix_base is None or self.fix_base > 0, "must be > 0"),
            ("prob_temperature", self.prob_temperature > 0, "must be > 0"),
            ("queue_capacity", self.queue_capacity >= 0, "must be >= 0"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(f"{name}={getattr(self, name)!r}: {msg}")

    @property
    def initial_log_base(self):
        return math.log(self.fix_base if self.fix_base is not None else self.base_init)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["hidden"] = list(self.hidden)
        out["alpha_schedule"] = list(self.alpha_schedule)
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def rng_stream(seed, name):
    """Independent generator for the named stream under one root seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])
