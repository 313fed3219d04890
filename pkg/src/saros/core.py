"""Shared domain types and seeded randomness.

Everything stochastic in this package draws from an explicitly seeded
``numpy.random.Generator``, so identical (inputs, seed) always produce
identical outputs, including full training runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np


class ConfigError(ValueError):
    """A TrainConfig field violates its constraint."""


class DataError(ValueError):
    """Input data is structurally unusable (empty, inconsistent, ...)."""


@dataclass(frozen=True)
class Interaction:
    """One (user, item) event with binary feedback, +1 click / -1 no-click."""

    user: int
    item: int
    feedback: int  # +1 or -1
    timestamp: int

    def __post_init__(self):
        if self.feedback not in (-1, 1):
            raise DataError(f"feedback must be +1 or -1, got {self.feedback}")


class IdMap:
    """Bidirectional map between raw identifier strings and dense indices.

    Dense indices are contiguous, zero-based and assigned in the order ids
    are first added, so the mapping is deterministic for a fixed input order.
    """

    def __init__(self, raw_ids=()):
        self._raw = []
        self._dense = {}
        for r in raw_ids:
            self.add(r)

    def add(self, raw: str) -> int:
        idx = self._dense.get(raw)
        if idx is None:
            idx = len(self._raw)
            self._dense[raw] = idx
            self._raw.append(raw)
        return idx

    def to_dense(self, raw: str) -> int:
        return self._dense[raw]

    def to_raw(self, dense: int) -> str:
        return self._raw[dense]

    def __len__(self):
        return len(self._raw)

    def __contains__(self, raw):
        return raw in self._dense

    @property
    def raw_ids(self) -> list:
        return list(self._raw)


@dataclass
class ModelParams:
    """Latent factor matrices: users N x k and items M x k, float64."""

    user_embeddings: np.ndarray
    item_embeddings: np.ndarray

    @property
    def n_users(self) -> int:
        return self.user_embeddings.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_embeddings.shape[0]

    @property
    def k(self) -> int:
        return self.user_embeddings.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.user_embeddings.copy(), self.item_embeddings.copy())

    def all_finite(self) -> bool:
        return bool(
            np.isfinite(self.user_embeddings).all()
            and np.isfinite(self.item_embeddings).all()
        )

    def score(self, user: int, items) -> np.ndarray:
        """Dot-product scores of ``items`` for one user."""
        return self.item_embeddings[items] @ self.user_embeddings[user]


@dataclass
class TrainConfig:
    """Hyperparameters shared by all trainers.

    ``b``/``B`` gate the block-thresholded trainer only; ``alpha``/``mu``
    drive the momentum variant only. ``B=None`` means unbounded.
    """

    eta: float = 0.05  # SGD learning rate
    lam: float = 0.0  # L2 regularization weight inside each triplet loss
    k: int = 16  # latent dimension
    epochs: int = 10
    b: int = 0  # lower block-count threshold (updates rolled back if t <= b)
    B: int | None = None  # upper block-count threshold (None = unbounded)
    alpha: float = 0.05  # momentum step size
    mu: float = 0.9  # momentum coefficient
    seed: int = 42
    init_scale: float = 0.1  # stddev of Gaussian parameter init
    bpr_steps: int | None = None  # stochastic-BPR step count (None = epochs * |train|)
    eta_over_sqrt_n: bool = False  # treat eta as c and step with c / sqrt(n_users)

    def validate(self) -> "TrainConfig":
        # eta/alpha = 0 is allowed: a zero step size freezes the parameters,
        # which the degenerate-config tests rely on.
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.b < 0:
            raise ConfigError(f"b must be >= 0, got {self.b}")
        if self.B is not None and self.B < self.b:
            raise ConfigError(f"B must be >= b, got B={self.B} < b={self.b}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 <= self.mu < 1:
            raise ConfigError(f"mu must be in [0, 1), got {self.mu}")
        if self.init_scale < 0:
            raise ConfigError(f"init_scale must be >= 0, got {self.init_scale}")
        if self.bpr_steps is not None and self.bpr_steps < 0:
            raise ConfigError(f"bpr_steps must be >= 0, got {self.bpr_steps}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})

    def hash(self) -> str:
        """Stable 16-hex-digit digest of the effective configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def init_params(n_users: int, n_items: int, config: TrainConfig, seed: int | None = None) -> ModelParams:
    """Draw fresh embedding matrices, i.i.d. Gaussian(0, init_scale^2).

    Two calls with equal arguments return bitwise-identical matrices; the
    user matrix is drawn before the item matrix from one PCG64 stream.
    """
    if n_users < 1 or n_items < 1:
        raise ConfigError(f"need n_users >= 1 and n_items >= 1, got {n_users}, {n_items}")
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    user = rng.normal(0.0, config.init_scale, size=(n_users, config.k))
    item = rng.normal(0.0, config.init_scale, size=(n_items, config.k))
    return ModelParams(user, item)
