"""The four trainers behind one interface, with per-step loss tracing.

* ``saros_b``  -- sequential block updates per user with b/B gating: a
  user's updates are rolled back when too few blocks formed (t <= b), and
  no more than B+1 blocks are processed (the literal loop bound).
* ``saros_m``  -- same block schedule, heavy-ball momentum, no gating.
* ``bpr``      -- SGD over uniformly sampled (user, positive, negative)
  triplets.
* ``bpr_batch`` -- one full-gradient step of the user-averaged ranking
  loss per epoch.

Training is strictly sequential: update order is part of the semantics.
All randomness (init, triplet sampling, loss subsampling) derives from
``config.seed``, so a repeated run is bitwise-identical.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .blocks import PackedBlocks, pack_sequences, segment_dataset
from .core import DataError, ModelParams, TrainConfig, init_params
from .ingest import TRAIN, Dataset
from .loss import dataset_loss_and_grad, pos_neg_by_user, subsample_pair_loss

TRAINER_KINDS = ("saros_b", "saros_m", "bpr", "bpr_batch")

TRACE_MAX_PAIRS = 100_000
_BPR_CHUNK = 65536


class NumericError(FloatingPointError):
    """A parameter became non-finite during training."""

    def __init__(self, trainer, epoch, where):
        super().__init__(f"{trainer}: non-finite parameter at epoch {epoch}, {where}")
        self.trainer = trainer
        self.epoch = epoch
        self.where = where


@dataclass
class MomentumState:
    """Heavy-ball velocity, same shape as the parameters, zero-initialized."""

    velocity_user: np.ndarray
    velocity_item: np.ndarray

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "MomentumState":
        return cls(np.zeros_like(params.user_embeddings), np.zeros_like(params.item_embeddings))


@dataclass
class TrainTrace:
    """Sampled training-loss curve plus run provenance.

    Entries are (wall_clock_seconds, epoch, updates_done, train_loss);
    seconds and updates are non-decreasing.
    """

    trainer: str
    config_hash: str
    seed: int
    entries: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.entries[-1][3]

    @property
    def initial_loss(self) -> float:
        return self.entries[0][3]

    @property
    def total_updates(self) -> int:
        return self.entries[-1][2]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seconds", "epoch", "updates", "loss"])
            for sec, epoch, updates, loss in self.entries:
                w.writerow([f"{sec:.6f}", epoch, updates, repr(loss)])

    @staticmethod
    def read_csv(path) -> list:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["seconds", "epoch", "updates", "loss"]:
            raise DataError(f"{path}: not a trace CSV (bad header)")
        return [(float(s), int(e), int(u), float(l)) for s, e, u, l in rows[1:]]


class _Tracer:
    """Appends a loss sample every `period` updates, plus start/end points."""

    def __init__(self, eval_fn, period):
        if period is not None and period < 1:
            raise DataError(f"trace period must be >= 1, got {period}")
        self._eval = eval_fn
        self._period = period
        self._next = period
        self._t0 = time.perf_counter()
        self.entries = []

    def _record(self, epoch, updates):
        loss = self._eval()
        self.entries.append((time.perf_counter() - self._t0, int(epoch), int(updates), loss))

    def start(self):
        self._record(0, 0)

    def until_due(self, updates) -> int | None:
        return None if self._period is None else max(1, self._next - updates)

    def maybe(self, epoch, updates):
        if self._period is not None and updates >= self._next:
            self._record(epoch, updates)
            self._next = (updates // self._period + 1) * self._period

    def finish(self, epoch, updates):
        if len(self.entries) <= 1 or self.entries[-1][2] != updates:
            self._record(epoch, updates)


def _work_params(dataset, config, params):
    """Fresh or copied parameters as C-contiguous float64 (never mutates input)."""
    if params is None:
        params = init_params(dataset.n_users, dataset.n_items, config)
    else:
        if params.n_users != dataset.n_users or params.n_items != dataset.n_items:
            raise DataError("params shape does not match the dataset")
        params = ModelParams(
            np.ascontiguousarray(params.user_embeddings, dtype=np.float64).copy(),
            np.ascontiguousarray(params.item_embeddings, dtype=np.float64).copy(),
        )
    return params


def _train_eval_fn(params, dataset, config):
    csr = pos_neg_by_user(dataset, TRAIN)
    seed = [config.seed, 2]

    def _eval():
        return subsample_pair_loss(params, csr, config.lam, TRACE_MAX_PAIRS, seed)

    return _eval


def _effective_eta(config: TrainConfig, n_users: int) -> float:
    if config.eta_over_sqrt_n:
        return config.eta / float(np.sqrt(n_users))
    return config.eta


def _saros_loop(dataset, config, *, momentum, params, packed, trace_period, state):
    config.validate()
    params = _work_params(dataset, config, params)
    if packed is None:
        packed = pack_sequences(segment_dataset(dataset))
    U, I = params.user_embeddings, params.item_embeddings
    trainer = "saros_m" if momentum else "saros_b"
    if momentum:
        if state is None:
            state = MomentumState.zeros_like(params)
        VU, VI = state.velocity_user, state.velocity_item
    eta = _effective_eta(config, dataset.n_users)
    tracer = _Tracer(_train_eval_fn(params, dataset, config), trace_period)
    tracer.start()
    ubp = packed.user_block_ptr
    b, B = config.b, config.B
    updates = 0
    for epoch in range(1, config.epochs + 1):
        for idx in range(len(packed.users)):
            u = int(packed.users[idx])
            lo, hi = int(ubp[idx]), int(ubp[idx + 1])
            n_blocks = hi - lo
            if momentum:
                n_proc = n_blocks
            else:
                n_proc = n_blocks if B is None else min(n_blocks, B + 1)
                if n_proc <= b:
                    # Rollback branch: every update of this user would be
                    # restored bitwise, so none is applied.
                    continue
            if momentum:
                rc = kernels.user_block_pass_momentum(
                    U, I, VU, VI, u,
                    packed.neg_items, packed.pos_items,
                    packed.block_neg_ptr, packed.block_pos_ptr,
                    lo, lo + n_proc, config.alpha, config.mu, config.lam,
                )
            else:
                rc = kernels.user_block_pass_sgd(
                    U, I, u,
                    packed.neg_items, packed.pos_items,
                    packed.block_neg_ptr, packed.block_pos_ptr,
                    lo, lo + n_proc, eta, config.lam,
                )
            if rc >= 0:
                raise NumericError(trainer, epoch, f"user {u}, block {rc - lo} (update {updates + rc - lo})")
            updates += n_proc
            tracer.maybe(epoch, updates)
    tracer.finish(config.epochs, updates)
    return params, TrainTrace(trainer, config.hash(), config.seed, tracer.entries)


def train_saros_b(dataset: Dataset, config: TrainConfig, *, params=None, packed: PackedBlocks | None = None, trace_period=None):
    """Block-sequential SGD with b/B gating (threshold-gated variant)."""
    return _saros_loop(dataset, config, momentum=False, params=params, packed=packed, trace_period=trace_period, state=None)


def train_saros_m(dataset: Dataset, config: TrainConfig, *, params=None, packed: PackedBlocks | None = None, trace_period=None, state: MomentumState | None = None):
    """Block-sequential heavy-ball momentum, no gating.

    v <- mu * v + (1 - mu) * block_gradient;  w <- w - alpha * v,
    applied to the rows each block touches.  The velocity is one global
    state carried across blocks, users and epochs; pass ``state`` to
    continue an earlier run (it is updated in place).
    """
    return _saros_loop(dataset, config, momentum=True, params=params, packed=packed, trace_period=trace_period, state=state)


def train_bpr(dataset: Dataset, config: TrainConfig, n_steps: int | None = None, *, params=None, trace_period=None):
    """SGD over bootstrap-sampled (user, positive, negative) triplets.

    Per step: a user uniform over users with both feedback classes in
    train, then a positive and a negative item uniform over that user's
    train items.  Defaults to epochs * |train interactions| steps.
    """
    config.validate()
    params = _work_params(dataset, config, params)
    U, I = params.user_embeddings, params.item_embeddings
    pos_ptr, pos_items, neg_ptr, neg_items = pos_neg_by_user(dataset, TRAIN)
    pos_counts = np.diff(pos_ptr)
    neg_counts = np.diff(neg_ptr)
    eligible = np.nonzero((pos_counts > 0) & (neg_counts > 0))[0].astype(np.int64)
    if len(eligible) == 0:
        raise DataError("bpr: no user has both positive and negative train items")
    n_train = int((dataset.split == TRAIN).sum())
    if n_steps is None:
        n_steps = config.bpr_steps if config.bpr_steps is not None else config.epochs * n_train
    if n_steps < 0:
        raise DataError(f"bpr: n_steps must be >= 0, got {n_steps}")

    # one independent stream per draw kind, so the sampled triplet sequence
    # does not depend on how steps are chunked for tracing
    eta = _effective_eta(config, dataset.n_users)
    rng_user = np.random.default_rng([config.seed, 1, 0])
    rng_pos = np.random.default_rng([config.seed, 1, 1])
    rng_neg = np.random.default_rng([config.seed, 1, 2])
    tracer = _Tracer(_train_eval_fn(params, dataset, config), trace_period)
    tracer.start()
    done = 0
    while done < n_steps:
        chunk = min(n_steps - done, _BPR_CHUNK)
        due = tracer.until_due(done)
        if due is not None:
            chunk = min(chunk, due)
        users = eligible[rng_user.integers(0, len(eligible), size=chunk)]
        i = pos_items[pos_ptr[users] + rng_pos.integers(0, pos_counts[users])]
        j = neg_items[neg_ptr[users] + rng_neg.integers(0, neg_counts[users])]
        rc = kernels.bpr_sgd_steps(U, I, users, i, j, eta, config.lam)
        epoch = (done + chunk) // max(1, n_train)
        if rc >= 0:
            raise NumericError("bpr", epoch, f"step {done + rc}")
        done += chunk
        tracer.maybe(epoch, done)
    tracer.finish(n_steps // max(1, n_train), done)
    return params, TrainTrace("bpr", config.hash(), config.seed, tracer.entries)


def train_bpr_batch(dataset: Dataset, config: TrainConfig, *, params=None, trace_period=None):
    """Full-gradient descent on the user-averaged ranking loss, one step per epoch."""
    config.validate()
    params = _work_params(dataset, config, params)
    U, I = params.user_embeddings, params.item_embeddings
    eta = _effective_eta(config, dataset.n_users)
    tracer = _Tracer(_train_eval_fn(params, dataset, config), trace_period)
    tracer.start()
    for epoch in range(1, config.epochs + 1):
        _, grad_U, grad_I = dataset_loss_and_grad(params, dataset, TRAIN, config.lam)
        U -= eta * grad_U
        I -= eta * grad_I
        if not params.all_finite():
            raise NumericError("bpr_batch", epoch, "full-gradient step")
        tracer.maybe(epoch, epoch)
    tracer.finish(config.epochs, config.epochs)
    return params, TrainTrace("bpr_batch", config.hash(), config.seed, tracer.entries)


def train(dataset: Dataset, trainer: str, config: TrainConfig, **kwargs):
    """Dispatch to one of the four trainers by name."""
    if trainer == "saros_b":
        return train_saros_b(dataset, config, **kwargs)
    if trainer == "saros_m":
        return train_saros_m(dataset, config, **kwargs)
    if trainer == "bpr":
        return train_bpr(dataset, config, **kwargs)
    if trainer == "bpr_batch":
        return train_bpr_batch(dataset, config, **kwargs)
    raise DataError(f"unknown trainer {trainer!r}; expected one of {TRAINER_KINDS}")
