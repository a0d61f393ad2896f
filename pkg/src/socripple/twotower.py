"""Two-tower embeddings trained with an in-batch sampled softmax.

Affinity is a raw dot product. For a batch of positive pairs the item of
every other pair acts as a negative, and the loss is the summed negative
log-likelihood of each positive against its row of in-batch scores.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .engagement import DEFAULT_POSITIVE, EventLog


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    d: int = 32
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 0.05
    init_scale: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        for name in ("d", "epochs", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise TrainingError(f"{name} must be >= 1")
        if not self.learning_rate > 0 or not self.init_scale > 0:
            raise TrainingError("learning_rate and init_scale must be positive")


@dataclass
class ModelParams:
    user_table: np.ndarray
    item_table: np.ndarray
    seed: int = 0
    history: list = field(default_factory=list)

    @property
    def d(self) -> int:
        return int(self.user_table.shape[1])

    @property
    def num_users(self) -> int:
        return int(self.user_table.shape[0])

    @property
    def num_items(self) -> int:
        return int(self.item_table.shape[0])

    @classmethod
    def init(cls, num_users: int, num_items: int, d: int, init_scale: float = 0.1, seed: int = 0):
        rng = np.random.default_rng(seed)
        u = rng.uniform(-init_scale, init_scale, size=(num_users, d))
        i = rng.uniform(-init_scale, init_scale, size=(num_items, d))
        return cls(u, i, seed)

    def save(self, path) -> None:
        np.savez(path, user_table=self.user_table, item_table=self.item_table,
                 seed=np.int64(self.seed), history=np.asarray(self.history, np.float64))

    @classmethod
    def load(cls, path) -> "ModelParams":
        with np.load(path) as z:
            return cls(z["user_table"].copy(), z["item_table"].copy(), int(z["seed"]),
                       z["history"].tolist())


@dataclass
class BatchGradient:
    """Gradient rows for the users and items touched by one batch."""

    user_ids: np.ndarray
    user_rows: np.ndarray
    item_ids: np.ndarray
    item_rows: np.ndarray

    def dense(self, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
        gu = np.zeros_like(params.user_table)
        gi = np.zeros_like(params.item_table)
        gu[self.user_ids] = self.user_rows
        gi[self.item_ids] = self.item_rows
        return gu, gi


def affinity(e_u, e_i) -> float:
    e_u = np.asarray(e_u, np.float64)
    e_i = np.asarray(e_i, np.float64)
    if e_u.shape != e_i.shape:
        raise ValueError(f"dimension mismatch: {e_u.shape} vs {e_i.shape}")
    return float(e_u @ e_i)


def in_batch_probability(batch_scores, row: int) -> float:
    """Softmax probability of the diagonal (positive) entry of ``row``."""
    s = np.asarray(batch_scores, np.float64)[row]
    z = s - s.max()
    ez = np.exp(z)
    return float(ez[row] / ez.sum())


def _batch_arrays(params: ModelParams, batch):
    pairs = np.asarray(batch, np.int64).reshape(-1, 2)
    if pairs.shape[0] < 1:
        raise ValueError("empty batch")
    users, items = pairs[:, 0], pairs[:, 1]
    if users.min() < 0 or users.max() >= params.num_users:
        raise KeyError("batch references an unknown user id")
    if items.min() < 0 or items.max() >= params.num_items:
        raise KeyError("batch references an unknown item id")
    return users, items


def batch_loss(params: ModelParams, batch) -> float:
    users, items = _batch_arrays(params, batch)
    loss, _, _ = kernels.inbatch_loss_grad(params.user_table[users], params.item_table[items])
    return float(loss)


def batch_gradient(params: ModelParams, batch) -> BatchGradient:
    users, items = _batch_arrays(params, batch)
    _, gu, gi = kernels.inbatch_loss_grad(params.user_table[users], params.item_table[items])
    uid, uinv = np.unique(users, return_inverse=True)
    iid, iinv = np.unique(items, return_inverse=True)
    urows = np.zeros((uid.size, params.d))
    irows = np.zeros((iid.size, params.d))
    np.add.at(urows, uinv, gu)
    np.add.at(irows, iinv, gi)
    return BatchGradient(uid, urows, iid, irows)


def train(events, config: TrainConfig = TrainConfig(), num_users: int | None = None,
          num_items: int | None = None, positive=DEFAULT_POSITIVE) -> ModelParams:
    """Fit user and item tables with plain SGD on shuffled mini-batches.

    ``events`` must all carry positive signals. Output is bit-identical for
    identical inputs and seed.
    """
    config.validate()
    log = EventLog.coerce(events)
    if len(log) == 0:
        raise TrainingError("no training events")
    if not log.positive_mask(positive).all():
        raise TrainingError("training events must all be positive signals")
    nu = int(num_users if num_users is not None else log.user.max() + 1)
    ni = int(num_items if num_items is not None else log.item.max() + 1)
    params = ModelParams.init(nu, ni, config.d, config.init_scale, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    users = np.ascontiguousarray(log.user)
    items = np.ascontiguousarray(log.item)
    for _ in range(config.epochs):
        order = rng.permutation(len(log)).astype(np.int64)
        losses = kernels.sgd_epoch(params.user_table, params.item_table, users, items,
                                   order, int(config.batch_size), float(config.learning_rate))
        params.history.append(float(np.mean(losses)))
    if not (np.isfinite(params.user_table).all() and np.isfinite(params.item_table).all()):
        raise TrainingError("training diverged (non-finite embeddings); lower the learning rate")
    return params


def export_user_embeddings(params: ModelParams) -> dict[int, np.ndarray]:
    return {u: params.user_table[u].copy() for u in range(params.num_users)}


def save_embeddings(path, embeddings: dict[int, np.ndarray]) -> None:
    """Text table: ``d=<dim> n=<count>`` header then ``<id> <v0> ... <vd-1>`` rows."""
    ids = sorted(embeddings)
    d = len(embeddings[ids[0]]) if ids else 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"d={d} n={len(ids)}\n")
        for k in ids:
            fh.write(str(k) + " " + " ".join(repr(float(x)) for x in embeddings[k]) + "\n")


def load_embeddings(path) -> dict[int, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        try:
            meta = dict(h.split("=", 1) for h in header)
            d, n = int(meta["d"]), int(meta["n"])
        except (ValueError, KeyError):
            raise ValueError(f"{path}: bad header {header!r}") from None
        out = {}
        for lineno, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d + 1:
                raise ValueError(f"{path}:{lineno}: expected {d + 1} fields, got {len(parts)}")
            out[int(parts[0])] = np.array([float(x) for x in parts[1:]])
    if len(out) != n:
        raise ValueError(f"{path}: header says n={n}, found {len(out)} rows")
    return out
