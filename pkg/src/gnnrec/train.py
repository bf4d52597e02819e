"""BPR training loop with warm-up batch schedule and scaled learning rate.

Each step runs a full-graph forward (single-machine mode trains the whole
graph; the batch only selects which tuples contribute to the loss), gathers
the batch scores, and backpropagates through the kernel stack.  The first
``warmup_epochs`` epochs use ``large_batch / warmup_divisor`` tuples per
step; the learning rate follows the batch linearly from its base setting.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .models import model_backward, model_forward, score_pairs


class TrainError(Exception):
    pass


@dataclass
class TrainConfig:
    base_batch: int = 1000
    base_lr: float = 1e-4
    large_batch: int = 150_000
    warmup_epochs: int = 2
    warmup_divisor: int = 10
    epochs: int = 100
    neg_per_pos: int = 1
    seed: int = 0
    l2_coeff: float = 1e-4
    optimizer: str = "adam"          # "adam" | "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_scaling: str = "linear"       # "linear" | "sqrt"
    eval_every: int = 0              # 0 = only at the end
    checkpoint_every: int = 0        # epochs; 0 = only at the end

    def __post_init__(self):
        if self.large_batch < self.base_batch:
            raise ValueError("large_batch must be >= base_batch")
        if self.warmup_divisor < 1:
            raise ValueError("warmup_divisor must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer: {self.optimizer!r}")
        if self.lr_scaling not in ("linear", "sqrt"):
            raise ValueError(f"unknown lr_scaling: {self.lr_scaling!r}")


@dataclass
class BprBatch:
    """Parallel (user, interacted item, un-interacted item) id arrays."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self):
        return self.users.size


def sample_bpr_batch(train, size, rng):
    """Uniform positives over training edges; negatives rejection-sampled
    uniformly over items until un-interacted.  Users adjacent to every item
    are resampled; a graph where all users are complete cannot produce
    negatives and is an error.
    """
    if train.num_edges == 0:
        raise TrainError("cannot sample from a graph without edges")
    degrees = train.degrees("user")
    if np.all(degrees[degrees > 0] >= train.num_items):
        raise TrainError("every interacting user is adjacent to all items; "
                         "no negative items exist")
    edge_idx = rng.integers(0, train.num_edges, size=size)
    users = train.edge_users[edge_idx]
    pos_items = train.edge_items[edge_idx]
    neg_items = np.empty(size, dtype=np.int64)
    indptr, indices = train.u2i_indptr, train.u2i_indices
    for k in range(size):
        u = users[k]
        row = indices[indptr[u]:indptr[u + 1]]
        while row.size >= train.num_items:
            # user interacted with everything: resample the positive tuple
            e = int(rng.integers(0, train.num_edges))
            u = int(train.edge_users[e])
            users[k] = u
            pos_items[k] = train.edge_items[e]
            row = indices[indptr[u]:indptr[u + 1]]
        while True:
            cand = int(rng.integers(0, train.num_items))
            pos = np.searchsorted(row, cand)
            if pos >= row.size or row[pos] != cand:
                neg_items[k] = cand
                break
    return BprBatch(users, pos_items, neg_items)


def bpr_loss(pos_scores, neg_scores, params=None, l2_coeff=0.0):
    """Mean -ln(sigmoid(s_pos - s_neg)) plus l2_coeff * ||params||^2.

    Returns (loss, grad w.r.t. pos_scores, grad w.r.t. neg_scores); the l2
    term's parameter gradient (2*l2*param) is applied by the optimizer step.
    """
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    if pos_scores.shape != neg_scores.shape:
        raise ValueError("score arrays must have equal length")
    if not (np.isfinite(pos_scores).all() and np.isfinite(neg_scores).all()):
        raise TrainError("non-finite scores in bpr_loss")
    margin = pos_scores - neg_scores
    # -ln(sigmoid(m)) = softplus(-m), computed stably
    loss = float(np.mean(np.logaddexp(0.0, -margin)))
    if params is not None and l2_coeff:
        loss += l2_coeff * sum(float(np.sum(a.astype(np.float64) ** 2))
                               for a in params.all_arrays())
    n = margin.size
    sig_neg = np.exp(-np.logaddexp(0.0, margin))  # sigmoid(-margin), stable
    d_pos = -sig_neg / n
    d_neg = sig_neg / n
    return loss, d_pos, d_neg


def scaled_lr(base_lr, base_batch, batch, rule="linear"):
    """Linear rule: lr grows proportionally with the batch; the square-root
    rule is kept for comparison."""
    if base_lr <= 0 or base_batch <= 0 or batch <= 0:
        raise ValueError("scaled_lr inputs must be positive")
    ratio = batch / base_batch
    if rule == "linear":
        return base_lr * ratio
    if rule == "sqrt":
        return base_lr * math.sqrt(ratio)
    raise ValueError(f"unknown lr scaling rule: {rule!r}")


def batch_schedule(config, epoch):
    """Warm-up: large_batch / warmup_divisor for the first warmup_epochs
    epochs, the large batch afterwards."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < config.warmup_epochs:
        return max(1, config.large_batch // config.warmup_divisor)
    return config.large_batch


class _Adam:
    def __init__(self, arrays, beta1, beta2, eps):
        self.m = [np.zeros_like(a, dtype=np.float64) for a in arrays]
        self.v = [np.zeros_like(a, dtype=np.float64) for a in arrays]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, arrays, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correct = math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            g = g.astype(np.float64, copy=False)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            a -= (lr * correct * m / (np.sqrt(v) + self.eps)).astype(a.dtype)


class _Sgd:
    def __init__(self, arrays, *_):
        pass

    def step(self, arrays, grads, lr):
        for a, g in zip(arrays, grads):
            a -= (lr * g).astype(a.dtype)


@dataclass
class EpochLog:
    epoch: int
    batch: int
    lr: float
    loss: float
    steps: int
    recall: float | None = None
    seconds: float = 0.0


@dataclass
class FitResult:
    params: object
    history: list[EpochLog] = field(default_factory=list)

    def losses(self):
        return [h.loss for h in self.history]

    def write_metrics(self, path, k=20):
        with open(path, "w") as f:
            f.write("epoch,step,batch,lr,loss,recall@{}\n".format(k))
            for h in self.history:
                recall = "" if h.recall is None else f"{h.recall:.6f}"
                f.write(f"{h.epoch},{h.steps},{h.batch},{h.lr:.8g},"
                        f"{h.loss:.8f},{recall}\n")


def fit(train_graph, params, model_config, train_config, opts=None,
        eval_fn=None, checkpoint_fn=None, log_fn=None):
    """Train in place and return the params plus a per-epoch log.

    ``eval_fn(params) -> recall`` is called per ``eval_every`` epochs;
    ``checkpoint_fn(params, epoch)`` per ``checkpoint_every``.  Deterministic
    given the seed and fixed worker counts.
    """
    cfg = train_config
    rng = np.random.default_rng(cfg.seed)
    arrays = params.all_arrays()
    opt_cls = _Adam if cfg.optimizer == "adam" else _Sgd
    optimizer = opt_cls(arrays, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    history = []
    for epoch in range(cfg.epochs):
        t_epoch = time.perf_counter()
        batch = min(batch_schedule(cfg, epoch),
                    train_graph.num_edges * cfg.neg_per_pos)
        lr = scaled_lr(cfg.base_lr, cfg.base_batch, batch, cfg.lr_scaling)
        steps = math.ceil(train_graph.num_edges * cfg.neg_per_pos / batch)
        epoch_loss = 0.0
        for _ in range(steps):
            tuples = sample_bpr_batch(train_graph, batch, rng)
            fu, fi, caches = model_forward(train_graph, params, model_config, opts)
            pos = score_pairs(fu, fi, tuples.users, tuples.pos_items)
            neg = score_pairs(fu, fi, tuples.users, tuples.neg_items)
            loss, d_pos, d_neg = bpr_loss(pos, neg, params, cfg.l2_coeff)
            if not math.isfinite(loss):
                raise TrainError(
                    f"non-finite loss at epoch {epoch} (batch {batch}, lr {lr:g}); "
                    "reduce the learning rate or batch size")
            grad_fu = np.zeros_like(fu)
            grad_fi = np.zeros_like(fi)
            d_pos = d_pos.astype(fu.dtype)
            d_neg = d_neg.astype(fu.dtype)
            np.add.at(grad_fu, tuples.users,
                      d_pos[:, None] * fi[tuples.pos_items]
                      + d_neg[:, None] * fi[tuples.neg_items])
            np.add.at(grad_fi, tuples.pos_items, d_pos[:, None] * fu[tuples.users])
            np.add.at(grad_fi, tuples.neg_items, d_neg[:, None] * fu[tuples.users])
            grads = model_backward(train_graph, params, model_config, caches,
                                   grad_fu, grad_fi, opts)
            grad_arrays = grads.all_arrays()
            if cfg.l2_coeff:
                for g, a in zip(grad_arrays, arrays):
                    g += (2.0 * cfg.l2_coeff) * a
            optimizer.step(arrays, grad_arrays, lr)
            epoch_loss += loss
        recall = None
        if eval_fn is not None and cfg.eval_every and \
                (epoch + 1) % cfg.eval_every == 0:
            recall = eval_fn(params)
        if checkpoint_fn is not None and cfg.checkpoint_every and \
                (epoch + 1) % cfg.checkpoint_every == 0:
            checkpoint_fn(params, epoch)
        entry = EpochLog(epoch=epoch, batch=batch, lr=lr,
                         loss=epoch_loss / max(steps, 1), steps=steps,
                         recall=recall,
                         seconds=time.perf_counter() - t_epoch)
        history.append(entry)
        if log_fn is not None:
            log_fn(entry)
    params.check_finite()
    return FitResult(params=params, history=history)
