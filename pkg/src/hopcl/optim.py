"""Adam, the per-problem training loop with early stopping, and split
evaluation (accuracy, macro-F1, mean loss)."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .data import ProblemDataset
from .errors import ConfigError, DataError, DivergenceError, ShapeError
from .model import ModelState, forward_backward, _forward_impl
from .tensor import make_rng, softmax_cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 5
    dropout: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.patience < 1 or self.patience > self.max_epochs:
            raise ConfigError("need 1 <= patience <= max_epochs")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")


@dataclass
class AdamState:
    """First/second moment estimates per parameter plus the step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig) -> None:
    """One Adam update, in place on the parameter arrays."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape mismatch for {key}")
        m, v = state.m[key], state.v[key]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def macro_f1(labels, preds, n_classes: int) -> float:
    """Unweighted mean of per-class F1; absent classes count as 0."""
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    total = 0.0
    for c in range(n_classes):
        tp = float(np.sum((preds == c) & (labels == c)))
        fp = float(np.sum((preds == c) & (labels != c)))
        fn = float(np.sum((preds != c) & (labels == c)))
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        total += (2 * precision * recall / (precision + recall)
                  if precision + recall > 0 else 0.0)
    return total / n_classes


def _eval_parts(state: ModelState, samples, problem_id, adapter=None, head=None,
                chunk: int = 256):
    if not samples:
        raise DataError("cannot evaluate an empty split")
    loss_sum = 0.0
    preds = np.empty(len(samples), dtype=np.int64)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    for start in range(0, len(samples), chunk):
        part = samples[start:start + chunk]
        logits, _ = _forward_impl(state, part, problem_id, training=False,
                                  rng=None, dropout_rate=0.0, keep_cache=False,
                                  override=(adapter, head))
        loss, _ = softmax_cross_entropy(logits, labels[start:start + len(part)])
        loss_sum += loss * len(part)
        preds[start:start + len(part)] = np.argmax(logits, axis=1)
    n_classes = (head.n_classes if head is not None
                 else state._resolve(problem_id)[1].n_classes)
    accuracy = float(np.mean(preds == labels))
    return accuracy, macro_f1(labels, preds, n_classes), loss_sum / len(samples)


def evaluate(state: ModelState, samples, problem_id=None):
    """(accuracy, macro_f1, mean_loss) of a split under the routed model."""
    return _eval_parts(state, samples, problem_id)


def evaluate_with(state: ModelState, samples, adapter, head):
    """Evaluate with explicit parameters (used for not-yet-learned problems)."""
    return _eval_parts(state, samples, None, adapter=adapter, head=head)


def train_problem(state: ModelState, problem: ProblemDataset, cfg: TrainConfig):
    """Minimize the current problem's loss with Adam and early stopping.

    Shuffles per epoch with a seeded stream, tracks the best validation
    loss, stops after `patience` consecutive non-improving epochs, and
    restores the best checkpoint. Only the problem's routed parameters
    are updated. Returns the per-epoch history.
    """
    if not problem.train or not problem.val:
        raise DataError(f"problem {problem.name!r} has an empty train or val split")
    pid = problem.problem_id
    params = state.trainable(pid)  # raises RoutingError if not initialized
    adam = AdamState.for_params(params)
    shuffle_rng = make_rng(cfg.seed, "shuffle", pid)
    dropout_rng = make_rng(cfg.seed, "dropout", pid)

    best_loss = math.inf
    best_params = None
    bad_epochs = 0
    history = []
    n = len(problem.train)
    labels = np.array([s.label for s in problem.train], dtype=np.int64)

    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = [problem.train[i] for i in idx]
            loss, _, grads = forward_backward(
                state, batch, labels[idx], problem_id=pid, training=True,
                rng=dropout_rng, dropout_rate=cfg.dropout)
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite train loss at epoch {epoch}, batch start {start} "
                    f"(problem {problem.name!r}, lr={cfg.lr})")
            adam_step(params, grads, adam, cfg)
            loss_sum += loss * len(batch)
        val_acc, val_f1, val_loss = evaluate(state, problem.val, pid)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": loss_sum / n,
                        "val_loss": val_loss, "val_acc": val_acc})
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = {k: p.copy() for k, p in params.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    if best_params is not None:
        for key, p in params.items():
            p[...] = best_params[key]
    state.mark_trained(pid)
    return state, history


def history_lines(history) -> list[str]:
    """Structured-text rendering of a training history, one epoch per line."""
    import json

    return [json.dumps(h, sort_keys=True) for h in history]


def derive_train_config(cfg: TrainConfig, run_seed: int) -> TrainConfig:
    """Per-run copy of the config with a seed mixed from the run seed."""
    seq = np.random.SeedSequence([run_seed & 0xFFFFFFFFFFFFFFFF,
                                  cfg.seed & 0xFFFFFFFFFFFFFFFF])
    return dataclasses.replace(cfg, seed=int(seq.generate_state(1, np.uint64)[0]))
