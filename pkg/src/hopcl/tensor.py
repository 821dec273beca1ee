"""Dense numerical core: matrices, activations, loss, dropout, RNG.

Matrices are plain 2-D C-contiguous numpy arrays. Parameters are kept in
float32; loss and reduction accumulations run in float64. All operations
are pure functions of their inputs (plus an explicit Generator where
randomness is involved), so equal seeds give bit-identical results.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError, LabelError, ShapeError

# When enabled, library-produced outputs are checked for NaN/Inf.
_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


def _check_finite(x: np.ndarray, op: str) -> np.ndarray:
    if _debug_checks and not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return x


def as_matrix(x, dtype=np.float32) -> np.ndarray:
    """Coerce to a 2-D C-contiguous array of the given float dtype."""
    a = np.ascontiguousarray(x, dtype=dtype)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def make_rng(seed: int, *tags) -> np.random.Generator:
    """Seeded PCG64 generator; identical streams on every platform.

    Extra tags derive an independent child stream, so consumers can pull
    randomness in any order without coupling their streams.
    """
    ints = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for t in tags:
        if isinstance(t, str):
            h = hashlib.blake2b(t.encode("utf-8"), digest_size=8).digest()
            ints.append(int.from_bytes(h, "little"))
        else:
            ints.append(int(t) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(ints)))


def matmul(a: np.ndarray, b: np.ndarray, acc64: bool = False) -> np.ndarray:
    """Matrix product. With acc64, accumulate in float64 and cast back."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if acc64 and a.dtype != np.float64:
        out = (a.astype(np.float64) @ b.astype(np.float64)).astype(a.dtype)
    else:
        out = a @ b
    return _check_finite(out, "matmul")


def relu_forward(x: np.ndarray) -> np.ndarray:
    return _check_finite(np.maximum(x, 0), "relu_forward")


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Pass gradient where x > 0; the tie at exactly 0 gets zero gradient."""
    if x.shape != grad_out.shape:
        raise ShapeError(f"relu_backward shape mismatch: {x.shape} vs {grad_out.shape}")
    return _check_finite(np.where(x > 0, grad_out, 0), "relu_backward")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction, accumulated in float64."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean batch cross-entropy and its gradient (softmax - onehot) / B.

    Loss is returned as a float64 scalar; the gradient keeps the logits'
    dtype so it can feed straight back into the parameter updates.
    """
    if logits.ndim != 2:
        raise ShapeError("logits must be B x C")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError("labels must be a vector of length B")
    n, c = logits.shape
    if n < 1:
        raise ShapeError("batch must contain at least one sample")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise LabelError(f"label out of range for {c} classes")
    p = softmax(logits)
    rows = np.arange(n)
    # log-softmax computed directly for stability at extreme logits
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-logp[rows, labels].mean())
    grad = p.copy()
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, _check_finite(grad.astype(logits.dtype), "softmax_cross_entropy")


def dropout(
    x: np.ndarray,
    rate: float,
    rng: np.random.Generator | None = None,
    training: bool = True,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout: zero with probability `rate`, scale survivors.

    Returns (output, mask) where mask is None outside training / at rate 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    return _check_finite(x * keep * scale, "dropout"), keep


def dropout_backward(grad_out: np.ndarray, mask: np.ndarray | None, rate: float) -> np.ndarray:
    if mask is None:
        return grad_out
    scale = np.asarray(1.0 / (1.0 - rate), dtype=grad_out.dtype)
    return grad_out * mask * scale
