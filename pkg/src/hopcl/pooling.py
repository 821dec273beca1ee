"""Sequence reductions: concatenated central moments plus baseline pools.

A pooled feature maps an L x Q token matrix to a fixed-width vector:

    MOMENTS      [m1 | m2 | ... | mp]   central moments per channel, width p*Q
    MOMENTS_CLS  [token0 | m2 | ... | mp]                           width p*Q
    CLS / AVG / MAX / STDDEV                                        width Q
    AVGMAX       [AVG | MAX]                                        width 2*Q

Moments are population moments (divide by L), raw and unstandardized:
m1 is the per-channel mean, and for k >= 2, m_k = mean((x - m1)^k).
Accumulation is two-pass in float64; outputs are cast back to the input
dtype. Batched forward/backward variants operate on B x L x Q blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptySequenceError, ShapeError

POOL_KINDS = ("CLS", "AVG", "MAX", "AVGMAX", "STDDEV", "MOMENTS", "MOMENTS_CLS")
STDDEV_EPS = 1e-8


@dataclass(frozen=True)
class PoolingSpec:
    """Reduction choice plus moment order (order is ignored by baselines)."""

    kind: str
    order: int = 3

    def __post_init__(self):
        if self.kind not in POOL_KINDS:
            raise ConfigError(f"unknown pooling kind {self.kind!r}")
        if self.kind == "MOMENTS" and not 1 <= self.order <= 5:
            raise ConfigError(f"moment order must be in [1, 5], got {self.order}")
        if self.kind == "MOMENTS_CLS" and not 2 <= self.order <= 5:
            raise ConfigError(
                f"MOMENTS_CLS needs order in [2, 5] (block 1 is the cls token), got {self.order}"
            )

    def width(self, channels: int) -> int:
        if self.kind in ("MOMENTS", "MOMENTS_CLS"):
            return self.order * channels
        if self.kind == "AVGMAX":
            return 2 * channels
        return channels


def _as_batch(h: np.ndarray) -> np.ndarray:
    if h.ndim != 2:
        raise ShapeError(f"expected an L x Q matrix, got ndim={h.ndim}")
    if h.shape[0] == 0:
        raise EmptySequenceError("cannot pool an empty token sequence")
    return h[None, :, :]


def _moment_blocks(x: np.ndarray, order: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Central-moment blocks of a B x L x Q batch, all float64.

    Returns ([m1, m2, ..., m_order], centered) where centered = x - m1.
    """
    x64 = x.astype(np.float64, copy=False)
    m1 = x64.mean(axis=1)
    centered = x64 - m1[:, None, :]
    blocks = [m1]
    power = centered
    for _ in range(2, order + 1):
        power = power * centered
        blocks.append(power.mean(axis=1))
    return blocks, centered


def central_moments(h: np.ndarray, order: int) -> np.ndarray:
    """Concatenated central moments of an L x Q matrix, width order*Q."""
    if order < 1:
        raise ConfigError(f"moment order must be >= 1, got {order}")
    blocks, _ = _moment_blocks(_as_batch(h), order)
    return np.concatenate(blocks, axis=1)[0].astype(h.dtype)


def central_moments_backward(h: np.ndarray, order: int, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of central_moments w.r.t. the token matrix."""
    x = _as_batch(h)
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (order * h.shape[1],):
        raise ShapeError(f"grad width {grad_out.shape} does not match order*Q")
    return _moments_backward_batch(x, order, grad_out[None, :])[0].astype(h.dtype)


def _moments_backward_batch(x: np.ndarray, order: int, grad: np.ndarray) -> np.ndarray:
    """Batched moment gradient: d m_k / d x_e = (k/L) (c_e^{k-1} - mean(c^{k-1}))."""
    b, length, q = x.shape
    x64 = x.astype(np.float64, copy=False)
    centered = x64 - x64.mean(axis=1)[:, None, :]
    g = grad.astype(np.float64).reshape(b, order, q)
    dx = np.broadcast_to((g[:, 0, :] / length)[:, None, :], x.shape).copy()
    power = None  # c^{k-1}
    for k in range(2, order + 1):
        power = centered if power is None else power * centered
        mean_pow = power.mean(axis=1)  # equals m_{k-1}; zero for k = 2
        coeff = (k / length) * g[:, k - 1, :]
        dx += coeff[:, None, :] * (power - mean_pow[:, None, :])
    return dx


def moments_with_cls(h: np.ndarray, order: int) -> np.ndarray:
    """Moment vector with block 1 replaced by the position-0 token."""
    if order < 2:
        raise ConfigError("MOMENTS_CLS needs order >= 2")
    x = _as_batch(h)
    blocks, _ = _moment_blocks(x, order)
    blocks[0] = x[:, 0, :].astype(np.float64)
    return np.concatenate(blocks, axis=1)[0].astype(h.dtype)


def baseline_pool(h: np.ndarray, kind: str) -> np.ndarray:
    """One of the non-moment reductions (CLS, AVG, MAX, AVGMAX, STDDEV)."""
    spec = PoolingSpec(kind=kind)
    if kind in ("MOMENTS", "MOMENTS_CLS"):
        raise ConfigError("baseline_pool does not handle moment kinds")
    out, _ = pool_forward(spec, _as_batch(h))
    return out[0].astype(h.dtype)


def pool_forward(spec: PoolingSpec, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Pool a B x L x Q batch to B x width; returns (pooled, cache)."""
    if x.ndim != 3:
        raise ShapeError(f"expected B x L x Q, got ndim={x.ndim}")
    if x.shape[1] == 0:
        raise EmptySequenceError("cannot pool an empty token sequence")
    cache: dict = {"shape": x.shape, "dtype": x.dtype}
    kind = spec.kind
    if kind == "CLS":
        out = x[:, 0, :].astype(np.float64)
    elif kind == "AVG":
        out = x.astype(np.float64).mean(axis=1)
    elif kind == "MAX":
        idx = np.argmax(x, axis=1)  # first maximal index per channel
        cache["argmax"] = idx
        out = np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0, :].astype(np.float64)
    elif kind == "AVGMAX":
        idx = np.argmax(x, axis=1)
        cache["argmax"] = idx
        avg = x.astype(np.float64).mean(axis=1)
        mx = np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0, :].astype(np.float64)
        out = np.concatenate([avg, mx], axis=1)
    elif kind == "STDDEV":
        blocks, centered = _moment_blocks(x, 2)
        std = np.sqrt(blocks[1] + STDDEV_EPS)
        cache["centered"] = centered
        cache["std"] = std
        out = std
    elif kind == "MOMENTS":
        blocks, _ = _moment_blocks(x, spec.order)
        cache["x64"] = x.astype(np.float64, copy=False)
        out = np.concatenate(blocks, axis=1)
    elif kind == "MOMENTS_CLS":
        blocks, _ = _moment_blocks(x, spec.order)
        blocks[0] = x[:, 0, :].astype(np.float64)
        cache["x64"] = x.astype(np.float64, copy=False)
        out = np.concatenate(blocks, axis=1)
    else:  # pragma: no cover - PoolingSpec validates kinds
        raise ConfigError(f"unknown pooling kind {kind!r}")
    return out.astype(x.dtype), cache


def pool_backward(spec: PoolingSpec, cache: dict, grad: np.ndarray) -> np.ndarray:
    """Gradient of pool_forward w.r.t. the token batch."""
    b, length, q = cache["shape"]
    dtype = cache["dtype"]
    kind = spec.kind
    g = grad.astype(np.float64)
    if kind == "CLS":
        dx = np.zeros((b, length, q))
        dx[:, 0, :] = g
    elif kind == "AVG":
        dx = np.broadcast_to((g / length)[:, None, :], (b, length, q)).copy()
    elif kind == "MAX":
        dx = np.zeros((b, length, q))
        np.put_along_axis(dx, cache["argmax"][:, None, :], g[:, None, :], axis=1)
    elif kind == "AVGMAX":
        g_avg, g_max = g[:, :q], g[:, q:]
        dx = np.broadcast_to((g_avg / length)[:, None, :], (b, length, q)).copy()
        scatter = np.zeros((b, length, q))
        np.put_along_axis(scatter, cache["argmax"][:, None, :], g_max[:, None, :], axis=1)
        dx += scatter
    elif kind == "STDDEV":
        # d sqrt(m2+eps) = c / (L * std)
        dx = (g / cache["std"])[:, None, :] * cache["centered"] / length
    elif kind == "MOMENTS":
        dx = _moments_backward_batch(cache["x64"], spec.order, g)
    elif kind == "MOMENTS_CLS":
        # blocks >= 2 follow the moment formula; block 1 routes to token 0
        order = spec.order
        gm = g.copy()
        gm[:, :q] = 0.0
        dx = _moments_backward_batch(cache["x64"], order, gm)
        dx[:, 0, :] += g[:, :q]
    else:  # pragma: no cover
        raise ConfigError(f"unknown pooling kind {kind!r}")
    return dx.astype(dtype)
