"""Model composition: frozen backbone, per-problem residual adapters,
pooling, and per-problem MLP heads, with TIL/DIL parameter routing.

The backbone never trains: samples arrive as precomputed token embeddings
(FILE) or through the deterministic hashing embedder (HASHING). Each
problem owns a residual bottleneck adapter applied token-wise and a
2-layer head whose hidden width equals the pooled-feature width.

Baselines:
    HOP  per-problem adapter + head in TIL (adapter warm-started from the
         previously trained one); one shared adapter + head in DIL.
    FT   one shared adapter, never frozen; per-problem heads in TIL, one
         shared head in DIL.
    SDL  standalone: fresh per-problem adapter + head, no carry-over.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import EmbeddedSequence
from .errors import ConfigError, FormatError, RoutingError, ShapeError, StateError
from .pooling import PoolingSpec, pool_backward, pool_forward
from .tensor import (
    dropout,
    dropout_backward,
    relu_backward,
    relu_forward,
    softmax_cross_entropy,
)

HOPM_MAGIC = b"HOPM"
HOPM_VERSION = 1
MODES = ("TIL", "DIL")
BASELINES = ("HOP", "FT", "SDL")
SHARED = "shared"


@dataclass(frozen=True)
class BackboneSpec:
    """Frozen feature source; parameters are never updated by training."""

    kind: str = "FILE"  # FILE: precomputed embeddings; HASHING: built-in embedder
    channels: int = 768
    max_len: int = 128
    hash_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("FILE", "HASHING"):
            raise ConfigError(f"unknown backbone kind {self.kind!r}")
        if self.channels < 1 or self.max_len < 1:
            raise ConfigError("backbone channels and max_len must be >= 1")

    def checksum(self) -> str:
        blob = json.dumps(
            {"kind": self.kind, "channels": self.channels,
             "max_len": self.max_len, "hash_seed": self.hash_seed},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class AdapterParams:
    """Residual bottleneck adapter: x + up(relu(down(x))), token-wise."""

    w_down: np.ndarray
    b_down: np.ndarray
    w_up: np.ndarray
    b_up: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w_down": self.w_down, "b_down": self.b_down,
                "w_up": self.w_up, "b_up": self.b_up}

    def copy(self) -> "AdapterParams":
        return AdapterParams(**{k: v.copy() for k, v in self.arrays().items()})


@dataclass
class HeadParams:
    """Two dense layers: width -> width (ReLU) -> n_classes."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "HeadParams":
        return HeadParams(**{k: v.copy() for k, v in self.arrays().items()})

    @property
    def n_classes(self) -> int:
        return self.w2.shape[1]


def _uniform_fan_in(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_adapter(rng, channels: int, bottleneck: int) -> AdapterParams:
    """Fresh adapter: random down-projection, zero up-projection.

    Zero w_up/b_up makes the adapter exactly the identity at init.
    """
    return AdapterParams(
        w_down=_uniform_fan_in(rng, channels, (channels, bottleneck)),
        b_down=np.zeros(bottleneck, dtype=np.float32),
        w_up=np.zeros((bottleneck, channels), dtype=np.float32),
        b_up=np.zeros(channels, dtype=np.float32),
    )


def init_head(rng, width: int, n_classes: int) -> HeadParams:
    return HeadParams(
        w1=_uniform_fan_in(rng, width, (width, width)),
        b1=np.zeros(width, dtype=np.float32),
        w2=_uniform_fan_in(rng, width, (width, n_classes)),
        b2=np.zeros(n_classes, dtype=np.float32),
    )


def init_streams(rng):
    """Independent child streams for adapter and head initialization.

    Keeping the head stream separate means a problem's head init does not
    depend on whether its adapter was copied or freshly drawn, so the
    harness can materialize the same head for a not-yet-learned problem.
    """
    adapter_rng, head_rng = rng.spawn(2)
    return adapter_rng, head_rng


@dataclass
class ModelState:
    backbone: BackboneSpec
    pooling: PoolingSpec
    mode: str = "TIL"
    baseline: str = "HOP"
    bottleneck: int = 64
    adapters: dict = field(default_factory=dict)
    heads: dict = field(default_factory=dict)
    last_trained: object = None  # adapter key of the most recently trained problem

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if self.bottleneck < 1:
            raise ConfigError("adapter bottleneck must be >= 1")

    # -- routing -----------------------------------------------------------

    def shares_adapter(self) -> bool:
        return self.baseline == "FT" or (self.mode == "DIL" and self.baseline != "SDL")

    def shares_head(self) -> bool:
        return self.mode == "DIL" and self.baseline != "SDL"

    def adapter_key(self, problem_id):
        return SHARED if self.shares_adapter() else problem_id

    def head_key(self, problem_id):
        return SHARED if self.shares_head() else problem_id

    def _resolve(self, problem_id):
        """Map a problem id to (adapter, head) per mode/baseline routing."""
        if self.mode == "TIL" and problem_id is None:
            raise RoutingError("TIL forward needs a problem id")
        akey = self.adapter_key(problem_id)
        hkey = self.head_key(problem_id)
        if self.mode == "DIL" and self.baseline == "SDL":
            # standalone reference baseline: route by id when given
            akey = hkey = problem_id if problem_id is not None else self.last_trained
        if akey not in self.adapters or hkey not in self.heads:
            raise RoutingError(f"problem {problem_id!r} has no initialized parameters")
        return self.adapters[akey], self.heads[hkey]

    # -- lifecycle ---------------------------------------------------------

    def init_problem(self, problem_id, n_classes: int, rng) -> None:
        """Create parameters for a problem per baseline rules.

        HOP/TIL copies the previously trained adapter (knowledge carry-over);
        SDL always starts fresh; shared parameter sets are created once and
        reused. Double initialization of an owned parameter set is an error.
        """
        akey = self.adapter_key(problem_id)
        hkey = self.head_key(problem_id)
        if self.mode == "DIL" and self.baseline == "SDL":
            akey = hkey = problem_id
        if hkey in self.heads:
            raise StateError(f"problem {problem_id!r} already initialized")
        width = self.pooling.width(self.backbone.channels)
        adapter_rng, head_rng = init_streams(rng)
        if akey not in self.adapters:
            if self.baseline == "HOP" and not self.shares_adapter() and self.last_trained is not None:
                self.adapters[akey] = self.adapters[self.last_trained].copy()
            else:
                self.adapters[akey] = init_adapter(adapter_rng, self.backbone.channels,
                                                   self.bottleneck)
        self.heads[hkey] = init_head(head_rng, width, n_classes)

    def trainable(self, problem_id) -> dict[str, np.ndarray]:
        """Parameter arrays updated while training this problem."""
        adapter, head = self._resolve(problem_id)
        out = {f"adapter.{k}": v for k, v in adapter.arrays().items()}
        out.update({f"head.{k}": v for k, v in head.arrays().items()})
        return out

    def mark_trained(self, problem_id) -> None:
        self.last_trained = (
            problem_id if self.mode == "DIL" and self.baseline == "SDL"
            else self.adapter_key(problem_id)
        )

    def parameter_count(self, problem_id) -> int:
        return sum(v.size for v in self.trainable(problem_id).values())

    def cast(self, dtype) -> "ModelState":
        """Copy of the state with all parameters in the given dtype."""
        clone = ModelState(
            backbone=self.backbone, pooling=self.pooling, mode=self.mode,
            baseline=self.baseline, bottleneck=self.bottleneck,
            last_trained=self.last_trained,
        )
        for key, a in self.adapters.items():
            clone.adapters[key] = AdapterParams(
                **{k: v.astype(dtype) for k, v in a.arrays().items()})
        for key, h in self.heads.items():
            clone.heads[key] = HeadParams(
                **{k: v.astype(dtype) for k, v in h.arrays().items()})
        return clone


def expected_parameter_count(channels: int, bottleneck: int, width: int, n_classes: int) -> int:
    """Closed form: Q*A + A + A*Q + Q + W^2 + W + W*N_C + N_C."""
    adapter = channels * bottleneck + bottleneck + bottleneck * channels + channels
    head = width * width + width + width * n_classes + n_classes
    return adapter + head


def _check_batch(batch, channels: int):
    if not batch:
        raise ShapeError("empty batch")
    for s in batch:
        if s.channels != channels:
            raise ShapeError(f"sample has {s.channels} channels, model expects {channels}")


def _adapter_pool(adapter: AdapterParams, pooling: PoolingSpec, batch, keep_cache: bool):
    """Token-wise residual adapter then pooling, grouped by sequence length."""
    width = pooling.width(batch[0].channels)
    dtype = adapter.w_down.dtype
    pooled = np.empty((len(batch), width), dtype=dtype)
    groups = defaultdict(list)
    for i, s in enumerate(batch):
        groups[s.length].append(i)
    caches = []
    for length in sorted(groups):
        idxs = groups[length]
        x = np.stack([batch[i].tokens for i in idxs]).astype(dtype, copy=False)
        d = x @ adapter.w_down + adapter.b_down
        z = relu_forward(d)
        u = z @ adapter.w_up + adapter.b_up
        y = x + u
        p, pcache = pool_forward(pooling, y)
        pooled[idxs] = p
        if keep_cache:
            caches.append({"idxs": idxs, "x": x, "d": d, "z": z, "pool": pcache})
    return pooled, caches


def forward(state: ModelState, batch, problem_id=None, training: bool = False,
            rng=None, dropout_rate: float = 0.0) -> np.ndarray:
    """Logits for a batch of embedded sequences."""
    logits, _ = _forward_impl(state, batch, problem_id, training, rng,
                              dropout_rate, keep_cache=False)
    return logits


def _forward_impl(state, batch, problem_id, training, rng, dropout_rate,
                  keep_cache, override=(None, None)):
    _check_batch(batch, state.backbone.channels)
    if override[0] is not None or override[1] is not None:
        adapter, head = override
    else:
        adapter, head = state._resolve(problem_id)
    pooled, caches = _adapter_pool(adapter, state.pooling, batch, keep_cache)
    dropped, mask = dropout(pooled, dropout_rate if training else 0.0, rng, training)
    h1 = dropped @ head.w1 + head.b1
    r1 = relu_forward(h1)
    logits = r1 @ head.w2 + head.b2
    cache = None
    if keep_cache:
        cache = {"adapter": adapter, "head": head, "caches": caches,
                 "pooled": pooled, "dropped": dropped, "mask": mask,
                 "rate": dropout_rate if training else 0.0, "h1": h1, "r1": r1,
                 "batch": batch}
    return logits, cache


def forward_backward(state: ModelState, batch, labels, problem_id=None,
                     training: bool = True, rng=None, dropout_rate: float = 0.0):
    """Loss, logits, and gradients for the trainable parameters.

    Gradient keys match ModelState.trainable(): adapter.* and head.*.
    """
    logits, cache = _forward_impl(state, batch, problem_id, training, rng,
                                  dropout_rate, keep_cache=True)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    head = cache["head"]
    adapter = cache["adapter"]

    grads: dict[str, np.ndarray] = {}
    grads["head.w2"] = cache["r1"].T @ dlogits
    grads["head.b2"] = dlogits.sum(axis=0)
    dr1 = dlogits @ head.w2.T
    dh1 = relu_backward(cache["h1"], dr1)
    grads["head.w1"] = cache["dropped"].T @ dh1
    grads["head.b1"] = dh1.sum(axis=0)
    dpooled = dropout_backward(dh1 @ head.w1.T, cache["mask"], cache["rate"])

    for name, ref in adapter.arrays().items():
        grads[f"adapter.{name}"] = np.zeros_like(ref)
    for group in cache["caches"]:
        idxs = group["idxs"]
        dy = pool_backward(state.pooling, group["pool"], dpooled[idxs])
        # residual: dy flows to the up-projection branch (input is frozen)
        z, x, d = group["z"], group["x"], group["d"]
        grads["adapter.w_up"] += np.einsum("bla,blq->aq", z, dy, optimize=True)
        grads["adapter.b_up"] += dy.sum(axis=(0, 1))
        dz = dy @ adapter.w_up.T
        dd = relu_backward(d, dz)
        grads["adapter.w_down"] += np.einsum("blq,bla->qa", x, dd, optimize=True)
        grads["adapter.b_down"] += dd.sum(axis=(0, 1))
    return loss, logits, grads


def predict(state: ModelState, sample: EmbeddedSequence, problem_id=None) -> int:
    """Argmax class; ties break to the lowest class index."""
    logits = forward(state, [sample], problem_id=problem_id, training=False)
    return int(np.argmax(logits[0]))


# -- checkpoints ------------------------------------------------------------


def _key_to_str(key) -> str:
    return key if key == SHARED else f"p:{key}"


def _key_from_str(s: str):
    if s == SHARED:
        return s
    assert s.startswith("p:")
    raw = s[2:]
    return int(raw) if raw.lstrip("-").isdigit() else raw


def save_checkpoint(path, state: ModelState, seeds=()) -> Path:
    """Single binary file: HOPM magic, JSON header, float32 LE blobs.

    A sidecar <name>.manifest.json lists shapes and the seeds supplied.
    """
    path = Path(path)
    blob_table = []
    payload = []
    for kind, table in (("adapter", state.adapters), ("head", state.heads)):
        for key in sorted(table, key=_key_to_str):
            arrays = table[key].arrays()
            entry = {"owner": _key_to_str(key), "kind": kind,
                     "arrays": [{"name": n, "shape": list(a.shape)}
                                for n, a in arrays.items()]}
            blob_table.append(entry)
            for a in arrays.values():
                payload.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    header = {
        "backbone": {"kind": state.backbone.kind, "channels": state.backbone.channels,
                     "max_len": state.backbone.max_len, "hash_seed": state.backbone.hash_seed},
        "pooling": {"kind": state.pooling.kind, "order": state.pooling.order},
        "mode": state.mode,
        "baseline": state.baseline,
        "bottleneck": state.bottleneck,
        "last_trained": None if state.last_trained is None else _key_to_str(state.last_trained),
        "blobs": blob_table,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(HOPM_MAGIC)
        fh.write(struct.pack("<II", HOPM_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for chunk in payload:
            fh.write(chunk)
    manifest = {
        "format": "HOPM",
        "version": HOPM_VERSION,
        "seeds": list(seeds),
        "shapes": {f'{e["owner"]}/{e["kind"]}/{a["name"]}': a["shape"]
                   for e in blob_table for a in e["arrays"]},
    }
    Path(str(path) + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> ModelState:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != HOPM_MAGIC:
        raise FormatError(f"{path}: not a HOPM checkpoint")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != HOPM_VERSION:
        raise FormatError(f"{path}: unsupported HOPM version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    state = ModelState(
        backbone=BackboneSpec(**header["backbone"]),
        pooling=PoolingSpec(**header["pooling"]),
        mode=header["mode"],
        baseline=header["baseline"],
        bottleneck=header["bottleneck"],
    )
    if header["last_trained"] is not None:
        state.last_trained = _key_from_str(header["last_trained"])
    offset = 12 + hlen
    for entry in header["blobs"]:
        arrays = {}
        for spec in entry["arrays"]:
            shape = tuple(spec["shape"])
            n = int(np.prod(shape)) if shape else 1
            arrays[spec["name"]] = np.frombuffer(
                raw, dtype="<f4", count=n, offset=offset).reshape(shape).copy()
            offset += n * 4
        key = _key_from_str(entry["owner"])
        if entry["kind"] == "adapter":
            state.adapters[key] = AdapterParams(**arrays)
        else:
            state.heads[key] = HeadParams(**arrays)
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return state
