"""Writer for the HOPD binary split format (the contract shared with the
training library; this package never imports it).

Layout, all little-endian:

    magic "HOPD" | version u32 | channels u32 | n_classes u32 | count u32
    per sample: length u32 | label u32 | length*channels float32

A sibling ``<name>.manifest.json`` carries name, split, channels, counts
and a sha256 of the file bytes; extra keys are allowed and readers
ignore them.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

HOPD_MAGIC = b"HOPD"
HOPD_VERSION = 1


class HopdWriteError(ValueError):
    pass


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def write_split(path, samples, n_classes: int, name: str, split: str,
                extra_manifest: dict | None = None) -> Path:
    """Write [(tokens LxQ float32, label), ...] as one HOPD split file."""
    path = Path(path)
    if not samples:
        raise HopdWriteError("refusing to write an empty split")
    channels = int(samples[0][0].shape[1])
    parts = [HOPD_MAGIC, struct.pack("<IIII", HOPD_VERSION, channels,
                                     int(n_classes), len(samples))]
    label_counts: dict[str, int] = {}
    for tokens, label in samples:
        tokens = np.ascontiguousarray(tokens, dtype="<f4")
        if tokens.ndim != 2 or tokens.shape[1] != channels:
            raise HopdWriteError("all samples must be L x Q with a shared Q")
        if tokens.shape[0] < 1:
            raise HopdWriteError("samples must have at least one token")
        label = int(label)
        if not 0 <= label < n_classes:
            raise HopdWriteError(f"label {label} outside [0, {n_classes})")
        parts.append(struct.pack("<II", tokens.shape[0], label))
        parts.append(tokens.tobytes())
        label_counts[str(label)] = label_counts.get(str(label), 0) + 1
    payload = b"".join(parts)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    manifest = {
        "name": name,
        "split": split,
        "channels": channels,
        "n_classes": int(n_classes),
        "count": len(samples),
        "label_counts": label_counts,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
