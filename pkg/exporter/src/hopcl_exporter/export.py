"""Run a frozen pretrained encoder over labeled text and write the token
embeddings (one L x Q matrix per sample, padding dropped) as HOPD.

Position 0 of every exported sequence is the encoder's classification
token, so CLS-style pooling on the training side stays meaningful. The
export is a pure inference pass: no gradients, model in eval mode.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import transformers
from transformers import AutoModel, AutoTokenizer

from .hopd import HopdWriteError, write_split

transformers.utils.logging.disable_progress_bar()


class ExporterError(ValueError):
    pass


@dataclass
class ExportSpec:
    model_name: str          # HF identifier or local model directory
    input_path: str          # one sample per line
    labels_path: str         # one integer label per line
    out_path: str            # HOPD file to write
    name: str = "exported"
    split: str = "train"
    channels: int = 768      # must equal the encoder hidden size
    max_len: int = 128
    layer: int = -1          # hidden-state layer to export; -1 = last
    pair_separator: str | None = None  # split lines into (text, pair) on this
    batch_size: int = 16
    n_classes: int | None = None  # default: max label + 1


@dataclass
class ExportResult:
    path: Path
    count: int
    skipped: int
    truncated: int
    channels: int


def _read_inputs(spec: ExportSpec):
    lines = Path(spec.input_path).read_text().splitlines()
    labels = [int(x) for x in Path(spec.labels_path).read_text().split()]
    if len(lines) != len(labels):
        raise ExporterError(
            f"{len(lines)} input lines but {len(labels)} labels")
    return lines, labels


def export(spec: ExportSpec) -> ExportResult:
    tokenizer = AutoTokenizer.from_pretrained(spec.model_name)
    model = AutoModel.from_pretrained(spec.model_name)
    model.eval()
    hidden = model.config.hidden_size
    if hidden != spec.channels:
        raise ExporterError(
            f"encoder hidden size {hidden} != requested channels {spec.channels}")
    lines, labels = _read_inputs(spec)

    encoded = []
    skipped = 0
    truncated = 0
    kept_labels = []
    for line, label in zip(lines, labels):
        if spec.pair_separator is not None and spec.pair_separator in line:
            first, second = line.split(spec.pair_separator, 1)
            ids = tokenizer(first.strip(), second.strip(), truncation=True,
                            max_length=spec.max_len)
        else:
            text = line.strip()
            if not text:
                warnings.warn(f"skipping empty input line for label {label}")
                skipped += 1
                continue
            ids = tokenizer(text, truncation=True, max_length=spec.max_len)
        if len(ids["input_ids"]) == 0:
            warnings.warn("skipping sample that tokenized to nothing")
            skipped += 1
            continue
        full = tokenizer(line.replace(spec.pair_separator or "\t", " ").strip())
        if len(full["input_ids"]) > spec.max_len:
            truncated += 1
        encoded.append(ids)
        kept_labels.append(label)
    if not encoded:
        raise ExporterError("no usable samples after tokenization")

    samples = []
    use_inner_layer = spec.layer != -1
    with torch.no_grad():
        for start in range(0, len(encoded), spec.batch_size):
            chunk = encoded[start:start + spec.batch_size]
            batch = tokenizer.pad(chunk, return_tensors="pt")
            outputs = model(**batch, output_hidden_states=use_inner_layer)
            states = (outputs.hidden_states[spec.layer] if use_inner_layer
                      else outputs.last_hidden_state)
            mask = batch["attention_mask"].bool()
            for i in range(states.shape[0]):
                tokens = states[i][mask[i]].cpu().numpy().astype(np.float32)
                samples.append((tokens, kept_labels[start + i]))

    n_classes = spec.n_classes if spec.n_classes is not None else max(kept_labels) + 1
    try:
        path = write_split(
            spec.out_path, samples, n_classes, spec.name, spec.split,
            extra_manifest={"export": {
                "model": spec.model_name,
                "layer": spec.layer,
                "max_len": spec.max_len,
                "skipped": skipped,
                "truncated": truncated,
            }})
    except HopdWriteError as exc:
        raise ExporterError(str(exc)) from exc
    return ExportResult(path=path, count=len(samples), skipped=skipped,
                        truncated=truncated, channels=hidden)
