"""Sequence harness: trains T problems in order (TIL or DIL), evaluates
every test set after each stage, and records the accuracy / macro-F1
matrices. Problem order is permuted per seed (Fisher-Yates keyed by the
seed); each problem's training data is released once its stage ends.

Problems not yet learned (upper triangle, needed for forward transfer)
are evaluated in TIL through the most recently trained adapter plus a
deterministic, seed-derived fresh head for that problem's class count;
DIL evaluates the shared model directly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ProblemDataset, read_dataset
from .errors import ConfigError, DataError, StateError
from .model import BackboneSpec, ModelState, init_head, init_streams
from .optim import TrainConfig, derive_train_config, evaluate, evaluate_with, train_problem
from .pooling import PoolingSpec
from .tensor import make_rng


class ProblemSource:
    """Lazy handle to one problem's splits."""

    def __init__(self, problem_id: int, name: str, n_classes: int, loader):
        self.problem_id = problem_id
        self.name = name
        self.n_classes = n_classes
        self._loader = loader  # split name -> list[EmbeddedSequence]

    def load_split(self, split: str):
        samples = self._loader(split)
        if not samples:
            raise DataError(f"split {split!r} of problem {self.name!r} is empty")
        return samples

    @classmethod
    def from_dataset(cls, ds: ProblemDataset) -> "ProblemSource":
        return cls(ds.problem_id, ds.name, ds.n_classes, ds.split)

    @classmethod
    def from_directory(cls, directory, problem_id: int,
                       expected_channels=None, max_len=None) -> "ProblemSource":
        directory = Path(directory)
        probe = read_dataset(directory, problem_id, expected_channels, max_len)

        def loader(split, _dir=directory, _pid=problem_id,
                   _q=expected_channels, _ml=max_len):
            return read_dataset(_dir, _pid, _q, _ml).split(split)

        return cls(problem_id, probe.name, probe.n_classes, loader)


@dataclass
class SequenceSpec:
    sources: list
    mode: str
    baseline: str
    pooling: PoolingSpec
    backbone: BackboneSpec
    train: TrainConfig
    seeds: list[int]
    bottleneck: int = 64

    def __post_init__(self):
        if len(self.sources) < 2:
            raise ConfigError("a sequence needs at least 2 problems")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.mode == "DIL":
            counts = {s.n_classes for s in self.sources}
            if len(counts) != 1:
                raise ConfigError(f"DIL requires a shared class count, got {sorted(counts)}")


@dataclass
class AccuracyMatrix:
    """T x T matrix; row i holds all test accuracies after stage i."""

    values: np.ndarray
    _written: set = field(default_factory=set)

    @classmethod
    def empty(cls, t: int) -> "AccuracyMatrix":
        return cls(values=np.full((t, t), np.nan))

    def write_row(self, i: int, row) -> None:
        if i in self._written:
            raise StateError(f"row {i} already written")
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (self.values.shape[1],):
            raise StateError("row length mismatch")
        if np.any(row < 0) or np.any(row > 1):
            raise StateError("matrix entries must lie in [0, 1]")
        self.values[i] = row
        self._written.add(i)

    def complete(self) -> bool:
        return len(self._written) == self.values.shape[0]


def fisher_yates(items, rng) -> list:
    """Classic in-place shuffle driven by the given generator."""
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        out[i], out[j] = out[j], out[i]
    return out


def per_problem_curves(matrix) -> tuple[list[float], list[float]]:
    """(mean of each row over all problems, mean over problems seen so far)."""
    m = np.asarray(getattr(matrix, "values", matrix), dtype=np.float64)
    all_mean = [float(m[t].mean()) for t in range(m.shape[0])]
    seen_mean = [float(m[t, : t + 1].mean()) for t in range(m.shape[0])]
    return all_mean, seen_mean


@dataclass
class SeedResult:
    seed: int
    order: list[int]            # position -> problem index in spec.sources
    accuracy: AccuracyMatrix
    mf1: AccuracyMatrix
    stage_seconds: list[float]
    histories: dict
    parameter_counts: dict
    state: ModelState
    max_live_train_splits: int


@dataclass
class RunResult:
    spec: SequenceSpec
    per_seed: list[SeedResult]

    def mean_accuracy(self) -> np.ndarray:
        """Elementwise mean over seeds, in stage-by-position semantics."""
        return np.mean([r.accuracy.values for r in self.per_seed], axis=0)

    def mean_mf1(self) -> np.ndarray:
        return np.mean([r.mf1.values for r in self.per_seed], axis=0)


def run_sequence(spec: SequenceSpec, jobs: int = 1) -> RunResult:
    """Run the full continual sequence once per seed.

    Seeds are independent; with jobs > 1 they run in a thread pool. Each
    seed's output is a pure function of (spec, seed), so results do not
    depend on the job count.
    """
    if jobs <= 1 or len(spec.seeds) == 1:
        per_seed = [_run_seed(spec, s) for s in spec.seeds]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_seed = list(pool.map(lambda s: _run_seed(spec, s), spec.seeds))
    return RunResult(spec=spec, per_seed=per_seed)


def _future_head(spec: SequenceSpec, state: ModelState, run_seed: int,
                 source) -> tuple:
    """Routing for problems not learned yet: last adapter + seeded head.

    The head is drawn from the same stream the problem's eventual
    init_problem call will use, so pre-learning evaluations agree with
    the problem's later initialization (e.g. rows are identical when the
    learning rate is zero under HOP).
    """
    adapter = state.adapters[state.last_trained]
    width = spec.pooling.width(spec.backbone.channels)
    _, head_rng = init_streams(make_rng(run_seed, "init", source.problem_id))
    return adapter, init_head(head_rng, width, source.n_classes)


def _run_seed(spec: SequenceSpec, run_seed: int) -> SeedResult:
    t = len(spec.sources)
    order = fisher_yates(range(t), make_rng(run_seed, "order"))
    state = ModelState(backbone=spec.backbone, pooling=spec.pooling,
                       mode=spec.mode, baseline=spec.baseline,
                       bottleneck=spec.bottleneck)
    cfg = derive_train_config(spec.train, run_seed)
    acc = AccuracyMatrix.empty(t)
    mf1 = AccuracyMatrix.empty(t)
    stage_seconds = []
    histories = {}
    parameter_counts = {}
    live_train = 0
    max_live_train = 0
    shared_dil = spec.mode == "DIL" and spec.baseline != "SDL"

    for stage in range(t):
        source = spec.sources[order[stage]]
        pid = source.problem_id
        if not (shared_dil and stage > 0):
            state.init_problem(pid, source.n_classes, make_rng(run_seed, "init", pid))
        parameter_counts[str(pid)] = state.parameter_count(pid)

        started = time.perf_counter()
        live_train += 1
        max_live_train = max(max_live_train, live_train)
        problem = ProblemDataset(
            problem_id=pid, name=source.name, n_classes=source.n_classes,
            train=source.load_split("train"), val=source.load_split("val"),
            test=[],  # test splits are only touched by the evaluation pass
        )
        _, history = train_problem(state, problem, cfg)
        del problem  # training data of this stage is released here
        live_train -= 1
        stage_seconds.append(time.perf_counter() - started)
        histories[str(pid)] = history

        acc_row = np.empty(t)
        mf1_row = np.empty(t)
        for col in range(t):
            col_source = spec.sources[order[col]]
            test = col_source.load_split("test")
            if shared_dil:
                a, f, _ = evaluate(state, test, None)
            elif col <= stage:
                a, f, _ = evaluate(state, test, col_source.problem_id)
            else:
                adapter, head = _future_head(spec, state, run_seed, col_source)
                a, f, _ = evaluate_with(state, test, adapter, head)
            acc_row[col] = a
            mf1_row[col] = f
        acc.write_row(stage, acc_row)
        mf1.write_row(stage, mf1_row)

    assert acc.complete() and mf1.complete()
    return SeedResult(seed=run_seed, order=list(order), accuracy=acc, mf1=mf1,
                      stage_seconds=stage_seconds, histories=histories,
                      parameter_counts=parameter_counts, state=state,
                      max_live_train_splits=max_live_train)
