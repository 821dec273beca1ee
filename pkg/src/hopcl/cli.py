"""Command-line interface: run sequences, generate synthetic data,
recompute metrics from a stored matrix, and inspect dataset files.

Config files are strict JSON: unknown keys are rejected with the
offending key named. All artifacts use 9-significant-digit decimals;
wall-clock timings go only to run_manifest.json so metrics.json and the
matrix CSVs are byte-identical across reruns of the same config.

Exit codes: 0 success, 1 usage/config, 2 data/format, 3 divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    ClassSpec,
    EmbeddedSequence,
    ProblemDataset,
    SynthProblemSpec,
    SynthSpec,
    generate_synthetic,
    hash_embed,
    read_manifest,
    read_split,
    write_dataset,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    HopclError,
    LabelError,
    RoutingError,
    ShapeError,
    SizeError,
    StateError,
)
from .harness import ProblemSource, SequenceSpec, per_problem_curves, run_sequence
from .metrics import compute_metrics
from .model import BackboneSpec, save_checkpoint
from .optim import TrainConfig
from .pooling import PoolingSpec, central_moments

_REQUIRED = object()


def _parse_obj(obj, where: str, fields: dict):
    """Strict dict parsing: every key must be declared, required keys present."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    for key in obj:
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} in {where}")
    out = {}
    for key, (convert, default) in fields.items():
        if key in obj:
            try:
                out[key] = convert(obj[key])
            except HopclError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r} in {where}: {exc}") from exc
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r} in {where}")
        else:
            out[key] = default
    return out


def parse_synth_spec(obj) -> SynthSpec:
    def parse_class(c):
        got = _parse_obj(c, "class spec", {
            "mean": (float, 0.0), "scale": (float, 1.0), "skew": (float, 0.0)})
        return ClassSpec(**got)

    def parse_problem(p):
        got = _parse_obj(p, "problem spec", {
            "name": (str, _REQUIRED),
            "classes": (lambda cs: [parse_class(c) for c in cs], _REQUIRED)})
        return SynthProblemSpec(**got)

    got = _parse_obj(obj, "synthetic spec", {
        "problems": (lambda ps: [parse_problem(p) for p in ps], _REQUIRED),
        "n_train": (int, 120), "n_val": (int, 40), "n_test": (int, 100),
        "min_len": (int, 16), "max_len": (int, 16), "channels": (int, 8),
        "mean_jitter": (float, 0.0), "neutral_first_token": (bool, False),
        "seed": (int, 0)})
    return SynthSpec(**got)


def parse_run_config(obj, base_dir: Path) -> dict:
    got = _parse_obj(obj, "run config", {
        "mode": (str, "TIL"),
        "baseline": (str, "HOP"),
        "pooling": (lambda p: PoolingSpec(**_parse_obj(p, "pooling", {
            "kind": (str, _REQUIRED), "order": (int, 3)})), PoolingSpec("MOMENTS", 3)),
        "backbone": (lambda b: BackboneSpec(**_parse_obj(b, "backbone", {
            "kind": (str, "FILE"), "channels": (int, 768),
            "max_len": (int, 128), "hash_seed": (int, 0)})), _REQUIRED),
        "adapter_bottleneck": (int, 64),
        "train": (lambda t: TrainConfig(**_parse_obj(t, "train", {
            "lr": (float, 1e-3), "batch_size": (int, 32), "max_epochs": (int, 10),
            "patience": (int, 5), "dropout": (float, 0.1), "beta1": (float, 0.9),
            "beta2": (float, 0.999), "eps": (float, 1e-8), "seed": (int, 0)})),
            TrainConfig()),
        "seeds": (lambda s: [int(x) for x in s], [0]),
        "data": (dict, _REQUIRED),
        "out_dir": (str, "run_output"),
    })
    data = _parse_obj(got["data"], "data", {
        "kind": (str, _REQUIRED),
        "spec": (dict, None),
        "paths": (lambda ps: [str(p) for p in ps], None),
        "problems": (list, None)})
    backbone = got["backbone"]

    def resolve(p):
        return (base_dir / p) if not Path(p).is_absolute() else Path(p)

    if data["kind"] == "synthetic":
        if data["spec"] is None:
            raise ConfigError("data.kind 'synthetic' needs data.spec")
        datasets = generate_synthetic(parse_synth_spec(data["spec"]))
        sources = [ProblemSource.from_dataset(d) for d in datasets]
    elif data["kind"] == "files":
        if not data["paths"]:
            raise ConfigError("data.kind 'files' needs a non-empty data.paths list")
        sources = [
            ProblemSource.from_directory(resolve(p), i, backbone.channels,
                                         backbone.max_len)
            for i, p in enumerate(data["paths"])]
    elif data["kind"] == "text":
        if backbone.kind != "HASHING":
            raise ConfigError("data.kind 'text' needs backbone.kind 'HASHING'")
        if not data["problems"]:
            raise ConfigError("data.kind 'text' needs a non-empty data.problems list")
        sources = [
            ProblemSource.from_dataset(load_text_problem(
                _parse_obj(p, "text problem", {
                    "name": (str, _REQUIRED),
                    "train": (str, _REQUIRED), "val": (str, _REQUIRED),
                    "test": (str, _REQUIRED)}),
                i, backbone, resolve))
            for i, p in enumerate(data["problems"])]
    else:
        raise ConfigError(f"unknown data.kind {data['kind']!r}")
    got["sources"] = sources
    return got


def load_text_problem(entry, problem_id, backbone: BackboneSpec, resolve):
    """Labeled-text splits embedded with the deterministic hashing backbone.

    Each split file holds one sample per line: '<label><TAB><text>'.
    """
    splits = {}
    n_classes = 0
    for split in ("train", "val", "test"):
        samples = []
        path = resolve(entry[split])
        try:
            lines = path.read_text().splitlines()
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            label_text, _, text = line.partition("\t")
            try:
                label = int(label_text)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad label {label_text!r}") from exc
            tokens = hash_embed(text, backbone.channels, backbone.max_len,
                                backbone.hash_seed)
            samples.append(EmbeddedSequence(tokens=tokens, label=label))
            n_classes = max(n_classes, label + 1)
        splits[split] = samples
    ds = ProblemDataset(problem_id=problem_id, name=entry["name"],
                        n_classes=n_classes, **splits)
    ds.validate()
    return ds


def _round9(value):
    if isinstance(value, float):
        return float(f"{value:.9g}")
    if isinstance(value, dict):
        return {k: _round9(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round9(v) for v in value]
    return value


def dump_json(payload, path=None) -> str:
    text = json.dumps(_round9(payload), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def write_matrix_csv(path, matrix) -> None:
    m = np.asarray(getattr(matrix, "values", matrix), dtype=np.float64)
    lines = [",".join(f"{v:.9g}" for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(cell) for cell in line.split(",")])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: unparseable cell ({exc})") from exc
    if not rows:
        raise DataError(f"{path}: empty matrix")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataError(f"{path}: ragged rows")
    return np.asarray(rows, dtype=np.float64)


def cmd_run(args) -> int:
    config_path = Path(args.config)
    try:
        raw = json.loads(config_path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    cfg = parse_run_config(raw, config_path.resolve().parent)
    if args.seeds:
        cfg["seeds"] = [int(s) for s in args.seeds.split(",")]
    out_dir = Path(args.out or cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    spec = SequenceSpec(
        sources=cfg["sources"], mode=cfg["mode"], baseline=cfg["baseline"],
        pooling=cfg["pooling"], backbone=cfg["backbone"], train=cfg["train"],
        seeds=cfg["seeds"], bottleneck=cfg["adapter_bottleneck"])
    result = run_sequence(spec, jobs=args.jobs)

    write_matrix_csv(out_dir / "accuracy_matrix.csv", result.mean_accuracy())
    write_matrix_csv(out_dir / "mf1_matrix.csv", result.mean_mf1())
    per_seed = {}
    for r in result.per_seed:
        write_matrix_csv(out_dir / f"accuracy_matrix_seed{r.seed}.csv", r.accuracy)
        write_matrix_csv(out_dir / f"mf1_matrix_seed{r.seed}.csv", r.mf1)
        report = compute_metrics(r.accuracy, r.mf1)
        curves_all, curves_seen = per_problem_curves(r.accuracy)
        per_seed[str(r.seed)] = {
            **report.as_dict(),
            "problem_order": [spec.sources[i].name for i in r.order],
            "curves": {"macc_t": curves_all, "macc_seen": curves_seen},
        }
        lines = []
        for pid, history in r.histories.items():
            lines.extend(json.dumps({"problem": pid, **h}, sort_keys=True)
                         for h in history)
        (out_dir / f"history_seed{r.seed}.jsonl").write_text("\n".join(lines) + "\n")
        save_checkpoint(out_dir / f"model_seed{r.seed}.hopm", r.state,
                        seeds=[r.seed])

    scalar_keys = ["mAcc", "Pla", "BwT", "Forg", "FwT", "MF1"]
    mean = {k: float(np.mean([per_seed[s][k] for s in per_seed])) for k in scalar_keys}
    std = {k: float(np.std([per_seed[s][k] for s in per_seed])) for k in scalar_keys}
    metadata = {
        "mode": spec.mode, "baseline": spec.baseline,
        "pooling": {"kind": spec.pooling.kind, "order": spec.pooling.order},
        "problems": [s.name for s in spec.sources],
        "n_problems": len(spec.sources),
        "seeds": spec.seeds,
        "parameter_counts": result.per_seed[0].parameter_counts,
    }
    dump_json({"per_seed": per_seed, "mean": mean, "std": std,
               "metadata": metadata}, out_dir / "metrics.json")
    dump_json({
        "config": raw,
        "seeds": spec.seeds,
        "stage_seconds": {str(r.seed): r.stage_seconds for r in result.per_seed},
        "parameter_counts": result.per_seed[0].parameter_counts,
        "version": __version__,
    }, out_dir / "run_manifest.json")
    print(f"wrote {out_dir}/metrics.json ({len(result.per_seed)} seed(s), "
          f"T={len(spec.sources)})")
    return 0


def cmd_gen_synth(args) -> int:
    spec_path = Path(args.spec)
    try:
        raw = json.loads(spec_path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"spec not found: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec is not valid JSON: {exc}") from exc
    spec = parse_synth_spec(raw)
    out_dir = Path(args.out)
    for ds in generate_synthetic(spec):
        write_dataset(out_dir / ds.name, ds)
        print(f"wrote {out_dir / ds.name} ({ds.n_classes} classes, "
              f"{len(ds.train)}/{len(ds.val)}/{len(ds.test)} samples)")
    return 0


def cmd_metrics(args) -> int:
    matrix = read_matrix_csv(args.matrix)
    mf1 = read_matrix_csv(args.mf1_matrix) if args.mf1_matrix else None
    try:
        report = compute_metrics(matrix, mf1)
    except SizeError as exc:
        raise DataError(str(exc)) from exc
    print(dump_json(report.as_dict()), end="")
    if args.curves:
        curves_all, curves_seen = per_problem_curves(matrix)
        lines = ["stage,macc_t,macc_seen"]
        lines += [f"{i},{a:.9g},{s:.9g}"
                  for i, (a, s) in enumerate(zip(curves_all, curves_seen))]
        Path(args.curves).write_text("\n".join(lines) + "\n")
        print(f"wrote curves to {args.curves}", file=sys.stderr)
    return 0


def _inspect_split(path) -> None:
    manifest = read_manifest(path)
    samples, n_classes, _ = read_split(path)  # checksum verified if manifest exists
    lengths = [s.length for s in samples]
    status = "ok" if manifest is not None else "no manifest"
    print(f"{path}: name={manifest['name'] if manifest else '?'} "
          f"split={manifest['split'] if manifest else '?'} "
          f"channels={samples[0].channels} n_classes={n_classes} "
          f"count={len(samples)} len_min={min(lengths)} len_max={max(lengths)} "
          f"checksum={status}")
    tokens = np.concatenate([s.tokens for s in samples], axis=0).astype(np.float64)
    moments = central_moments(tokens, 4).reshape(4, -1)
    for k, row in enumerate(moments, start=1):
        print(f"  moment[{k}] per-channel: mean={row.mean():.6g} "
              f"min={row.min():.6g} max={row.max():.6g}")


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        files = sorted(path.glob("*.hopd"))
        if not files:
            raise DataError(f"{path}: no .hopd files found")
        for f in files:
            _inspect_split(f)
    else:
        _inspect_split(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hopcl",
        description="Continual-learning runs with moment pooling over frozen embeddings")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a continual sequence from a config file")
    p_run.add_argument("--config", required=True, help="JSON run config")
    p_run.add_argument("--out", help="output directory (overrides config out_dir)")
    p_run.add_argument("--seeds", help="comma-separated seed list override")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel seeds")
    p_run.set_defaults(func=cmd_run)

    p_gen = sub.add_parser("gen-synth", help="generate synthetic HOPD datasets")
    p_gen.add_argument("--spec", required=True, help="JSON synthetic spec")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.set_defaults(func=cmd_gen_synth)

    p_met = sub.add_parser("metrics", help="recompute metrics from a matrix CSV")
    p_met.add_argument("--matrix", required=True, help="accuracy matrix CSV")
    p_met.add_argument("--mf1-matrix", help="optional MF1 matrix CSV")
    p_met.add_argument("--curves", help="write per-problem curve CSV here")
    p_met.set_defaults(func=cmd_metrics)

    p_ins = sub.add_parser("inspect", help="summarize a HOPD file or problem directory")
    p_ins.add_argument("path", help=".hopd file or problem directory")
    p_ins.set_defaults(func=cmd_inspect)
    return parser


_EXIT_CODES = [
    ((ConfigError, RoutingError, StateError, SizeError), 1, "config"),
    (DivergenceError, 3, "divergence"),
    ((DataError, ShapeError, LabelError), 2, "data"),
]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HopclError as exc:
        for types, code, kind in _EXIT_CODES:
            if isinstance(exc, types):
                print(f"error:{kind}:{exc}", file=sys.stderr)
                return code
        print(f"error:internal:{exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
