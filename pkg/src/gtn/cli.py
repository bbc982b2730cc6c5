"""Command-line interface.

    gtn train RUN.json [--seed S] [--output-dir DIR] [-v]
    gtn eval CHECKPOINT (--config RUN.json [--split test] | --scalar-csv F | --sequence-csv F
                         | --idx IMAGES LABELS) [--confusion OUT.csv]
    gtn verify [--scale small|full]
    gtn export-features CHECKPOINT --out FEATURES.csv
    gtn gen-data {xor,checkerboard,threshold} --n N [--seed S] --out DATA.csv

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
failure, 4 verification failure. ``GTN_NUM_THREADS`` caps the BLAS thread
pool (read when the package is first imported).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import checkpoint, data, verify
from .architecture import ArchitectureSpec, Model, build
from .errors import GTNError, NumericOverflowError, ParseError, ValidationError
from .evaluate import predict
from .features import export_features_csv
from .training import TrainConfig, accuracy, grid_search, grid_table_csv, sgd_fit

log = logging.getLogger("gtn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3, 4


class DataError(GTNError):
    """A dataset could not be read or does not fit the architecture."""


# ---------------------------------------------------------------------------
# configuration

_DATA_KEYS = {
    "synthetic": {"kind", "generator", "n_train", "n_val", "n_test", "seed"},
    "mnist-subset": {"kind", "n_train", "n_val", "n_test", "split_seed"},
    "idx": {"kind", "train_images", "train_labels", "test_images", "test_labels", "n_train",
            "n_val", "split_seed", "num_classes"},
    "scalar-csv": {"kind", "train", "test", "n_train", "n_val", "split_seed"},
    "sequence-csv": {"kind", "train", "test", "n_train", "n_val", "split_seed", "num_classes"},
}


@dataclass
class DataConfig:
    kind: str
    options: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DataConfig":
        if not isinstance(d, dict) or "kind" not in d:
            raise ValidationError("data section needs a 'kind'", field="data.kind")
        kind = d["kind"]
        if kind not in _DATA_KEYS:
            raise ValidationError(f"unknown data kind {kind!r}", field="data.kind")
        unknown = set(d) - _DATA_KEYS[kind]
        if unknown:
            raise ValidationError(f"unknown data keys for {kind}: {sorted(unknown)}",
                                  field=f"data.{sorted(unknown)[0]}")
        if kind == "synthetic" and d.get("generator") not in data.GENERATORS:
            raise ValidationError(f"unknown generator {d.get('generator')!r}",
                                  field="data.generator")
        return cls(kind, {k: v for k, v in d.items() if k != "kind"})

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, **self.options}


@dataclass
class RunConfig:
    architecture: ArchitectureSpec
    train: TrainConfig
    data: DataConfig
    output_dir: str = "run"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        if not isinstance(d, dict):
            raise ValidationError("run config must be a JSON object", field="")
        unknown = set(d) - {"architecture", "train", "data", "output_dir"}
        if unknown:
            raise ValidationError(f"unknown run keys: {sorted(unknown)}", field=sorted(unknown)[0])
        for key in ("architecture", "data"):
            if key not in d:
                raise ValidationError(f"missing section {key!r}", field=key)
        try:
            arch = ArchitectureSpec.from_dict(d["architecture"])
            train = TrainConfig.from_dict(d.get("train", {}))
        except TypeError as exc:
            raise ValidationError(str(exc), field="") from None
        return cls(arch, train, DataConfig.from_dict(d["data"]), d.get("output_dir", "run"))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: malformed JSON ({exc})", field="") from None
        except OSError as exc:
            raise ValidationError(f"{path}: {exc.strerror}", field="") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict[str, Any]:
        return {"architecture": self.architecture.to_dict(), "train": self.train.to_dict(),
                "data": self.data.to_dict(), "output_dir": self.output_dir}

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (output directory excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# data

def _pool_split(pool, test, opts):
    n_val = int(opts.get("n_val", 0))
    n_train = opts.get("n_train")
    n_train = len(pool) - n_val if n_train is None else int(n_train)
    train, val = data.split(pool, n_train, n_val, int(opts.get("split_seed", 0)))
    return train, val, test


def load_datasets(cfg: DataConfig):
    """``(train, val, test)``; ``val``/``test`` may be empty datasets."""
    o = cfg.options
    try:
        if cfg.kind == "synthetic":
            n_train, n_val, n_test = (int(o.get(k, 0)) for k in ("n_train", "n_val", "n_test"))
            full = data.GENERATORS[o["generator"]](n_train + n_val + n_test, int(o.get("seed", 0)))
            idx = np.arange(len(full))
            return (full.subset(idx[:n_train]), full.subset(idx[n_train:n_train + n_val]),
                    full.subset(idx[n_train + n_val:]))
        if cfg.kind == "mnist-subset":
            return data.split3(data.load_mnist_subset(), int(o.get("n_train", 3500)),
                               int(o.get("n_val", 500)), int(o.get("n_test", 1000)),
                               int(o.get("split_seed", 0)))
        if cfg.kind == "idx":
            k = int(o.get("num_classes", 10))
            pool = data.load_idx(o["train_images"], o["train_labels"], k)
            test = data.load_idx(o["test_images"], o["test_labels"], k) \
                if "test_images" in o else pool.subset([])
            return _pool_split(pool, test, o)
        if cfg.kind == "scalar-csv":
            pool = data.load_scalar_csv(o["train"])
            test = data.load_scalar_csv(o["test"]) if "test" in o else pool.subset([])
            return _pool_split(pool, test, o)
        k = o.get("num_classes")
        pool = data.load_sequence_csv(o["train"], k)
        test = data.load_sequence_csv(o["test"], pool.num_classes) if "test" in o \
            else pool.subset([])
        return _pool_split(pool, test, o)
    except KeyError as exc:
        raise ValidationError(f"data section is missing {exc.args[0]!r}",
                              field=f"data.{exc.args[0]}") from None
    except (OSError, ParseError) as exc:
        raise DataError(str(exc)) from exc


def check_geometry(spec: ArchitectureSpec, ds: data.Dataset):
    geom = tuple(ds.geometry)
    if int(np.prod(geom)) != spec.n_sites or (len(spec.grid) == 2 and geom != spec.grid):
        raise DataError(f"data geometry {geom} does not match grid {spec.grid}")
    if ds.vector_inputs and ds.x.shape[-1] != spec.feature_dim:
        raise DataError(f"feature vectors of length {ds.x.shape[-1]}, "
                        f"architecture expects {spec.feature_dim}")
    if len(ds) and int(ds.y.max()) >= spec.num_classes:
        raise DataError(f"label {int(ds.y.max())} outside {spec.num_classes} classes")


# ---------------------------------------------------------------------------
# commands

def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    if args.output_dir is not None:
        cfg.output_dir = args.output_dir
    train, val, test = load_datasets(cfg.data)
    for ds in (train, val, test):
        check_geometry(cfg.architecture, ds)

    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    summary: dict[str, Any] = {"config_hash": cfg.digest(), "seed": cfg.train.seed,
                               "kind": cfg.architecture.kind}
    try:
        if cfg.train.grid:
            best, cells = grid_search(cfg.architecture, train, val, cfg.train)
            with open(os.path.join(out, "grid.csv"), "w") as fh:
                fh.write(grid_table_csv(cells))
            if best is None:
                raise NumericOverflowError("every grid cell failed; see grid.csv")
            model, metrics = best.model, best.metrics
            summary["grid_best"] = {"learning_rate": best.learning_rate,
                                    "dropout_keep": best.dropout_keep,
                                    "bond_dim": best.bond_dim}
        else:
            model, metrics = sgd_fit(build(cfg.architecture, cfg.train.seed), train, val,
                                     cfg.train)
    except NumericOverflowError as exc:
        best_model = getattr(exc, "best_model", None)
        if best_model is not None:
            checkpoint.save(best_model, os.path.join(out, "checkpoint.gtn"))
        if getattr(exc, "metrics", None) is not None:
            exc.metrics.write_csv(os.path.join(out, "metrics.csv"))
        summary["error"] = str(exc)
        _write_json(os.path.join(out, "summary.json"), summary)
        raise

    metrics.write_csv(os.path.join(out, "metrics.csv"))
    checkpoint.save(model, os.path.join(out, "checkpoint.gtn"))
    summary.update({
        "best_epoch": metrics.best_epoch,
        "train_accuracy": accuracy(model, train),
        "val_accuracy": accuracy(model, val) if len(val) else None,
        "test_accuracy": accuracy(model, test) if len(test) else None,
        "wall_clock_seconds": metrics.wall_clock,
        "n_params": model.n_params,
    })
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"train {summary['train_accuracy']:.4f}"
          + (f"  val {summary['val_accuracy']:.4f}" if summary["val_accuracy"] is not None else "")
          + (f"  test {summary['test_accuracy']:.4f}" if summary["test_accuracy"] is not None
             else ""))
    return EXIT_OK


def confusion_matrix(y_true, y_pred, num_classes) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def _eval_dataset(args, spec):
    if args.config:
        cfg = RunConfig.load(args.config)
        train, val, test = load_datasets(cfg.data)
        return {"train": train, "val": val, "test": test}[args.split]
    try:
        if args.scalar_csv:
            return data.load_scalar_csv(args.scalar_csv)
        if args.sequence_csv:
            return data.load_sequence_csv(args.sequence_csv, spec.num_classes)
        return data.load_idx(args.idx[0], args.idx[1], spec.num_classes)
    except (OSError, ParseError) as exc:
        raise DataError(str(exc)) from exc


def _load_checkpoint(path) -> Model:
    try:
        return checkpoint.load(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    except ParseError as exc:
        raise DataError(f"{path}: {exc}") from exc


def cmd_eval(args) -> int:
    model = _load_checkpoint(args.checkpoint)
    ds = _eval_dataset(args, model.spec)
    check_geometry(model.spec, ds)
    pred = predict(model, ds.x)
    acc = float(np.mean(pred == ds.y)) if len(ds) else float("nan")
    print(f"accuracy {acc!r} on {len(ds)} samples")
    if args.confusion:
        cm = confusion_matrix(ds.y, pred, model.spec.num_classes)
        with open(args.confusion, "w") as fh:
            fh.write("true\\pred," + ",".join(str(k) for k in range(cm.shape[1])) + "\n")
            for k, row in enumerate(cm):
                fh.write(f"{k}," + ",".join(str(int(v)) for v in row) + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_all(args.scale)
    print(verify.format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failing properties: " + ", ".join(failed))
        return EXIT_VERIFY
    return EXIT_OK


def cmd_export_features(args) -> int:
    model = _load_checkpoint(args.checkpoint)
    if not model.feature_map.learnable:
        raise ValidationError(f"checkpoint uses the fixed {model.feature_map.kind!r} feature map; "
                              "only learnable tables can be exported", field="feature_map")
    export_features_csv(model.feature_map, args.out)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.n < 1:
        raise ValidationError("--n must be positive", field="n")
    ds = data.GENERATORS[args.generator](args.n, args.seed)
    data.write_scalar_csv(args.out, ds)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gtn", description="Generalized tensor network classifiers")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    t.add_argument("--output-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy and confusion matrix of a checkpoint")
    e.add_argument("checkpoint")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="run config whose data section to use")
    src.add_argument("--scalar-csv")
    src.add_argument("--sequence-csv")
    src.add_argument("--idx", nargs=2, metavar=("IMAGES", "LABELS"))
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--confusion", help="write the confusion matrix CSV here")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run the oracle and property battery")
    v.add_argument("--scale", choices=("small", "full"), default="small")
    v.set_defaults(func=cmd_verify)

    x = sub.add_parser("export-features", help="write a learned feature table as CSV")
    x.add_argument("checkpoint")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_features)

    g = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    g.add_argument("generator", choices=sorted(data.GENERATORS))
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        where = f" [{exc.field}]" if exc.field else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericOverflowError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
