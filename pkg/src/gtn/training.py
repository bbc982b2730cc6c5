"""Minibatch SGD with element dropout, validation model selection and grid search."""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .architecture import ArchitectureSpec, Model, build
from .data import Dataset
from .errors import GTNError, NumericOverflowError, ValidationError
from .evaluate import FEATURE_TABLE, loss_and_gradient, predict

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    # keep probability of each tensor element (see dropout_literal)
    dropout_keep: float = 0.95
    batch_size: int = 20
    epochs: int = 100
    seed: int = 0
    grid: dict[str, list] | None = None
    positivity: bool = False
    optimizer: str = "sgd"
    # treat dropout_keep as a drop probability instead
    dropout_literal: bool = False
    # evaluate accuracy on the whole training set after each epoch
    full_train_eval: bool = True
    eval_batch_size: int = 500

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValidationError("dropout_keep must be in (0, 1]", field="dropout_keep")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1", field="batch_size")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0", field="epochs")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0", field="learning_rate")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}", field="optimizer")
        if self.grid is not None:
            unknown = set(self.grid) - {"learning_rate", "dropout_keep", "bond_dim"}
            if unknown:
                raise ValidationError(f"unknown grid axes {sorted(unknown)}", field="grid")
            for k, v in self.grid.items():
                if not v:
                    raise ValidationError(f"grid axis {k} is empty", field="grid")

    @property
    def keep_probability(self) -> float:
        return 1.0 - self.dropout_keep if self.dropout_literal else self.dropout_keep

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown train keys: {sorted(unknown)}",
                                  field=sorted(unknown)[0])
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class Metrics:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    wall_clock: float = 0.0
    best_epoch: int = -1
    test_accuracy: float | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
        for e, row in enumerate(zip(self.train_loss, self.train_acc, self.val_acc), start=1):
            w.writerow([e] + [repr(float(v)) for v in row])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def accuracy(model: Model, ds: Dataset, batch_size: int = 500) -> float:
    if len(ds) == 0:
        return float("nan")
    return float(np.mean(predict(model, ds.x, batch_size) == ds.y))


def trainable(model: Model) -> dict[str, np.ndarray]:
    """Every parameter array updated by training (feature table included)."""
    out = dict(model.params)
    if model.feature_map.learnable:
        out[FEATURE_TABLE] = model.feature_map.table
    return out


def dropout_mask(model: Model, keep: float, rng, literal: bool = False) -> dict[str, np.ndarray]:
    """Bernoulli keep-mask over every element of the network tensors.

    ``keep`` is the keep probability (``literal=True`` reads it as the drop
    probability). No rescaling is applied to kept elements.
    """
    if literal:
        keep = 1.0 - keep
    if not 0.0 <= keep <= 1.0:
        raise ValidationError("keep probability must be in [0, 1]", field="dropout_keep")
    masks = {}
    for name, p in model.params.items():
        if keep >= 1.0:
            masks[name] = np.ones_like(p)
        else:
            masks[name] = (rng.random(p.shape) < keep).astype(np.float64)
    return masks


def positive_reparam(model: Model, seed: int | None = None, noise: float | None = None) -> Model:
    """Model whose stored parameters are logs of the network elements.

    Strictly positive parameters are converted exactly (theta = log w).
    Otherwise theta is re-initialized. String and label slices become
    ``(I + c (J - I)) * exp(sigma z)`` with ``c = 1 / (D L)`` and
    ``sigma = 0.1 / sqrt(D L)`` (L the string length): the positive analogue
    of the identity-plus-noise start, with every string trace near D. A
    nearly uniform start (all elements 1/D) would make each site matrix
    almost rank one, so the environments would carry almost no information
    about the input. Plaquette outputs start near 1/o. ``noise`` overrides
    sigma for every tensor.
    """
    if model.positive:
        return model.copy()
    out = model.copy()
    if all(np.all(p > 0) for name, p in out.params.items()
           if out.structural_mask(name) is None):
        out.params = {k: np.log(np.where(p > 0, p, 1.0)) for k, p in out.params.items()}
        out.positive = True
        return out
    rng = np.random.default_rng(seed if seed is not None else 0)
    spec = out.spec
    D = spec.bond_dim
    base = {
        "plaquette": 1.0 / spec.eps_out_dim,
        "head_w": 0.01,
        "head_b": 0.01,
        "w": 0.01,
        "label_w": 0.01,
    }
    label_len = len(out.strings[next(iter(out.labels))].sites) if out.labels else 1
    theta = {}
    for name, p in out.params.items():
        if name in base:
            sigma = 0.01 if noise is None else noise
            theta[name] = np.log(base[name]) + sigma * rng.standard_normal(p.shape)
            continue
        L = label_len if name == "label" else len(out.strings[int(name[6:])].sites)
        c = 1.0 / (D * L)
        sigma = 0.1 / np.sqrt(D * L) if noise is None else noise
        start = np.log(np.eye(D) + c * (1.0 - np.eye(D)))
        theta[name] = start + sigma * rng.standard_normal(p.shape)
    out.params = theta
    out.positive = True
    return out


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mh = m / (1 - self.b1 ** self.t)
            vh = v / (1 - self.b2 ** self.t)
            params[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)


def _apply_sgd(params, grads, lr):
    for k, g in grads.items():
        params[k] -= lr * g


def sgd_fit(model: Model, train: Dataset, val: Dataset | None, cfg: TrainConfig,
            callback=None):
    """Train ``model`` in place-free fashion; return ``(best_model, metrics)``.

    Each epoch shuffles the training set with the run seed, and every
    minibatch draws a fresh dropout mask. The returned model is the one with
    the highest validation accuracy (training accuracy when no validation
    set is given). On a numeric failure a :class:`NumericOverflowError` is
    raised with ``best_model`` and ``metrics`` attached.
    """
    cfg.validate()
    if len(train) == 0:
        raise ValidationError("empty training set", field="train")
    model = model.copy()
    if cfg.positivity and not model.positive:
        model = positive_reparam(model, seed=cfg.seed)
    n = len(train)
    rng = np.random.default_rng(cfg.seed)
    mask_rng = np.random.default_rng([cfg.seed, 1])
    keep = cfg.keep_probability
    opt = _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else None
    metrics = Metrics()
    best_model, best_acc = model.copy(), -np.inf
    start = time.perf_counter()

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        losses = []
        correct = 0
        try:
            for i in range(0, n, cfg.batch_size):
                idx = perm[i:i + cfg.batch_size]
                mask = dropout_mask(model, keep, mask_rng) if keep < 1.0 else None
                value, grads, s = loss_and_gradient(model, train.x[idx], train.y[idx], mask)
                if not np.isfinite(value) or not all(np.all(np.isfinite(g))
                                                     for g in grads.values()):
                    raise NumericOverflowError(
                        f"non-finite loss or gradient at epoch {epoch + 1}, step {i // cfg.batch_size}")
                losses.append(value * len(idx))
                correct += int(np.sum(np.argmax(s, axis=1) == train.y[idx]))
                params = trainable(model)
                if opt is None:
                    _apply_sgd(params, grads, cfg.learning_rate)
                else:
                    opt.step(params, grads)
        except NumericOverflowError as exc:
            metrics.wall_clock = time.perf_counter() - start
            exc.best_model = best_model
            exc.metrics = metrics
            raise

        train_loss = float(np.sum(losses) / n)
        try:
            train_acc = accuracy(model, train, cfg.eval_batch_size) if cfg.full_train_eval \
                else correct / n
            val_acc = accuracy(model, val, cfg.eval_batch_size) if val is not None and len(val) \
                else float("nan")
        except NumericOverflowError as exc:
            exc.best_model = best_model
            exc.metrics = metrics
            raise
        metrics.train_loss.append(train_loss)
        metrics.train_acc.append(train_acc)
        metrics.val_acc.append(val_acc)
        sel = val_acc if not np.isnan(val_acc) else train_acc
        if sel > best_acc:
            best_acc = sel
            best_model = model.copy()
            metrics.best_epoch = epoch + 1
        log.info("epoch %d loss %.5f train %.4f val %.4f", epoch + 1, train_loss,
                 train_acc, val_acc)
        if callback is not None:
            callback(epoch + 1, model, metrics)

    if cfg.epochs == 0:
        metrics.best_epoch = 0
    metrics.wall_clock = time.perf_counter() - start
    return best_model, metrics


@dataclass
class GridCell:
    learning_rate: float
    dropout_keep: float
    bond_dim: int
    status: str = "ok"
    val_acc: float = float("nan")
    train_acc: float = float("nan")
    error: str = ""
    metrics: Metrics | None = field(default=None, repr=False)
    model: Model | None = field(default=None, repr=False)


def grid_search(spec: ArchitectureSpec, train: Dataset, val: Dataset | None, cfg: TrainConfig,
                model_factory=None):
    """Train one model per (learning_rate, dropout_keep, bond_dim) point.

    Returns ``(best_cell, cells)``. Cells whose training raises are marked
    ``failed`` and the sweep continues. Selection is by validation accuracy,
    ties broken by smaller bond dimension, then smaller learning rate.
    """
    grid = dict(cfg.grid or {})
    lrs = grid.get("learning_rate", [cfg.learning_rate])
    keeps = grid.get("dropout_keep", [cfg.dropout_keep])
    dims = grid.get("bond_dim", [spec.bond_dim])
    if not lrs or not keeps or not dims:
        raise ValidationError("grid lists must be nonempty", field="grid")
    factory = model_factory or (lambda sp: build(sp, cfg.seed))
    cells = []
    for D, lr, keep in itertools.product(dims, lrs, keeps):
        cell = GridCell(lr, keep, D)
        try:
            sp = ArchitectureSpec.from_dict({**spec.to_dict(), "bond_dim": D})
            c = dataclasses.replace(cfg, learning_rate=lr, dropout_keep=keep, grid=None)
            model, m = sgd_fit(factory(sp), train, val, c)
            cell.metrics, cell.model = m, model
            best = m.best_epoch - 1
            cell.val_acc = m.val_acc[best] if best >= 0 else float("nan")
            cell.train_acc = m.train_acc[best] if best >= 0 else float("nan")
        except (GTNError, FloatingPointError) as exc:
            cell.status = "failed"
            cell.error = f"{type(exc).__name__}: {exc}"
            log.warning("grid cell D=%s lr=%s keep=%s failed: %s", D, lr, keep, exc)
        cells.append(cell)
    ok = [c for c in cells if c.status == "ok"]
    if not ok:
        return None, cells

    def key(c):
        v = c.val_acc if not np.isnan(c.val_acc) else c.train_acc
        return (-v, c.bond_dim, c.learning_rate)

    return min(ok, key=key), cells


def grid_table_csv(cells) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bond_dim", "learning_rate", "dropout_keep", "status", "val_acc", "train_acc",
                "error"])
    for c in cells:
        w.writerow([c.bond_dim, repr(c.learning_rate), repr(c.dropout_keep), c.status,
                    repr(c.val_acc), repr(c.train_acc), c.error])
    return buf.getvalue()
