"""Per-variable feature maps from a scalar in [0, 1] to a short vector.

Three kinds are supported:

* ``linear``          x -> (1, x)
* ``trig-squared``    x -> (cos^2(pi x / 2), sin^2(pi x / 2))
* ``learnable-table`` x -> row floor(x * bins) of a bins x out_dim table

``identity`` is used for datasets whose sites already carry feature vectors
(e.g. precomputed audio coefficients); it passes inputs through untouched.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedOperationError, ValidationError

KINDS = ("linear", "trig-squared", "learnable-table", "identity")


def trig_squared(x):
    x = np.asarray(x, dtype=np.float64)
    c = np.cos(0.5 * np.pi * x)
    s = np.sin(0.5 * np.pi * x)
    return np.stack([c * c, s * s], axis=-1)


@dataclass
class FeatureMap:
    kind: str = "trig-squared"
    out_dim: int = 2
    bins: int = 16
    table: np.ndarray | None = None
    per_variable: bool = False
    # number of inputs clamped into [0, 1] so far
    clamp_count: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown feature map kind {self.kind!r}", field="kind")
        if self.kind in ("linear", "trig-squared") and self.out_dim != 2:
            raise ValidationError(f"{self.kind} maps have out_dim 2", field="out_dim")
        if self.kind == "learnable-table":
            if self.out_dim < 2:
                raise ValidationError("out_dim must be >= 2", field="out_dim")
            if self.bins < 1:
                raise ValidationError("bins must be >= 1", field="bins")
            if self.table is None:
                raise ValidationError("learnable-table map needs a table", field="table")
            self.table = np.asarray(self.table, dtype=np.float64)
            want = self.table.shape[-2:]
            if want != (self.bins, self.out_dim):
                raise ValidationError(
                    f"table shape {self.table.shape} does not end in ({self.bins}, {self.out_dim})",
                    field="table",
                )
            if self.per_variable != (self.table.ndim == 3):
                raise ValidationError("per_variable tables must be 3-d", field="table")

    @property
    def learnable(self) -> bool:
        return self.kind == "learnable-table"

    def copy(self) -> "FeatureMap":
        return FeatureMap(
            kind=self.kind,
            out_dim=self.out_dim,
            bins=self.bins,
            table=None if self.table is None else self.table.copy(),
            per_variable=self.per_variable,
        )

    def bin_index(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.minimum((x * self.bins).astype(np.int64), self.bins - 1)

    def clamp(self, x):
        x = np.asarray(x, dtype=np.float64)
        bad = (x < 0.0) | (x > 1.0)
        n_bad = int(np.count_nonzero(bad))
        if n_bad:
            self.clamp_count += n_bad
            x = np.clip(x, 0.0, 1.0)
        return x

    def __call__(self, x):
        """Map an array of scalars (any shape) to ``shape + (out_dim,)``.

        For per-variable tables the last input axis indexes the variable.
        """
        if self.kind == "identity":
            return np.asarray(x, dtype=np.float64)
        x = self.clamp(x)
        if self.kind == "linear":
            return np.stack([np.ones_like(x), x], axis=-1)
        if self.kind == "trig-squared":
            return trig_squared(x)
        idx = self.bin_index(x)
        if self.per_variable:
            return self.table[np.arange(x.shape[-1]), idx]
        return self.table[idx]


def make_feature_map(kind="trig-squared", out_dim=2, bins=16, per_variable=False,
                     n_variables=None, seed=0, noise=0.01) -> FeatureMap:
    """Construct a feature map; learnable tables start at the trig-squared
    curve sampled at bin centers plus Gaussian noise."""
    if kind != "learnable-table":
        return FeatureMap(kind=kind, out_dim=out_dim if kind == "identity" else 2)
    rng = np.random.default_rng(seed)
    centers = (np.arange(bins) + 0.5) / bins
    base = trig_squared(centers)
    if out_dim > 2:
        # extra channels start near zero
        base = np.concatenate([base, np.zeros((bins, out_dim - 2))], axis=1)
    elif out_dim < 2:
        raise ValidationError("out_dim must be >= 2", field="out_dim")
    if per_variable:
        if not n_variables:
            raise ValidationError("per-variable tables need n_variables", field="per_variable")
        base = np.broadcast_to(base, (n_variables, bins, out_dim))
    table = base + noise * rng.standard_normal(base.shape)
    return FeatureMap(kind=kind, out_dim=out_dim, bins=bins, table=table,
                      per_variable=per_variable)


def map_input(fm: FeatureMap, x):
    return fm(x)


def feature_grad(fm: FeatureMap, x, upstream):
    """Gradient of a downstream quantity w.r.t. the table, given its gradient
    ``upstream`` w.r.t. the feature vectors ``fm(x)``.

    ``x`` may be a scalar or any array; ``upstream`` has shape ``x.shape + (out_dim,)``.
    Contributions of inputs that share a bin are summed.
    """
    if not fm.learnable:
        raise UnsupportedOperationError(f"{fm.kind} feature map has no trainable table")
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    upstream = np.asarray(upstream, dtype=np.float64)
    idx = fm.bin_index(x)
    grad = np.zeros_like(fm.table)
    up = upstream.reshape(-1, fm.out_dim)
    if fm.per_variable:
        var = np.broadcast_to(np.arange(x.shape[-1]), x.shape).reshape(-1)
        np.add.at(grad, (var, idx.reshape(-1)), up)
    else:
        np.add.at(grad, idx.reshape(-1), up)
    return grad


def pretrain_features(fm: FeatureMap, dataset, labels, num_classes=None, epochs=200,
                      learning_rate=0.5, seed=0, return_history=False):
    """Fit the table jointly with a softmax linear classifier on the
    concatenated per-variable feature vectors; the classifier is discarded.

    Full-batch gradient descent on the mean cross-entropy.
    """
    if not fm.learnable:
        raise UnsupportedOperationError(f"{fm.kind} feature map has no trainable table")
    X = np.asarray(dataset, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValidationError("empty dataset", field="dataset")
    X = X.reshape(X.shape[0], -1)
    n, nv = X.shape
    K = int(num_classes if num_classes is not None else y.max() + 1)
    out = fm.copy()
    rng = np.random.default_rng(seed)
    W = 0.01 * rng.standard_normal((K, nv * out.out_dim))
    b = np.zeros(K)
    onehot = np.eye(K)[y]
    history = []
    for _ in range(epochs):
        F = out(X)                       # (n, nv, d)
        z = F.reshape(n, -1) @ W.T + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        history.append(float(-np.mean(np.log(p[np.arange(n), y]))))
        g = (p - onehot) / n             # dL/dz
        gW = g.T @ F.reshape(n, -1)
        gb = g.sum(axis=0)
        gF = (g @ W).reshape(n, nv, out.out_dim)
        out.table = out.table - learning_rate * feature_grad(out, X, gF)
        W -= learning_rate * gW
        b -= learning_rate * gb
    if return_history:
        return out, (W, b), history
    return out


def export_features_csv(fm: FeatureMap, path, normalize=True, variable=0):
    """Write ``bin_center, feature_0, ..., feature_{d-1}`` rows."""
    if not fm.learnable:
        raise UnsupportedOperationError(f"{fm.kind} feature map has no table to export")
    table = fm.table[variable] if fm.per_variable else fm.table
    rows = np.array(table, dtype=np.float64)
    if normalize:
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        rows = rows / np.where(norms == 0, 1.0, norms)
    centers = (np.arange(fm.bins) + 0.5) / fm.bins
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_center"] + [f"feature_{i}" for i in range(fm.out_dim)])
        for c, r in zip(centers, rows):
            w.writerow([repr(float(c))] + [repr(float(v)) for v in r])
    return rows
