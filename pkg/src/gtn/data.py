"""Datasets: IDX images, precomputed feature-vector sequences, synthetic sets."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (BadMagicError, CountMismatchError, ParseError, TruncatedFileError,
                     ValidationError)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Samples ``x`` of shape (n,) + geometry (scalars in [0, 1]) or
    (n, N, d) for precomputed feature-vector sequences, and integer labels."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int | None = None
    vector_inputs: bool = False

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.shape[0] != self.y.shape[0]:
            raise ValidationError(f"{self.x.shape[0]} samples but {self.y.shape[0]} labels",
                                  field="y")
        if self.num_classes is None:
            self.num_classes = int(self.y.max()) + 1 if len(self.y) else 0
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValidationError("labels outside [0, num_classes)", field="y")

    def __len__(self):
        return len(self.y)

    @property
    def geometry(self) -> tuple[int, ...]:
        return self.x.shape[1:-1] if self.vector_inputs else self.x.shape[1:]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.num_classes, self.vector_inputs)


# ---------------------------------------------------------------------------
# IDX

def _read_header(buf: bytes, magic: int, name: str):
    if len(buf) < 8:
        raise TruncatedFileError(f"{name}: file shorter than its header", offset=len(buf))
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise BadMagicError(f"{name}: magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(buf) < end:
        raise TruncatedFileError(f"{name}: truncated dimension header", offset=len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:end])
    need = end + int(np.prod(dims, dtype=np.int64))
    if len(buf) < need:
        raise TruncatedFileError(f"{name}: {len(buf)} bytes, header promises {need}",
                                 offset=len(buf))
    return dims, end


def read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    dims, off = _read_header(buf, IMAGE_MAGIC, str(path))
    n = int(np.prod(dims))
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=off).reshape(dims)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    dims, off = _read_header(buf, LABEL_MAGIC, str(path))
    return np.frombuffer(buf, dtype=np.uint8, count=dims[0], offset=off).copy()


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", IMAGE_MAGIC))
        fh.write(struct.pack(">3I", *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", LABEL_MAGIC))
        fh.write(struct.pack(">I", labels.shape[0]))
        fh.write(labels.tobytes())


def load_idx(images_path, labels_path, num_classes=10) -> Dataset:
    """Pixels scaled to [0, 1] by dividing by 255."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4)
    return Dataset(images.astype(np.float64) / 255.0, labels, num_classes)


def to_bytes(x) -> np.ndarray:
    """Invert the /255 normalization."""
    return np.rint(np.asarray(x) * 255.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# splits

def split(ds: Dataset, n_train: int, n_val: int, seed: int = 0):
    if n_train < 0 or n_val < 0 or n_train + n_val > len(ds):
        raise ValidationError(f"cannot take {n_train} + {n_val} samples from {len(ds)}",
                              field="n_train")
    perm = np.random.default_rng(seed).permutation(len(ds))
    return ds.subset(perm[:n_train]), ds.subset(perm[n_train:n_train + n_val])


def split3(ds: Dataset, n_train: int, n_val: int, n_test: int, seed: int = 0):
    """Disjoint train/validation/test subsets from one seeded permutation."""
    if min(n_train, n_val, n_test) < 0 or n_train + n_val + n_test > len(ds):
        raise ValidationError(f"cannot take {n_train} + {n_val} + {n_test} samples from {len(ds)}",
                              field="n_train")
    perm = np.random.default_rng(seed).permutation(len(ds))
    a, b = n_train, n_train + n_val
    return ds.subset(perm[:a]), ds.subset(perm[a:b]), ds.subset(perm[b:b + n_test])


def load_mnist_subset() -> Dataset:
    """The 5000-digit MNIST sample bundled with ``mlxtend`` (500 per class),
    as 28 x 28 images scaled to [0, 1]."""
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise ValidationError("the bundled MNIST subset needs the 'mlxtend' package",
                              field="data") from exc
    x, y = mnist_data()
    return Dataset(x.reshape(-1, 28, 28).astype(np.float64) / 255.0, y, 10)


# ---------------------------------------------------------------------------
# feature-vector sequences (CSV)

def _parse_header(line: str):
    out = {}
    for part in line.strip().lstrip("#").split(","):
        if "=" not in part:
            raise ValueError(part)
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    N, d = int(out["N"]), int(out["d"])
    lo = np.array([float(t) for t in out["min"].split(";")])
    hi = np.array([float(t) for t in out["max"].split(";")])
    if lo.size == 1:
        lo = np.full(d, lo[0])
    if hi.size == 1:
        hi = np.full(d, hi[0])
    if lo.size != d or hi.size != d:
        raise ValueError("range length")
    return N, d, lo, hi


def load_sequence_csv(path, num_classes=None) -> Dataset:
    """Rows ``label, f_0_0, ..., f_0_{d-1}, f_1_0, ...`` after a header line
    ``N=<n>,d=<d>,min=<a;b;...>,max=<a;b;...>`` (a single value applies to every
    dimension). Each feature dimension is min-max scaled with the header ranges."""
    with open(path, newline="") as fh:
        header = fh.readline()
        try:
            N, d, lo, hi = _parse_header(header)
        except (KeyError, ValueError):
            raise ParseError(f"bad header {header.strip()!r}", row=1) from None
        xs, ys = [], []
        for r, row in enumerate(csv.reader(fh), start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 1 + N * d:
                raise ParseError(f"row {r} has {len(row) - 1} values, expected {N * d}", row=r)
            try:
                ys.append(int(row[0]))
                xs.append([float(c) for c in row[1:]])
            except ValueError:
                raise ParseError(f"row {r} is not numeric", row=r) from None
    x = np.array(xs, dtype=np.float64).reshape(-1, N, d)
    span = np.where(hi > lo, hi - lo, 1.0)
    x = (x - lo) / span
    return Dataset(x, np.array(ys, dtype=np.int64), num_classes, vector_inputs=True)


def write_sequence_csv(path, x, y, lo=0.0, hi=1.0):
    """Inverse of :func:`load_sequence_csv`; values are written with 17
    significant digits. ``x`` holds raw (unscaled) values of shape (n, N, d)."""
    x = np.asarray(x, dtype=np.float64)
    n, N, d = x.shape
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (d,))
    with open(path, "w", newline="") as fh:
        fmt = lambda a: ";".join(f"{v:.17g}" for v in a)  # noqa: E731
        fh.write(f"N={N},d={d},min={fmt(lo)},max={fmt(hi)}\n")
        w = csv.writer(fh)
        for xi, yi in zip(x, y):
            w.writerow([int(yi)] + [f"{v:.17g}" for v in xi.reshape(-1)])


# ---------------------------------------------------------------------------
# scalar samples (CSV)

def write_scalar_csv(path, ds: Dataset):
    """Rows ``label, x_0, x_1, ...`` with a ``shape=<h>x<w>,classes=<k>`` header."""
    with open(path, "w", newline="") as fh:
        shape = "x".join(str(g) for g in ds.geometry)
        fh.write(f"shape={shape},classes={ds.num_classes}\n")
        w = csv.writer(fh)
        for xi, yi in zip(ds.x, ds.y):
            w.writerow([int(yi)] + [f"{v:.17g}" for v in xi.reshape(-1)])


def load_scalar_csv(path) -> Dataset:
    """Inverse of :func:`write_scalar_csv`."""
    with open(path, newline="") as fh:
        header = fh.readline()
        try:
            fields = dict(part.split("=", 1) for part in header.strip().split(","))
            shape = tuple(int(t) for t in fields["shape"].split("x"))
            k = int(fields["classes"])
        except (KeyError, ValueError):
            raise ParseError(f"bad header {header.strip()!r}", row=1) from None
        n_vals = int(np.prod(shape))
        xs, ys = [], []
        for r, row in enumerate(csv.reader(fh), start=2):
            if not row:
                continue
            if len(row) != 1 + n_vals:
                raise ParseError(f"row {r} has {len(row) - 1} values, expected {n_vals}", row=r)
            try:
                ys.append(int(row[0]))
                xs.append([float(c) for c in row[1:]])
            except ValueError:
                raise ParseError(f"row {r} is not numeric", row=r) from None
    return Dataset(np.array(xs, dtype=np.float64).reshape((-1,) + shape), np.array(ys), k)


# ---------------------------------------------------------------------------
# synthetic

def make_xor_features(n: int, seed: int = 0) -> Dataset:
    """Two uniform variables; label = [x1 > 0.5] XOR [x2 > 0.5]."""
    if n < 4:
        raise ValidationError("n must be >= 4", field="n")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, 2))
    return Dataset(x, xor_label(x), 2)


def xor_label(x) -> np.ndarray:
    x = np.asarray(x)
    return ((x[..., 0] > 0.5) ^ (x[..., 1] > 0.5)).astype(np.int64)


def make_checkerboard(n: int, cells: int = 4, seed: int = 0) -> Dataset:
    """Two uniform variables labelled by the parity of their cells on a
    ``cells`` x ``cells`` board; ``cells=2`` is the XOR set."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, 2))
    c = np.minimum((x * cells).astype(np.int64), cells - 1)
    return Dataset(x, (c[:, 0] + c[:, 1]) % 2, 2)


def make_threshold(n: int, seed: int = 0, n_vars: int = 2) -> Dataset:
    """Uniform variables labelled by whether the first exceeds 0.5."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, n_vars))
    return Dataset(x, (x[:, 0] > 0.5).astype(np.int64), 2)


GENERATORS = {
    "xor": lambda n, seed: make_xor_features(n, seed),
    "checkerboard": lambda n, seed: make_checkerboard(n, 4, seed),
    "threshold": lambda n, seed: make_threshold(n, seed),
}
