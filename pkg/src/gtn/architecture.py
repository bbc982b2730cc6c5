"""Architecture descriptions and parameterized models.

A model is a set of closed (or, for ``mps``, open) strings of matrices laid
over input sites, optionally preceded by a layer of entangled plaquettes.
Supported kinds:

``mps``         one open chain over all sites (boustrophedon order on grids)
``sbs-2d``      one closed string per row and per column
``sbs-snake``   four closed boustrophedon strings
``rbm-sbs``     restricted Boltzmann machine written as a string-bond state
``eps-linear``  shared 2x2 plaquettes with an output leg, then a linear head
``eps-sbs``     shared plaquettes whose outputs feed a snake string-bond state
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from .errors import ValidationError
from .features import FeatureMap, make_feature_map

KINDS = ("mps", "eps-linear", "sbs-2d", "sbs-snake", "eps-sbs", "rbm-sbs")
STRING_KINDS = ("mps", "sbs-2d", "sbs-snake", "eps-sbs", "rbm-sbs")


@dataclass(frozen=True)
class StringLayout:
    sites: tuple[int, ...]
    closed: bool = True

    def __post_init__(self):
        if len(set(self.sites)) != len(self.sites):
            raise ValidationError(f"string visits a site twice: {self.sites}", field="sites")
        if not self.sites:
            raise ValidationError("empty string", field="sites")


@dataclass
class ArchitectureSpec:
    kind: str
    grid: tuple[int, ...]
    bond_dim: int = 2
    feature_dim: int = 2
    num_classes: int = 10
    plaquette: tuple[int, int] = (2, 2)
    eps_out_dim: int = 2
    # (string id, position); position None means the middle of the string
    label_site: tuple[int, int | None] = (0, None)
    share_plaquettes: bool = True
    # hidden units (rbm-sbs) or how many of the four orderings to use (sbs-snake)
    num_strings: int = 4
    feature_map: str = "trig-squared"
    feature_bins: int = 16
    per_variable_features: bool = False

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        self.plaquette = tuple(int(p) for p in self.plaquette)
        ls = tuple(self.label_site)
        self.label_site = (int(ls[0]), None if ls[1] is None else int(ls[1]))
        self.validate()

    # geometry --------------------------------------------------------------
    @property
    def hw(self) -> tuple[int, int]:
        if len(self.grid) == 1:
            return (1, self.grid[0])
        return self.grid  # type: ignore[return-value]

    @property
    def n_sites(self) -> int:
        H, W = self.hw
        return H * W

    @property
    def string_grid(self) -> tuple[int, int]:
        """Grid the strings live on (the plaquette grid for eps-sbs)."""
        H, W = self.hw
        if self.kind == "eps-sbs":
            h, w = self.plaquette
            return (H - h + 1, W - w + 1)
        return (H, W)

    @property
    def site_dim(self) -> int:
        """Input dimension of the string site tensors."""
        return self.eps_out_dim if self.kind == "eps-sbs" else self.feature_dim

    def validate(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown kind {self.kind!r}", field="kind")
        if len(self.grid) not in (1, 2) or any(g < 1 for g in self.grid):
            raise ValidationError(f"grid must be (N,) or (H, W) of positive ints, got {self.grid}",
                                  field="grid")
        if self.bond_dim < 1:
            raise ValidationError("bond_dim must be >= 1", field="bond_dim")
        if self.feature_dim < 1:
            raise ValidationError("feature_dim must be >= 1", field="feature_dim")
        if self.num_classes < 1:
            raise ValidationError("num_classes must be >= 1", field="num_classes")
        if self.kind == "rbm-sbs":
            if self.bond_dim != 2:
                raise ValidationError("rbm-sbs requires bond_dim = 2", field="bond_dim")
            if self.feature_dim != 2:
                raise ValidationError("rbm-sbs requires feature_dim = 2", field="feature_dim")
            if self.num_strings < 1:
                raise ValidationError("num_strings must be >= 1", field="num_strings")
        if self.kind == "sbs-snake" and not 1 <= self.num_strings <= 4:
            raise ValidationError("sbs-snake uses 1 to 4 strings", field="num_strings")
        if self.kind in ("eps-linear", "eps-sbs"):
            H, W = self.hw
            h, w = self.plaquette
            if h < 1 or w < 1 or h > H or w > W:
                raise ValidationError(f"plaquette {self.plaquette} does not fit grid {self.hw}",
                                      field="plaquette")
            if self.eps_out_dim < 1:
                raise ValidationError("eps_out_dim must be >= 1", field="eps_out_dim")
        if self.feature_map not in ("linear", "trig-squared", "learnable-table", "identity"):
            raise ValidationError(f"unknown feature map {self.feature_map!r}", field="feature_map")
        if self.feature_map in ("linear", "trig-squared") and self.feature_dim != 2:
            raise ValidationError(f"{self.feature_map} features have dimension 2",
                                  field="feature_dim")
        if self.kind in STRING_KINDS and self.kind != "rbm-sbs":
            strings = string_layouts(self)
            s, pos = self.label_site
            if not 0 <= s < len(strings):
                raise ValidationError(f"label string {s} out of range", field="label_site")
            if pos is not None and not 0 <= pos < len(strings[s].sites):
                raise ValidationError(f"label position {pos} out of range", field="label_site")

    # serialization ----------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["plaquette"] = list(self.plaquette)
        d["label_site"] = list(self.label_site)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ArchitectureSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown architecture keys: {sorted(unknown)}",
                                  field=sorted(unknown)[0])
        for req in ("kind", "grid"):
            if req not in d:
                raise ValidationError(f"missing architecture key {req!r}", field=req)
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ArchitectureSpec":
        return cls.from_dict(json.loads(text))


# layouts ---------------------------------------------------------------------

def snake_orderings(H: int, W: int) -> list[list[int]]:
    """Four boustrophedon orderings of an H x W grid (row-major site ids).

    1. rows, alternating left->right / right->left
    2. columns, alternating top->bottom / bottom->top
    3. reverse of 1
    4. reverse of 2
    """
    rows = []
    for r in range(H):
        cols = range(W) if r % 2 == 0 else range(W - 1, -1, -1)
        rows.extend(r * W + c for c in cols)
    cols_order = []
    for c in range(W):
        rr = range(H) if c % 2 == 0 else range(H - 1, -1, -1)
        cols_order.extend(r * W + c for r in rr)
    return [rows, cols_order, rows[::-1], cols_order[::-1]]


def eps_layout(H: int, W: int, plaquette=(2, 2)) -> list[list[int]]:
    """Stride-1 plaquettes, each listing its sites row-major; plaquettes are
    ordered row-major by their top-left corner."""
    h, w = plaquette
    if H < h or W < w:
        raise ValidationError(f"grid {H}x{W} smaller than plaquette {h}x{w}", field="plaquette")
    out = []
    for r in range(H - h + 1):
        for c in range(W - w + 1):
            out.append([(r + i) * W + (c + j) for i in range(h) for j in range(w)])
    return out


def string_layouts(spec: ArchitectureSpec) -> list[StringLayout]:
    H, W = spec.string_grid
    if spec.kind == "mps":
        return [StringLayout(tuple(snake_orderings(H, W)[0]), closed=False)]
    if spec.kind == "sbs-snake":
        return [StringLayout(tuple(o)) for o in snake_orderings(H, W)[:spec.num_strings]]
    if spec.kind == "eps-sbs":
        return [StringLayout(tuple(o)) for o in snake_orderings(H, W)]
    if spec.kind == "sbs-2d":
        rows = [StringLayout(tuple(r * W + c for c in range(W))) for r in range(H)]
        cols = [StringLayout(tuple(r * W + c for r in range(H))) for c in range(W)]
        return rows + cols
    if spec.kind == "rbm-sbs":
        return [StringLayout(tuple(range(H * W))) for _ in range(spec.num_strings)]
    return []


def label_placement(spec: ArchitectureSpec) -> dict[int, int]:
    """Map string id -> label position within that string.

    Every rbm-sbs string carries the label at position 0 (the label acts as an
    extra visible unit coupled to each hidden unit).
    """
    strings = string_layouts(spec)
    if spec.kind == "rbm-sbs":
        return {s: 0 for s in range(len(strings))}
    if not strings:
        return {}
    s, pos = spec.label_site
    if pos is None:
        pos = len(strings[s].sites) // 2
    return {s: pos}


# model -----------------------------------------------------------------------

@dataclass
class Model:
    spec: ArchitectureSpec
    params: dict[str, np.ndarray]
    feature_map: FeatureMap
    positive: bool = False
    strings: list[StringLayout] = field(init=False, repr=False)
    labels: dict[int, int] = field(init=False, repr=False)
    plaquettes: np.ndarray | None = field(init=False, repr=False)

    def __post_init__(self):
        self.strings = string_layouts(self.spec)
        self.labels = label_placement(self.spec)
        if self.spec.kind in ("eps-linear", "eps-sbs"):
            H, W = self.spec.hw
            self.plaquettes = np.array(eps_layout(H, W, self.spec.plaquette), dtype=np.int64)
        else:
            self.plaquettes = None
        expected = param_shapes(self.spec)
        for name, shape in expected.items():
            if name not in self.params:
                raise ValidationError(f"missing parameter {name!r}", field=name)
            arr = np.ascontiguousarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValidationError(f"parameter {name!r} has shape {arr.shape}, expected {shape}",
                                      field=name)
            self.params[name] = arr
        extra = set(self.params) - set(expected)
        if extra:
            raise ValidationError(f"unexpected parameters {sorted(extra)}", field=sorted(extra)[0])

    def copy(self) -> "Model":
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()},
                     self.feature_map.copy(), positive=self.positive)

    def structural_mask(self, name: str) -> np.ndarray | None:
        """Zero pattern forced on open-chain boundary tensors (kind mps)."""
        if self.spec.kind != "mps":
            return None
        return _open_chain_masks(self.spec).get(name)

    def site_tensor(self, s: int, j: int) -> np.ndarray:
        """Tensor at position ``j`` of string ``s`` with its true (unpadded) shape:
        ``(d, D_left, D_right)``, or ``(K, d, D_left, D_right)`` at the label site."""
        if self.spec.kind in ("rbm-sbs", "eps-linear"):
            raise ValidationError(f"{self.spec.kind} has no free site tensors", field="kind")
        lp = self.labels.get(s)
        if lp == j:
            t = self.params["label"]
        else:
            k = j - (1 if lp is not None and j > lp else 0)
            t = self.params[f"string{s}"][k]
        if self.strings[s].closed:
            return t
        L = len(self.strings[s].sites)
        lo = slice(0, 1) if j == 0 else slice(None)
        hi = slice(0, 1) if j == L - 1 else slice(None)
        return t[..., lo, hi]

    @property
    def n_params(self) -> int:
        n = 0
        for name, p in self.params.items():
            m = self.structural_mask(name)
            n += int(p.size if m is None else np.count_nonzero(np.broadcast_to(m, p.shape)))
        if self.feature_map.learnable:
            n += self.feature_map.table.size
        return n


def param_shapes(spec: ArchitectureSpec) -> dict[str, tuple[int, ...]]:
    K, D, d = spec.num_classes, spec.bond_dim, spec.site_dim
    shapes: dict[str, tuple[int, ...]] = {}
    if spec.kind == "rbm-sbs":
        shapes["w"] = (spec.num_strings, spec.n_sites)
        shapes["label_w"] = (spec.num_strings, K)
        return shapes
    if spec.kind in ("eps-linear", "eps-sbs"):
        H, W = spec.hw
        h, w = spec.plaquette
        P = (H - h + 1) * (W - w + 1)
        conf = spec.feature_dim ** (h * w)
        pshape = (conf, spec.eps_out_dim)
        shapes["plaquette"] = pshape if spec.share_plaquettes else (P,) + pshape
        if spec.kind == "eps-linear":
            shapes["head_w"] = (K, P * spec.eps_out_dim)
            shapes["head_b"] = (K,)
            return shapes
    labels = label_placement(spec)
    for s, layout in enumerate(string_layouts(spec)):
        L = len(layout.sites) - (1 if s in labels else 0)
        shapes[f"string{s}"] = (L, d, D, D)
    shapes["label"] = (K, d, D, D)
    return shapes


def _open_chain_masks(spec: ArchitectureSpec) -> dict[str, np.ndarray]:
    D = spec.bond_dim
    L = spec.n_sites
    p = label_placement(spec)[0]
    pos_masks = np.ones((L, D, D))
    pos_masks[0, 1:, :] = 0.0
    pos_masks[L - 1, :, 1:] = 0.0
    keep = [j for j in range(L) if j != p]
    return {
        "string0": pos_masks[keep][:, None, :, :],
        "label": pos_masks[p][None, None, :, :],
    }


def _identity_plus_noise(rng, shape_lead, d, D, length=1):
    """Slices I + N(0, sigma^2) with sigma = 0.1 / sqrt(D * length).

    Scaling the noise with the string length keeps the spread of the string
    trace around D independent of how many matrices are multiplied.
    """
    sigma = 0.1 / np.sqrt(D * max(length, 1))
    return np.eye(D) + sigma * rng.standard_normal(shape_lead + (d, D, D))


def build(spec: ArchitectureSpec, seed: int = 0, feature_map: FeatureMap | None = None) -> Model:
    """Initialize a model for ``spec``; deterministic in ``seed``.

    Site matrices start at identity plus N(0, 0.01 / (D L)) noise, L being
    the length of the string holding the site. The K label slices are drawn
    independently: identical slices would make every string gradient vanish
    by symmetry.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    K, D, d = spec.num_classes, spec.bond_dim, spec.site_dim
    params: dict[str, np.ndarray] = {}
    shapes = param_shapes(spec)

    if spec.kind == "rbm-sbs":
        params["w"] = 0.01 * rng.standard_normal(shapes["w"])
        params["label_w"] = np.zeros(shapes["label_w"])
    else:
        if "plaquette" in shapes:
            o = spec.eps_out_dim
            noise = 0.01 if spec.kind == "eps-sbs" else 0.1
            params["plaquette"] = 1.0 / o + noise * rng.standard_normal(shapes["plaquette"])
        if spec.kind == "eps-linear":
            params["head_w"] = 0.01 * rng.standard_normal(shapes["head_w"])
            params["head_b"] = np.zeros(shapes["head_b"])
        else:
            label_string = f"string{next(iter(label_placement(spec)))}"
            for name, shape in shapes.items():
                if name.startswith("string"):
                    params[name] = _identity_plus_noise(rng, (shape[0],), d, D,
                                                        length=shape[0] + (name == label_string))
            params["label"] = _identity_plus_noise(rng, (K,), d, D,
                                                   length=shapes[label_string][0] + 1)
    if spec.kind == "mps":
        for name, m in _open_chain_masks(spec).items():
            params[name] = params[name] * m

    if feature_map is None:
        feature_map = make_feature_map(
            spec.feature_map, out_dim=spec.feature_dim, bins=spec.feature_bins,
            per_variable=spec.per_variable_features, n_variables=spec.n_sites,
            seed=seed + 1,
        )
    return Model(spec, params, feature_map)


def compose_eps_sbs(spec: ArchitectureSpec, seed: int = 0) -> Model:
    """Two-layer model: shared-plaquette EPS whose output vectors are copied
    into every snake string that visits them."""
    if spec.kind != "eps-sbs":
        raise ValidationError(f"compose_eps_sbs needs kind eps-sbs, got {spec.kind}", field="kind")
    return build(spec, seed)


def rbm_to_sbs(w, num_classes: int = 1) -> Model:
    """String-bond state equal to an RBM with weights ``w`` (hidden x visible).

    Each hidden unit becomes one closed bond-dimension-2 string over all visible
    sites with diagonal site matrices diag(1, exp(w_sj x_j)); the score on a
    binary input is prod_s (1 + exp(sum_j w_sj x_j)).
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValidationError("weights must be a hidden x visible matrix", field="w")
    M, N = w.shape
    spec = ArchitectureSpec(kind="rbm-sbs", grid=(N,), bond_dim=2, feature_dim=2,
                            num_classes=num_classes, num_strings=M)
    params = {"w": w.copy(), "label_w": np.zeros((M, num_classes))}
    return Model(spec, params, make_feature_map("trig-squared"))


def rbm_site_tensors(w, label_w):
    """Materialize the diagonal site tensors of an rbm-sbs model.

    Returns ``(sites, labels)`` with ``sites[s]`` of shape (N-1, 2, 2, 2)
    for positions 1..N-1 and ``labels[s]`` of shape (K, 2, 2, 2) for
    position 0, which also carries the label coupling exp(label_w[s, k]).
    """
    M, N = w.shape
    K = label_w.shape[1]
    sites = np.zeros((M, N - 1, 2, 2, 2))
    sites[:, :, 0, 0, 0] = 1.0
    sites[:, :, 0, 1, 1] = 1.0
    sites[:, :, 1, 0, 0] = 1.0
    sites[:, :, 1, 1, 1] = np.exp(w[:, 1:])
    labels = np.zeros((M, K, 2, 2, 2))
    labels[:, :, :, 0, 0] = 1.0
    labels[:, :, 0, 1, 1] = np.exp(label_w)
    labels[:, :, 1, 1, 1] = np.exp(w[:, :1] + label_w)
    return sites, labels


def kron_mps(tensor_stacks):
    """Merge strings that visit the same sites in the same order into one
    string whose matrices are Kronecker products (bond dimension prod D_s).

    ``tensor_stacks`` is a list of arrays of shape (L, d, D_s, D_s).
    """
    out = np.asarray(tensor_stacks[0])
    for t in tensor_stacks[1:]:
        t = np.asarray(t)
        L, d, a, _ = out.shape
        b = t.shape[2]
        out = np.einsum("ldij,ldkm->ldikjm", out, t).reshape(L, d, a * b, a * b)
    return out
