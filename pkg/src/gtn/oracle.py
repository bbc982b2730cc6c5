"""Exhaustive reference implementations used to check the fast paths.

Nothing here reuses the contraction schedules of :mod:`gtn.evaluate`:
networks are flattened into explicit tensors and edges (copy tensors and
weight-shared copies included) and summed term by term.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np

from .errors import ParseError, ResourceError, ValidationError
from .tensor import DenseTensor, copy_tensor

MAX_STATES = 10_000_000


# ---------------------------------------------------------------------------
# flat networks

Slot = tuple[int, int]  # (tensor index, axis)


@dataclass
class FlatNetwork:
    """Tensors plus explicit wiring.

    ``edges`` pair two axis slots that are summed over; ``open_legs`` map an
    axis slot to a site id whose value is supplied at contraction time. The
    same site id may label several legs (all receive the same value).
    """

    tensors: list[np.ndarray] = field(default_factory=list)
    edges: list[tuple[Slot, Slot]] = field(default_factory=list)
    open_legs: list[tuple[Slot, Hashable]] = field(default_factory=list)

    def add(self, tensor) -> int:
        arr = np.asarray(tensor.array if isinstance(tensor, DenseTensor) else tensor,
                         dtype=np.float64)
        self.tensors.append(arr)
        return len(self.tensors) - 1

    def connect(self, a: Slot, b: Slot):
        self.edges.append((tuple(a), tuple(b)))

    def open(self, slot: Slot, site: Hashable):
        self.open_legs.append((tuple(slot), site))

    def validate(self):
        used = {}
        for a, b in self.edges:
            for slot in (a, b):
                if slot in used:
                    raise ValidationError(f"axis slot {slot} used twice", field="edges")
                used[slot] = True
            if self.tensors[a[0]].shape[a[1]] != self.tensors[b[0]].shape[b[1]]:
                raise ValidationError(f"edge {a}-{b} joins unequal extents", field="edges")
        for slot, _ in self.open_legs:
            if slot in used:
                raise ValidationError(f"axis slot {slot} used twice", field="open_legs")
            used[slot] = True
        for t, arr in enumerate(self.tensors):
            for ax in range(arr.ndim):
                if (t, ax) not in used:
                    raise ValidationError(f"axis slot {(t, ax)} is dangling", field="tensors")


def brute_contract(net: FlatNetwork, assignment=None, max_states: int = MAX_STATES) -> float:
    """Sum over every assignment of the bound indices of the product of entries.

    Connected components are summed separately and multiplied. Within a
    component the bound indices are enumerated depth first; a branch is
    abandoned as soon as a completed tensor contributes an exact zero. The
    number of enumerated (partial) assignments is capped by ``max_states``.
    """
    net.validate()
    assignment = dict(assignment or {})
    n_t = len(net.tensors)
    # per tensor: axis -> ("fixed", value) | ("edge", edge id)
    sources: list[dict[int, tuple[str, int]]] = [dict() for _ in range(n_t)]
    for (t, ax), site in net.open_legs:
        if site not in assignment:
            raise ValidationError(f"no value supplied for open leg {site!r}", field="assignment")
        v = int(assignment[site])
        if not 0 <= v < net.tensors[t].shape[ax]:
            raise ValidationError(f"value {v} out of range for leg {site!r}", field="assignment")
        sources[t][ax] = ("fixed", v)
    for e, (a, b) in enumerate(net.edges):
        sources[a[0]][a[1]] = ("edge", e)
        sources[b[0]][b[1]] = ("edge", e)

    parent = list(range(n_t))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in net.edges:
        ra, rb = find(a[0]), find(b[0])
        if ra != rb:
            parent[ra] = rb
    comps: dict[int, list[int]] = {}
    for t in range(n_t):
        comps.setdefault(find(t), []).append(t)

    budget = [max_states]
    total = 1.0
    for members in comps.values():
        total *= _component_sum(net, members, sources, budget)
        if total == 0.0:
            return 0.0
    return float(total)


def _component_sum(net, members, sources, budget):
    tensors = net.tensors
    edge_ids = sorted({src[1] for t in members for src in sources[t].values() if src[0] == "edge"})
    if not edge_ids:
        prod = 1.0
        for t in members:
            prod *= float(tensors[t][_index(sources[t], tensors[t].ndim, {})])
        return prod

    # greedy order: finish the tensor with fewest pending edges first
    pending = {t: {src[1] for src in sources[t].values() if src[0] == "edge"} for t in members}
    order: list[int] = []
    placed: set[int] = set()
    remaining = set(members)
    while remaining:
        t = min(remaining, key=lambda u: (len(pending[u] - placed), u))
        for e in sorted(pending[t] - placed):
            order.append(e)
            placed.add(e)
        remaining.discard(t)
    pos = {e: i for i, e in enumerate(order)}
    completes: list[list[int]] = [[] for _ in order]
    constant = 1.0
    for t in members:
        es = pending[t]
        if not es:
            constant *= float(tensors[t][_index(sources[t], tensors[t].ndim, {})])
        else:
            completes[max(pos[e] for e in es)].append(t)
    if constant == 0.0:
        return 0.0

    extents = []
    for e in order:
        a, _ = net.edges[e]
        extents.append(tensors[a[0]].shape[a[1]])
    values: dict[int, int] = {}
    n = len(order)

    def rec(level, acc):
        if level == n:
            return acc
        e = order[level]
        s = 0.0
        for v in range(extents[level]):
            budget[0] -= 1
            if budget[0] < 0:
                raise ResourceError(f"state-space guard of {MAX_STATES} enumerated states exceeded")
            values[e] = v
            term = acc
            for t in completes[level]:
                term *= tensors[t][_index(sources[t], tensors[t].ndim, values)]
                if term == 0.0:
                    break
            if term != 0.0:
                s += rec(level + 1, term)
        return s

    return constant * rec(0, 1.0)


def _index(src, ndim, values):
    return tuple(src[ax][1] if src[ax][0] == "fixed" else values[src[ax][1]]
                 for ax in range(ndim))


# ---------------------------------------------------------------------------
# factor graphs

@dataclass
class Variable:
    card: int
    visible: bool


@dataclass
class FactorGraph:
    variables: list[Variable]
    factors: list[tuple[tuple[int, ...], np.ndarray]]

    def __post_init__(self):
        self.factors = [(tuple(int(v) for v in vs), np.asarray(t, dtype=np.float64))
                        for vs, t in self.factors]
        self.validate()

    @property
    def visible(self) -> list[int]:
        return [i for i, v in enumerate(self.variables) if v.visible]

    @property
    def hidden(self) -> list[int]:
        return [i for i, v in enumerate(self.variables) if not v.visible]

    def validate(self):
        for vs, t in self.factors:
            if len(set(vs)) != len(vs):
                raise ValidationError(f"factor repeats a variable: {vs}", field="factors")
            for v in vs:
                if not 0 <= v < len(self.variables):
                    raise ValidationError(f"unknown variable {v}", field="factors")
            want = tuple(self.variables[v].card for v in vs)
            if t.shape != want:
                raise ValidationError(f"factor over {vs} has shape {t.shape}, expected {want}",
                                      field="factors")
            if np.any(t < 0):
                raise ValidationError("factor entries must be nonnegative", field="factors")

    def degree(self, var: int) -> int:
        return sum(var in vs for vs, _ in self.factors)

    # text format -------------------------------------------------------------
    def to_text(self) -> str:
        lines = [f"variables {len(self.variables)}"]
        for i, v in enumerate(self.variables):
            lines.append(f"v{i} card={v.card} {'visible' if v.visible else 'hidden'}")
        for vs, t in self.factors:
            lines.append("factor " + " ".join(str(v) for v in vs))
            lines.append(" ".join(repr(float(x)) for x in t.reshape(-1)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FactorGraph":
        rows = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
        rows = [(n, ln) for n, ln in rows if ln and not ln.startswith("#")]
        if not rows or not rows[0][1].startswith("variables"):
            raise ParseError("expected header 'variables <n>'", row=rows[0][0] if rows else 1)
        try:
            nvar = int(rows[0][1].split()[1])
        except (IndexError, ValueError):
            raise ParseError("bad header", row=rows[0][0]) from None
        variables = []
        for k in range(nvar):
            if 1 + k >= len(rows):
                raise ParseError("missing variable lines", row=rows[-1][0])
            n, ln = rows[1 + k]
            parts = ln.split()
            try:
                if parts[0] != f"v{k}" or not parts[1].startswith("card="):
                    raise ValueError
                card = int(parts[1][5:])
                kind = parts[2]
                if kind not in ("visible", "hidden"):
                    raise ValueError
            except (IndexError, ValueError):
                raise ParseError(f"bad variable line {ln!r}", row=n) from None
            variables.append(Variable(card, kind == "visible"))
        factors = []
        cur_vars, cur_vals, cur_row = None, [], None

        def flush():
            if cur_vars is not None:
                shape = tuple(variables[v].card for v in cur_vars)
                if len(cur_vals) != int(np.prod(shape, dtype=np.int64)):
                    raise ParseError(f"factor {cur_vars} has {len(cur_vals)} entries, "
                                     f"expected {int(np.prod(shape))}", row=cur_row)
                factors.append((cur_vars, np.array(cur_vals).reshape(shape)))

        for n, ln in rows[1 + nvar:]:
            if ln.startswith("factor"):
                flush()
                try:
                    cur_vars = tuple(int(v) for v in ln.split()[1:])
                    if any(not 0 <= v < nvar for v in cur_vars):
                        raise ValueError
                except ValueError:
                    raise ParseError(f"bad factor line {ln!r}", row=n) from None
                cur_vals, cur_row = [], n
            else:
                if cur_vars is None:
                    raise ParseError("entries before any factor line", row=n)
                try:
                    cur_vals.extend(float(x) for x in ln.split())
                except ValueError:
                    raise ParseError(f"bad factor entries {ln!r}", row=n) from None
        flush()
        return cls(variables, factors)


def _check_space(size, what):
    if size > MAX_STATES:
        raise ResourceError(f"{what} state space {size} exceeds guard {MAX_STATES}")


def fg_marginal(fg: FactorGraph, visible_assignment) -> float:
    """Unnormalized probability: sum over hidden states of the factor product."""
    vis = fg.visible
    hid = fg.hidden
    va = dict(zip(vis, visible_assignment)) if not isinstance(visible_assignment, dict) \
        else dict(visible_assignment)
    if set(va) != set(vis):
        raise ValidationError("assignment must cover exactly the visible variables",
                              field="visible_assignment")
    _check_space(int(np.prod([fg.variables[h].card for h in hid], dtype=np.int64)), "hidden")
    total = 0.0
    for hs in itertools.product(*[range(fg.variables[h].card) for h in hid]):
        values = dict(va)
        values.update(zip(hid, hs))
        prod = 1.0
        for vs, t in fg.factors:
            prod *= t[tuple(values[v] for v in vs)]
            if prod == 0.0:
                break
        total += prod
    return total


def fg_partition(fg: FactorGraph) -> float:
    """Normalization Z: the marginal summed over every visible assignment."""
    vis = fg.visible
    _check_space(int(np.prod([v.card for v in fg.variables], dtype=np.int64)), "joint")
    return sum(fg_marginal(fg, xs)
               for xs in itertools.product(*[range(fg.variables[v].card) for v in vis]))


def fg_to_tn(fg: FactorGraph) -> FlatNetwork:
    """Dual tensor network: one tensor per factor, copy tensors where a variable
    touches several factors, visible variables as open legs (site id = variable id)."""
    net = FlatNetwork()
    slots: dict[int, list[Slot]] = {i: [] for i in range(len(fg.variables))}
    for vs, t in fg.factors:
        ti = net.add(t)
        for ax, v in enumerate(vs):
            slots[v].append((ti, ax))
    for v, var in enumerate(fg.variables):
        legs = slots[v]
        deg = len(legs)
        if var.visible:
            if deg == 1:
                net.open(legs[0], v)
            else:
                ci = net.add(copy_tensor(deg + 1, var.card))
                for k, leg in enumerate(legs):
                    net.connect(leg, (ci, k))
                net.open((ci, deg), v)
        else:
            if deg == 0:
                net.add(np.array(float(var.card)))
            elif deg == 1:
                oi = net.add(np.ones(var.card))
                net.connect(legs[0], (oi, 0))
            else:
                ci = net.add(copy_tensor(deg, var.card))
                for k, leg in enumerate(legs):
                    net.connect(leg, (ci, k))
    return net


def random_factor_graph(rng, max_visible=5, max_hidden=3, max_card=3, max_factors=6,
                        max_arity=3) -> FactorGraph:
    nv = int(rng.integers(1, max_visible + 1))
    nh = int(rng.integers(0, max_hidden + 1))
    variables = [Variable(int(rng.integers(2, max_card + 1)), True) for _ in range(nv)]
    variables += [Variable(int(rng.integers(2, max_card + 1)), False) for _ in range(nh)]
    n = nv + nh
    factors = []
    for _ in range(int(rng.integers(1, max_factors + 1))):
        k = int(rng.integers(1, min(max_arity, n) + 1))
        vs = tuple(int(v) for v in rng.choice(n, size=k, replace=False))
        shape = tuple(variables[v].card for v in vs)
        factors.append((vs, rng.uniform(0.0, 2.0, size=shape)))
    return FactorGraph(variables, factors)


# ---------------------------------------------------------------------------
# restricted Boltzmann machines (no bias terms)

def rbm_prob(w, x) -> float:
    """Unnormalized p(x) = prod_i (1 + exp(sum_j w_ij x_j))."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return float(np.prod(1.0 + np.exp(w @ x)))


def rbm_prob_slow(w, x) -> float:
    """Same quantity by summing exp(sum_ij w_ij h_i x_j) over every hidden state."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    M = w.shape[0]
    _check_space(2 ** M, "hidden")
    total = 0.0
    for h in itertools.product((0, 1), repeat=M):
        total += np.exp(np.asarray(h, dtype=np.float64) @ w @ x)
    return float(total)


def rbm_partition(w) -> float:
    w = np.asarray(w, dtype=np.float64)
    N = w.shape[1]
    if N > 20:
        raise ResourceError(f"partition over 2^{N} visible states exceeds guard")
    return float(sum(rbm_prob(w, x) for x in itertools.product((0, 1), repeat=N)))


def rbm_factor_graph(w) -> FactorGraph:
    """Visible x_j (ids 0..N-1), hidden h_i (ids N..N+M-1), one factor
    exp(w_ij h_i x_j) per pair."""
    w = np.asarray(w, dtype=np.float64)
    M, N = w.shape
    variables = [Variable(2, True) for _ in range(N)] + [Variable(2, False) for _ in range(M)]
    factors = []
    for i in range(M):
        for j in range(N):
            f = np.ones((2, 2))
            f[1, 1] = np.exp(w[i, j])
            factors.append(((j, N + i), f))
    return FactorGraph(variables, factors)


# ---------------------------------------------------------------------------
# flattening models

def _string_site_tensors(model, eff):
    """Per string: list of (site id or None for label, tensor with axes
    (input, [label,] left, right)) in true shape; boundaries squeezed."""
    from .architecture import rbm_site_tensors

    spec = model.spec
    out = []
    if spec.kind == "rbm-sbs":
        sites, labels = rbm_site_tensors(eff["w"], eff["label_w"])
        for s, layout in enumerate(model.strings):
            seq = [(layout.sites[0], np.transpose(labels[s], (1, 0, 2, 3)), True)]
            for j, site in enumerate(layout.sites[1:]):
                seq.append((site, sites[s][j], False))
            out.append((seq, True))
        return out
    for s, layout in enumerate(model.strings):
        p = model.labels.get(s)
        seq = []
        k = 0
        for j, site in enumerate(layout.sites):
            if j == p:
                seq.append((site, np.transpose(eff["label"], (1, 0, 2, 3)), True))
            else:
                seq.append((site, eff[f"string{s}"][k], False))
                k += 1
        out.append((seq, layout.closed))
    return out


def flatten_model(model, x, copy_inputs: str = "open"):
    """Explicit weight-shared network for ``model`` at input ``x``.

    ``copy_inputs``:
      ``"open"``    every occurrence of an input variable is an open leg with
                    that variable's site id (discrete inputs; value = x_j)
      ``"vectors"`` every occurrence is contracted with its own copy of the
                    feature vector (real inputs)
      ``"delta"``   each input variable is an explicit copy tensor with one
                    open leg (discrete inputs)

    The label is the open leg ``"label"``. Returns ``(net, assignment)``
    without the label value; add ``assignment["label"] = y``.
    Not defined for eps-linear (its head is a sum, see :func:`oracle_scores`).
    """
    from .evaluate import effective_params

    spec = model.spec
    if spec.kind == "eps-linear":
        raise ValidationError("eps-linear is a sum of networks; use oracle_scores", field="kind")
    eff = effective_params(model)
    x = np.asarray(x, dtype=np.float64).reshape(-1) if model.feature_map.kind != "identity" \
        else np.asarray(x, dtype=np.float64)
    net = FlatNetwork()
    assignment = {}
    input_slots: dict[int, list[Slot]] = {}

    def attach_input(slot, site):
        if copy_inputs == "vectors":
            vec = model.feature_map(x[site]) if model.feature_map.kind != "identity" else x[site]
            vi = net.add(np.asarray(vec, dtype=np.float64).reshape(-1))
            net.connect(slot, (vi, 0))
        else:
            input_slots.setdefault(site, []).append(slot)

    for seq, closed in _string_site_tensors(model, eff):
        L = len(seq)
        idx = []
        for j, (site, T, is_label) in enumerate(seq):
            T = np.asarray(T)
            if not closed:
                # drop the size-1 boundary bond axes of an open chain
                if j == 0:
                    T = T[..., 0:1, :].take(0, axis=-2)
                if j == L - 1:
                    T = T[..., 0:1].take(0, axis=-1)
            ti = net.add(T)
            idx.append(ti)
            if spec.kind == "eps-sbs":
                _attach_plaquette(net, model, eff, x, site, (ti, 0), attach_input, copy_inputs)
            else:
                attach_input((ti, 0), site)
            if is_label:
                net.open((ti, 1), "label")
        # bond axes: position of left / right axis depends on label & boundary
        for j in range(L):
            if not closed and j == L - 1:
                break
            a = idx[j]
            b = idx[(j + 1) % L]
            a_right = net.tensors[a].ndim - 1
            b_is_label = seq[(j + 1) % L][2]
            b_left = 2 if b_is_label else 1
            net.connect((a, a_right), (b, b_left))

    if copy_inputs != "vectors":
        for site, slots in input_slots.items():
            val = int(round(float(x[site])))
            if copy_inputs == "open":
                for slot in slots:
                    net.open(slot, ("x", site))
            else:
                dim = net.tensors[slots[0][0]].shape[slots[0][1]]
                ci = net.add(copy_tensor(len(slots) + 1, dim))
                for k, slot in enumerate(slots):
                    net.connect(slot, (ci, k))
                net.open((ci, len(slots)), ("x", site))
            assignment[("x", site)] = val
    return net, assignment


def _attach_plaquette(net, model, eff, x, plaq, out_slot, attach_input, copy_inputs):
    spec = model.spec
    m = spec.plaquette[0] * spec.plaquette[1]
    d = spec.feature_dim
    T = eff["plaquette"]
    if not spec.share_plaquettes:
        T = T[plaq]
    T = T.reshape((d,) * m + (spec.eps_out_dim,))
    pi = net.add(T)
    net.connect(out_slot, (pi, m))
    for c, site in enumerate(model.plaquettes[plaq]):
        attach_input((pi, c), int(site))


def oracle_scores(model, x, copy_inputs: str = "open") -> np.ndarray:
    """All K label scores of ``model`` at ``x`` by exhaustive contraction."""
    K = model.spec.num_classes
    if model.spec.kind == "eps-linear":
        return _eps_linear_oracle(model, x, copy_inputs)
    net, assignment = flatten_model(model, x, copy_inputs)
    out = np.empty(K)
    for k in range(K):
        assignment["label"] = k
        out[k] = brute_contract(net, assignment)
    return out


def _eps_linear_oracle(model, x, copy_inputs):
    from .evaluate import effective_params

    spec = model.spec
    eff = effective_params(model)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    K, o = spec.num_classes, spec.eps_out_dim
    m = spec.plaquette[0] * spec.plaquette[1]
    d = spec.feature_dim
    W = eff["head_w"].reshape(K, -1, o)
    out = eff["head_b"].copy()
    for p, sites in enumerate(model.plaquettes):
        T = eff["plaquette"] if spec.share_plaquettes else eff["plaquette"][p]
        for k in range(K):
            net = FlatNetwork()
            pi = net.add(T.reshape((d,) * m + (o,)))
            hi = net.add(W[k, p])
            net.connect((pi, m), (hi, 0))
            assignment = {}
            for c, site in enumerate(sites):
                if copy_inputs == "vectors":
                    vi = net.add(model.feature_map(x[site]))
                    net.connect((pi, c), (vi, 0))
                else:
                    net.open((pi, c), ("x", int(site)))
                    assignment[("x", int(site))] = int(round(float(x[site])))
            out[k] += brute_contract(net, assignment)
    return out
