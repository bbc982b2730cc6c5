"""Property battery behind ``gtn verify``.

Every check compares the fast engine against an independent reference
(exhaustive contraction, hidden-state enumeration, finite differences, plain
matrix products) and returns a :class:`CheckResult`.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import evaluate
from .architecture import ArchitectureSpec, Model, build, kron_mps, rbm_to_sbs, snake_orderings
from .evaluate import FEATURE_TABLE
from .oracle import (brute_contract, fg_marginal, fg_to_tn, random_factor_graph, rbm_factor_graph,
                     rbm_prob, rbm_prob_slow)
from .tensor import trace_product
from .training import positive_reparam

KINDS = ("mps", "sbs-2d", "sbs-snake", "rbm-sbs", "eps-linear", "eps-sbs")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def rel_err(a, b) -> float:
    a, b = float(a), float(b)
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0.0 else abs(a - b) / scale


# ---------------------------------------------------------------------------
# RBM: product form, hidden enumeration, dual network, string-bond state

def rbm_triangle(n_models=20, seed=0, max_hidden=3, max_visible=4):
    """Worst pairwise relative disagreement over all binary inputs of
    ``n_models`` random RBMs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_models):
        M = int(rng.integers(1, max_hidden + 1))
        N = int(rng.integers(1, max_visible + 1))
        w = rng.normal(0.0, 1.0, size=(M, N))
        net = fg_to_tn(rbm_factor_graph(w))
        model = rbm_to_sbs(w)
        for x in itertools.product((0, 1), repeat=N):
            vals = (rbm_prob(w, x), rbm_prob_slow(w, x),
                    brute_contract(net, dict(enumerate(x))),
                    evaluate.score(model, np.array(x, dtype=np.float64), 0))
            for a, b in itertools.combinations(vals, 2):
                worst = max(worst, rel_err(a, b))
    return worst


def duality(n_graphs=20, seed=0):
    """Worst relative gap between factor-graph marginals and the contracted
    dual network, over every visible assignment of ``n_graphs`` random graphs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_graphs):
        fg = random_factor_graph(rng)
        net = fg_to_tn(fg)
        vis = fg.visible
        for xs in itertools.product(*[range(fg.variables[v].card) for v in vis]):
            worst = max(worst, rel_err(fg_marginal(fg, xs), brute_contract(net, dict(zip(vis, xs)))))
    return worst


# ---------------------------------------------------------------------------
# gradients

def _loss_at(model, X, y):
    return evaluate.loss(model, (X, y))


def _param_slots(model: Model):
    """(name, array) pairs that finite differences should perturb."""
    slots = [(k, v) for k, v in model.params.items()]
    if model.feature_map.learnable:
        slots.append((FEATURE_TABLE, model.feature_map.table))
    return slots


def fd_gradient_error(model: Model, X, y, h=1e-5):
    """Worst per-tensor relative error ||fd - g|| / max(||fd||, ||g||) of the
    analytic loss gradient against central differences with step ``h``.

    Norms are taken per parameter tensor: single entries whose gradient is
    near zero are dominated by the ~1e-11 round-off of the difference
    quotient and carry no information about correctness.
    """
    _, grads, _ = evaluate.loss_and_gradient(model, X, y)
    worst = 0.0
    for name, arr in _param_slots(model):
        g = grads[name].reshape(-1)
        flat = arr.reshape(-1)
        fd = np.empty(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = _loss_at(model, X, y)
            flat[i] = old - h
            lm = _loss_at(model, X, y)
            flat[i] = old
            fd[i] = (lp - lm) / (2.0 * h)
        den = max(np.linalg.norm(fd), np.linalg.norm(g))
        if den > 0.0:
            worst = max(worst, float(np.linalg.norm(fd - g) / den))
    return worst


def gradient_models(kind: str, D=2, K=3, seed=0):
    """The three variants checked per kind: plain, learnable feature table,
    positive reparameterization (grid 3 x 3, d = 2)."""
    grid = (3, 3)
    base = dict(kind=kind, grid=grid, bond_dim=2 if kind == "rbm-sbs" else D, num_classes=K,
                num_strings=2 if kind == "rbm-sbs" else 4)
    rng = np.random.default_rng(seed)
    out = {}
    plain = build(ArchitectureSpec(**base), seed=seed)
    for arr in plain.params.values():
        arr += 0.1 * rng.standard_normal(arr.shape)
    out["plain"] = plain
    learn = build(ArchitectureSpec(**base, feature_map="learnable-table", feature_bins=4),
                  seed=seed + 1)
    for arr in learn.params.values():
        arr += 0.1 * rng.standard_normal(arr.shape)
    learn.feature_map.table += 0.2 * rng.standard_normal(learn.feature_map.table.shape)
    out["learnable"] = learn
    out["positive"] = positive_reparam(build(ArchitectureSpec(**base), seed=seed + 2),
                                       seed=seed + 2, noise=0.3)
    return out


def gradient_check(kinds=KINDS, D=2, K=3, n_samples=3, seed=0):
    """Worst finite-difference error per (kind, variant)."""
    rng = np.random.default_rng(seed)
    out = {}
    for kind in kinds:
        for variant, model in gradient_models(kind, D, K, seed).items():
            X = rng.uniform(0.0, 1.0, size=(n_samples, 3, 3))
            y = rng.integers(0, K, size=n_samples)
            out[(kind, variant)] = fd_gradient_error(model, X, y)
    return out


# ---------------------------------------------------------------------------
# product of strings with a shared ordering

def kron_equivalence(seed=0, N=5, D=2, K=2):
    """A two-string SBS on a common ordering against the bond-dimension-D^2
    MPS made of Kronecker products of its site matrices, on all binary inputs."""
    spec = ArchitectureSpec(kind="sbs-snake", grid=(N,), bond_dim=D, num_classes=K,
                            num_strings=2)
    model = build(spec, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for arr in model.params.values():
        arr += 0.3 * rng.standard_normal(arr.shape)
    assert model.strings[0].sites == model.strings[1].sites
    p = model.labels[0]
    worst = 0.0
    for x in itertools.product((0, 1), repeat=N):
        xs = np.array(x, dtype=np.float64)
        s = evaluate.scores(model, xs[None])[0]
        for k in range(K):
            s0 = np.insert(model.params["string0"], p, model.params["label"][k], axis=0)
            big = kron_mps([s0, model.params["string1"]])
            ref = trace_product([big[j, x[site]] for j, site in enumerate(model.strings[0].sites)])
            worst = max(worst, rel_err(s[k], ref))
    return worst


# ---------------------------------------------------------------------------
# snake coverage

def snake_adjacency(max_side=6):
    """Grids (H, W) with 1 <= H, W <= max_side where some nearest-neighbour
    pair is not consecutive in any of the four snake orderings."""
    bad = []
    for H in range(1, max_side + 1):
        for W in range(1, max_side + 1):
            adjacent = set()
            for order in snake_orderings(H, W):
                for a, b in zip(order, order[1:]):
                    adjacent.add(frozenset((a, b)))
            for r in range(H):
                for c in range(W):
                    i = r * W + c
                    if c + 1 < W and frozenset((i, i + 1)) not in adjacent:
                        bad.append((H, W, i, i + 1))
                    if r + 1 < H and frozenset((i, i + W)) not in adjacent:
                        bad.append((H, W, i, i + W))
    return bad


# ---------------------------------------------------------------------------

def run_all(scale: str = "small") -> list[CheckResult]:
    full = scale == "full"
    results = []

    def timed(name, fn, ok, fmt):
        t = time.perf_counter()
        value = fn()
        results.append(CheckResult(name, ok(value), fmt(value), time.perf_counter() - t))

    n = 100 if full else 20
    timed("rbm-triangle", lambda: rbm_triangle(n), lambda v: v < 1e-10,
          lambda v: f"max rel {v:.2e} over {n} RBMs")
    timed("duality", lambda: duality(n), lambda v: v < 1e-10,
          lambda v: f"max rel {v:.2e} over {n} factor graphs")
    D = 3 if full else 2
    t = time.perf_counter()
    errs = gradient_check(D=D)
    per_kind = {}
    for (kind, variant), e in errs.items():
        per_kind[kind] = max(per_kind.get(kind, 0.0), e)
    dt = (time.perf_counter() - t) / len(per_kind)
    for kind, e in per_kind.items():
        results.append(CheckResult(f"gradient[{kind}]", e < 1e-5, f"max rel {e:.2e} (D={D})", dt))
    timed("kron-equivalence", kron_equivalence, lambda v: v < 1e-10,
          lambda v: f"max rel {v:.2e} on 32 inputs")
    side = 10 if full else 6
    timed("snake-adjacency", lambda: snake_adjacency(side), lambda v: not v,
          lambda v: f"grids up to {side}x{side}" + (f", {len(v)} uncovered pairs" if v else ""))
    return results


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}"
                     f"  ({r.seconds:.1f}s)")
    return "\n".join(lines)
