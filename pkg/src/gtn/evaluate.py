"""Scores, posteriors, loss and analytic gradients.

All evaluation is batched: inputs are arrays of samples and every string is
contracted for the whole batch at once. For each string the left
(prefix) and right (suffix) matrix products are cached; the derivative of
the string trace with respect to the matrix at position j is the transpose
of ``R_{j+1} L_{j-1}``. The K label scores are obtained by contracting the
label tensor against the cached environment of its site, so they share all
the remaining work.

The loss is the cross-entropy of ``softmax(GTN(x, .))``, mean-reduced over
the batch.
"""

from __future__ import annotations

import string as _string
from dataclasses import dataclass

import numpy as np

from .architecture import Model, rbm_site_tensors
from .errors import DimensionError, NumericOverflowError, ValidationError
from .features import feature_grad

FEATURE_TABLE = "feature_table"


@dataclass
class Posterior:
    probs: np.ndarray
    log_scores: np.ndarray


@dataclass
class EvalCache:
    """Per-string environments for one batch.

    ``left[s][:, j]`` is the product of matrices 0..j, ``right[s][:, j]`` the
    product of j..L-1 (label sites hold the identity), ``traces[s]`` has shape
    (B, K).
    """

    left: list
    right: list
    traces: list
    label_env: dict
    plaquette_out: np.ndarray | None
    scores: np.ndarray
    state: dict | None = None


# ---------------------------------------------------------------------------
# parameter views

def effective_params(model: Model, mask: dict | None = None) -> dict[str, np.ndarray]:
    """Tensors as seen by the forward pass: exp() under the positive
    reparameterization, dropout mask applied, open-chain padding zeroed."""
    out = {}
    for name, p in model.params.items():
        e = np.exp(p) if model.positive else p
        if mask is not None and name in mask:
            e = e * mask[name]
        sm = model.structural_mask(name)
        if sm is not None:
            e = e * sm
        out[name] = e
    return out


def _chain_to_raw(model: Model, grads_eff: dict, mask: dict | None) -> dict:
    out = {}
    for name, g in grads_eff.items():
        if name == FEATURE_TABLE:
            out[name] = g
            continue
        sm = model.structural_mask(name)
        if sm is not None:
            g = g * sm
        if mask is not None and name in mask:
            g = g * mask[name]
        if model.positive:
            g = g * np.exp(model.params[name])
        out[name] = g
    return out


# ---------------------------------------------------------------------------
# inputs

def _check_inputs(model: Model, X) -> np.ndarray:
    """Accept one sample or a batch; return (B, n_sites) or (B, n_sites, d)."""
    X = np.asarray(X, dtype=np.float64)
    spec = model.spec
    n = spec.n_sites
    if model.feature_map.kind == "identity":
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[1] != n or X.shape[2] != spec.feature_dim:
            raise ValidationError(
                f"expected inputs of shape (B, {n}, {spec.feature_dim}), got {X.shape}",
                field="x")
        return X
    if X.shape in (spec.grid, spec.hw):
        X = X[None]
    if X.ndim < 2 or X.shape[1:] not in (spec.grid, spec.hw, (n,)):
        raise ValidationError(f"input shape {X.shape} does not match grid {spec.grid}",
                              field="x")
    return X.reshape(X.shape[0], n)


def _site_features(model: Model, X: np.ndarray) -> np.ndarray:
    V = model.feature_map(X)
    if V.shape[-1] != model.spec.feature_dim:
        raise DimensionError(f"feature map produces {V.shape[-1]} components, "
                             f"spec expects {model.spec.feature_dim}")
    return V


# ---------------------------------------------------------------------------
# plaquette layer

def _plaquette_forward(V0, idx, T, shared):
    B = V0.shape[0]
    P, m = idx.shape
    Phi = V0[:, idx[:, 0]]
    for c in range(1, m):
        Phi = np.einsum("bpf,bpd->bpfd", Phi, V0[:, idx[:, c]]).reshape(B, P, -1)
    if shared:
        out = Phi @ T
    else:
        out = np.einsum("bpf,pfo->bpo", Phi, T)
    return Phi, out


def _plaquette_backward(V0, idx, T, shared, Phi, d_out):
    B, n, d = V0.shape
    P, m = idx.shape
    if shared:
        dT = np.einsum("bpf,bpo->fo", Phi, d_out)
        dPhi = d_out @ T.T
    else:
        dT = np.einsum("bpf,bpo->pfo", Phi, d_out)
        dPhi = np.einsum("bpo,pfo->bpf", d_out, T)
    dPhi = dPhi.reshape((B, P) + (d,) * m)
    letters = _string.ascii_lowercase[2:2 + m]
    full = "ab" + letters
    dV0 = np.zeros_like(V0)
    for c in range(m):
        operands = [dPhi]
        subs = [full]
        for c2 in range(m):
            if c2 != c:
                operands.append(V0[:, idx[:, c2]])
                subs.append("ab" + letters[c2])
        dv = np.einsum(",".join(subs) + "->ab" + letters[c], *operands)
        dV0[:, idx[:, c]] += dv
    return dT, dV0


# ---------------------------------------------------------------------------
# string layer

@dataclass
class _String:
    order: np.ndarray
    T: np.ndarray                 # (L, d, D, D); label slot unused
    label_pos: int | None = None
    TL: np.ndarray | None = None  # (K, d, D, D)


def _string_tensors(model: Model, eff: dict) -> list[_String]:
    out = []
    if model.spec.kind == "rbm-sbs":
        sites, labels = rbm_site_tensors(eff["w"], eff["label_w"])
        for s, layout in enumerate(model.strings):
            T = np.concatenate([np.zeros((1,) + sites.shape[2:]), sites[s]], axis=0)
            out.append(_String(np.array(layout.sites), T, 0, labels[s]))
        return out
    for s, layout in enumerate(model.strings):
        T = eff[f"string{s}"]
        p = model.labels.get(s)
        if p is not None:
            T = np.insert(T, p, 0.0, axis=0)
            out.append(_String(np.array(layout.sites), T, p, eff["label"]))
        else:
            out.append(_String(np.array(layout.sites), T))
    return out


def _site_matrices(V, st: _String, M_label=None):
    B = V.shape[0]
    D = st.T.shape[-1]
    L, d = st.T.shape[:2]
    Vs = V[:, st.order].transpose(1, 0, 2)                       # (L, B, d)
    M = (Vs @ st.T.reshape(L, d, D * D)).reshape(L, B, D, D).transpose(1, 0, 2, 3).copy()
    if st.label_pos is not None:
        M[:, st.label_pos] = np.eye(D) if M_label is None else M_label
    return M


def _prefix_suffix(M):
    """Left products left[:, j] = M_0 ... M_j and right products
    right[:, j] = M_j ... M_{L-1} of a (B, L, D, D) stack."""
    return _prefix_suffix_many([M])[0]


def _prefix_suffix_many(Ms):
    """:func:`_prefix_suffix` for several stacks; stacks of equal shape share
    one sweep (the per-site cost is dominated by call overhead)."""
    out = [None] * len(Ms)
    groups: dict[tuple, list[int]] = {}
    for i, M in enumerate(Ms):
        groups.setdefault(M.shape[1:], []).append(i)
    for idx in groups.values():
        B = [Ms[i].shape[0] for i in idx]
        Mt = np.ascontiguousarray(np.concatenate([Ms[i] for i in idx]).transpose(1, 0, 2, 3))
        L = Mt.shape[0]
        left = np.empty_like(Mt)
        right = np.empty_like(Mt)
        left[0] = Mt[0]
        for j in range(1, L):
            np.matmul(left[j - 1], Mt[j], out=left[j])
        right[L - 1] = Mt[L - 1]
        for j in range(L - 2, -1, -1):
            np.matmul(Mt[j], right[j + 1], out=right[j])
        left = left.transpose(1, 0, 2, 3)
        right = right.transpose(1, 0, 2, 3)
        start = 0
        for i, b in zip(idx, B):
            out[i] = (left[start:start + b], right[start:start + b])
            start += b
    return out


def _environments(left, right):
    """env[:, j] = right[:, j+1] @ left[:, j-1] (identity beyond the ends)."""
    B, L, D, _ = left.shape
    eye = np.broadcast_to(np.eye(D), (B, 1, D, D))
    lm = np.concatenate([eye, left[:, :-1]], axis=1)
    rp = np.concatenate([right[:, 1:], eye], axis=1)
    return rp @ lm


def _label_env(left, right, p):
    B, L, D, _ = left.shape
    eye = np.broadcast_to(np.eye(D), (B, D, D))
    lm = left[:, p - 1] if p > 0 else eye
    rp = right[:, p + 1] if p < L - 1 else eye
    return rp @ lm


def _strings_forward(V, strings, K):
    lefts, rights, traces, label_env = [], [], [], {}
    sweeps = _prefix_suffix_many([_site_matrices(V, st) for st in strings])
    for s, (st, (left, right)) in enumerate(zip(strings, sweeps)):
        if st.label_pos is None:
            t = np.trace(left[:, -1], axis1=1, axis2=2)[:, None] * np.ones((1, K))
        else:
            E = _label_env(left, right, st.label_pos)
            ML = np.einsum("bd,kdij->bkij", V[:, st.order[st.label_pos]], st.TL)
            t = np.einsum("bji,bkij->bk", E, ML)
            label_env[s] = E
        lefts.append(left)
        rights.append(right)
        traces.append(t)
    return lefts, rights, traces, label_env


def _others_product(traces):
    """prod_{s' != s} t_{s'} for each s without dividing."""
    S = len(traces)
    ones = np.ones_like(traces[0])
    pre = [ones]
    for t in traces[:-1]:
        pre.append(pre[-1] * t)
    suf = [ones] * S
    acc = ones
    for s in range(S - 1, -1, -1):
        suf[s] = acc
        acc = acc * traces[s]
    return [pre[s] * suf[s] for s in range(S)]


def _strings_backward(V, strings, cache: EvalCache, g):
    """Gradients of sum_{b,k} g[b,k] GTN[b,k] w.r.t. string tensors and V."""
    dV = np.zeros_like(V)
    dT = []
    dTL = []
    others = _others_product(cache.traces)
    for s, st in enumerate(strings):
        w = g * others[s]                       # (B, K)
        Vs = V[:, st.order]
        if st.label_pos is None:
            c = w.sum(axis=1)
            env = _environments(cache.left[s], cache.right[s])
        else:
            ML = np.einsum("bd,kdij->bkij", V[:, st.order[st.label_pos]], st.TL)
            M = _site_matrices(V, st, np.einsum("bk,bkij->bij", w, ML))
            left, right = _prefix_suffix(M)
            env = _environments(left, right)
            c = np.ones(V.shape[0])
        # env[b, j] is (D, D) indexed [c, a] for the entry A[a, c]
        L, d, D = st.T.shape[0], st.T.shape[1], st.T.shape[-1]
        envT = env.transpose(1, 0, 3, 2).reshape(L, -1, D * D)          # (L, B, a*c)
        cV = (c[:, None, None] * Vs).transpose(1, 2, 0)                   # (L, d, B)
        gT = (cV @ envT).reshape(L, d, D, D)
        gV = (envT @ st.T.reshape(L, d, D * D).transpose(0, 2, 1))        # (L, B, d)
        gV = c[:, None, None] * gV.transpose(1, 0, 2)
        if st.label_pos is not None:
            p = st.label_pos
            gT[p] = 0.0
            gV[:, p] = 0.0
            E = cache.label_env[s]
            vp = Vs[:, p]
            dTL.append(np.einsum("bk,bd,bca->kdac", w, vp, E))
            gV[:, p] = np.einsum("bk,kdac,bca->bd", w, st.TL, E)
        else:
            dTL.append(None)
        dV[:, st.order] += gV
        dT.append(gT)
    return dT, dTL, dV


# ---------------------------------------------------------------------------
# forward / backward

def forward(model: Model, X, mask: dict | None = None, check: bool = True):
    """Return ``(scores (B, K), cache)`` for a batch of inputs."""
    X = _check_inputs(model, X)
    spec = model.spec
    K = spec.num_classes
    eff = effective_params(model, mask)
    V0 = _site_features(model, X)
    state = {"X": X, "V0": V0, "eff": eff}

    if spec.kind in ("eps-linear", "eps-sbs"):
        Phi, out = _plaquette_forward(V0, model.plaquettes, eff["plaquette"],
                                      spec.share_plaquettes)
        state["Phi"] = Phi
        if spec.kind == "eps-linear":
            z = out.reshape(out.shape[0], -1)
            scores = z @ eff["head_w"].T + eff["head_b"]
            cache = EvalCache([], [], [], {}, out, scores)
            state["z"] = z
            cache.state = state
            if check:
                _check_finite(scores, cache)
            return scores, cache
        V = out
    else:
        V = V0
        out = None

    strings = _string_tensors(model, eff)
    # overflow is reported through _check_finite, not numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        left, right, traces, label_env = _strings_forward(V, strings, K)
        scores = traces[0].copy()
        for t in traces[1:]:
            scores = scores * t
    cache = EvalCache(left, right, traces, label_env, out, scores)
    state["V"] = V
    state["strings"] = strings
    cache.state = state
    if check:
        _check_finite(scores, cache)
    return scores, cache


def _check_finite(scores, cache):
    if not np.all(np.isfinite(scores)):
        bad = np.where(~np.all(np.isfinite(scores), axis=1))[0]
        traces = None
        worst = ""
        if cache.traces:
            traces = np.stack([t[bad] for t in cache.traces])  # (S, nbad, K)
            mags = np.nan_to_num(np.abs(traces), nan=np.inf).max(axis=(1, 2))
            worst = f"; largest trace in string {int(np.argmax(mags))}"
        raise NumericOverflowError(
            f"non-finite score for {len(bad)} sample(s){worst}", traces=traces)


def backward(model: Model, cache: EvalCache, g, mask: dict | None = None) -> dict:
    """Gradient of ``sum(g * scores)`` with respect to every raw parameter
    (and the feature table, when learnable)."""
    spec = model.spec
    st = cache.state
    eff = st["eff"]
    grads: dict[str, np.ndarray] = {}
    if spec.kind == "eps-linear":
        z = st["z"]
        grads["head_w"] = g.T @ z
        grads["head_b"] = g.sum(axis=0)
        d_out = (g @ eff["head_w"]).reshape(cache.plaquette_out.shape)
        dV = None
    else:
        strings = st["strings"]
        dT, dTL, dV = _strings_backward(st["V"], strings, cache, g)
        if spec.kind == "rbm-sbs":
            grads.update(_rbm_chain(eff, dT, dTL))
        else:
            for s in range(len(strings)):
                gT = dT[s]
                p = strings[s].label_pos
                if p is not None:
                    gT = np.delete(gT, p, axis=0)
                grads[f"string{s}"] = gT
            grads["label"] = sum(x for x in dTL if x is not None)
        d_out = dV if spec.kind == "eps-sbs" else None

    if spec.kind in ("eps-linear", "eps-sbs"):
        dP, dV0 = _plaquette_backward(st["V0"], model.plaquettes, eff["plaquette"],
                                      spec.share_plaquettes, st["Phi"], d_out)
        grads["plaquette"] = dP
    else:
        dV0 = dV

    grads = _chain_to_raw(model, grads, mask)
    if model.feature_map.learnable:
        grads[FEATURE_TABLE] = feature_grad(model.feature_map, st["X"], dV0)
    return grads


def _rbm_chain(eff, dT, dTL):
    w, U = eff["w"], eff["label_w"]
    M, N = w.shape
    dw = np.zeros_like(w)
    dU = np.zeros_like(U)
    for s in range(M):
        dw[s, 1:] = dT[s][1:, 1, 1, 1] * np.exp(w[s, 1:])
        a = dTL[s][:, 1, 1, 1] * np.exp(w[s, 0] + U[s])
        dw[s, 0] = a.sum()
        dU[s] = dTL[s][:, 0, 1, 1] * np.exp(U[s]) + a
    return {"w": dw, "label_w": dU}


# ---------------------------------------------------------------------------
# public API

def scores(model: Model, X, mask=None) -> np.ndarray:
    return forward(model, X, mask)[0]


def score(model: Model, x, y: int) -> float:
    """GTN(x, y) for a single input."""
    K = model.spec.num_classes
    if not 0 <= int(y) < K:
        raise ValidationError(f"label {y} outside [0, {K})", field="y")
    s, _ = forward(model, np.asarray(x, dtype=np.float64)[None])
    return float(s[0, int(y)])


def softmax(s):
    s = np.asarray(s, dtype=np.float64)
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(s):
    s = np.asarray(s, dtype=np.float64)
    z = s - s.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def posterior_from_scores(s) -> Posterior:
    s = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise NumericOverflowError("non-finite label score", traces=s)
    return Posterior(softmax(s), s)


def posterior(model: Model, x) -> Posterior:
    s, cache = forward(model, np.asarray(x, dtype=np.float64)[None])
    return posterior_from_scores(s[0])


def predict(model: Model, X, batch_size: int = 500) -> np.ndarray:
    X = _check_inputs(model, X)
    out = []
    for i in range(0, X.shape[0], batch_size):
        out.append(np.argmax(scores(model, X[i:i + batch_size]), axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def loss_from_scores(s, y) -> float:
    y = np.asarray(y, dtype=np.int64)
    lp = log_softmax(s)
    return float(-np.mean(lp[np.arange(len(y)), y]))


def loss(model: Model, batch, mask=None) -> float:
    X, y = batch
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValidationError("empty batch", field="batch")
    s, _ = forward(model, X, mask)
    return loss_from_scores(s, y)


def loss_and_gradient(model: Model, X, y, mask=None):
    """Mean cross-entropy and its gradient for every parameter."""
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValidationError("empty batch", field="batch")
    s, cache = forward(model, X, mask)
    K = model.spec.num_classes
    if np.any((y < 0) | (y >= K)):
        raise ValidationError(f"labels outside [0, {K})", field="y")
    p = softmax(s)
    B = len(y)
    g = p.copy()
    g[np.arange(B), y] -= 1.0
    g /= B
    value = loss_from_scores(s, y)
    return value, backward(model, cache, g, mask), s


def gradient(model: Model, batch, mask=None) -> dict:
    X, y = batch
    return loss_and_gradient(model, X, y, mask)[1]


def evaluation_cache(model: Model, x) -> EvalCache:
    """Environments for a single input (or batch); see :class:`EvalCache`."""
    return forward(model, np.asarray(x, dtype=np.float64))[1]
