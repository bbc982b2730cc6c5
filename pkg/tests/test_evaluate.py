import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gtn import evaluate
from gtn.architecture import ArchitectureSpec, build
from gtn.errors import NumericOverflowError, ValidationError
from gtn.verify import KINDS, fd_gradient_error, gradient_models


def identity_mps(N=3, K=3):
    m = build(ArchitectureSpec(kind="mps", grid=(N,), bond_dim=1, num_classes=K))
    m.params["string0"][...] = 1.0
    for k in range(K):
        m.params["label"][k] = k + 1.0
    return m


class TestScore:
    def test_identity_chain(self, rng):
        m = identity_mps()
        x = rng.uniform(0, 1, 3)
        # trig features sum to 1 only after squaring; linear contraction gives cos^2+sin^2
        for k in range(3):
            assert evaluate.score(m, x, k) == pytest.approx(k + 1.0, rel=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValidationError):
            evaluate.score(identity_mps(), np.zeros(3), 5)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            evaluate.scores(identity_mps(), np.zeros((2, 4)))

    def test_batch_equals_single(self, rng):
        m = build(ArchitectureSpec(kind="sbs-2d", grid=(3, 3), bond_dim=3, num_classes=4), seed=2)
        X = rng.uniform(0, 1, (6, 3, 3))
        s = evaluate.scores(m, X)
        for i in range(6):
            np.testing.assert_allclose(s[i], evaluate.scores(m, X[i]) [0], rtol=1e-13)

    def test_overflow_carries_traces(self):
        m = build(ArchitectureSpec(kind="sbs-snake", grid=(4, 4), bond_dim=2, num_classes=2))
        for k in m.params:
            m.params[k] *= 1e30
        with pytest.raises(NumericOverflowError) as ei:
            evaluate.scores(m, np.full((1, 4, 4), 0.5))
        assert ei.value.traces is not None


class TestPosteriorAndLoss:
    def test_uniform(self):
        p = evaluate.posterior_from_scores(np.full(5, 2.0))
        np.testing.assert_allclose(p.probs, 0.2)

    def test_hand_softmax(self):
        p = evaluate.posterior_from_scores(np.array([0.0, np.log(3.0)]))
        np.testing.assert_allclose(p.probs, [0.25, 0.75])

    def test_nonfinite(self):
        with pytest.raises(NumericOverflowError):
            evaluate.posterior_from_scores(np.array([0.0, np.inf]))

    def test_loss_values(self):
        assert evaluate.loss_from_scores(np.zeros((1, 10)), [3]) == pytest.approx(np.log(10))
        s = np.array([[0.0, np.log(3.0)]])
        assert evaluate.loss_from_scores(s, [0]) == pytest.approx(np.log(4))
        assert evaluate.loss_from_scores(np.array([[1e4, 0.0]]), [0]) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=6))
    def test_probs_sum_to_one(self, s):
        p = evaluate.posterior_from_scores(np.array(s)).probs
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(p >= 0)

    def test_empty_batch(self):
        with pytest.raises(ValidationError):
            evaluate.loss(identity_mps(), (np.zeros((0, 3)), np.zeros(0, int)))


class TestGradient:
    def test_symmetric_point(self, rng):
        m = build(ArchitectureSpec(kind="sbs-snake", grid=(3, 3), bond_dim=2, num_classes=3))
        m.params["label"][:] = m.params["label"][0]
        g = evaluate.gradient(m, (rng.uniform(0, 1, (4, 3, 3)), [0, 1, 2, 0]))
        for k in range(4):
            assert np.all(g[f"string{k}"] == 0.0) or np.abs(g[f"string{k}"]).max() < 1e-15

    def test_duplicated_batch(self, rng):
        m = build(ArchitectureSpec(kind="sbs-2d", grid=(3, 3), num_classes=3), seed=1)
        x = rng.uniform(0, 1, (1, 3, 3))
        g1 = evaluate.gradient(m, (x, [2]))
        g2 = evaluate.gradient(m, (np.repeat(x, 3, axis=0), [2, 2, 2]))
        for k in g1:
            np.testing.assert_allclose(g2[k], g1[k], rtol=1e-12, atol=1e-15)

    def test_gradient_keys(self):
        m = build(ArchitectureSpec(kind="eps-linear", grid=(3, 3), feature_map="learnable-table"))
        g = evaluate.gradient(m, (np.full((1, 3, 3), 0.2), [1]))
        assert set(g) == set(m.params) | {evaluate.FEATURE_TABLE}

    @pytest.mark.parametrize("kind", KINDS)
    def test_finite_differences(self, kind, rng):
        for variant, model in gradient_models(kind, D=2, K=3, seed=0).items():
            X = rng.uniform(0, 1, (2, 3, 3))
            y = rng.integers(0, 3, 2)
            assert fd_gradient_error(model, X, y) < 1e-5, variant

    def test_positive_view(self, rng):
        m = build(ArchitectureSpec(kind="mps", grid=(3,), num_classes=2))
        m.positive = True
        eff = evaluate.effective_params(m)
        np.testing.assert_allclose(eff["label"], np.exp(m.params["label"]) *
                                   m.structural_mask("label"))


class TestInvariants:
    def test_environments_reproduce_trace(self, rng):
        m = build(ArchitectureSpec(kind="sbs-snake", grid=(3, 3), num_classes=3), seed=0)
        for a in m.params.values():
            a += 0.2 * rng.standard_normal(a.shape)
        c = evaluate.evaluation_cache(m, rng.uniform(0, 1, (2, 3, 3)))
        for s in range(1, 4):
            L = c.left[s].shape[1]
            np.testing.assert_allclose(np.trace(c.left[s][:, L - 1], axis1=1, axis2=2),
                                       c.traces[s][:, 0], rtol=1e-10)
            for j in range(1, L):
                t = np.trace(c.left[s][:, j - 1] @ c.right[s][:, j], axis1=1, axis2=2)
                np.testing.assert_allclose(t, c.traces[s][:, 0], rtol=1e-10)

    @pytest.mark.parametrize("kind", ["mps", "sbs-2d", "sbs-snake"])
    def test_multilinear_in_site_tensor(self, kind, rng):
        m = build(ArchitectureSpec(kind=kind, grid=(3, 3), num_classes=2), seed=3)
        x = rng.uniform(0, 1, (3, 3, 3))
        s0 = evaluate.scores(m, x)
        m.params["string0"][0] *= 2.5
        np.testing.assert_allclose(evaluate.scores(m, x), 2.5 * s0, rtol=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_positive_scores(self, seed):
        from gtn.training import positive_reparam
        m = positive_reparam(build(ArchitectureSpec(kind="sbs-2d", grid=(3, 3), num_classes=3)),
                             seed=seed, noise=1.0)
        x = np.random.default_rng(seed).uniform(0, 1, (4, 3, 3))
        assert np.all(evaluate.scores(m, x) > 0)
