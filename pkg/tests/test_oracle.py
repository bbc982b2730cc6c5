import itertools

import numpy as np
import pytest

from gtn import evaluate
from gtn.architecture import ArchitectureSpec, build
from gtn.errors import ParseError, ResourceError, ValidationError
from gtn.oracle import (FactorGraph, FlatNetwork, Variable, brute_contract, fg_marginal,
                        fg_partition, fg_to_tn, oracle_scores, random_factor_graph, rbm_factor_graph,
                        rbm_partition, rbm_prob, rbm_prob_slow)
from gtn.tensor import copy_tensor, trace_product


class TestBruteContract:
    def test_matrix_entry(self, rng):
        A = rng.standard_normal((2, 2))
        net = FlatNetwork()
        t = net.add(A)
        net.open((t, 0), "i")
        net.open((t, 1), "j")
        assert brute_contract(net, {"i": 1, "j": 0}) == A[1, 0]

    def test_ring(self, rng):
        T = rng.standard_normal((3, 2, 2, 2))  # (site, input, left, right)
        x = [1, 0, 1]
        net = FlatNetwork()
        ids = [net.add(T[j]) for j in range(3)]
        for j in range(3):
            net.open((ids[j], 0), j)
            net.connect((ids[j], 2), (ids[(j + 1) % 3], 1))
        ref = trace_product([T[j, x[j]] for j in range(3)])
        assert brute_contract(net, dict(enumerate(x))) == pytest.approx(ref, rel=1e-12)

    def test_copy_leg_fixing(self, rng):
        """A copy tensor with one leg fixed to v equals fixing all its legs to v."""
        A, B = rng.standard_normal(2), rng.standard_normal(2)
        net = FlatNetwork()
        d = net.add(copy_tensor(3, 2))
        a, b = net.add(A), net.add(B)
        net.connect((d, 0), (a, 0))
        net.connect((d, 1), (b, 0))
        net.open((d, 2), "v")
        for v in (0, 1):
            assert brute_contract(net, {"v": v}) == pytest.approx(A[v] * B[v])

    def test_shared_site_label(self, rng):
        A = rng.standard_normal((3, 3))
        net = FlatNetwork()
        t = net.add(A)
        net.open((t, 0), "s")
        net.open((t, 1), "s")
        assert brute_contract(net, {"s": 2}) == A[2, 2]

    def test_budget(self):
        net = FlatNetwork()
        ids = [net.add(np.ones((10, 10))) for _ in range(8)]
        for j in range(8):
            net.connect((ids[j], 1), (ids[(j + 1) % 8], 0))
        with pytest.raises(ResourceError):
            brute_contract(net, {}, max_states=1000)

    def test_dangling(self):
        net = FlatNetwork()
        net.add(np.ones(2))
        with pytest.raises(ValidationError):
            net.validate()


class TestFactorGraph:
    def test_single_factor(self):
        t = np.array([[1.0, 2.0], [3.0, 4.0]])
        fg = FactorGraph([Variable(2, True), Variable(2, True)], [((0, 1), t)])
        assert fg_marginal(fg, (1, 0)) == 3.0

    def test_all_ones(self):
        fg = FactorGraph([Variable(2, True), Variable(3, False), Variable(2, False)],
                         [((0, 1), np.ones((2, 3))), ((1, 2), np.ones((3, 2)))])
        assert fg_marginal(fg, (0,)) == 6.0
        assert fg_partition(fg) == 12.0

    def test_chain_duality(self, rng):
        fg = FactorGraph([Variable(2, True)] * 3,
                         [((0, 1), rng.uniform(0, 1, (2, 2))), ((1, 2), rng.uniform(0, 1, (2, 2)))])
        net = fg_to_tn(fg)
        for xs in itertools.product((0, 1), repeat=3):
            assert brute_contract(net, dict(enumerate(xs))) == pytest.approx(fg_marginal(fg, xs),
                                                                             rel=1e-12)

    def test_hidden_in_two_factors_gives_identity(self, rng):
        fg = FactorGraph([Variable(2, True), Variable(3, False), Variable(2, True)],
                         [((0, 1), rng.uniform(0, 1, (2, 3))), ((1, 2), rng.uniform(0, 1, (3, 2)))])
        net = fg_to_tn(fg)
        assert any(t.shape == (3, 3) and np.array_equal(t, np.eye(3)) for t in net.tensors)

    def test_random_duality(self, rng):
        for _ in range(5):
            fg = random_factor_graph(rng)
            net = fg_to_tn(fg)
            for xs in itertools.product(*[range(fg.variables[v].card) for v in fg.visible]):
                assert brute_contract(net, dict(zip(fg.visible, xs))) == pytest.approx(
                    fg_marginal(fg, xs), rel=1e-10)

    def test_text_roundtrip(self, rng):
        fg = random_factor_graph(rng)
        back = FactorGraph.from_text(fg.to_text())
        assert back.to_text() == fg.to_text()

    @pytest.mark.parametrize("text,row", [
        ("vars 2\n", 1),
        ("variables 1\nv0 card=2 shown\n", 2),
        ("variables 1\nv0 card=2 visible\nfactor 0\n1.0\n", 3),
        ("variables 1\nv0 card=2 visible\n1.0 2.0\n", 3),
        ("variables 1\nv0 card=2 visible\nfactor 3\n1 2\n", 3),
    ])
    def test_parse_errors(self, text, row):
        with pytest.raises(ParseError) as ei:
            FactorGraph.from_text(text)
        assert ei.value.row == row

    def test_negative_factor(self):
        with pytest.raises(ValidationError):
            FactorGraph([Variable(2, True)], [((0,), np.array([1.0, -1.0]))])


class TestRbm:
    def test_zero_weights(self):
        w = np.zeros((2, 3))
        for x in itertools.product((0, 1), repeat=3):
            assert rbm_prob(w, x) == 4.0
        assert rbm_partition(w) == 2.0 ** 5

    def test_three_ways(self, rng):
        w = rng.standard_normal((3, 4))
        net = fg_to_tn(rbm_factor_graph(w))
        for x in itertools.product((0, 1), repeat=4):
            a = rbm_prob(w, x)
            assert rbm_prob_slow(w, x) == pytest.approx(a, rel=1e-12)
            assert brute_contract(net, dict(enumerate(x))) == pytest.approx(a, rel=1e-12)

    def test_partition_sums(self, rng):
        w = rng.standard_normal((2, 3))
        total = sum(rbm_prob(w, x) for x in itertools.product((0, 1), repeat=3))
        assert rbm_partition(w) == pytest.approx(total, rel=1e-12)


def perturbed(kind, grid, seed=0, **kw):
    m = build(ArchitectureSpec(kind=kind, grid=grid, bond_dim=2, num_classes=2, **kw), seed=seed)
    r = np.random.default_rng(seed)
    for arr in m.params.values():
        arr += 0.3 * r.standard_normal(arr.shape)
    return m


class TestModelOracle:
    @pytest.mark.parametrize("kind,grid,kw", [
        ("mps", (2, 2), {}),
        ("sbs-snake", (2, 2), {}),
        ("sbs-2d", (2, 2), {}),
        ("eps-linear", (3, 3), {}),
        ("eps-sbs", (3, 2), {}),
        ("rbm-sbs", (2, 2), {"num_strings": 2}),
        ("sbs-snake", (2, 2), {"share_plaquettes": True, "feature_map": "learnable-table"}),
    ])
    def test_real_inputs(self, kind, grid, kw, rng):
        m = perturbed(kind, grid, **kw)
        x = rng.uniform(0, 1, grid)
        np.testing.assert_allclose(oracle_scores(m, x, "vectors"), evaluate.scores(m, x)[0],
                                   rtol=1e-10)

    @pytest.mark.parametrize("kind,mode", [
        ("sbs-snake", "open"), ("eps-sbs", "open"), ("sbs-2d", "open"),
        ("sbs-2d", "delta"), ("mps", "delta"),
    ])
    def test_binary_inputs(self, kind, mode, rng):
        grid = (3, 2) if kind == "eps-sbs" else (2, 2)
        m = perturbed(kind, grid, seed=1)
        x = rng.integers(0, 2, grid).astype(float)
        np.testing.assert_allclose(oracle_scores(m, x, mode), evaluate.scores(m, x)[0],
                                   rtol=1e-10)
