import networkx as nx
import numpy as np
import pytest
from sklearn.linear_model import Lasso

from dawn import pns
from dawn.core import ExpressionMatrix, GeneTable, SparseGraph
from dawn.errors import ConfigError, NumericalError, ScreeningError
from dawn.simgen import ba_graph, precision_from_graph, sample_expression


def _ids(d):
    return tuple(f"n{k}" for k in range(d))


def _expr(x):
    x = np.asarray(x, dtype=float)
    return ExpressionMatrix(x, _ids(x.shape[1])).standardized()


class TestPvalueScreen:
    def test_threshold(self):
        g = GeneTable(_ids(3), [0.01, 0.2, 0.05])
        assert pns.pvalue_screen(g, 0.1).tolist() == [0, 2]

    def test_vacuous(self):
        g = GeneTable(_ids(3), [0.01, 0.2, 1.0])
        assert pns.pvalue_screen(g, 1.0).tolist() == [0, 1, 2]

    def test_anchor_kept(self):
        g = GeneTable(_ids(1), [0.5], anchors=[True])
        assert pns.pvalue_screen(g, 0.1).tolist() == [0]

    def test_empty(self):
        g = GeneTable(_ids(2), [0.5, 0.6])
        with pytest.raises(ScreeningError, match="no key-gene candidates"):
            pns.pvalue_screen(g, 0.1)

    def test_larger_t_never_shrinks(self):
        rng = np.random.default_rng(0)
        g = GeneTable(_ids(200), rng.uniform(size=200))
        prev = set()
        for t in np.linspace(0.05, 1.0, 12):
            cur = set(pns.pvalue_screen(g, t).tolist())
            assert prev <= cur
            prev = cur


class TestCorrelationScreen:
    def test_perfect_pair_kept(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal(50)
        e = _expr(np.column_stack([a, 2 * a + 1, rng.standard_normal(50)]))
        assert pns.correlation_screen([0, 1], e, 0.7).tolist() == [0, 1]

    def test_independent_noise_excluded(self):
        e = _expr(np.random.default_rng(2).standard_normal((10_000, 3)))
        assert np.abs(pns.correlations(e)[np.triu_indices(3, 1)]).max() < 0.7
        with pytest.raises(ScreeningError, match="isolated"):
            pns.correlation_screen([0, 1, 2], e, 0.7)

    def test_strict_inequality_at_tau(self):
        x = np.array([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [1.0, 1.0], [-1.0, -1.0]])
        e = _expr(x)
        rho = pns.correlations(e)[0, 1]
        assert rho == pytest.approx(1 / 3)
        with pytest.raises(ScreeningError):
            pns.correlation_screen([0, 1], e, rho)
        assert pns.correlation_screen([0, 1], e, np.nextafter(rho, 0)).size == 2


def _chain_data(d=5, n=5000, rho=0.45, seed=0):
    prec = np.eye(d) + np.diag(np.full(d - 1, rho), 1) + np.diag(np.full(d - 1, rho), -1)
    cov = np.linalg.inv(prec)
    return sample_expression(cov, n, seed, _ids(d)).standardized(), prec


class TestRetrieveNeighbors:
    def test_first_order_only(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal(5000)
        b = a + rng.standard_normal(5000)
        c = b + 3 * rng.standard_normal(5000)
        e = _expr(np.column_stack([a, b, c]))
        rho = np.abs(pns.correlations(e))
        tau = 0.5 * (rho[0, 2] + min(rho[0, 1], rho[1, 2]))
        assert rho[0, 2] < tau < min(rho[0, 1], rho[1, 2])
        assert pns.retrieve_neighbors([0], e, tau).tolist() == [0, 1]

    def test_identity_when_nothing_exceeds(self):
        e = _expr(np.random.default_rng(4).standard_normal((5000, 4)))
        assert pns.retrieve_neighbors([2], e, 0.5).tolist() == [2]


class TestFitGraph:
    def test_chain_recovery(self):
        # exact partial correlations from the precision matrix are the oracle
        expr, prec = _chain_data()
        partial = -prec / np.sqrt(np.outer(np.diag(prec), np.diag(prec)))
        core = [0, 2, 3]
        g = pns.fit_graph(core, np.arange(5), expr, lam=0.05)
        truth = {frozenset((f"n{i}", f"n{j}")) for i in range(5) for j in range(i + 1, 5)
                 if abs(partial[i, j]) > 1e-12 and (i in core or j in core)}
        assert g.edge_pairs() == truth

    def test_or_rule_and_sklearn_supports(self):
        # per-row supports agree with an independent lasso implementation
        rng = np.random.default_rng(5)
        x = rng.standard_normal((120, 8))
        x[:, 1] += 0.8 * x[:, 0]
        x[:, 5] += 0.6 * x[:, 3]
        x[:, 7] += 0.5 * x[:, 1]
        e = _expr(x)
        lam = 0.1
        core, nodes = [0, 3], np.arange(8)
        g = pns.fit_graph(core, nodes, e, lam)
        xs = e.values
        want = set()
        for i in core:
            others = [j for j in nodes if j != i]
            fit = Lasso(alpha=lam, fit_intercept=False, tol=1e-12, max_iter=100_000).fit(xs[:, others], xs[:, i])
            for j, b in zip(others, fit.coef_):
                if abs(b) > 1e-6:
                    want.add(frozenset((f"n{i}", f"n{j}")))
        assert g.edge_pairs() == want

    def test_no_edges_between_non_core(self):
        expr, _ = _chain_data(d=6)
        g = pns.fit_graph([0], np.arange(6), expr, lam=0.01)
        core = set(np.flatnonzero(g.core_mask))
        assert all(i in core or j in core for i, j in g.edges)

    def test_huge_lambda_empty(self):
        expr, _ = _chain_data()
        assert pns.fit_graph([0, 1, 2], np.arange(5), expr, lam=1.0).n_edges == 0

    def test_larger_lambda_never_adds_row_edges(self):
        expr, _ = _chain_data(d=8, n=200, seed=3)
        prev = None
        for lam in (0.01, 0.03, 0.1, 0.2, 0.4):
            g = pns.fit_graph([0, 4], np.arange(8), expr, lam)
            row = {p for p in g.edge_pairs() if "n0" in p}
            if prev is not None:
                assert row <= prev
            prev = row

    def test_core_must_be_subset(self):
        expr, _ = _chain_data()
        with pytest.raises(ConfigError):
            pns.fit_graph([0, 4], [0, 1, 2], expr, 0.1)


def _graph_with_degrees(seq):
    h = nx.havel_hakimi_graph(seq)
    return SparseGraph.from_adjacency(_ids(len(seq)), nx.to_scipy_sparse_array(h))


class TestScaleFreeR2:
    def test_exact_power_law(self):
        seq = [1] * 64 + [2] * 16 + [4] * 4 + [8]
        assert pns.scale_free_r2(_graph_with_degrees(seq)) == pytest.approx(1.0)

    def test_two_degrees(self):
        assert pns.scale_free_r2(_graph_with_degrees([1, 1, 2])) == pytest.approx(1.0)

    def test_single_degree_undefined(self):
        g = SparseGraph(_ids(4), np.ones(4), [[0, 1], [2, 3]])
        with pytest.raises(NumericalError, match="R\\^2 undefined"):
            pns.scale_free_r2(g)

    def test_isolated_nodes_ignored(self):
        seq = [1] * 64 + [2] * 16 + [4] * 4 + [8] + [0] * 30
        assert pns.scale_free_r2(_graph_with_degrees(seq)) == pytest.approx(1.0)

    @pytest.mark.parametrize("m", [1, 2])
    def test_ba_graph_is_scale_free(self, m):
        assert pns.scale_free_r2(ba_graph(400, m, seed=0)) > 0.8


def _sim_inputs(d=120, n=150, seed=0):
    graph = ba_graph(d, 1, seed, _ids(d))
    expr = sample_expression(precision_from_graph(graph), n, seed + 1, graph.nodes).standardized()
    p = np.random.default_rng(seed + 2).uniform(size=d)
    return expr, GeneTable(graph.nodes, p)


class TestPipeline:
    def test_composition(self):
        expr, genes = _sim_inputs()
        cfg = pns.PnsConfig(t=0.3, tau=0.15, lam=0.15)
        res = pns.partial_neighborhood_selection(expr, genes, cfg)
        s1 = pns.pvalue_screen(genes, cfg.t)
        s = pns.correlation_screen(s1, expr, cfg.tau)
        v = pns.retrieve_neighbors(s, expr, cfg.tau)
        g = pns.fit_graph(s, v, expr, cfg.lam)
        assert res.graph.edge_pairs() == g.edge_pairs()
        assert res.graph.nodes == tuple(expr.node_ids[k] for k in v)
        assert set(res.core) <= set(res.candidates)

    def test_requires_alignment(self):
        expr, genes = _sim_inputs()
        shuffled = GeneTable(genes.node_ids[::-1], genes.p_values[::-1])
        with pytest.raises(ConfigError, match="aligned"):
            pns.partial_neighborhood_selection(expr, shuffled, pns.PnsConfig())

    def test_scan_single_value(self):
        expr, genes = _sim_inputs()
        rows = pns.lambda_scan(expr, genes, pns.PnsConfig(t=0.3), [0.2])
        assert len(rows) == 1 and rows[0]["lambda"] == 0.2

    def test_scan_huge_lambda_flagged(self):
        expr, genes = _sim_inputs()
        (row,) = pns.lambda_scan(expr, genes, pns.PnsConfig(t=0.3), [5.0])
        assert row["edges"] == 0 and row["r2"] is None and "undefined" in row["error"]

    def test_scan_matches_individual_fits(self):
        expr, genes = _sim_inputs()
        cfg = pns.PnsConfig(t=0.3)
        grid = [0.3, 0.1, 0.2]
        rows = pns.lambda_scan(expr, genes, cfg, grid)
        for row in rows:
            g = pns.partial_neighborhood_selection(expr, genes, pns.PnsConfig(t=0.3, lam=row["lambda"])).graph
            assert row["edges"] == g.n_edges

    def test_scan_finds_scale_free_lambda(self):
        expr, genes = _sim_inputs(d=400, n=180)
        grid = np.round(np.geomspace(0.5, 0.1, 15), 5)
        rows = pns.lambda_scan(expr, genes, pns.PnsConfig(t=0.5), grid)
        assert max(r["r2"] or 0 for r in rows) > 0.8
        lam = pns.select_lambda(rows)
        assert lam in grid

    def test_select_lambda_skips_thin_rows(self):
        rows = [{"lambda": 0.5, "r2": 1.0, "edges": 3, "degrees": 2},
                {"lambda": 0.2, "r2": 0.9, "edges": 300, "degrees": 9},
                {"lambda": 0.1, "r2": None, "edges": 0, "degrees": 0}]
        assert pns.select_lambda(rows) == 0.2
        with pytest.raises(NumericalError):
            pns.select_lambda(rows[:1])


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(t=0.0), dict(tau=1.0), dict(lam=-1.0), dict(tol=0.0)])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            pns.PnsConfig(**kw)
