"""Acceptance criteria, one test each.

Every test records a single PASS/FAIL line through the ``report`` fixture;
the lines are repeated at the end of the pytest run. Replicate counts and
tolerances are the ones the criteria state. Simulated data sets are
memoized so the benchmark criteria share draws.
"""

import functools
from dataclasses import replace
from pathlib import Path

import numpy as np
from _oracles import FIXTURE_GRAPHS, exact_posterior_null, fixture_graph, ising_distribution
from dawn import evaluate as ev
from dawn import hmrf, lasso
from dawn.cli import main
from dawn.core import HmrfModel, SparseGraph
from dawn.pns import PnsConfig
from dawn.simgen import SimConfig, ba_graph, emit_zscores, ising_sample, simulate

N_REP = 20
SIM = {d: SimConfig(d=d, n=180, b=-7.0, c=3.0, mu=1.5, sigma0=1.0, sigma1=1.0, v=0.9, u=0.1) for d in (400, 800)}
PNS = PnsConfig(t=0.1, tau=0.1)
FPR = 0.1

# target means and allowed deviation per method
TARGET = {400: {"dawn": 0.733, "naive": 0.585, "oracle": 0.934},
          800: {"dawn": 0.732, "naive": 0.567, "oracle": 0.917}}
BAND = {"dawn": 0.08, "naive": 0.08, "oracle": 0.05}

FIX = Path(__file__).parent / "fixtures"


@functools.lru_cache(maxsize=None)
def _simulate(cfg):
    return simulate(cfg)


def _harness(d, **pns_kw):
    return ev.HarnessConfig(sim=SIM[d], pns=replace(PNS, **pns_kw), fpr=FPR)


@functools.lru_cache(maxsize=None)
def _batch(d, methods=("dawn", "oracle", "naive"), **pns_kw):
    results, failures = ev.run_replicates(_harness(d, **pns_kw), N_REP, methods=methods, simulate_fn=_simulate)
    means = {m: float(np.mean([r.tpr[m] for r in results])) for m in methods}
    return results, failures, means


def _dawn_mean(d, **pns_kw):
    # the full three-method batch at the default thresholds is reused when it exists
    if pns_kw == {} or pns_kw == {"t": PNS.t, "tau": PNS.tau}:
        results, failures, means = _batch(d)
    else:
        results, failures, means = _batch(d, ("dawn",), **pns_kw)
    return means["dawn"], results, failures


def test_c1_simulation_tpr(report):
    parts, ok = [], True
    for d in (400, 800):
        results, failures, means = _batch(d)
        for m in ("dawn", "naive", "oracle"):
            inside = abs(means[m] - TARGET[d][m]) <= BAND[m]
            ok &= inside
            parts.append(f"d={d} {m}={means[m]:.3f} (target {TARGET[d][m]}±{BAND[m]}, {'in' if inside else 'out'})")
        order = means["oracle"] > means["dawn"] > means["naive"]
        ok &= order
        parts.append(f"d={d} ordering oracle>dawn>naive {'holds' if order else 'violated'}")
        parts.append(f"d={d} failed replicates {len(failures)}")
    report("C1", ok, "; ".join(parts))
    assert ok


def test_c2_threshold_robustness(report):
    taus = (0.05, 0.1, 0.15)
    ts = (0.06, 0.08, 0.1, 0.12, 0.14)
    by_tau = {tau: _dawn_mean(800, tau=tau)[0] if tau != PNS.tau else _dawn_mean(800)[0] for tau in taus}
    by_t, se = {}, []
    for t in ts:
        mean, results, _ = _dawn_mean(800, t=t) if t != PNS.t else _dawn_mean(800)
        by_t[t] = mean
        se.append(np.std([r.tpr["dawn"] for r in results], ddof=1) / np.sqrt(len(results)))
    spread = max(by_tau.values()) - min(by_tau.values())
    best = max(ts, key=lambda t: by_t[t])
    interior = best not in (ts[0], ts[-1])
    # flat within noise: the t profile stays inside two standard errors of a replicate mean
    noise = 2 * float(np.mean(se))
    flat = max(by_t.values()) - min(by_t.values()) <= noise
    ok = spread <= 0.02 and (interior or flat)
    report("C2", ok, f"tau spread {spread:.3f} (<= 0.02) over "
           + ", ".join(f"{k}:{v:.3f}" for k, v in by_tau.items())
           + f"; t profile " + ", ".join(f"{k}:{v:.3f}" for k, v in by_t.items())
           + f"; argmax t={best} ({'interior' if interior else 'edge'}), flat within {noise:.3f}: {flat}")
    assert ok


def test_c3_edge_recovery_ordering(report):
    cfg = _harness(400)
    rows = [ev.edge_comparison(cfg, k, target_fdr=0.5, data=_simulate(replace(SIM[400], seed=k)))
            for k in range(N_REP)]
    pns_p = np.array([r["pns_power"] for r in rows])
    corr_p = np.array([r["corr_power"] for r in rows])
    p = ev.sign_test(pns_p, corr_p)
    ok = pns_p.mean() > corr_p.mean() and p < 0.05
    report("C3", ok, f"important-edge power at edge FDR 0.5: PNS {pns_p.mean():.3f} vs correlation "
           f"{corr_p.mean():.3f}, wins {(pns_p > corr_p).sum()}/{N_REP}, sign test p={p:.2g} (< 0.05)")
    assert ok


def _mh_tv(graph, b, c, chains=20_000, iters=30):
    d = graph.n_nodes
    counts = np.zeros(2 ** d)
    for k in range(chains):
        s = ising_sample(graph, b, c, 0.5, iters, seed=k)
        counts[int("".join(map(str, s)), 2)] += 1
    _, exact = ising_distribution(graph.adjacency().toarray(), b, c)
    return 0.5 * np.abs(counts / chains - exact).sum()


def _small_graph(d, edges):
    return SparseGraph(tuple(f"v{k}" for k in range(d)), np.ones(d, bool), np.array(edges, dtype=np.int64).reshape(-1, 2))


def test_c4_mcmc_matches_enumeration(report):
    model = HmrfModel(-1.2, 0.9, 1.5, 1.0, 1.2)
    cfg = hmrf.HmrfConfig(gibbs_burn_in=1000, gibbs_samples=50_000)
    gibbs_err = {}
    for name in sorted(FIXTURE_GRAPHS):
        g = fixture_graph(name)
        z = np.random.default_rng(len(name)).normal(0.8, 1.3, g.n_nodes)
        exact = exact_posterior_null(g.adjacency().toarray(), z, model.b, model.c, model.mu,
                                     model.sigma0_sq, model.sigma1_sq)
        for rb in (True, False):
            q = hmrf.gibbs_posterior(z, g, model, cfg, seed=1, rao_blackwell=rb)
            gibbs_err[(name, rb)] = float(np.abs(q - exact).max())
    # every graph on at most three nodes, up to relabeling
    small = {"1": (1, []), "2-empty": (2, []), "2-edge": (2, [[0, 1]]), "3-empty": (3, []),
             "3-edge": (3, [[0, 1]]), "3-path": (3, [[0, 1], [1, 2]]), "3-triangle": (3, [[0, 1], [1, 2], [0, 2]])}
    tv = {k: _mh_tv(_small_graph(*v), -1.0, 2.0) for k, v in small.items()}
    g_max, tv_max = max(gibbs_err.values()), max(tv.values())
    ok = g_max <= 0.02 and tv_max <= 0.02
    report("C4", ok, f"Gibbs max |q - exact| {g_max:.4f} over {len(gibbs_err)} graph/estimator pairs (<= 0.02); "
           f"MH max TV {tv_max:.4f} over {len(tv)} graphs (<= 0.02)")
    assert ok


def test_c5_solver_correctness(report):
    tol = 1e-8
    worst_kkt = 0.0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        n, p = rng.integers(10, 80), rng.integers(2, 40)
        x = rng.standard_normal((n, p))
        x = (x - x.mean(0)) / x.std(0)
        y = x[:, : min(3, p)] @ rng.normal(0, 1, min(3, p)) + rng.standard_normal(n)
        lam = rng.uniform(0.02, 0.9) * lasso.LassoProblem(x, y, 0.0).lambda_max()
        prob = lasso.LassoProblem(x, y, lam)
        worst_kkt = max(worst_kkt, float(lasso.kkt_residuals(prob, lasso.solve_lasso(prob, tol=tol)).max()))
    worst_soft = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((60, 10)))
        y = 3 * rng.standard_normal(60)
        lam = rng.uniform(0.1, 2.0)
        v = q.T @ y
        soft = np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)
        worst_soft = max(worst_soft, float(np.abs(lasso.solve_lasso(lasso.LassoProblem(q, y, lam)) - soft).max()))
    ok = worst_kkt <= 10 * tol and worst_soft <= 1e-8
    report("C5", ok, f"max KKT residual {worst_kkt:.2e} over 100 problems (<= {10 * tol:.0e}); "
           f"max deviation from soft-thresholding {worst_soft:.2e} over 20 designs (<= 1e-8)")
    assert ok


def test_c6_bayesian_fdr_identities(report):
    cases = [([0.01, 0.02, 0.30], [0.01, 0.015, 0.11]), ([0.05] * 4, [0.05] * 4), ([0.0, 1.0], [0.0, 0.5])]
    exact = all(np.allclose(hmrf.bayesian_fdr(q)[0], want, rtol=1e-12, atol=0) for q, want in cases)
    bad = 0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        q = rng.uniform(size=rng.integers(1, 80))
        if seed % 4 == 0:
            q = np.round(q, 1)
        fdr, _ = hmrf.bayesian_fdr(q)
        order = np.lexsort((np.arange(q.size), q))
        bad += not (np.all(np.diff(fdr[order]) >= 0) and fdr[order[0]] == q[order[0]])
    ok = exact and bad == 0
    report("C6", ok, f"worked examples reproduced: {exact}; monotonicity violations {bad}/1000")
    assert ok


def test_c7_edge_posterior_monotone(report):
    grid = np.arange(-2.0, 4.01, 0.5)
    total = 0
    for b, c in ((-1.0, 3.0), (-2.0, 1.0), (0.5, 0.5)):
        total += ev.edge_posterior_monotonicity(grid, b=b, c=c).n_violations
    ok = total == 0
    report("C7", ok, f"{total} monotonicity violations on the 4-node grid at three (b, c) settings (== 0)")
    assert ok


def _cov_data(seed):
    g = ba_graph(150, 2, seed=seed)
    s = ising_sample(g, -3.0, 1.0, 0.5, 100, seed=seed + 1)
    z = emit_zscores(s, 2.5, 1.0, 1.0, seed=seed + 2)
    return g, s, z


def test_c8_covariate_test_calibration(report):
    repeats, B = 50, 200
    null_p = []
    for k in range(repeats):
        g, _, z = _cov_data(k)
        h = (np.random.default_rng(10_000 + k).uniform(size=g.n_nodes) < 0.3).astype(float)
        null_p.append(hmrf.covariate_test(z, g, h, hmrf.HmrfConfig(seed=k), B=B).p_values[0])
    null_p = np.array(null_p)
    g, s, z = _cov_data(999)
    p_inf = hmrf.covariate_test(z, g, s.astype(float), B=B).p_values[0]
    share = float((null_p > 0.05).mean())
    ok = share >= 0.9 and p_inf <= 0.005
    report("C8", ok, f"null covariate p > 0.05 in {share:.0%} of {repeats} repeats (>= 90%); "
           f"informative covariate p = {p_inf:.3f} (<= 0.005)")
    assert ok


def test_c9_fixture_smoke(report, tmp_path):
    expr, genes = str(FIX / "expression.tsv"), str(FIX / "genes.tsv")
    code = main(["dawn", "--expr", expr, "--genes", genes, "--out", str(tmp_path / "run")])
    post = np.loadtxt(tmp_path / "run" / "posterior.tsv", skiprows=1, usecols=(1, 2, 3)) if code == 0 else None
    cov = main(["covariate-test", "--genes", genes, "--graph", str(tmp_path / "run" / "edges.tsv"),
                "--B", "20", "--out", str(tmp_path / "cov")]) if code == 0 else None
    n_nodes = sum(1 for _ in open(genes)) - 1
    ok = (code == 0 and cov == 0 and post.shape[0] == n_nodes
          and np.all((post[:, 0] >= 0) & (post[:, 0] <= 1)) and post[:, 2].sum() > 0)
    report("C9", ok, f"dawn exit {code}, covariate-test exit {cov} on the bundled {n_nodes}-gene fixture; "
           f"{int(post[:, 2].sum()) if post is not None else 0} genes called")
    assert ok
