"""Synthetic data: scale-free graph, Gaussian expression, Ising states, z-scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from . import _kernels
from .core import ExpressionMatrix, GeneTable, SparseGraph
from .errors import ConfigError, NumericalError


@dataclass(frozen=True)
class SimConfig:
    d: int = 400
    m: int = 2
    n: int = 180
    v: float = 0.9
    u: float = 0.1
    b: float = -7.0
    c: float = 3.0
    mu: float = 1.5
    sigma0: float = 1.0
    sigma1: float = 1.0
    mh_iters: int = 200
    init_ratio: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.d > self.m >= 1:
            raise ConfigError(f"need d > m >= 1, got d={self.d}, m={self.m}")
        if self.v <= 0 or self.u <= 0:
            raise ConfigError("v and u must be positive")
        if self.sigma0 <= 0 or self.sigma1 <= 0:
            raise ConfigError("emission standard deviations must be positive")
        if self.n < 1 or self.mh_iters < 1:
            raise ConfigError("n and mh_iters must be >= 1")
        if not 0 <= self.init_ratio <= 1:
            raise ConfigError("init_ratio must lie in [0, 1]")

    def as_dict(self):
        return asdict(self)


def node_names(d):
    width = len(str(d - 1))
    return tuple(f"g{k:0{width}d}" for k in range(d))


def ba_graph(d: int, m: int = 2, seed=0, nodes=None) -> SparseGraph:
    """Preferential-attachment graph.

    Starts from a clique on ``m + 1`` nodes; every later node attaches to
    ``m`` distinct existing nodes drawn with probability proportional to
    their current degree. Edge count is ``m*(d - m - 1) + m*(m + 1)/2``.
    """
    if not d > m >= 1:
        raise ConfigError(f"need d > m >= 1, got d={d}, m={m}")
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(m + 1) for j in range(i + 1, m + 1)]
    # each node appears once per incident edge, so uniform draws are degree-weighted
    ends = [x for e in edges for x in e]
    for new in range(m + 1, d):
        chosen = []
        while len(chosen) < m:
            t = ends[rng.integers(len(ends))]
            if t not in chosen:
                chosen.append(t)
        for t in chosen:
            edges.append((t, new))
            ends.extend((t, new))
    nodes = node_names(d) if nodes is None else tuple(nodes)
    return SparseGraph(nodes, np.ones(d, bool), np.array(edges, dtype=np.int64))


def precision_matrix(graph: SparseGraph, v=0.9, u=0.1) -> np.ndarray:
    """``v*A + (|e| + u) I`` where e is the smallest eigenvalue of ``v*A``."""
    if v <= 0 or u <= 0:
        raise ConfigError("v and u must be positive")
    a = v * graph.adjacency().toarray()
    e = np.linalg.eigvalsh(a)[0] if a.size else 0.0
    return a + (abs(e) + u) * np.eye(graph.n_nodes)


def precision_from_graph(graph: SparseGraph, v=0.9, u=0.1) -> np.ndarray:
    """Covariance matrix whose inverse is supported on the graph."""
    prec = precision_matrix(graph, v, u)
    try:
        cov = np.linalg.inv(prec)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - PD by construction
        raise NumericalError(f"precision matrix inversion failed: {exc}") from exc
    return 0.5 * (cov + cov.T)


def sample_expression(cov, n: int, seed=0, node_ids=None) -> ExpressionMatrix:
    """``n`` i.i.d. rows from N(0, cov) via a Cholesky factor."""
    cov = np.asarray(cov, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance matrix is not positive definite") from exc
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, cov.shape[0])) @ chol.T
    node_ids = node_names(cov.shape[0]) if node_ids is None else node_ids
    return ExpressionMatrix(x, tuple(node_ids))


def ising_sample(graph: SparseGraph, b: float, c: float, init_ratio=0.5, iters=200, seed=0,
                 pinned=None, field=None) -> np.ndarray:
    """Metropolis-Hastings draw from the Ising prior.

    ``round(init_ratio * d)`` uniformly chosen nodes start at 1, then
    ``iters`` sweeps of ``d`` random single-site flip proposals are run.
    ``field`` optionally replaces the scalar ``b`` with per-node values.
    """
    if iters < 1:
        raise ConfigError("iters must be >= 1")
    d = graph.n_nodes
    rng = np.random.default_rng(seed)
    states = np.zeros(d, dtype=np.int64)
    states[rng.permutation(d)[: int(round(init_ratio * d))]] = 1
    pinned = np.zeros(d, bool) if pinned is None else np.asarray(pinned, bool)
    states[pinned] = 1
    fld = np.full(d, float(b)) if field is None else np.asarray(field, dtype=float) * np.ones(d)
    indptr, indices = graph.csr()
    chunk = max(1, min(iters, 2_000_000 // max(d, 1)))
    done = 0
    while done < iters:
        k = min(chunk, iters - done)
        _kernels.mh_sweeps(indptr, indices, states, fld, float(c), pinned,
                           rng.random((k, d)), rng.random((k, d)))
        done += k
    return states


def emit_zscores(states, mu=1.5, sigma0=1.0, sigma1=1.0, seed=0) -> np.ndarray:
    if sigma0 <= 0 or sigma1 <= 0:
        raise ConfigError("emission standard deviations must be positive")
    states = np.asarray(states)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(states.size)
    return np.where(states == 1, mu + sigma1 * noise, sigma0 * noise)


@dataclass
class SimData:
    config: SimConfig
    graph: SparseGraph
    covariance: np.ndarray
    expr: ExpressionMatrix
    states: np.ndarray
    z: np.ndarray

    @property
    def p_values(self) -> np.ndarray:
        return norm.sf(self.z)

    def genes(self, anchors=None, covariates=None, covariate_names=()) -> GeneTable:
        return GeneTable(self.graph.nodes, self.p_values, anchors, covariates, covariate_names)


def simulate(config: SimConfig = SimConfig()) -> SimData:
    """Run the whole generator; sub-seeds are spawned from ``config.seed``."""
    s_graph, s_expr, s_ising, s_z = np.random.SeedSequence(config.seed).spawn(4)
    graph = ba_graph(config.d, config.m, s_graph)
    cov = precision_from_graph(graph, config.v, config.u)
    expr = sample_expression(cov, config.n, s_expr, graph.nodes)
    states = ising_sample(graph, config.b, config.c, config.init_ratio, config.mh_iters, s_ising)
    z = emit_zscores(states, config.mu, config.sigma0, config.sigma1, s_z)
    return SimData(config, graph, cov, expr, states, z)
