"""Partial neighborhood selection.

Screens nodes by p-value and by absolute correlation, pulls in first-order
correlation neighbors, then runs one lasso regression per core node to
select its partial-correlation neighbors among the retained set.

Lambda convention: ``PnsConfig.lam`` is per sample, i.e. the regressions
minimize ``0.5*||x_i - X b||^2 + n*lam*||b||_1`` on unit-variance columns.
On that scale ``lam`` is comparable to a correlation and the all-zero
threshold is the largest absolute sample correlation.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import lasso
from .core import ExpressionMatrix, GeneTable, SparseGraph
from .errors import ConfigError, ConvergenceError, NumericalError, ScreeningError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PnsConfig:
    t: float = 0.1
    tau: float = 0.1
    lam: float = 0.12
    zero_tol: float = 1e-8
    tol: float = 1e-8
    max_iter: int = 10_000

    def __post_init__(self):
        if not 0 < self.t <= 1:
            raise ConfigError(f"t must lie in (0, 1], got {self.t!r}")
        if not 0 < self.tau < 1:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau!r}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam!r}")
        if self.zero_tol < 0 or self.tol <= 0:
            raise ConfigError("zero_tol must be >= 0 and tol > 0")


def _unit_columns(expr: ExpressionMatrix) -> np.ndarray:
    x = expr.values - expr.values.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    return x / sd


def correlations(expr: ExpressionMatrix, rows: Optional[Sequence[int]] = None) -> np.ndarray:
    """Pearson correlations of the ``rows`` columns against every column."""
    if expr.n < 2:
        raise ConfigError("correlations need at least two samples")
    x = _unit_columns(expr)
    left = x if rows is None else x[:, np.asarray(rows, dtype=np.int64)]
    return np.clip(left.T @ x / expr.n, -1.0, 1.0)


def pvalue_screen(genes: GeneTable, t: float) -> np.ndarray:
    """Indices with ``p <= t``; anchors are kept whatever their p-value."""
    keep = (genes.p_values <= t) | genes.anchors
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise ScreeningError(f"no key-gene candidates at threshold t={t}")
    return idx


def correlation_screen(candidates, expr: ExpressionMatrix, tau: float) -> np.ndarray:
    """Drop candidates with no other candidate at ``|rho| > tau``."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise ScreeningError("correlation screen received no candidates")
    rho = correlations(expr, candidates)[:, candidates]
    linked = np.abs(rho) > tau
    np.fill_diagonal(linked, False)
    keep = candidates[linked.any(axis=1)]
    if keep.size == 0:
        raise ScreeningError(f"all candidates isolated at tau={tau}")
    return keep


def retrieve_neighbors(core, expr: ExpressionMatrix, tau: float) -> np.ndarray:
    """Core nodes plus every variable with ``|rho| > tau`` to some core node."""
    core = np.asarray(core, dtype=np.int64)
    if core.size == 0:
        raise ScreeningError("neighbor retrieval received an empty core set")
    rho = correlations(expr, core)
    hit = (np.abs(rho) > tau).any(axis=0)
    hit[core] = True
    return np.flatnonzero(hit)


def _row_supports(gram, xty_cols, positions, lambdas, zero_tol, tol, max_iter, workers, names):
    """Lasso supports for each core row along a lambda grid.

    Returns a list (one entry per lambda) of boolean (|core|, |V|) matrices.
    """

    def one(k):
        pos = positions[k]
        try:
            betas = lasso.lasso_path(gram, xty_cols[:, k], lambdas, skip=pos, tol=tol, max_iter=max_iter)
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"lasso for node {names[k]!r} failed: {exc}", exc.last_iterate, exc.gap
            ) from exc
        return lasso.support(betas, zero_tol)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(len(positions))))
    else:
        rows = [one(k) for k in range(len(positions))]
    n_lam = len(lambdas)
    out = []
    for m in range(n_lam):
        e = np.zeros((len(positions), gram.shape[0]), bool)
        for k, r in enumerate(rows):
            e[k] = r[m]
        out.append(e)
    return out


def _assemble(nodes_idx, core_idx, positions, supports, expr) -> SparseGraph:
    v = len(nodes_idx)
    e = np.zeros((v, v), bool)
    e[positions] = supports
    omega = e | e.T
    np.fill_diagonal(omega, False)
    core_mask = np.isin(nodes_idx, core_idx)
    ids = tuple(expr.node_ids[i] for i in nodes_idx)
    i, j = np.nonzero(np.triu(omega, k=1))
    return SparseGraph(ids, core_mask, np.column_stack([i, j]))


def _prepare(core, nodes, expr):
    core = np.asarray(core, dtype=np.int64)
    nodes = np.asarray(nodes, dtype=np.int64)
    if not np.isin(core, nodes).all():
        raise ConfigError("core set must be a subset of the node set")
    if nodes.size < 2:
        raise ConfigError("graph fitting needs at least two nodes")
    x = _unit_columns(expr)[:, nodes]
    gram = x.T @ x
    positions = np.searchsorted(nodes, core) if np.all(np.diff(nodes) > 0) else \
        np.array([int(np.flatnonzero(nodes == c)[0]) for c in core])
    return core, nodes, gram, positions


def fit_graph(core, nodes, expr: ExpressionMatrix, lam: float, zero_tol=1e-8,
              tol=lasso.DEFAULT_TOL, max_iter=lasso.DEFAULT_MAX_ITER, workers=1) -> SparseGraph:
    """Neighborhood-selection graph over ``nodes`` with rows for ``core`` only.

    ``core`` and ``nodes`` index columns of ``expr``. Edge (i, j) is present
    when either regression selects the other (OR rule); rows outside the core
    are never fitted, so no edge joins two non-core nodes.
    """
    core, nodes, gram, positions = _prepare(core, nodes, expr)
    names = [expr.node_ids[c] for c in core]
    supports = _row_supports(gram, gram[:, positions], positions, [lam * expr.n],
                             zero_tol, tol, max_iter, workers, names)[0]
    return _assemble(nodes, core, positions, supports, expr)


def scale_free_r2(graph: SparseGraph) -> float:
    """Squared correlation of log degree frequency against log degree.

    Only degrees observed at least once with k >= 1 contribute.
    """
    deg = graph.degrees()
    deg = deg[deg > 0]
    ks, counts = np.unique(deg, return_counts=True)
    if ks.size < 2:
        raise NumericalError("R^2 undefined: fewer than two distinct positive degrees")
    pk = counts / graph.n_nodes
    r = np.corrcoef(np.log(pk), np.log(ks))[0, 1]
    return float(r * r)


@dataclass
class PnsResult:
    graph: SparseGraph
    candidates: np.ndarray
    core: np.ndarray
    nodes: np.ndarray


def partial_neighborhood_selection(expr: ExpressionMatrix, genes: GeneTable, config: PnsConfig,
                                   workers=1) -> PnsResult:
    """Full screening plus graph estimation.

    ``expr`` and ``genes`` must already share the same node order
    (see :func:`dawn.core.align`).
    """
    if expr.node_ids != genes.node_ids:
        raise ConfigError("expression and gene table are not aligned; call core.align first")
    s_prime = pvalue_screen(genes, config.t)
    s = correlation_screen(s_prime, expr, config.tau)
    v = retrieve_neighbors(s, expr, config.tau)
    log.info("PNS screening: %d candidates, %d core, %d nodes", s_prime.size, s.size, v.size)
    graph = fit_graph(s, v, expr, config.lam, config.zero_tol, config.tol, config.max_iter, workers)
    return PnsResult(graph, s_prime, s, v)


def lambda_scan(expr: ExpressionMatrix, genes: GeneTable, config: PnsConfig, lambdas,
                workers=1) -> list:
    """Edge count and scale-free R^2 for each lambda on one screening result.

    Rows are dicts with keys ``lambda``, ``r2`` (None when undefined),
    ``edges``, ``degrees`` (distinct positive degrees, i.e. the number of
    points behind the R^2 fit) and ``error``. Per-lambda failures are
    recorded, not raised.
    """
    lambdas = [float(x) for x in lambdas]
    if not lambdas:
        raise ConfigError("lambda grid is empty")
    s_prime = pvalue_screen(genes, config.t)
    s = correlation_screen(s_prime, expr, config.tau)
    v = retrieve_neighbors(s, expr, config.tau)
    core, nodes, gram, positions = _prepare(s, v, expr)
    names = [expr.node_ids[c] for c in core]
    rows = []
    try:
        supports = _row_supports(gram, gram[:, positions], positions,
                                 [x * expr.n for x in lambdas], config.zero_tol,
                                 config.tol, config.max_iter, workers, names)
    except ConvergenceError:
        supports = None
    for m, lam in enumerate(lambdas):
        row = {"lambda": lam, "r2": None, "edges": None, "degrees": None, "error": ""}
        try:
            if supports is None:
                sup = _row_supports(gram, gram[:, positions], positions, [lam * expr.n],
                                    config.zero_tol, config.tol, config.max_iter, workers, names)[0]
            else:
                sup = supports[m]
            graph = _assemble(nodes, core, positions, sup, expr)
            row["edges"] = graph.n_edges
            deg = graph.degrees()
            row["degrees"] = int(np.unique(deg[deg > 0]).size)
            row["r2"] = scale_free_r2(graph)
        except (NumericalError, ConfigError) as exc:
            row["error"] = str(exc)
        rows.append(row)
    return rows


def select_lambda(rows, min_degrees=5) -> float:
    """Lambda with the largest scale-free R^2 among rows from :func:`lambda_scan`.

    Rows with an undefined R^2 or fewer than ``min_degrees`` distinct
    positive degrees are skipped, since a log-log fit through two or three
    points is trivially close to 1. Ties go to the larger lambda.
    """
    ok = [r for r in rows if r["r2"] is not None and r["degrees"] >= min_degrees]
    if not ok:
        raise NumericalError("no lambda on the grid gives a defined scale-free R^2")
    best = max(ok, key=lambda r: (round(r["r2"], 12), r["lambda"]))
    return float(best["lambda"])
