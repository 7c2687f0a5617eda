"""Shared domain types and input validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InputError

# smallest positive double; p-values of exactly zero are clamped here
P_FLOOR = np.nextafter(0.0, 1.0)


def _check_unique(ids: Sequence[str], what: str) -> None:
    seen = set()
    for node_id in ids:
        if node_id in seen:
            raise InputError(f"duplicate node_id {node_id!r} in {what}")
        seen.add(node_id)


@dataclass(frozen=True)
class ExpressionMatrix:
    """Samples-by-variables expression values with one label per column."""

    values: np.ndarray
    node_ids: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise InputError("expression values must be a 2-d array")
        node_ids = tuple(str(x) for x in self.node_ids)
        if len(node_ids) != values.shape[1]:
            raise InputError(
                f"{len(node_ids)} node ids for {values.shape[1]} expression columns"
            )
        if values.shape[0] < 1:
            raise InputError("expression matrix has no samples")
        _check_unique(node_ids, "expression matrix")
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            row, col = bad[0]
            raise InputError(
                f"non-finite expression value at sample {row}, node {node_ids[col]!r}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "node_ids", node_ids)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def standardized(self) -> "ExpressionMatrix":
        """Center each column and scale it to unit (population) variance.

        Constant columns are left at zero rather than divided by zero.
        """
        x = self.values - self.values.mean(axis=0)
        sd = x.std(axis=0)
        sd[sd == 0] = 1.0
        return ExpressionMatrix(x / sd, self.node_ids)

    def subset(self, ids: Sequence[str]) -> "ExpressionMatrix":
        index = {node_id: k for k, node_id in enumerate(self.node_ids)}
        cols = [index[node_id] for node_id in ids]
        return ExpressionMatrix(self.values[:, cols], tuple(ids))


@dataclass(frozen=True)
class GeneTable:
    """Per-node genetic evidence: p-values, anchor flags and covariate indicators."""

    node_ids: tuple
    p_values: np.ndarray
    anchors: Optional[np.ndarray] = None
    covariates: Optional[np.ndarray] = None
    covariate_names: tuple = ()

    def __post_init__(self):
        node_ids = tuple(str(x) for x in self.node_ids)
        _check_unique(node_ids, "gene table")
        p = np.asarray(self.p_values, dtype=float).ravel()
        if p.size != len(node_ids):
            raise InputError("p_values length does not match node_ids")
        bad = ~np.isfinite(p) | (p < 0) | (p > 1)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise InputError(f"p-value {p[k]!r} for {node_ids[k]!r} is outside [0, 1]")
        p = np.maximum(p, P_FLOOR)

        anchors = self.anchors
        anchors = np.zeros(p.size, bool) if anchors is None else np.asarray(anchors, bool).ravel()
        if anchors.size != p.size:
            raise InputError("anchor column length does not match node_ids")

        cov = self.covariates
        if cov is None:
            cov = np.zeros((p.size, 0), dtype=float)
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        if cov.shape[0] != p.size:
            raise InputError("covariate rows do not match node_ids")
        if not np.isin(cov, (0.0, 1.0)).all():
            raise InputError("covariate indicators must be 0/1")
        names = tuple(self.covariate_names) or tuple(f"cov_{k + 1}" for k in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise InputError("covariate_names length does not match covariate columns")

        for arr in (p, anchors, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "node_ids", node_ids)
        object.__setattr__(self, "p_values", p)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "covariate_names", names)

    def __len__(self):
        return len(self.node_ids)

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def z_scores(self) -> np.ndarray:
        from .hmrf import z_from_p

        return z_from_p(self.p_values)

    def subset(self, ids: Sequence[str]) -> "GeneTable":
        index = {node_id: k for k, node_id in enumerate(self.node_ids)}
        rows = [index[node_id] for node_id in ids]
        return GeneTable(
            tuple(ids),
            self.p_values[rows],
            self.anchors[rows],
            self.covariates[rows],
            self.covariate_names,
        )


@dataclass(frozen=True)
class SparseGraph:
    """Undirected binary graph over an ordered node list.

    ``core_mask`` marks the core set (nodes whose neighborhoods were
    estimated); ``edges`` holds unique index pairs with ``i < j``.
    """

    nodes: tuple
    core_mask: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        nodes = tuple(str(x) for x in self.nodes)
        _check_unique(nodes, "graph")
        core = np.asarray(self.core_mask, bool).ravel()
        if core.size != len(nodes):
            raise InputError("core_mask length does not match nodes")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size:
            if (e < 0).any() or (e >= len(nodes)).any():
                raise InputError("edge index out of range")
            if (e[:, 0] == e[:, 1]).any():
                raise InputError("self-loops are not allowed")
            e = np.sort(e, axis=1)
            e = np.unique(e, axis=0)
        for arr in (core, e):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "core_mask", core)
        object.__setattr__(self, "edges", e)

    @classmethod
    def from_adjacency(cls, nodes, adjacency, core_mask=None) -> "SparseGraph":
        a = sp.triu(sp.csr_matrix(adjacency), k=1).tocoo()
        edges = np.column_stack([a.row, a.col])[a.data != 0]
        if core_mask is None:
            core_mask = np.ones(len(nodes), bool)
        return cls(tuple(nodes), core_mask, edges)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def adjacency(self) -> sp.csr_matrix:
        d = self.n_nodes
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * i.size)
        a = sp.coo_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(d, d))
        return a.tocsr()

    def csr(self):
        """(indptr, indices) of the symmetric adjacency, for the sampling kernels."""
        a = self.adjacency()
        a.sort_indices()
        return a.indptr.astype(np.int64), a.indices.astype(np.int64)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        np.add.at(deg, self.edges.ravel(), 1)
        return deg

    def neighbor_sums(self, states) -> np.ndarray:
        return self.adjacency() @ np.asarray(states, dtype=float)

    def edge_pairs(self) -> set:
        """Edges as a set of frozensets of node ids (order-free comparisons)."""
        return {frozenset((self.nodes[i], self.nodes[j])) for i, j in self.edges}

    def reindex(self, nodes: Sequence[str], core_mask=None) -> "SparseGraph":
        """Express the same edges over a different (super)set of node ids."""
        index = {node_id: k for k, node_id in enumerate(nodes)}
        missing = [x for x in self.nodes if x not in index]
        if missing:
            raise InputError(f"node {missing[0]!r} missing from target node list")
        remap = np.array([index[x] for x in self.nodes], dtype=np.int64)
        if core_mask is None:
            core_mask = np.zeros(len(nodes), bool)
            core_mask[remap] = self.core_mask
        edges = remap[self.edges] if self.n_edges else np.zeros((0, 2), np.int64)
        return SparseGraph(tuple(nodes), core_mask, edges)


@dataclass
class HmrfModel:
    """Ising prior parameters plus the two-component emission mixture."""

    b: float
    c: float
    mu: float
    sigma0_sq: float
    sigma1_sq: float
    d_coefs: tuple = ()

    def to_text(self) -> str:
        lines = [
            f"b={self.b!r}",
            f"c={self.c!r}",
            f"mu={self.mu!r}",
            f"sigma0_sq={self.sigma0_sq!r}",
            f"sigma1_sq={self.sigma1_sq!r}",
        ]
        lines += [f"d_{k + 1}={v!r}" for k, v in enumerate(self.d_coefs)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "HmrfModel":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = float(value)
        d = [kv[k] for k in sorted((k for k in kv if k.startswith("d_")), key=lambda s: int(s[2:]))]
        return cls(kv["b"], kv["c"], kv["mu"], kv["sigma0_sq"], kv["sigma1_sq"], tuple(d))


@dataclass
class PosteriorTable:
    node_ids: tuple
    q: np.ndarray
    fdr: np.ndarray
    called: np.ndarray
    alpha: float = 0.1

    def sorted_order(self) -> np.ndarray:
        return np.lexsort((np.array(self.node_ids, dtype=object).astype(str), self.q))

    def to_frame(self):
        import pandas as pd

        order = self.sorted_order()
        return pd.DataFrame(
            {
                "node_id": np.asarray(self.node_ids, dtype=object)[order],
                "q": self.q[order],
                "fdr": self.fdr[order],
                "called": self.called[order].astype(int),
            }
        )


@dataclass
class JoinReport:
    node_ids: tuple
    expr_only: tuple = field(default_factory=tuple)
    genes_only: tuple = field(default_factory=tuple)

    @property
    def n_dropped(self) -> int:
        return len(self.expr_only) + len(self.genes_only)


def validate_inputs(expr: ExpressionMatrix, genes: GeneTable) -> JoinReport:
    """Join expression columns with gene rows on node id.

    The joined ids keep the gene-table order. Duplicate ids and non-finite
    values are rejected when the inputs are constructed.
    """
    expr_ids = set(expr.node_ids)
    gene_ids = set(genes.node_ids)
    joined = tuple(x for x in genes.node_ids if x in expr_ids)
    if not joined:
        raise InputError("empty join: no node_id is present in both inputs")
    return JoinReport(
        joined,
        expr_only=tuple(x for x in expr.node_ids if x not in gene_ids),
        genes_only=tuple(x for x in genes.node_ids if x not in expr_ids),
    )


def align(expr: ExpressionMatrix, genes: GeneTable, standardize: bool = True):
    """Validate, join and reorder both inputs to the canonical node order."""
    report = validate_inputs(expr, genes)
    if expr.n < 2:
        raise InputError("at least two expression samples are required")
    e = expr.subset(report.node_ids)
    if standardize:
        e = e.standardized()
    return e, genes.subset(report.node_ids), report
