"""Tab-separated file formats, key=value configs and run manifests.

Formats
-------
expression
    header ``node_id<TAB>sample_1<TAB>...``; one row per variable.
genes
    header ``node_id<TAB>p_value[<TAB>anchor][<TAB>cov...]``; every column
    after ``p_value`` other than ``anchor`` is a 0/1 covariate.
graph
    edge list ``node_a<TAB>node_b`` plus a node table ``node_id<TAB>core``.
posterior
    ``node_id<TAB>q<TAB>fdr<TAB>called`` sorted by q.
"""

from __future__ import annotations

import csv
import hashlib
import os
import shutil
import tempfile
from dataclasses import fields
from pathlib import Path

import numpy as np
import pandas as pd

from .core import ExpressionMatrix, GeneTable, HmrfModel, PosteriorTable, SparseGraph
from .errors import ConfigError, InputError


def fmt(x) -> str:
    """Shortest round-trip text for numbers; bools as 0/1; None as empty."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_tsv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _read_table(path, what) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{what} file not found: {path}")
    try:
        df = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, comment=None)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot parse {what} file {path}: {exc}") from exc
    if df.shape[1] == 0:
        raise InputError(f"{what} file {path} has no columns")
    return df


def _numeric(df: pd.DataFrame, cols, path, what) -> np.ndarray:
    try:
        # numpy parses through float(), which round-trips repr output exactly
        return df[cols].to_numpy(dtype=str).astype(float)
    except (ValueError, TypeError) as exc:
        raise InputError(f"non-numeric value in {what} file {path}: {exc}") from exc


# ---------------------------------------------------------------- readers

def read_expression(path) -> ExpressionMatrix:
    df = _read_table(path, "expression")
    if df.shape[1] < 2:
        raise InputError(f"expression file {path} needs node_id plus at least one sample column")
    ids = df.iloc[:, 0].tolist()
    values = _numeric(df, list(df.columns[1:]), path, "expression")
    return ExpressionMatrix(values.T, tuple(ids))


def read_genes(path) -> GeneTable:
    df = _read_table(path, "gene")
    cols = list(df.columns)
    if len(cols) < 2 or cols[1] != "p_value":
        raise InputError(f"gene file {path} must start with columns node_id, p_value")
    p = _numeric(df, ["p_value"], path, "gene")[:, 0]
    anchors = None
    if "anchor" in cols:
        a = _numeric(df, ["anchor"], path, "gene")[:, 0]
        if not np.isin(a, (0, 1)).all():
            raise InputError(f"anchor column in {path} must be 0/1")
        anchors = a.astype(bool)
    cov_names = [c for c in cols[2:] if c != "anchor"]
    cov = None
    if cov_names:
        cov = _numeric(df, cov_names, path, "gene")
        bad = ~np.isin(cov, (0, 1))
        if bad.any():
            r, k = np.argwhere(bad)[0]
            raise InputError(f"covariate {cov_names[k]!r} has non-0/1 value {cov[r, k]!r} "
                             f"for {df.iloc[r, 0]!r}")
    return GeneTable(tuple(df.iloc[:, 0]), p, anchors, cov, tuple(cov_names))


def read_graph(edges_path, nodes_path=None) -> SparseGraph:
    """Edge list plus optional node table.

    Without a node table the nodes are the edge endpoints in order of first
    appearance, all marked core.
    """
    edf = _read_table(edges_path, "edge list")
    if edf.shape[1] < 2:
        raise InputError(f"edge list {edges_path} needs two columns")
    a, b = edf.iloc[:, 0].tolist(), edf.iloc[:, 1].tolist()
    if nodes_path is not None:
        ndf = _read_table(nodes_path, "node table")
        nodes = ndf.iloc[:, 0].tolist()
        if "core" in ndf.columns:
            core = _numeric(ndf, ["core"], nodes_path, "node table")[:, 0].astype(bool)
        else:
            core = np.ones(len(nodes), bool)
    else:
        nodes = list(dict.fromkeys(a + b))
        core = np.ones(len(nodes), bool)
    index = {x: k for k, x in enumerate(nodes)}
    missing = [x for x in a + b if x not in index]
    if missing:
        raise InputError(f"edge endpoint {missing[0]!r} is not in the node table")
    edges = np.array([[index[x], index[y]] for x, y in zip(a, b)], dtype=np.int64).reshape(-1, 2)
    return SparseGraph(tuple(nodes), core, edges)


def nodes_path_for(edges_path):
    """Default node table next to an edge list: ``*edges*`` -> ``*nodes*``."""
    p = Path(edges_path)
    if "edges" not in p.name:
        return None
    cand = p.with_name(p.name.replace("edges", "nodes"))
    return cand if cand.is_file() else None


# ---------------------------------------------------------------- writers

def write_expression(path, expr: ExpressionMatrix) -> None:
    header = ["node_id"] + [f"s{k + 1}" for k in range(expr.n)]
    write_tsv(path, header, ([nid, *expr.values[:, j]] for j, nid in enumerate(expr.node_ids)))


def write_genes(path, genes: GeneTable) -> None:
    header = ["node_id", "p_value", "anchor", *genes.covariate_names]
    rows = ([nid, genes.p_values[k], genes.anchors[k], *genes.covariates[k].astype(int)]
            for k, nid in enumerate(genes.node_ids))
    write_tsv(path, header, rows)


def write_graph(edges_path, nodes_path, graph: SparseGraph) -> None:
    write_tsv(edges_path, ["node_a", "node_b"],
              ([graph.nodes[i], graph.nodes[j]] for i, j in graph.edges))
    write_tsv(nodes_path, ["node_id", "core"], zip(graph.nodes, graph.core_mask))


def write_posterior(path, table: PosteriorTable) -> None:
    df = table.to_frame()
    write_tsv(path, list(df.columns), df.itertuples(index=False))


def write_called(path, table: PosteriorTable) -> None:
    df = table.to_frame()
    df = df[df["called"] == 1]
    write_tsv(path, ["node_id", "q", "fdr"], df[["node_id", "q", "fdr"]].itertuples(index=False))


def write_model(path, model: HmrfModel, names=()) -> None:
    text = model.to_text()
    if names:
        text += "".join(f"# d_{k + 1} = {n}\n" for k, n in enumerate(names))
    Path(path).write_text(text)


def read_model(path) -> HmrfModel:
    try:
        return HmrfModel.from_text(Path(path).read_text())
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"cannot read model file {path}: {exc}") from exc


# ---------------------------------------------------------------- config

def read_config(path) -> dict:
    """``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{n}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def build(cls, values: dict, **extra):
    """Instantiate a config dataclass from string values, converting by field type."""
    kw = {}
    for f in fields(cls):
        if f.name in extra:
            kw[f.name] = extra[f.name]
        elif f.name in values:
            raw = values[f.name]
            default = f.default
            try:
                if isinstance(default, bool):
                    kw[f.name] = str(raw).lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    kw[f.name] = int(raw)
                elif isinstance(default, float):
                    kw[f.name] = float(raw)
                else:
                    kw[f.name] = raw
            except ValueError as exc:
                raise ConfigError(f"bad value for {f.name}: {raw!r}") from exc
    return cls(**kw)


# ---------------------------------------------------------------- manifests and output

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(echo: dict) -> str:
    text = "".join(f"{k}={echo[k]}\n" for k in sorted(echo))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_manifest(path, command: str, echo: dict, inputs: dict, versions: dict) -> None:
    lines = [f"command={command}"]
    lines += [f"config.{k}={fmt(echo[k])}" for k in sorted(echo)]
    lines.append(f"config_hash={config_hash({k: fmt(v) for k, v in echo.items()})}")
    lines += [f"input.{k}={v}" for k, v in sorted(inputs.items())]
    lines += [f"version.{k}={v}" for k, v in sorted(versions.items())]
    Path(path).write_text("\n".join(lines) + "\n")


class OutputDir:
    """Stage outputs in a scratch directory and publish them only on success.

    On an exception nothing is moved and the scratch directory is removed,
    so a failed run leaves no partial files behind.
    """

    def __init__(self, out):
        self.out = Path(out)
        self.stage = None
        self.names = []

    def __enter__(self):
        self.out.mkdir(parents=True, exist_ok=True)
        if not os.access(self.out, os.W_OK):
            raise ConfigError(f"output directory {self.out} is not writable")
        self.stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        return self

    def path(self, name) -> Path:
        self.names.append(name)
        return self.stage / name

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for name in self.names:
                    src = self.stage / name
                    if src.exists():
                        os.replace(src, self.out / name)
        finally:
            shutil.rmtree(self.stage, ignore_errors=True)
        return False
