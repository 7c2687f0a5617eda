"""Command-line pipeline.

Every subcommand reads an optional ``--config`` file of ``key=value`` lines
(field names of the pns, hmrf and simulation configs; ``lambda`` and
``alpha`` are accepted as aliases) and lets explicit flags override it.
Outputs are TSV files plus a ``manifest.txt`` in ``--out``.

Exit codes: 0 success, 1 other pipeline error, 2 configuration error,
3 input error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
import warnings
from dataclasses import asdict, replace

import numpy as np

from . import __version__, evaluate, hmrf, io, pns
from .core import align
from .errors import ConfigError, DawnError, InputError, NumericalError
from .simgen import SimConfig, simulate

log = logging.getLogger("dawn")

ALIASES = {"lambda": "lam", "alpha": "fdr_alpha"}
FLAG_KEYS = {"t": "t", "tau": "tau", "lam": "lam", "alpha": "fdr_alpha", "seed": "seed"}


def versions() -> dict:
    import numba
    import pandas
    import scipy

    return {"dawn": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "pandas": pandas.__version__}


def _settings(args) -> dict:
    """Config file values overlaid with explicitly given flags."""
    values = io.read_config(args.config) if getattr(args, "config", None) else {}
    values = {ALIASES.get(k, k): v for k, v in values.items()}
    known = {f for cls in (pns.PnsConfig, hmrf.HmrfConfig, SimConfig, evaluate.HarnessConfig)
             for f in cls.__dataclass_fields__}
    unknown = sorted(set(values) - known - {"workers", "B", "r"})
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    for attr, key in FLAG_KEYS.items():
        val = getattr(args, attr, None)
        if val is not None:
            values[key] = str(val)
    return values


def _pns_config(values) -> pns.PnsConfig:
    return io.build(pns.PnsConfig, values)


def _hmrf_config(values) -> hmrf.HmrfConfig:
    return io.build(hmrf.HmrfConfig, values)


def _load_aligned(args):
    expr = io.read_expression(args.expr)
    genes = io.read_genes(args.genes)
    expr, genes, report = align(expr, genes)
    if report.n_dropped:
        log.warning("join dropped %d expression-only and %d gene-only ids",
                    len(report.expr_only), len(report.genes_only))
    return expr, genes


def _inputs(args, *names) -> dict:
    out = {}
    for name in names:
        path = getattr(args, name, None)
        if path:
            out[name] = io.sha256(path)
    return out


def _graph_from_args(args):
    nodes_path = args.graph_nodes or io.nodes_path_for(args.graph)
    return io.read_graph(args.graph, nodes_path)


def _workers(args, values) -> int:
    w = args.workers if getattr(args, "workers", None) is not None else int(values.get("workers", 1))
    if w < 1:
        raise ConfigError("workers must be >= 1")
    return w


def _run_hmrf_stage(genes, graph, hcfg):
    """Fit the HMRF on ``graph`` using the genes' z-scores and anchors."""
    sub = genes.subset(graph.nodes)
    z = sub.z_scores
    fit = hmrf.hmrf_fit(z, graph, hcfg, pinned=sub.anchors)
    q = hmrf.gibbs_posterior(z, graph, fit.model, hcfg, pinned=sub.anchors, states=fit.states)
    return fit, hmrf.posterior_table(graph.nodes, q, hcfg.fdr_alpha)


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except DawnError as exc:
        exc.stage = name
        raise


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args):
    values = _settings(args)
    cfg = io.build(SimConfig, values)
    data = _stage("simulate", simulate, cfg)
    with io.OutputDir(args.out) as out:
        io.write_expression(out.path("expression.tsv"), data.expr)
        io.write_genes(out.path("genes.tsv"), data.genes())
        io.write_graph(out.path("true_edges.tsv"), out.path("true_nodes.tsv"), data.graph)
        io.write_tsv(out.path("states.tsv"), ["node_id", "state"], zip(data.graph.nodes, data.states))
        io.write_tsv(out.path("zscores.tsv"), ["node_id", "z"], zip(data.graph.nodes, data.z))
        io.write_manifest(out.path("manifest.txt"), "simulate", asdict(cfg), {}, versions())


def cmd_estimate_network(args):
    values = _settings(args)
    cfg = _pns_config(values)
    workers = _workers(args, values)
    expr, genes = _stage("ingest", _load_aligned, args)
    res = _stage("pns", pns.partial_neighborhood_selection, expr, genes, cfg, workers)
    with io.OutputDir(args.out) as out:
        io.write_graph(out.path("edges.tsv"), out.path("nodes.tsv"), res.graph)
        io.write_manifest(out.path("manifest.txt"), "estimate-network", asdict(cfg),
                          _inputs(args, "expr", "genes"), versions())


def _grid(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad lambda grid {text!r}") from exc


def cmd_scan_lambda(args):
    values = _settings(args)
    cfg = _pns_config(values)
    workers = _workers(args, values)
    grid = _grid(args.lambdas) if args.lambdas else list(np.round(np.geomspace(0.5, 0.1, 15), 5))
    if not grid:
        raise ConfigError("lambda grid is empty")
    expr, genes = _stage("ingest", _load_aligned, args)
    rows = _stage("scan", pns.lambda_scan, expr, genes, cfg, grid, workers)
    with io.OutputDir(args.out) as out:
        io.write_tsv(out.path("lambda_scan.tsv"), ["lambda", "r2", "edges", "degrees", "error"],
                     ([r["lambda"], r["r2"], r["edges"], r["degrees"], r["error"]] for r in rows))
        echo = dict(asdict(cfg), grid=",".join(io.fmt(x) for x in grid))
        io.write_manifest(out.path("manifest.txt"), "scan-lambda", echo,
                          _inputs(args, "expr", "genes"), versions())


def cmd_run_hmrf(args):
    values = _settings(args)
    hcfg = _hmrf_config(values)
    genes = _stage("ingest", io.read_genes, args.genes)
    graph = _stage("ingest", _graph_from_args, args)
    missing = [x for x in graph.nodes if x not in set(genes.node_ids)]
    if missing:
        raise InputError(f"graph node {missing[0]!r} has no row in the gene file")
    fit, table = _stage("hmrf", _run_hmrf_stage, genes, graph, hcfg)
    with io.OutputDir(args.out) as out:
        io.write_posterior(out.path("posterior.tsv"), table)
        io.write_called(out.path("called.tsv"), table)
        io.write_model(out.path("model.txt"), fit.model)
        io.write_manifest(out.path("manifest.txt"), "run-hmrf", asdict(hcfg),
                          _inputs(args, "genes", "graph", "graph_nodes"), versions())


def cmd_dawn(args):
    values = _settings(args)
    pcfg, hcfg = _pns_config(values), _hmrf_config(values)
    workers = _workers(args, values)
    expr, genes = _stage("ingest", _load_aligned, args)
    res = _stage("pns", pns.partial_neighborhood_selection, expr, genes, pcfg, workers)
    fit, table = _stage("hmrf", _run_hmrf_stage, genes, res.graph, hcfg)
    with io.OutputDir(args.out) as out:
        io.write_graph(out.path("edges.tsv"), out.path("nodes.tsv"), res.graph)
        io.write_posterior(out.path("posterior.tsv"), table)
        io.write_called(out.path("called.tsv"), table)
        io.write_model(out.path("model.txt"), fit.model)
        echo = {**{f"pns.{k}": v for k, v in asdict(pcfg).items()},
                **{f"hmrf.{k}": v for k, v in asdict(hcfg).items()}}
        io.write_manifest(out.path("manifest.txt"), "dawn", echo, _inputs(args, "expr", "genes"), versions())


def cmd_evaluate(args):
    values = _settings(args)
    sim = io.build(SimConfig, values)
    hcfg = io.build(hmrf.HmrfConfig, values, **({} if any(k in values for k in ("gibbs_burn_in", "gibbs_samples"))
                                               else {"gibbs_burn_in": 500, "gibbs_samples": 3000}))
    cfg = evaluate.HarnessConfig(sim=sim, pns=_pns_config(values), hmrf=hcfg,
                                 lambda_rule=values.get("lambda_rule", "r2"))
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    bad = set(methods) - {"dawn", "oracle", "naive"}
    if bad:
        raise ConfigError(f"unknown method {sorted(bad)[0]!r}")
    if args.replicates < 1:
        raise ConfigError("replicates must be >= 1")
    results, failures = _stage("evaluate", evaluate.run_replicates, cfg, args.replicates,
                               methods=methods, keep_roc=True)
    if not results:
        raise NumericalError(f"all {args.replicates} replicates failed")
    with io.OutputDir(args.out) as out:
        rows = []
        for r in results:
            for m in methods:
                rows.append([r.replicate, m, r.tpr[m], r.seed, r.n_risk,
                             r.extra.get("dawn_lambda") if m == "dawn" else None])
        io.write_tsv(out.path("replicates.tsv"), ["replicate", "method", "tpr", "seed", "n_risk", "lambda"], rows)
        summary = [[m, float(np.mean([r.tpr[m] for r in results])),
                    float(np.std([r.tpr[m] for r in results])), len(results), len(failures)]
                   for m in methods]
        io.write_tsv(out.path("summary.tsv"), ["method", "mean_tpr", "sd_tpr", "n_ok", "n_failed"], summary)
        io.write_tsv(out.path("failures.tsv"), ["replicate", "error"], failures)
        for r in results:
            for m, (fx, ty) in r.roc.items():
                io.write_tsv(out.path(f"roc_{m}_{r.replicate:03d}.tsv"), ["fpr", "tpr"], zip(fx, ty))
        echo = {**{f"sim.{k}": v for k, v in asdict(sim).items()},
                **{f"pns.{k}": v for k, v in asdict(cfg.pns).items()},
                **{f"hmrf.{k}": v for k, v in asdict(hcfg).items()},
                "fpr": cfg.fpr, "lambda_rule": cfg.lambda_rule, "replicates": args.replicates,
                "methods": ",".join(methods)}
        io.write_manifest(out.path("manifest.txt"), "evaluate", echo, {}, versions())


def cmd_covariate_test(args):
    values = _settings(args)
    hcfg = _hmrf_config(values)
    workers = _workers(args, values)
    B = args.B if args.B is not None else int(values.get("B", 200))
    r = args.r if args.r is not None else float(values.get("r", 0.1))
    if B < 1:
        raise ConfigError("B must be >= 1")
    genes = _stage("ingest", io.read_genes, args.genes)
    graph = _stage("ingest", _graph_from_args, args)
    sub = genes.subset(graph.nodes)
    names = list(sub.covariate_names)
    if args.covariate:
        wanted = [c.strip() for c in args.covariate.split(",")]
        for c in wanted:
            if c not in names:
                raise InputError(f"covariate {c!r} not found in gene file")
        cols = [names.index(c) for c in wanted]
        names = wanted
    else:
        cols = list(range(len(names)))
    if not cols:
        raise InputError("gene file has no covariate columns")
    h = sub.covariates[:, cols]
    res = _stage("covariate-test", hmrf.covariate_test, sub.z_scores, graph, h, hcfg, B=B, r=r,
                 pinned=sub.anchors, workers=workers, names=names)
    with io.OutputDir(args.out) as out:
        io.write_tsv(out.path("covariate_test.tsv"), ["covariate", "d_hat", "p_value", "n_failed", "B"],
                     ([n, res.d_hat[k], res.p_values[k], res.n_failed, B] for k, n in enumerate(names)))
        io.write_tsv(out.path("bootstrap.tsv"), ["replicate", *names],
                     ([k, *row] for k, row in enumerate(res.d_boot)))
        io.write_model(out.path("model_null.txt"), res.null_model)
        io.write_model(out.path("model_full.txt"), res.full_model, names)
        echo = dict(asdict(hcfg), B=B, r=r, covariates=",".join(names))
        io.write_manifest(out.path("manifest.txt"), "covariate-test", echo,
                          _inputs(args, "genes", "graph", "graph_nodes"), versions())


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dawn", description="Network-assisted risk-node discovery.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, expr=False, genes=False, graph=False, screen=False, lam=False, hm=False):
        sp.add_argument("--config", help="key=value config file; flags override it")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int)
        if expr:
            sp.add_argument("--expr", required=True, help="expression TSV (rows are variables)")
        if genes:
            sp.add_argument("--genes", required=True, help="gene TSV: node_id, p_value[, anchor][, covariates]")
        if graph:
            sp.add_argument("--graph", required=True, help="edge list TSV")
            sp.add_argument("--graph-nodes", dest="graph_nodes", help="node table TSV (node_id, core)")
        if screen:
            sp.add_argument("--t", type=float, help="p-value screening threshold")
            sp.add_argument("--tau", type=float, help="correlation screening threshold")
        if lam:
            sp.add_argument("--lambda", dest="lam", type=float, help="per-sample lasso penalty")
        if hm:
            sp.add_argument("--alpha", type=float, help="Bayesian FDR level")
        sp.add_argument("--workers", type=int)

    s = sub.add_parser("simulate", help="generate a synthetic data set")
    common(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("estimate-network", help="partial neighborhood selection")
    common(s, expr=True, genes=True, screen=True, lam=True)
    s.set_defaults(func=cmd_estimate_network)

    s = sub.add_parser("scan-lambda", help="scale-free R^2 over a lambda grid")
    common(s, expr=True, genes=True, screen=True)
    s.add_argument("--lambdas", help="comma-separated lambda grid")
    s.set_defaults(func=cmd_scan_lambda)

    s = sub.add_parser("run-hmrf", help="HMRF posterior on a saved graph")
    common(s, genes=True, graph=True, hm=True)
    s.set_defaults(func=cmd_run_hmrf)

    s = sub.add_parser("dawn", help="network estimation, HMRF and FDR calls in one run")
    common(s, expr=True, genes=True, screen=True, lam=True, hm=True)
    s.set_defaults(func=cmd_dawn)

    s = sub.add_parser("evaluate", help="simulation replicates scored by TPR at fixed FPR")
    common(s, screen=True, lam=True)
    s.add_argument("--replicates", type=int, default=20)
    s.add_argument("--methods", default="dawn,oracle,naive")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("covariate-test", help="bootstrap test of covariate effects")
    common(s, genes=True, graph=True)
    s.add_argument("--covariate", help="comma-separated covariate columns (default: all)")
    s.add_argument("--B", type=int, help="bootstrap replicates (default 200)")
    s.add_argument("--r", type=float, help="initial fraction of ones in the null sampler (default 0.1)")
    s.set_defaults(func=cmd_covariate_test)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            args.func(args)
    except DawnError as exc:
        stage = getattr(exc, "stage", None)
        prefix = f"error [{stage}]" if stage else "error"
        print(f"{prefix}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
