"""Hidden Markov random field inference over an estimated graph.

Hidden states ``I`` follow an Ising prior whose conditional log-odds for
node i are ``b + c * sum_j A_ij I_j + sum_k d_k H_ik``; each edge enters the
joint energy once. Observed z-scores are ``N(0, s0^2)`` for ``I = 0`` and
``N(mu, s1^2)`` for ``I = 1``.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from . import _kernels
from .core import P_FLOOR, HmrfModel, PosteriorTable, SparseGraph
from .errors import ConfigError, InputError, NumericalError, SeparationError

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
# p-values are kept inside [P_FLOOR, P_CEIL] so z stays finite at both ends
P_CEIL = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class HmrfConfig:
    z_thres: float = float(norm.isf(0.05))
    icm_cycles: int = 20
    gibbs_burn_in: int = 2000
    gibbs_samples: int = 10_000
    seed: int = 0
    fdr_alpha: float = 0.1
    param_tol: float = 1e-5
    ridge: float = 1e-4

    def __post_init__(self):
        if self.icm_cycles < 1:
            raise ConfigError("icm_cycles must be >= 1")
        if self.gibbs_samples < 1 or self.gibbs_burn_in < 0:
            raise ConfigError("gibbs_samples must be >= 1 and gibbs_burn_in >= 0")
        if not 0 < self.fdr_alpha < 1:
            raise ConfigError(f"fdr_alpha must lie in (0, 1), got {self.fdr_alpha!r}")
        if self.ridge < 0:
            raise ConfigError("ridge must be >= 0")


def z_from_p(p):
    """Upper-tail normal quantile, ``z = Phi^-1(1 - p)``."""
    p = np.clip(np.asarray(p, dtype=float), P_FLOOR, P_CEIL)
    z = norm.isf(p)
    return float(z) if z.ndim == 0 else z


def init_states(z, z_thres, pinned=None) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    states = (z > z_thres).astype(np.int64)
    if pinned is not None:
        pinned = np.asarray(pinned, bool)
        if pinned.shape != z.shape:
            raise InputError("pinned mask length does not match z")
        states[pinned] = 1
    return states


def _as_pinned(pinned, d):
    if pinned is None:
        return np.zeros(d, bool)
    pinned = np.asarray(pinned, bool).ravel()
    if pinned.size != d:
        raise InputError("pinned mask length does not match the graph")
    return pinned


def _as_covariates(covariates, d):
    if covariates is None:
        return np.zeros((d, 0))
    h = np.asarray(covariates, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    if h.shape[0] != d:
        raise InputError("covariate rows do not match the graph")
    return h


def _newton_logistic(x, y, ridge, max_iter=100, tol=1e-8):
    """Penalized logistic regression; the intercept (column 0) is unpenalized."""
    pen = np.full(x.shape[1], ridge)
    pen[0] = 0.0
    beta = np.zeros(x.shape[1])

    def loglik(bv):
        eta = x @ bv
        return float(y @ eta - np.logaddexp(0.0, eta).sum() - 0.5 * (pen * bv * bv).sum())

    current = loglik(beta)
    for _ in range(max_iter):
        p = expit(x @ beta)
        grad = x.T @ (y - p) - pen * beta
        hess = (x * (p * (1 - p))[:, None]).T @ x + np.diag(pen)
        # keep the Hessian invertible when a column is identically zero
        hess[np.diag_indices_from(hess)] += 1e-12
        step = np.linalg.solve(hess, grad)
        scale = 1.0
        while True:
            cand = beta + scale * step
            val = loglik(cand)
            if val >= current - 1e-12 or scale < 1e-10:
                break
            scale *= 0.5
        beta, current = cand, val
        if np.max(np.abs(scale * step)) < tol:
            break
    return beta


def pseudo_likelihood_fit(states, graph: SparseGraph, covariates=None, pinned=None, ridge=1e-4):
    """Maximize the Ising pseudo-likelihood of ``states`` on ``graph``.

    Each free node contributes the logistic conditional of its state given
    its neighbor sum and covariates, so the fit is a logistic regression on
    ``(1, neighbor_sum, H)``. A small ridge on the non-intercept terms keeps
    the estimate finite under quasi-separation.

    Returns ``(b, c, d_coefs)``.
    """
    states = np.asarray(states)
    d = graph.n_nodes
    if states.size != d:
        raise InputError("state vector length does not match the graph")
    pinned = _as_pinned(pinned, d)
    h = _as_covariates(covariates, d)
    free = ~pinned
    y = states[free].astype(float)
    if y.size == 0 or y.min() == y.max():
        raise SeparationError("degenerate state vector; pseudo-likelihood unbounded")
    nb = graph.neighbor_sums(states)
    x = np.column_stack([np.ones(d), nb, h])[free]
    beta = _newton_logistic(x, y, ridge)
    if not np.all(np.isfinite(beta)):
        raise NumericalError("pseudo-likelihood fit produced non-finite parameters")
    return float(beta[0]), float(beta[1]), tuple(float(v) for v in beta[2:])


def emission_llr(z, model: HmrfModel) -> np.ndarray:
    """log f(z | I=1) - log f(z | I=0) for the Gaussian mixture."""
    z = np.asarray(z, dtype=float)
    s0, s1 = model.sigma0_sq, model.sigma1_sq
    return (-0.5 * np.log(s1) - 0.5 * (z - model.mu) ** 2 / s1) - (-0.5 * np.log(s0) - 0.5 * z * z / s0)


def prior_field(model: HmrfModel, covariates, d) -> np.ndarray:
    h = _as_covariates(covariates, d)
    if h.shape[1] != len(model.d_coefs):
        raise InputError(f"model has {len(model.d_coefs)} covariate effects, data has {h.shape[1]}")
    out = np.full(d, float(model.b))
    if h.shape[1]:
        out += h @ np.asarray(model.d_coefs, dtype=float)
    return out


def icm_cycle(states, z, graph: SparseGraph, model: HmrfModel, pinned=None, covariates=None):
    """One in-order ICM sweep.

    Returns ``(new_states, probs)`` where ``probs[i]`` is the conditional
    P(I_i = 1 | z_i, current neighbors) used to pick node i's mode.
    """
    d = graph.n_nodes
    pinned = _as_pinned(pinned, d)
    out = np.array(states, dtype=np.int64)
    out[pinned] = 1
    probs = np.zeros(d)
    indptr, indices = graph.csr()
    _kernels.icm_sweep(indptr, indices, out, prior_field(model, covariates, d), float(model.c),
                       emission_llr(z, model), pinned, probs)
    return out, probs


def mixture_update(w1, z, w0=None, floor=VARIANCE_FLOOR):
    """Weighted-moment update of ``(mu, sigma0_sq, sigma1_sq)``.

    ``w1`` are posterior risk weights; ``w0`` defaults to ``1 - w1``.
    """
    z = np.asarray(z, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    w0 = 1.0 - w1 if w0 is None else np.asarray(w0, dtype=float)
    if ((w1 < 0) | (w1 > 1) | (w0 < 0) | (w0 > 1)).any():
        raise InputError("posterior weights must lie in [0, 1]")
    s1, s0 = w1.sum(), w0.sum()
    if s1 <= 0 or s0 <= 0:
        raise NumericalError("empty mixture component")
    mu = float((w1 * z).sum() / s1)
    sigma0_sq = float((w0 * z * z).sum() / s0)
    sigma1_sq = float((w1 * (z - mu) ** 2).sum() / s1)
    return mu, max(sigma0_sq, floor), max(sigma1_sq, floor)


@dataclass
class HmrfFit:
    model: HmrfModel
    states: np.ndarray
    probs: np.ndarray
    n_iter: int
    history: list = field(default_factory=list)


def hmrf_fit(z, graph: SparseGraph, config: HmrfConfig = HmrfConfig(), covariates=None,
             pinned=None, states=None) -> HmrfFit:
    """Alternate pseudo-likelihood, one ICM sweep and the mixture update.

    Mixture parameters start from the moments of the initial hard states.
    Stops after ``config.icm_cycles`` rounds, or earlier once the states
    repeat and no parameter moves more than ``config.param_tol``.
    """
    z = np.asarray(z, dtype=float)
    d = graph.n_nodes
    if z.size != d:
        raise InputError("z length does not match the graph")
    pinned = _as_pinned(pinned, d)
    h = _as_covariates(covariates, d)
    if states is None:
        states = init_states(z, config.z_thres, pinned)
    states = np.array(states, dtype=np.int64)
    mu, s0, s1 = mixture_update(states.astype(float), z)
    params = None
    history = []
    probs = states.astype(float)
    t = 0
    for t in range(1, config.icm_cycles + 1):
        b, c, dc = pseudo_likelihood_fit(states, graph, h, pinned, config.ridge)
        model = HmrfModel(b, c, mu, s0, s1, dc)
        new_states, probs = icm_cycle(states, z, graph, model, pinned, h)
        mu, s0, s1 = mixture_update(probs, z)
        model = HmrfModel(b, c, mu, s0, s1, dc)
        vec = np.array([b, c, mu, s0, s1, *dc])
        history.append(model)
        done = (params is not None and np.max(np.abs(vec - params)) < config.param_tol
                and np.array_equal(new_states, states))
        states, params = new_states, vec
        if done:
            break
    if not model.mu > 0:
        raise NumericalError(f"fitted alternative mean {model.mu:.4g} is not positive")
    if model.c <= 0:
        warnings.warn(f"fitted interaction c={model.c:.4g} <= 0; the graph carries no clustering signal",
                      RuntimeWarning, stacklevel=2)
    return HmrfFit(model, states, probs, t, history)


def gibbs_posterior(z, graph: SparseGraph, model: HmrfModel, config: HmrfConfig = HmrfConfig(),
                    pinned=None, covariates=None, states=None, seed=None,
                    rao_blackwell=True) -> np.ndarray:
    """Posterior null probabilities ``q_i = P(I_i = 0 | z)`` by Gibbs sampling.

    Single chain, systematic scan, ``config.gibbs_burn_in`` discarded sweeps
    then ``config.gibbs_samples`` retained ones. By default q averages the
    full conditionals visited by the chain (Rao-Blackwellized), which never
    saturates at exactly 0 or 1; ``rao_blackwell=False`` gives the plain
    fraction of retained sweeps with I_i = 0. Pinned nodes get q = 0.
    """
    z = np.asarray(z, dtype=float)
    d = graph.n_nodes
    pinned = _as_pinned(pinned, d)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    cur = init_states(z, config.z_thres, pinned) if states is None else np.array(states, dtype=np.int64)
    cur[pinned] = 1
    indptr, indices = graph.csr()
    fld = prior_field(model, covariates, d)
    llr = emission_llr(z, model)
    counts = np.zeros(d)
    chunk = max(1, min(512, 4_000_000 // max(d, 1)))
    for total, record in ((config.gibbs_burn_in, False), (config.gibbs_samples, True)):
        done = 0
        while done < total:
            k = min(chunk, total - done)
            u = rng.random((k, d))
            _kernels.gibbs_sweeps(indptr, indices, cur, fld, float(model.c), llr, pinned, u, counts, record,
                                  rao_blackwell)
            done += k
    q = 1.0 - counts / config.gibbs_samples
    q[pinned] = 0.0
    return np.clip(q, 0.0, 1.0)


def bayesian_fdr(q, alpha=0.1, node_ids=None):
    """Running mean of sorted posterior null probabilities.

    Sorting is stable on ``(q, node_id)``; tied q values share the FDR of
    the first (smallest) rank in the tie. Returns ``(fdr, called)`` in the
    input order, with ``called = fdr <= alpha``.
    """
    q = np.asarray(q, dtype=float).ravel()
    if ((q < 0) | (q > 1)).any():
        raise InputError("q must lie in [0, 1]")
    if q.size == 0:
        return np.zeros(0), np.zeros(0, bool)
    keys = np.arange(q.size) if node_ids is None else np.asarray(node_ids, dtype=object).astype(str)
    order = np.lexsort((keys, q))
    qs = q[order]
    running = np.cumsum(qs) / np.arange(1, q.size + 1)
    # ties: every member takes the value at the start of its run
    start = np.r_[True, qs[1:] != qs[:-1]]
    run_id = np.cumsum(start) - 1
    running = running[start][run_id]
    fdr = np.empty_like(q)
    fdr[order] = running
    return fdr, fdr <= alpha


def posterior_table(node_ids, q, alpha=0.1) -> PosteriorTable:
    fdr, called = bayesian_fdr(q, alpha, node_ids)
    return PosteriorTable(tuple(node_ids), np.asarray(q, dtype=float), fdr, called, alpha)


@dataclass
class CovariateTestResult:
    d_hat: np.ndarray
    p_values: np.ndarray
    d_boot: np.ndarray
    n_failed: int
    null_model: HmrfModel
    full_model: HmrfModel
    names: tuple = ()


def covariate_test(z, graph: SparseGraph, covariates, config: HmrfConfig = HmrfConfig(), B=200, r=0.1,
                   pinned=None, mh_iters=200, workers=1, names=()) -> CovariateTestResult:
    """Smoothed-bootstrap test of covariate effects in the extended Ising prior.

    Fits the covariate-free model, then for each of ``B`` replicates samples
    hidden states from that null prior by Metropolis-Hastings (a fraction
    ``r`` of nodes start at 1), draws z-scores from the fitted mixture and
    refits the model with covariates. The p-value of covariate k is the
    share of replicates whose estimate exceeds the observed one. Replicates
    that hit separation are redrawn once, then dropped and counted.
    """
    from .simgen import emit_zscores, ising_sample

    if B < 1:
        raise ConfigError("B must be >= 1")
    if not 0 < r < 1:
        raise ConfigError("r must lie in (0, 1)")
    z = np.asarray(z, dtype=float)
    d = graph.n_nodes
    pinned = _as_pinned(pinned, d)
    h = _as_covariates(covariates, d)
    if h.shape[1] == 0:
        raise ConfigError("covariate test needs at least one covariate column")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        null = hmrf_fit(z, graph, config, None, pinned).model
        full = hmrf_fit(z, graph, config, h, pinned).model
    d_hat = np.asarray(full.d_coefs)
    streams = np.random.SeedSequence(config.seed).spawn(B)

    def replicate(k):
        rng = np.random.default_rng(streams[k])
        for _attempt in range(2):
            s1, s2 = rng.integers(2**63, size=2)
            states = ising_sample(graph, null.b, null.c, r, mh_iters, int(s1), pinned=pinned)
            zs = emit_zscores(states, null.mu, np.sqrt(null.sigma0_sq), np.sqrt(null.sigma1_sq), int(s2))
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    fit = hmrf_fit(zs, graph, config, h, pinned)
                return np.asarray(fit.model.d_coefs)
            except NumericalError as exc:
                log.debug("bootstrap replicate %d failed: %s", k, exc)
        return np.full(h.shape[1], np.nan)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            boot = np.array(list(pool.map(replicate, range(B))))
    else:
        boot = np.array([replicate(k) for k in range(B)])
    ok = np.all(np.isfinite(boot), axis=1)
    n_failed = int((~ok).sum())
    if n_failed == B:
        raise NumericalError("every bootstrap replicate failed")
    p = (boot[ok] > d_hat).mean(axis=0)
    names = tuple(names) or tuple(f"cov_{k + 1}" for k in range(h.shape[1]))
    return CovariateTestResult(d_hat, p, boot, n_failed, null, full, names)


def with_seed(config: HmrfConfig, seed: int) -> HmrfConfig:
    return replace(config, seed=int(seed))
