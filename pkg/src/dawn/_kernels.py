"""Compiled inner loops.

All stochastic kernels take pre-drawn uniforms so that randomness is owned
by the caller's seeded ``numpy.random.Generator`` and results do not depend
on numba's global RNG state.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def cd_lasso_gram(gram, xty, lam, beta, skip, tol, max_iter, obj_trace):
    """Cyclic coordinate descent for 0.5*||y - X b||^2 + lam*||b||_1.

    Works on the Gram matrix ``X'X`` and ``X'y`` and keeps the gradient
    ``X'y - X'X b`` up to date, so each coordinate costs O(1) unless it moves.
    Coordinate ``skip`` (or none when negative) is held at zero.

    Returns (n_sweeps, max_change, kkt_violation). ``obj_trace`` receives the
    objective (without the constant 0.5*y'y) after each sweep.
    """
    p = xty.shape[0]
    grad = xty - gram @ beta
    max_change = np.inf
    kkt = np.inf
    sweep = 0
    while sweep < max_iter:
        max_change = 0.0
        for j in range(p):
            gjj = gram[j, j]
            if j == skip or gjj <= 0.0:
                if beta[j] != 0.0:
                    delta = -beta[j]
                    beta[j] = 0.0
                    for k in range(p):
                        grad[k] -= gram[k, j] * delta
                    if abs(delta) > max_change:
                        max_change = abs(delta)
                continue
            rho = grad[j] + gjj * beta[j]
            if rho > lam:
                new = (rho - lam) / gjj
            elif rho < -lam:
                new = (rho + lam) / gjj
            else:
                new = 0.0
            delta = new - beta[j]
            if delta != 0.0:
                beta[j] = new
                for k in range(p):
                    grad[k] -= gram[k, j] * delta
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if sweep < obj_trace.shape[0]:
            # 0.5 b'Gb - b'c = -0.5 b'(c + grad) since grad = c - Gb
            val = 0.0
            l1 = 0.0
            for j in range(p):
                val -= 0.5 * beta[j] * (xty[j] + grad[j])
                l1 += abs(beta[j])
            obj_trace[sweep] = val + lam * l1
        sweep += 1
        kkt = 0.0
        for j in range(p):
            if j == skip or gram[j, j] <= 0.0:
                continue
            if beta[j] > 0.0:
                v = abs(grad[j] - lam)
            elif beta[j] < 0.0:
                v = abs(grad[j] + lam)
            else:
                v = abs(grad[j]) - lam
                if v < 0.0:
                    v = 0.0
            if v > kkt:
                kkt = v
        if max_change <= tol and kkt <= tol:
            break
    return sweep, max_change, kkt


@njit(cache=True, nogil=True)
def _neighbor_sum(indptr, indices, states, i):
    s = 0.0
    for p in range(indptr[i], indptr[i + 1]):
        s += states[indices[p]]
    return s


@njit(cache=True, nogil=True)
def icm_sweep(indptr, indices, states, field, c, llr, pinned, probs):
    """One in-order pass setting each free node to its conditional mode.

    ``probs`` receives the conditional P(I_i = 1 | z_i, I_-i) evaluated at
    the moment node i is visited.
    """
    d = states.shape[0]
    for i in range(d):
        logit = field[i] + c * _neighbor_sum(indptr, indices, states, i) + llr[i]
        probs[i] = 1.0 / (1.0 + np.exp(-logit))
        if pinned[i]:
            probs[i] = 1.0
            continue
        states[i] = 1 if logit > 0.0 else 0


@njit(cache=True, nogil=True)
def gibbs_sweeps(indptr, indices, states, field, c, llr, pinned, uniforms, counts, record, rao_blackwell):
    """Systematic-scan Gibbs sweeps; one row of ``uniforms`` per sweep.

    When ``record`` is true, ``counts`` accumulates, per retained sweep,
    either the sampled state (0/1) or, with ``rao_blackwell``, the full
    conditional P(I_i = 1 | rest) the state was drawn from.
    """
    n_sweeps, d = uniforms.shape
    for t in range(n_sweeps):
        for i in range(d):
            if pinned[i]:
                if record:
                    counts[i] += 1.0
                continue
            logit = field[i] + c * _neighbor_sum(indptr, indices, states, i) + llr[i]
            p1 = 1.0 / (1.0 + np.exp(-logit))
            states[i] = 1 if uniforms[t, i] < p1 else 0
            if record:
                counts[i] += p1 if rao_blackwell else states[i]


@njit(cache=True, nogil=True)
def mh_sweeps(indptr, indices, states, field, c, pinned, u_site, u_accept):
    """Random-site single-flip Metropolis-Hastings.

    A sweep is ``d`` proposals; ``u_site`` and ``u_accept`` are
    (n_sweeps, d) arrays of uniforms.
    """
    n_sweeps, d = u_site.shape
    for t in range(n_sweeps):
        for k in range(d):
            i = int(u_site[t, k] * d)
            if i >= d:
                i = d - 1
            if pinned[i]:
                continue
            logit = field[i] + c * _neighbor_sum(indptr, indices, states, i)
            # log acceptance ratio of flipping i
            delta = logit if states[i] == 0 else -logit
            if delta >= 0.0 or np.log(u_accept[t, k]) < delta:
                states[i] = 1 - states[i]
