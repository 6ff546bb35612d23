"""Compiled kernels: HMM backward messages, forward path sampling and table counts.

Messages are kept in the linear domain with a per-step normalisation, and the
log normalisers are returned so the sequence likelihood can be recovered.
Randomness enters only through pre-drawn uniforms, which keeps these kernels
pure and the caller's generator the single source of randomness.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _backward(pi, loglik):
    T, L = loglik.shape
    msg = np.ones((T, L))
    lognorm = np.zeros(T)
    lik = np.empty(L)
    for t in range(T - 2, -1, -1):
        top = loglik[t + 1, 0]
        for j in range(1, L):
            if loglik[t + 1, j] > top:
                top = loglik[t + 1, j]
        for j in range(L):
            lik[j] = np.exp(loglik[t + 1, j] - top) * msg[t + 1, j]
        total = 0.0
        for k in range(L):
            acc = 0.0
            for j in range(L):
                acc += pi[k, j] * lik[j]
            msg[t, k] = acc
            total += acc
        for k in range(L):
            msg[t, k] /= total
        lognorm[t] = np.log(total) + top
    return msg, lognorm


@njit(cache=True)
def _forward_sample(pi, loglik, msg, init, uniforms):
    T, L = loglik.shape
    z = np.empty(T, dtype=np.int64)
    w = np.empty(L)
    prev = -1
    for t in range(T):
        top = loglik[t, 0]
        for j in range(1, L):
            if loglik[t, j] > top:
                top = loglik[t, j]
        total = 0.0
        for k in range(L):
            p = init[k] if prev < 0 else pi[prev, k]
            w[k] = p * np.exp(loglik[t, k] - top) * msg[t, k]
            total += w[k]
        if not total > 0.0:
            return z, t
        u = uniforms[t] * total
        acc = 0.0
        choice = L - 1
        for k in range(L):
            acc += w[k]
            if u < acc:
                choice = k
                break
        z[t] = choice
        prev = choice
    return z, -1


def backward_pass(pi, loglik):
    """Normalised backward messages and their log normalisers.

    Row ``t`` of the message table is proportional to the probability of
    observations ``t+1..T-1`` given ``z_t = k``; the final row is all ones.
    """
    return _backward(np.ascontiguousarray(pi, dtype=np.float64),
                     np.ascontiguousarray(loglik, dtype=np.float64))


def forward_sample(pi, loglik, msg, init, uniforms):
    """Draw a state path; returns (path, failing step or -1)."""
    return _forward_sample(
        np.ascontiguousarray(pi, dtype=np.float64),
        np.ascontiguousarray(loglik, dtype=np.float64),
        np.ascontiguousarray(msg, dtype=np.float64),
        np.ascontiguousarray(init, dtype=np.float64),
        np.ascontiguousarray(uniforms, dtype=np.float64),
    )


def sequence_loglik(init, loglik, msg, lognorm):
    """log p(y) from backward messages, the initial law and step log-likelihoods."""
    top = loglik[0].max()
    first = np.dot(init, np.exp(loglik[0] - top) * msg[0])
    return float(np.log(first) + top + lognorm[:-1].sum())


@njit(cache=True)
def crt_counts(counts, conc, uniforms):
    """Table counts per cell; seat ``i`` of a cell opens a table when u * (c + i) < c."""
    out = np.zeros(counts.size, dtype=np.int64)
    pos = 0
    for k in range(counts.size):
        c = conc[k]
        tables = 0
        for i in range(counts[k]):
            if uniforms[pos] * (c + i) < c:
                tables += 1
            pos += 1
        out[k] = tables
    return out
