"""Auxiliary-variable Gibbs updates for the concentrations and rho.

Every update draws auxiliary variables given the current value, then the
value given the auxiliaries, and repeats ``inner`` times.  Priors are
Gamma(shape, rate) on concentrations and Beta(c, d) on rho.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InternalConsistencyError
from ._hmm import crt_counts
from .kernel import _log_gamma_variates

DEFAULT_INNER = 50


@dataclass
class AuxVars:
    """Auxiliary draws from the most recent inner cycle, kept for inspection."""

    r: np.ndarray = field(default_factory=lambda: np.zeros(0))
    s: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    eta: float = np.nan
    indicator: int = 0
    r_prime: np.ndarray = field(default_factory=lambda: np.zeros(0))
    s_prime: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def _gamma(shape, rate, rng):
    if not rate > 0:
        raise InternalConsistencyError(f"Gamma rate must be positive, got {rate}")
    return float(rng.gamma(shape, 1.0 / rate))


def _log_gamma_scalar(shape, rng):
    if shape < 1.0:
        return math.log(rng.standard_gamma(shape + 1.0)) + math.log(rng.random()) / shape
    return math.log(rng.standard_gamma(shape))


def _log_beta_scalar(a, b, rng):
    """log of one Beta(a, b) draw; survives first shapes small enough to underflow Beta."""
    la, lb = _log_gamma_scalar(a, rng), _log_gamma_scalar(b, rng)
    top = max(la, lb)
    return la - (top + math.log(math.exp(la - top) + math.exp(lb - top)))


def _log_beta_rows(a, rows, rng):
    """log Beta(a, rows_k) draws for one shared first shape."""
    shapes = np.concatenate([np.full(rows.size, a), rows.astype(float)])
    lg = _log_gamma_variates(shapes, rng)
    la, lb = lg[:rows.size], lg[rows.size:]
    return la - np.logaddexp(la, lb)


def _table_total(occupied, concentration, n_seats, rng):
    """Total CRT tables over already-validated positive counts sharing one concentration."""
    if not concentration > 0:
        raise InternalConsistencyError(f"concentration collapsed to {concentration}")
    conc = np.full(occupied.size, concentration)
    return int(crt_counts(occupied, conc, rng.random(n_seats)).sum())


def _restaurant_update(value, tables, counts, shape, rate, rng, inner):
    """Shared body of the restaurant-concentration updates.

    Targets p(c) c^tables prod_j Gamma(c) / Gamma(c + counts_j), with the
    Beta/Bernoulli augmentation for each Gamma ratio.
    """
    counts = np.asarray(counts, dtype=float)
    counts = counts[counts > 0]
    if counts.size == 0:
        return _gamma(shape, rate, rng), np.zeros(0), np.zeros(0, dtype=bool)
    if tables < counts.size:
        raise InternalConsistencyError("fewer tables than occupied restaurants")
    r = s = None
    for _ in range(inner):
        r = rng.beta(value + 1.0, counts)
        s = rng.random(counts.size) * (counts + value) < counts
        value = _gamma(shape + tables - s.sum(), rate - np.log(r).sum(), rng)
    return value, r, s


def sample_alpha_plus_kappa(m_total, n_rows, value, priors, rng, aux=None, inner=DEFAULT_INNER):
    """Update alpha + kappa from the served-table total and restaurant sizes.

    ``n_rows`` holds the number of transitions out of each state; empty
    restaurants are ignored because they carry no information.
    """
    aux = aux or AuxVars()
    value, aux.r, aux.s = _restaurant_update(
        value, m_total, n_rows, priors.apk_shape, priors.apk_rate, rng, inner
    )
    return value, aux


def sample_sigma(k_prime_total, n_rows, value, priors, rng, aux=None, inner=DEFAULT_INNER):
    """Update the emission-mixture concentration from component counts.

    ``k_prime_total`` is the number of occupied components summed over states
    and ``n_rows`` the number of observations held by each state.
    """
    aux = aux or AuxVars()
    value, aux.r_prime, aux.s_prime = _restaurant_update(
        value, k_prime_total, n_rows, priors.sigma_shape, priors.sigma_rate, rng, inner
    )
    return value, aux


def compute_kbar(column_counts) -> int:
    """Number of dishes considered by at least one table."""
    return int(np.count_nonzero(np.asarray(column_counts) > 0))


def sample_gamma_conc(kbar, total, value, priors, rng, aux=None, inner=DEFAULT_INNER):
    """Top-level concentration update as a two-component Gamma mixture.

    Targets p(g) g^kbar Gamma(g) / Gamma(g + total).  Given eta ~ Beta(g + 1,
    total), the conditional is a mixture of Gamma(a + kbar, b - log eta) and
    Gamma(a + kbar - 1, b - log eta) whose first component has odds
    (a + kbar - 1) / (total (b - log eta)).
    """
    aux = aux or AuxVars()
    a, b = priors.gamma_shape, priors.gamma_rate
    if total <= 0:
        return _gamma(a, b, rng), aux
    if not 1 <= kbar <= total:
        raise InternalConsistencyError("need 1 <= kbar <= table total")
    for _ in range(inner):
        eta = rng.beta(value + 1.0, total)
        rate = b - np.log(eta)
        odds = (a + kbar - 1.0) / (total * rate)
        first = rng.random() * (1.0 + odds) < odds
        value = _gamma(a + kbar - (0 if first else 1), rate, rng)
        aux.eta = float(eta)
    return value, aux


def sample_gamma_indicator(kbar, total, value, priors, rng, aux=None, inner=DEFAULT_INNER):
    """Same target as :func:`sample_gamma_conc`, augmented with a binary indicator."""
    aux = aux or AuxVars()
    a, b = priors.gamma_shape, priors.gamma_rate
    if total <= 0:
        return _gamma(a, b, rng), aux
    if not 1 <= kbar <= total:
        raise InternalConsistencyError("need 1 <= kbar <= table total")
    for _ in range(inner):
        eta = rng.beta(value + 1.0, total)
        ind = int(rng.random() * (total + value) < total)
        value = _gamma(a + kbar - ind, b - np.log(eta), rng)
        aux.eta, aux.indicator = float(eta), ind
    return value, aux


def sample_gamma_weaklimit(column_counts, value, L, priors, rng, aux=None, inner=DEFAULT_INNER):
    """Top-level concentration under a symmetric Dirichlet(g/L) global prior.

    Targets p(g) Gamma(g)/Gamma(g + M) prod_k Gamma(g/L + c_k)/Gamma(g/L),
    using table counts t_k ~ CRT(c_k, g/L) and eta ~ Beta(g, M).
    """
    aux = aux or AuxVars()
    a, b = priors.gamma_shape, priors.gamma_rate
    counts = np.asarray(column_counts, dtype=np.int64)
    total = int(counts.sum())
    if total <= 0:
        return _gamma(a, b, rng), aux
    occupied = counts[counts > 0]
    n_seats = int(occupied.sum())
    for _ in range(inner):
        tables = _table_total(occupied, value / L, n_seats, rng)
        log_eta = _log_beta_scalar(value, total, rng)
        value = _gamma(a + tables, b - log_eta, rng)
        aux.eta = math.exp(log_eta)
    return value, aux


def sample_sigma_weaklimit(n_prime, value, Lprime, priors, rng, aux=None, inner=DEFAULT_INNER):
    """Mixture concentration under symmetric Dirichlet(s/L') component weights."""
    aux = aux or AuxVars()
    a, b = priors.sigma_shape, priors.sigma_rate
    n_prime = np.asarray(n_prime, dtype=np.int64)
    rows = n_prime.sum(axis=1)
    keep = rows > 0
    if not np.any(keep):
        return _gamma(a, b, rng), aux
    rows = rows[keep]
    cells = n_prime[keep]
    occupied = cells[cells > 0]
    n_seats = int(occupied.sum())
    for _ in range(inner):
        tables = _table_total(occupied, value / Lprime, n_seats, rng)
        log_r = _log_beta_rows(value, rows, rng)
        value = _gamma(a + tables, b - log_r.sum(), rng)
        aux.r_prime = np.exp(log_r)
    return value, aux


def sample_rho(w_total, m_total, priors, rng) -> float:
    """rho ~ Beta(w + c, m - w + d)."""
    if w_total < 0 or w_total > m_total:
        raise InternalConsistencyError("override total outside [0, table total]")
    return float(rng.beta(w_total + priors.rho_c, m_total - w_total + priors.rho_d))
