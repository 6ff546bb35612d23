"""Weak-limit blocked Gibbs sampler.

The global weights follow a symmetric Dirichlet of degree ``L``; transition
rows, emission parameters and (for mixture emissions) per-state component
weights are instantiated, so the whole label path can be drawn at once from
backward messages.  The first label is drawn from ``beta``.

Observations may be tied: ``groups[i]`` names the hidden step that frame
``i`` belongs to, and a step's likelihood is the product over its frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._hmm import backward_pass, forward_sample, sequence_loglik
from .direct import compute_mbar, override_probability, sample_tables_m
from .emissions import DPMixGaussian
from .exceptions import (
    DegenerateDistributionError,
    InvalidParameterError,
)
from .hyper import (
    DEFAULT_INNER,
    AuxVars,
    sample_alpha_plus_kappa,
    sample_gamma_conc,
    sample_gamma_weaklimit,
    sample_rho,
    sample_sigma_weaklimit,
)
from .kernel import sample_dirichlet, sample_dirichlet_rows
from .model import CountTables, Hyperparams, ModelState, recount

PI_FLOOR = 1e-300


@dataclass
class MessageTable:
    """Normalised backward messages (T x L) and per-step log normalisers."""

    values: np.ndarray
    lognorm: np.ndarray

    @property
    def log_values(self):
        with np.errstate(divide="ignore"):
            return np.log(self.values)


@dataclass
class BlockedSweepReport:
    iteration: int
    loglik: float
    K: int
    hyper: dict = field(default_factory=dict)


def _check_loglik(loglik):
    if np.any(np.isnan(loglik)) or np.any(loglik == np.inf):
        raise InvalidParameterError("emission log-likelihood is NaN or +inf")


def backward_messages(pi, loglik) -> MessageTable:
    """Backward messages for transition matrix ``pi`` and step log-likelihoods (T x L)."""
    pi = np.asarray(pi, dtype=float)
    loglik = np.asarray(loglik, dtype=float)
    _check_loglik(loglik)
    values, lognorm = backward_pass(pi, loglik)
    if not np.all(np.isfinite(lognorm)):
        raise DegenerateDistributionError("backward messages vanished")
    return MessageTable(values, lognorm)


def forward_sample_z(pi, loglik, messages: MessageTable, init, rng) -> np.ndarray:
    """Exact joint draw of the label path given messages and the initial law."""
    uniforms = rng.random(loglik.shape[0])
    z, bad = forward_sample(pi, loglik, messages.values, init, uniforms)
    if bad >= 0:
        raise DegenerateDistributionError(f"all label weights are zero at step {bad}")
    return z


def mixture_state_loglik(comp_loglik, log_psi) -> np.ndarray:
    """(N, L) per-state log-likelihoods from (N, L*L') component log-likelihoods."""
    L, Lp = log_psi.shape
    x = comp_loglik.reshape(-1, L, Lp) + log_psi[None]
    top = x.max(axis=2, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return np.log(np.exp(x - top).sum(axis=2)) + top[..., 0]


def sample_components(comp_loglik, log_psi, z_frames, rng) -> np.ndarray:
    """Draw each frame's component given its state."""
    L, Lp = log_psi.shape
    N = z_frames.size
    rows = comp_loglik.reshape(N, L, Lp)[np.arange(N), z_frames] + log_psi[z_frames]
    w = np.exp(rows - rows.max(axis=1, keepdims=True))
    cdf = np.cumsum(w, axis=1)
    u = rng.random(N) * cdf[:, -1]
    return np.minimum((cdf <= u[:, None]).sum(axis=1), Lp - 1)


def forward_sample_zs(pi, psi, comp_loglik, groups, init, rng):
    """Joint draw of (z, s): states from component-marginalised messages, then components."""
    log_psi = np.log(np.maximum(psi, PI_FLOOR))
    frame_ll = mixture_state_loglik(comp_loglik, log_psi)
    step_ll = _reduce_groups(frame_ll, groups)
    msgs = backward_messages(pi, step_ll)
    z = forward_sample_z(pi, step_ll, msgs, init, rng)
    frames_z = z if groups is None else z[groups]
    s = sample_components(comp_loglik, log_psi, frames_z, rng)
    return z, s


def sample_transitions(n, beta, hp: Hyperparams, rng) -> np.ndarray:
    """pi_k ~ Dir(alpha beta + kappa e_k + n_k) for every row."""
    L = n.shape[0]
    params = hp.alpha * np.broadcast_to(beta, (L, L)) + n
    params[np.diag_indices(L)] += hp.kappa
    pi = sample_dirichlet_rows(np.maximum(params, PI_FLOOR), rng)
    return pi


def sample_beta_weaklimit(column_counts, gamma, L, rng) -> np.ndarray:
    """beta ~ Dir(gamma/L + c_1, ..., gamma/L + c_L)."""
    c = np.asarray(column_counts, dtype=float)
    if c.shape != (L,):
        raise InvalidParameterError(f"expected {L} column counts")
    beta = sample_dirichlet(gamma / L + c, rng)
    beta = np.maximum(beta, PI_FLOOR)
    return beta / beta.sum()


def sample_psi(n_prime, sigma, Lprime, rng) -> np.ndarray:
    """psi_k ~ Dir(sigma/L' + n'_k) for every state."""
    n_prime = np.asarray(n_prime, dtype=float)
    if Lprime == 1:
        return np.ones((n_prime.shape[0], 1))
    return sample_dirichlet_rows(sigma / Lprime + n_prime, rng)


def _group_starts(groups):
    groups = np.asarray(groups, dtype=np.int64)
    if groups.ndim != 1 or groups.size == 0:
        raise InvalidParameterError("groups must be a non-empty 1-D array")
    if groups[0] != 0 or np.any(np.diff(groups) < 0) or np.any(np.diff(groups) > 1):
        raise InvalidParameterError("groups must be consecutive integers starting at 0")
    return np.flatnonzero(np.r_[True, np.diff(groups) > 0])


def _reduce_groups(frame_ll, groups, starts=None):
    if groups is None:
        return frame_ll
    if starts is None:
        starts = _group_starts(groups)
    return np.add.reduceat(frame_ll, starts, axis=0)


class BlockedSampler:
    """Blocked sampler over (z [, s], beta, pi [, psi], theta, hyperparameters).

    Parameters
    ----------
    emission : emission family; a :class:`DPMixGaussian` turns on mixture emissions
    L : truncation level of the global weights
    hyper : initial hyperparameters
    sticky : when False, rho is pinned at zero (kappa = 0)
    fixed_beta : keep beta uniform (independent sparse Dirichlet rows);
        the top-level concentration is then unused
    learn_hyper : run the concentration/rho updates each sweep
    gamma_update : ``"weaklimit"`` uses the exact conditional under the
        degree-L Dirichlet; ``"dp"`` uses the infinite-limit update
    """

    def __init__(self, emission, L: int, hyper: Hyperparams, *, sticky=True,
                 fixed_beta=False, learn_hyper=True, gamma_update="weaklimit",
                 hyper_inner=DEFAULT_INNER):
        if L < 1:
            raise InvalidParameterError("L must be >= 1")
        if gamma_update not in ("weaklimit", "dp"):
            raise InvalidParameterError("gamma_update must be 'weaklimit' or 'dp'")
        self.emission = emission
        self.dp = isinstance(emission, DPMixGaussian)
        self.Lprime = emission.Lprime if self.dp else 1
        self.L = int(L)
        self.hyper = hyper.copy()
        self.sticky = sticky
        if not sticky:
            self.hyper.rho = 0.0
        self.fixed_beta = fixed_beta
        self.learn_hyper = learn_hyper
        self.gamma_update = gamma_update
        self.hyper_inner = hyper_inner
        self.aux = AuxVars()
        self.iteration = 0
        self.messages: Optional[MessageTable] = None
        self.loglik = np.nan

    # ------------------------------------------------------------------ setup
    def set_data(self, Y, groups=None):
        self.Y = self.emission.validate(Y)
        self.N = len(self.Y)
        if self.N < 1:
            raise InvalidParameterError("need at least one observation")
        if groups is None:
            self.groups, self.starts, self.T = None, None, self.N
        else:
            groups = np.asarray(groups, dtype=np.int64)
            if groups.shape != (self.N,):
                raise InvalidParameterError("groups must have one entry per observation")
            self.starts = _group_starts(groups)
            self.groups, self.T = groups, self.starts.size
        self.messages = None

    def initialize(self, Y, rng, groups=None, hyper_from_prior=False):
        """Draw parameters from their priors, then a label path given them."""
        self.set_data(Y, groups)
        hp = self.hyper
        pr = hp.priors
        if hyper_from_prior and self.learn_hyper:
            hp.gamma = float(rng.gamma(pr.gamma_shape, 1.0 / pr.gamma_rate))
            hp.alpha_plus_kappa = float(rng.gamma(pr.apk_shape, 1.0 / pr.apk_rate))
            if self.sticky:
                hp.rho = float(rng.beta(pr.rho_c, pr.rho_d))
            if self.dp:
                hp.sigma = float(rng.gamma(pr.sigma_shape, 1.0 / pr.sigma_rate))
        L = self.L
        if self.fixed_beta:
            self.beta = np.full(L, 1.0 / L)
        else:
            self.beta = sample_beta_weaklimit(np.zeros(L), hp.gamma, L, rng)
        self.pi = sample_transitions(np.zeros((L, L)), self.beta, hp, rng)
        if self.dp:
            self.psi = sample_psi(np.zeros((L, self.Lprime)), hp.sigma, self.Lprime, rng)
            self.emission.base.params = self.emission.sample_prior_params(L, rng)
        else:
            self.psi = None
            self.emission.params = self.emission.sample_prior_params(L, rng)
        self._refresh_messages()
        self._sample_labels(rng)
        return self

    # ---------------------------------------------------------------- pieces
    def _frame_state_loglik(self):
        ll = self.emission.loglik(self.Y)
        _check_loglik(ll)
        if self.dp:
            self._comp_ll = ll
            return mixture_state_loglik(ll, np.log(np.maximum(self.psi, PI_FLOOR)))
        return ll

    def _refresh_messages(self):
        frame_ll = self._frame_state_loglik()
        self.step_ll = _reduce_groups(frame_ll, self.groups, self.starts)
        self.messages = backward_messages(self.pi, self.step_ll)
        self.loglik = sequence_loglik(self.beta, self.step_ll, self.messages.values,
                                      self.messages.lognorm)

    def _sample_labels(self, rng):
        if self.messages is None:
            self._refresh_messages()
        self.z = forward_sample_z(self.pi, self.step_ll, self.messages, self.beta, rng)
        self.frame_z = self.z if self.groups is None else self.z[self.groups]
        if self.dp:
            log_psi = np.log(np.maximum(self.psi, PI_FLOOR))
            self.s = sample_components(self._comp_ll, log_psi, self.frame_z, rng)
        else:
            self.s = None

    def _update_hyper(self, rng, n, n_prime, cols):
        hp = self.hyper
        pr = hp.priors
        inner = self.hyper_inner
        m_total = int(self.m.sum())
        hp.alpha_plus_kappa, self.aux = sample_alpha_plus_kappa(
            m_total, n.sum(axis=1), hp.alpha_plus_kappa, pr, rng, self.aux, inner
        )
        if self.sticky:
            hp.rho = sample_rho(int(self.w.sum()), m_total, pr, rng)
        if not self.fixed_beta:
            if self.gamma_update == "weaklimit":
                hp.gamma, self.aux = sample_gamma_weaklimit(cols, hp.gamma, self.L, pr, rng,
                                                            self.aux, inner)
            else:
                hp.gamma, self.aux = sample_gamma_conc(
                    int(np.count_nonzero(cols)), int(cols.sum()), hp.gamma, pr, rng,
                    self.aux, inner,
                )
        if self.dp and self.Lprime > 1:
            hp.sigma, self.aux = sample_sigma_weaklimit(n_prime, hp.sigma, self.Lprime, pr,
                                                        rng, self.aux, inner)

    def sweep(self, rng) -> BlockedSweepReport:
        """Labels, auxiliary tables, hyperparameters, beta, rows, weights, then parameters."""
        L, hp = self.L, self.hyper
        self._sample_labels(rng)
        counts = recount(self.z, L=L)
        n = counts.n
        if self.dp:
            counts.n_prime = np.zeros((L, self.Lprime), dtype=np.int64)
            np.add.at(counts.n_prime, (self.frame_z, self.s), 1)
        self.m = sample_tables_m(n, self.beta, hp, rng)
        p_override = override_probability(self.beta, hp.rho)
        self.w = rng.binomial(np.diag(self.m), p_override).astype(np.int64)
        self.mbar = compute_mbar(self.m, self.w)
        cols = self.mbar.sum(axis=0)
        cols[self.z[0]] += 1
        if self.learn_hyper:
            self._update_hyper(rng, n, counts.n_prime, cols)
        if not self.fixed_beta:
            self.beta = sample_beta_weaklimit(cols, hp.gamma, L, rng)
        self.pi = sample_transitions(n, self.beta, hp, rng)
        if self.dp:
            self.psi = sample_psi(counts.n_prime, hp.sigma, self.Lprime, rng)
            self.emission.set_assignments(self.Y, self.frame_z, self.s, L)
        else:
            self.emission.set_assignments(self.Y, self.frame_z, L)
        self.emission.sample_params(rng)
        counts.m, counts.w, counts.mbar = self.m, self.w, self.mbar
        self.counts = counts
        self._refresh_messages()
        self.iteration += 1
        return BlockedSweepReport(
            self.iteration, self.loglik, int(np.unique(self.z).size),
            {"gamma": hp.gamma, "alpha_plus_kappa": hp.alpha_plus_kappa,
             "rho": hp.rho, "sigma": hp.sigma},
        )

    # ------------------------------------------------------------ inspection
    def state(self) -> ModelState:
        return ModelState(
            z=self.z.copy(),
            s=None if self.s is None else self.s.copy(),
            beta=self.beta.copy(),
            pi=self.pi.copy(),
            psi=None if self.psi is None else self.psi.copy(),
            hyper=self.hyper.copy(),
            emission=self.emission.get_state(),
            counts=getattr(self, "counts", None),
            sampler="blocked-dp" if self.dp else "blocked",
            iteration=self.iteration,
        )

    def load_state(self, state: ModelState, Y, groups=None):
        """Resume from a snapshot taken by :meth:`state` on the same data."""
        self.set_data(Y, groups)
        self.hyper = state.hyper.copy()
        self.beta = np.asarray(state.beta, dtype=float)
        self.pi = np.asarray(state.pi, dtype=float)
        self.psi = None if state.psi is None else np.asarray(state.psi, dtype=float)
        self.emission.set_state(state.emission)
        self.z = np.asarray(state.z, dtype=np.int64)
        self.s = None if state.s is None else np.asarray(state.s, dtype=np.int64)
        self.frame_z = self.z if self.groups is None else self.z[self.groups]
        self.iteration = state.iteration
        self._refresh_messages()
        return self
