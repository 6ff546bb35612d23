"""Collapsed direct-assignment Gibbs sampler.

Transition rows and emission parameters are integrated out; the chain state
is the label sequence ``z``, the instantiated global weights ``beta`` (with a
trailing entry holding the mass of all unused states) and the
hyperparameters.  The first label is drawn from ``beta``.

With mixture emissions each state additionally owns a Chinese-restaurant
partition of its observations into components, labelled by ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .exceptions import (
    InternalConsistencyError,
    InvalidParameterError,
    UnsupportedOperationError,
)
from .hyper import (
    DEFAULT_INNER,
    AuxVars,
    compute_kbar,
    sample_alpha_plus_kappa,
    sample_gamma_conc,
    sample_rho,
    sample_sigma,
)
from .kernel import sample_categorical_log, sample_crt_many, sample_dirichlet
from .model import CountTables, Hyperparams, ModelState

BETA_FLOOR = 1e-300


@dataclass
class DirectSweepReport:
    new_states: int
    K: int
    loglik: float


def sample_tables_m(n, beta, hp: Hyperparams, rng) -> np.ndarray:
    """Served-table counts m_jk ~ CRT(n_jk, alpha beta_k + kappa [j == k])."""
    K = n.shape[0]
    conc = hp.alpha * np.broadcast_to(np.asarray(beta[:K], dtype=float), (K, K)).copy()
    conc[np.diag_indices(K)] += hp.kappa
    return sample_crt_many(n, conc, rng)


def override_probability(beta, rho) -> np.ndarray:
    """Chance that a table of restaurant j serving dish j was an override."""
    beta = np.asarray(beta, dtype=float)
    denom = rho + beta * (1.0 - rho)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(denom > 0, rho / denom, 0.0)
    return np.clip(p, 0.0, 1.0)


def sample_overrides_w(m, beta, hp: Hyperparams, rng) -> np.ndarray:
    """Per-restaurant override totals w_j ~ Binomial(m_jj, rho / (rho + beta_j (1 - rho)))."""
    K = m.shape[0]
    diag = np.diag(m).astype(np.int64)
    p = override_probability(beta[:K], hp.rho)
    return rng.binomial(diag, p).astype(np.int64)


def compute_mbar(m, w) -> np.ndarray:
    """Considered-table counts: m with overrides removed from the diagonal."""
    mbar = np.array(m, dtype=np.int64, copy=True)
    idx = np.diag_indices(mbar.shape[0])
    mbar[idx] -= np.asarray(w, dtype=np.int64)
    if np.any(mbar < 0):
        raise InternalConsistencyError("override total exceeds self-transition tables")
    return mbar


def sample_beta_direct(column_counts, gamma, rng) -> np.ndarray:
    """beta ~ Dir(c_1, ..., c_K, gamma); the last entry is the unused mass.

    Zero counts are allowed and give zero weight; entries are floored at a
    tiny positive value so later logarithms stay finite.
    """
    params = np.append(np.asarray(column_counts, dtype=float), gamma)
    beta = sample_dirichlet(params, rng, allow_zero=True)
    beta = np.maximum(beta, BETA_FLOOR)
    return beta / beta.sum()


class DirectAssignmentSampler:
    """Collapsed sampler over (z, beta, hyperparameters).

    Parameters
    ----------
    emission : collapsible emission family (Gaussian-conjugate or multinomial)
    hyper : initial hyperparameters, updated in place when ``learn_hyper``
    dp : use per-state DP mixtures of ``emission`` components
    max_components : cap on mixture components per state (``None`` = no cap;
        ``1`` reproduces the plain sampler exactly)
    sticky : when False, rho is pinned at zero
    """

    def __init__(self, emission, hyper: Hyperparams, *, dp=False, max_components=None,
                 learn_hyper=True, sticky=True, hyper_inner=DEFAULT_INNER):
        if not emission.collapsible:
            raise UnsupportedOperationError(
                f"{emission.family} emissions need the blocked sampler"
            )
        if max_components is not None and max_components < 1:
            raise InvalidParameterError("max_components must be >= 1")
        self.emission = emission
        self.hyper = hyper.copy()
        if not sticky:
            self.hyper.rho = 0.0
        self.dp = dp
        self.max_components = max_components
        self.learn_hyper = learn_hyper
        self.sticky = sticky
        self.hyper_inner = hyper_inner
        self.aux = AuxVars()
        self.iteration = 0
        self.new_states = 0

    # ------------------------------------------------------------------ setup
    def initialize(self, Y, rng, z=None, s=None, beta=None):
        """Set data and a starting configuration.

        Without ``z`` the labels are drawn sequentially, each as if its
        observation were the last one, starting from only the unused-mass
        entry of beta.
        """
        self.Y = self.emission.validate(Y)
        self.T = len(self.Y)
        if self.T < 1:
            raise InvalidParameterError("need at least one observation")
        self.emission.reset(16)
        self.K = 0
        self.beta = np.array([1.0])
        self.n = np.zeros((0, 0), dtype=np.int64)
        self.occ = np.zeros(0, dtype=np.int64)
        self.state_slot = []
        self.z = np.full(self.T, -1, dtype=np.int64)
        # mixture bookkeeping: per emission slot owner state and size
        self.s = np.full(self.T, -1, dtype=np.int64) if self.dp else None
        self.slot_owner = np.full(self.emission.n_slots, -1, dtype=np.int64)
        self.slot_count = np.zeros(self.emission.n_slots, dtype=np.int64)
        self.m = self.w = self.mbar = None
        if z is not None:
            self._load_labels(np.asarray(z, dtype=np.int64), s, beta, rng)
        else:
            for t in range(self.T):
                self._place(t, self._choose(t, rng, has_next=False), rng)
            self._compact()
            self._resample_tables_and_beta(rng, learn=False)
        return self

    def _load_labels(self, z, s, beta, rng):
        if z.shape != (self.T,):
            raise InvalidParameterError("z must have one label per observation")
        uniq, z = np.unique(z, return_inverse=True)
        K = uniq.size
        if beta is not None and not np.array_equal(uniq, np.arange(K)):
            raise InvalidParameterError("labels must be 0..K-1 when beta is supplied")
        self._grow_states(K)
        if self.dp:
            s = np.zeros(self.T, dtype=np.int64) if s is None else np.asarray(s, dtype=np.int64)
            comp_slot = {}
            for t in range(self.T):
                key = (int(z[t]), int(s[t]))
                if key not in comp_slot:
                    comp_slot[key] = self._new_component(key[0])
                self._add_obs(t, z[t], comp_slot[key])
        else:
            for t in range(self.T):
                self._add_obs(t, z[t], None)
        for t in range(1, self.T):
            self.n[z[t - 1], z[t]] += 1
        if beta is None:
            self.beta = np.full(K + 1, 1.0 / (K + 1))
            self._resample_tables_and_beta(rng, learn=False)
        else:
            beta = np.asarray(beta, dtype=float)
            if beta.shape != (K + 1,):
                raise InvalidParameterError("beta must have K + 1 entries")
            self.beta = beta / beta.sum()

    # ------------------------------------------------------- state management
    def _grow_states(self, count):
        for _ in range(count):
            K = self.K
            n = np.zeros((K + 1, K + 1), dtype=np.int64)
            n[:K, :K] = self.n
            self.n = n
            self.occ = np.append(self.occ, 0)
            self.state_slot.append(None if self.dp else self.emission.alloc())
            self.K = K + 1
        self._sync_slot_arrays()

    def _sync_slot_arrays(self):
        size = self.emission.n_slots
        if self.slot_owner.size < size:
            extra = size - self.slot_owner.size
            self.slot_owner = np.append(self.slot_owner, np.full(extra, -1, dtype=np.int64))
            self.slot_count = np.append(self.slot_count, np.zeros(extra, dtype=np.int64))

    def _new_component(self, k):
        slot = self.emission.alloc()
        self._sync_slot_arrays()
        self.slot_owner[slot] = k
        self.slot_count[slot] = 0
        return slot

    def _add_obs(self, t, k, comp_slot):
        y = self.Y[t]
        self.z[t] = k
        self.occ[k] += 1
        if self.dp:
            self.s[t] = comp_slot
            self.slot_count[comp_slot] += 1
            self.emission.add(comp_slot, y)
        else:
            self.emission.add(self.state_slot[k], y)

    def _remove_obs(self, t):
        k = self.z[t]
        y = self.Y[t]
        self.occ[k] -= 1
        if self.dp:
            slot = self.s[t]
            self.emission.remove(slot, y)
            self.slot_count[slot] -= 1
            if self.slot_count[slot] == 0:
                self.emission.free(slot)
                self.slot_owner[slot] = -1
            self.s[t] = -1
        else:
            self.emission.remove(self.state_slot[k], y)
        self.z[t] = -1
        return k

    def _compact(self):
        """Drop states holding no observation and return their weight to the unused mass."""
        keep = np.flatnonzero(self.occ > 0)
        if keep.size == self.K:
            return
        drop = np.flatnonzero(self.occ == 0)
        remap = np.full(self.K, -1, dtype=np.int64)
        remap[keep] = np.arange(keep.size)
        if not self.dp:
            for k in drop:
                self.emission.free(self.state_slot[k])
        self.state_slot = [self.state_slot[k] for k in keep]
        rest = self.beta[-1] + self.beta[drop].sum()
        self.beta = np.append(self.beta[keep], rest)
        self.n = self.n[np.ix_(keep, keep)]
        self.occ = self.occ[keep]
        self.z = remap[self.z]
        if self.dp:
            live = self.slot_owner >= 0
            self.slot_owner[live] = remap[self.slot_owner[live]]
        self.K = keep.size

    # --------------------------------------------------------- label update
    def _emission_logliks(self, y):
        """Collapsed log-likelihood of y under each existing state and a new one."""
        K = self.K
        if not self.dp:
            if K == 0:
                return np.array([self.emission.prior_predictive_logpdf(y)]), None
            slots = np.asarray(self.state_slot, dtype=np.int64)
            ll = self.emission.predictive_logpdf(y, slots)
            prior = self.emission.prior_predictive_logpdf(y)
            return np.append(ll, prior), None
        sigma = self.hyper.sigma
        prior = self.emission.prior_predictive_logpdf(y)
        live = np.flatnonzero(self.slot_owner >= 0)
        owners = self.slot_owner[live]
        counts = self.slot_count[live].astype(float)
        comp_ll = self.emission.predictive_logpdf(y, live) if live.size else np.zeros(0)
        n_state = self.occ.astype(float)
        capped = self._capped_states()
        top = max(prior, comp_ll.max()) if live.size else prior
        mix = np.bincount(owners, weights=counts * np.exp(comp_ll - top), minlength=K)
        new_term = np.where(capped, 0.0, sigma * np.exp(prior - top))
        denom = np.where(capped, n_state, sigma + n_state)
        with np.errstate(divide="ignore", invalid="ignore"):
            ll = np.where(denom > 0, np.log(mix + new_term) - np.log(denom) + top, prior)
        return np.append(ll, prior), (live, owners, counts, comp_ll, prior)

    def _capped_states(self):
        if self.max_components is None:
            return np.zeros(self.K, dtype=bool)
        ncomp = np.bincount(self.slot_owner[self.slot_owner >= 0], minlength=self.K)
        return ncomp >= self.max_components

    def zt_log_weights(self, t, has_next=None):
        """Unnormalised log-probabilities of z_t over existing states and a new one.

        The caller must already have removed observation t and its two
        transitions.  The last entry is the new-state option.
        """
        hp = self.hyper
        alpha, kappa = hp.alpha, hp.kappa
        K = self.K
        beta = self.beta
        has_prev = t > 0 and self.z[t - 1] >= 0
        if has_next is None:
            has_next = t < self.T - 1 and self.z[t + 1] >= 0
        ks = np.arange(K)
        if has_prev:
            j = self.z[t - 1]
            first = alpha * beta[:K] + self.n[j, :K] + kappa * (ks == j)
            first_new = alpha * beta[K]
            same = (ks == j).astype(float)
        else:
            first = beta[:K].copy()
            first_new = beta[K]
            same = np.zeros(K)
        if has_next:
            l = self.z[t + 1]
            numer = alpha * beta[l] + self.n[:K, l] + kappa * (ks == l) + same * (ks == l)
            denom = alpha + kappa + self.n[:K, :K].sum(axis=1) + same
            second = numer / denom
            second_new = alpha * beta[l] / (alpha + kappa)
        else:
            second = np.ones(K)
            second_new = 1.0
        prior = np.append(first * second, first_new * second_new)
        ll, extra = self._emission_logliks(self.Y[t])
        with np.errstate(divide="ignore"):
            return np.log(prior) + ll, extra

    def _choose(self, t, rng, has_next=None):
        logw, extra = self.zt_log_weights(t, has_next)
        k = sample_categorical_log(logw, rng)
        comp = None
        if self.dp:
            comp = self._choose_component(k, extra, rng)
        return k, comp

    def _choose_component(self, k, extra, rng):
        """Component for an observation already assigned to state k (-1 means new)."""
        if k == self.K or extra is None:
            return -1
        live, owners, counts, comp_ll, prior = extra
        mine = owners == k
        cand = live[mine]
        logw = np.log(counts[mine]) + comp_ll[mine] if cand.size else np.zeros(0)
        if not self._capped_states()[k]:
            logw = np.append(logw, np.log(self.hyper.sigma) + prior)
            cand = np.append(cand, -1)
        if cand.size == 1:
            return int(cand[0])
        return int(cand[sample_categorical_log(logw, rng)])

    def _place(self, t, choice, rng):
        k, comp = choice
        if k == self.K:
            b = rng.beta(1.0, self.hyper.gamma)
            rest = self.beta[-1]
            self.beta = np.append(self.beta[:-1], [b * rest, (1.0 - b) * rest])
            self._grow_states(1)
            self.new_states += 1
        if self.dp and (comp is None or comp < 0):
            comp = self._new_component(k)
        self._add_obs(t, k, comp)
        if t > 0 and self.z[t - 1] >= 0:
            self.n[self.z[t - 1], k] += 1
        if t < self.T - 1 and self.z[t + 1] >= 0:
            self.n[k, self.z[t + 1]] += 1

    def sample_zt(self, t, rng):
        """Resample z_t (and s_t) given everything else."""
        if not 0 <= t < self.T:
            raise IndexError(f"t={t} outside [0, {self.T})")
        k = self._remove_obs(t)
        if t > 0:
            self.n[self.z[t - 1], k] -= 1
        if t < self.T - 1:
            self.n[k, self.z[t + 1]] -= 1
        self._place(t, self._choose(t, rng), rng)
        return self.z[t]

    # --------------------------------------------------------------- sweeps
    def _resample_tables_and_beta(self, rng, learn=True):
        hp = self.hyper
        self.m = sample_tables_m(self.n, self.beta, hp, rng)
        self.w = sample_overrides_w(self.m, self.beta, hp, rng)
        self.mbar = compute_mbar(self.m, self.w)
        cols = self.mbar.sum(axis=0)
        cols[self.z[0]] += 1
        if learn and self.learn_hyper:
            n_rows = self.n.sum(axis=1)
            m_total = int(self.m.sum())
            hp.alpha_plus_kappa, self.aux = sample_alpha_plus_kappa(
                m_total, n_rows, hp.alpha_plus_kappa, hp.priors, rng, self.aux, self.hyper_inner
            )
            if self.sticky:
                hp.rho = sample_rho(int(self.w.sum()), m_total, hp.priors, rng)
            hp.gamma, self.aux = sample_gamma_conc(
                compute_kbar(cols), int(cols.sum()), hp.gamma, hp.priors, rng,
                self.aux, self.hyper_inner,
            )
            if self.dp and self.max_components != 1:
                owners = self.slot_owner[self.slot_owner >= 0]
                hp.sigma, self.aux = sample_sigma(
                    owners.size, self.occ, hp.sigma, hp.priors, rng, self.aux, self.hyper_inner
                )
        self.beta = sample_beta_direct(cols, hp.gamma, rng)

    def sweep(self, rng) -> DirectSweepReport:
        """One pass: every label in forward order, then tables, hyperparameters and beta."""
        self.new_states = 0
        for t in range(self.T):
            self.sample_zt(t, rng)
        self._compact()
        self._resample_tables_and_beta(rng)
        self.iteration += 1
        return DirectSweepReport(self.new_states, self.K, self.joint_loglik())

    # ------------------------------------------------------------ inspection
    @property
    def component_labels(self) -> Optional[np.ndarray]:
        """Dense per-state component indices (0-based within each state)."""
        if not self.dp:
            return None
        out = np.empty(self.T, dtype=np.int64)
        for k in range(self.K):
            idx = np.flatnonzero(self.z == k)
            _, out[idx] = np.unique(self.s[idx], return_inverse=True)
        return out

    def counts(self) -> CountTables:
        n_prime = None
        if self.dp:
            s = self.component_labels
            width = int(s.max()) + 1 if s.size else 0
            n_prime = np.zeros((self.K, width), dtype=np.int64)
            np.add.at(n_prime, (self.z, s), 1)
        return CountTables(n=self.n.copy(), n_prime=n_prime, m=self.m, w=self.w, mbar=self.mbar)

    def joint_loglik(self) -> float:
        """log p(y, z [, s] | beta, hyperparameters) with rows and parameters integrated out."""
        hp = self.hyper
        K = self.K
        a, kap, apk = hp.alpha, hp.kappa, hp.alpha_plus_kappa
        conc = a * np.broadcast_to(self.beta[:K], (K, K)).copy()
        conc[np.diag_indices(K)] += kap
        rows = self.n.sum(axis=1)
        used = rows > 0
        trans = (
            gammaln(apk) - gammaln(apk + rows[used])
        ).sum() + (gammaln(conc + self.n) - gammaln(conc))[used].sum()
        total = np.log(self.beta[self.z[0]]) + trans
        if not self.dp:
            total += self.emission.log_marginal(np.asarray(self.state_slot, dtype=np.int64)).sum()
            return float(total)
        live = np.flatnonzero(self.slot_owner >= 0)
        total += self.emission.log_marginal(live).sum()
        if self.max_components != 1:
            sigma = hp.sigma
            ncomp = np.bincount(self.slot_owner[live], minlength=K)
            total += (
                ncomp * np.log(sigma) + gammaln(sigma) - gammaln(sigma + self.occ)
            ).sum() + gammaln(self.slot_count[live]).sum()
        return float(total)

    def state(self) -> ModelState:
        return ModelState(
            z=self.z.copy(),
            s=self.component_labels,
            beta=self.beta.copy(),
            hyper=self.hyper.copy(),
            counts=self.counts(),
            sampler="direct-dp" if self.dp else "direct",
            iteration=self.iteration,
        )
