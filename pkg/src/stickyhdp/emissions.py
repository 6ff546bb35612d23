"""Emission families and their sufficient-statistic caches.

Each family owns a set of *slots*.  A slot is whatever unit carries one
emission parameter: a hidden state for plain emissions, or a (state,
component) pair for mixture emissions, where slot ``k * Lprime + c`` holds
component ``c`` of state ``k``.

Two usage patterns are supported:

* Collapsed (direct-assignment) use: ``alloc``/``free`` slots, ``add`` and
  ``remove`` single observations, and query ``predictive_logpdf`` with the
  parameters integrated out.  Only conjugate families support this.
* Instantiated (blocked) use: ``set_assignments`` recomputes all statistics
  in bulk, ``sample_params`` draws parameters from their conditional
  posterior, and ``loglik`` evaluates every observation under every slot.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import gammaln, multigammaln

from .exceptions import (
    DecompositionError,
    InvalidParameterError,
    InvalidStateError,
    UnsupportedOperationError,
)
from .kernel import (
    NIWParams,
    sample_dirichlet_rows,
    sample_inverse_wishart_batch,
    studentt_logpdf,
)

LOG_PI = np.log(np.pi)


def _batched_cholesky(mats, what):
    try:
        return np.linalg.cholesky(mats)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"{what} is not positive definite") from exc


def _bincount_stats(Y, labels, n_slots):
    """Per-slot count, sum and outer-product sum of the rows of ``Y``."""
    d = Y.shape[1]
    cnt = np.bincount(labels, minlength=n_slots).astype(float)
    s1 = np.empty((n_slots, d))
    s2 = np.empty((n_slots, d, d))
    for a in range(d):
        s1[:, a] = np.bincount(labels, weights=Y[:, a], minlength=n_slots)
        for b in range(a, d):
            v = np.bincount(labels, weights=Y[:, a] * Y[:, b], minlength=n_slots)
            s2[:, a, b] = v
            s2[:, b, a] = v
    return cnt, s1, s2


def _gaussian_loglik(Y, mu, Sigma):
    """(N, S) matrix of Gaussian log-densities via precision expansion."""
    N, d = Y.shape
    chol = _batched_cholesky(Sigma, "emission covariance")
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    prec = np.linalg.inv(Sigma)
    prec = 0.5 * (prec + np.swapaxes(prec, 1, 2))
    S = mu.shape[0]
    quad = (Y[:, :, None] * Y[:, None, :]).reshape(N, d * d) @ prec.reshape(S, d * d).T
    pm = np.einsum("sij,sj->si", prec, mu)
    cross = Y @ pm.T
    const = np.einsum("si,si->s", mu, pm)
    maha = quad - 2.0 * cross + const[None, :]
    return -0.5 * (d * np.log(2 * np.pi) + logdet[None, :] + maha)


class EmissionFamily:
    """Interface shared by all families; see the module docstring."""

    family = "abstract"
    collapsible = False

    def __init__(self):
        self.n_slots = 0
        self.params: Optional[dict] = None

    # -- collapsed interface -------------------------------------------------
    def alloc(self) -> int:
        raise UnsupportedOperationError(f"{self.family} cannot be collapsed")

    def free(self, slot: int):
        raise UnsupportedOperationError(f"{self.family} cannot be collapsed")

    def add(self, slot: int, y):
        raise UnsupportedOperationError(f"{self.family} cannot be collapsed")

    def remove(self, slot: int, y):
        raise UnsupportedOperationError(f"{self.family} cannot be collapsed")

    def predictive_logpdf(self, y, slots) -> np.ndarray:
        raise UnsupportedOperationError(
            f"{self.family} has no collapsed predictive; use the blocked sampler"
        )

    def prior_predictive_logpdf(self, y) -> float:
        raise UnsupportedOperationError(f"{self.family} has no collapsed predictive")

    def log_marginal(self, slots) -> np.ndarray:
        raise UnsupportedOperationError(f"{self.family} has no closed-form marginal")

    # -- instantiated interface ---------------------------------------------
    def set_assignments(self, Y, labels, n_slots: int):
        raise NotImplementedError

    def sample_params(self, rng, tie: int = 1):
        raise NotImplementedError

    def sample_prior_params(self, n_slots: int, rng, tie: int = 1) -> dict:
        raise NotImplementedError

    def loglik(self, Y, params: Optional[dict] = None) -> np.ndarray:
        raise NotImplementedError

    def draw_observations(self, labels, rng, params: Optional[dict] = None):
        raise NotImplementedError

    def validate(self, Y):
        raise NotImplementedError

    def get_state(self) -> dict:
        return {"family": self.family, "params": self.params}

    def set_state(self, state: dict):
        self.params = state.get("params")


class _GaussianBase(EmissionFamily):
    dim: int

    def validate(self, Y):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1 and self.dim == 1:
            Y = Y[:, None]
        if Y.ndim != 2 or Y.shape[1] != self.dim:
            raise InvalidParameterError(
                f"expected observations of shape (N, {self.dim}), got {Y.shape}"
            )
        if not np.all(np.isfinite(Y)):
            raise InvalidParameterError("observations contain non-finite values")
        return Y

    def set_assignments(self, Y, labels, n_slots: int):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= n_slots):
            raise InvalidStateError("slot label out of range")
        self.n_slots = n_slots
        self.cnt, self.s1, self.s2 = _bincount_stats(Y, labels, n_slots)

    def loglik(self, Y, params=None):
        p = self.params if params is None else params
        return _gaussian_loglik(Y, p["mu"], p["Sigma"])

    def draw_observations(self, labels, rng, params=None):
        p = self.params if params is None else params
        labels = np.asarray(labels, dtype=np.int64)
        chol = _batched_cholesky(p["Sigma"], "emission covariance")
        eps = rng.standard_normal((labels.size, self.dim))
        return p["mu"][labels] + np.einsum("nij,nj->ni", chol[labels], eps)

    def _scatter_about(self, mu):
        """Per-slot scatter sum_t (y - mu)(y - mu)^T from cached statistics."""
        outer_s1_mu = np.einsum("si,sj->sij", self.s1, mu)
        return (
            self.s2
            - outer_s1_mu
            - np.swapaxes(outer_s1_mu, 1, 2)
            + self.cnt[:, None, None] * np.einsum("si,sj->sij", mu, mu)
        )


class GaussianConjugate(_GaussianBase):
    """Gaussian emissions with a normal-inverse-Wishart base measure."""

    family = "gaussian-conjugate"
    collapsible = True

    def __init__(self, prior: NIWParams, capacity: int = 16):
        super().__init__()
        self.prior = prior
        self.dim = prior.dim
        self._prior_logdet = np.linalg.slogdet(prior.scale)[1]
        self._reset_store(capacity)

    @classmethod
    def from_data(cls, Y, pseudocount=0.01, dof=3.0, scale_factor=0.75):
        """Base measure centred on the data: scale = factor * empirical covariance."""
        Y = np.asarray(Y, dtype=float)
        Y = Y[:, None] if Y.ndim == 1 else Y
        d = Y.shape[1]
        cov = np.atleast_2d(np.cov(Y, rowvar=False)) if Y.shape[0] > 1 else np.eye(d)
        return cls(NIWParams(pseudocount, Y.mean(axis=0), dof, scale_factor * cov))

    # -- slot store ------------------------------------------------------------
    def _reset_store(self, capacity):
        d = self.dim
        self.cnt = np.zeros(capacity)
        self.s1 = np.zeros((capacity, d))
        self.s2 = np.zeros((capacity, d, d))
        self._loc = np.zeros((capacity, d))
        self._prec = np.zeros((capacity, d, d))
        self._logc = np.zeros(capacity)
        self._dof = np.ones(capacity)
        self._active = np.zeros(capacity, dtype=bool)
        self.n_slots = capacity
        for slot in range(capacity):
            self._refresh(slot)

    def reset(self, capacity: int = 16):
        """Drop every slot and all cached statistics."""
        self._reset_store(max(int(capacity), 1))

    def _grow(self):
        old = self.n_slots
        new = 2 * old
        d = self.dim
        for name, shape in (
            ("cnt", (new,)), ("s1", (new, d)), ("s2", (new, d, d)),
            ("_loc", (new, d)), ("_prec", (new, d, d)), ("_logc", (new,)),
            ("_dof", (new,)), ("_active", (new,)),
        ):
            arr = getattr(self, name)
            grown = np.zeros(shape, dtype=arr.dtype)
            grown[:old] = arr
            setattr(self, name, grown)
        self.n_slots = new
        for slot in range(old, new):
            self._refresh(slot)

    def alloc(self) -> int:
        free = np.flatnonzero(~self._active)
        if free.size == 0:
            self._grow()
            free = np.flatnonzero(~self._active)
        slot = int(free[0])
        self._active[slot] = True
        return slot

    def free(self, slot: int):
        if self.cnt[slot] != 0:
            raise InvalidStateError("cannot free a slot that still holds data")
        self._active[slot] = False
        self.s1[slot] = 0.0
        self.s2[slot] = 0.0
        self._refresh(slot)

    def add(self, slot: int, y):
        y = np.asarray(y, dtype=float)
        self.cnt[slot] += 1
        self.s1[slot] += y
        self.s2[slot] += np.outer(y, y)
        self._refresh(slot)

    def remove(self, slot: int, y):
        if self.cnt[slot] <= 0:
            raise InvalidStateError("removing an observation from an empty slot")
        y = np.asarray(y, dtype=float)
        self.cnt[slot] -= 1
        if self.cnt[slot] == 0:
            self.s1[slot] = 0.0
            self.s2[slot] = 0.0
        else:
            self.s1[slot] -= y
            self.s2[slot] -= np.outer(y, y)
        self._refresh(slot)

    # -- posterior algebra -----------------------------------------------------
    def posterior(self, cnt, s1, s2):
        """Posterior NIW parameters (pseudocount, mean, dof, scale) for given stats."""
        p = self.prior
        zeta_bar = p.pseudocount + cnt
        nu_bar = p.dof + cnt
        mean_bar = (p.pseudocount * p.mean + s1) / zeta_bar
        if cnt > 0:
            xbar = s1 / cnt
            centred = s2 - cnt * np.outer(xbar, xbar)
            dev = xbar - p.mean
            scale_bar = p.scale + centred + (p.pseudocount * cnt / zeta_bar) * np.outer(dev, dev)
        else:
            scale_bar = p.scale.copy()
        return zeta_bar, mean_bar, nu_bar, 0.5 * (scale_bar + scale_bar.T)

    def _posterior_batch(self):
        p = self.prior
        cnt = self.cnt
        zeta_bar = p.pseudocount + cnt
        nu_bar = p.dof + cnt
        mean_bar = (p.pseudocount * p.mean[None, :] + self.s1) / zeta_bar[:, None]
        safe = np.maximum(cnt, 1.0)
        xbar = self.s1 / safe[:, None]
        centred = self.s2 - cnt[:, None, None] * np.einsum("si,sj->sij", xbar, xbar)
        dev = xbar - p.mean[None, :]
        shrink = p.pseudocount * cnt / zeta_bar
        scale_bar = (
            p.scale[None] + centred + shrink[:, None, None] * np.einsum("si,sj->sij", dev, dev)
        )
        scale_bar = 0.5 * (scale_bar + np.swapaxes(scale_bar, 1, 2))
        return zeta_bar, mean_bar, nu_bar, scale_bar

    def predictive_params(self, cnt, s1, s2):
        """Student-t (dof, location, shape) of the posterior predictive."""
        zeta_bar, mean_bar, nu_bar, scale_bar = self.posterior(cnt, s1, s2)
        dof = nu_bar - self.dim + 1.0
        shape = scale_bar * (zeta_bar + 1.0) / (zeta_bar * dof)
        return dof, mean_bar, shape

    def _refresh(self, slot):
        d = self.dim
        dof, loc, shape = self.predictive_params(self.cnt[slot], self.s1[slot], self.s2[slot])
        if d == 1:
            var = shape[0, 0]
            if not var > 0:
                raise DecompositionError("predictive scale is not positive")
            self._prec[slot, 0, 0] = 1.0 / var
            logdet = np.log(var)
        else:
            sign, logdet = np.linalg.slogdet(shape)
            if sign <= 0:
                raise DecompositionError("predictive scale is not positive definite")
            self._prec[slot] = np.linalg.inv(shape)
        self._loc[slot] = loc
        self._dof[slot] = dof
        self._logc[slot] = (
            gammaln(0.5 * (dof + d)) - gammaln(0.5 * dof)
            - 0.5 * d * (np.log(dof) + LOG_PI) - 0.5 * logdet
        )

    def predictive_logpdf(self, y, slots) -> np.ndarray:
        slots = np.asarray(slots, dtype=np.int64)
        y = np.asarray(y, dtype=float)
        diff = y[None, :] - self._loc[slots]
        if self.dim == 1:
            maha = diff[:, 0] ** 2 * self._prec[slots, 0, 0]
        else:
            maha = np.einsum("ki,kij,kj->k", diff, self._prec[slots], diff)
        dof = self._dof[slots]
        return self._logc[slots] - 0.5 * (dof + self.dim) * np.log1p(maha / dof)

    def prior_predictive_logpdf(self, y) -> float:
        dof, loc, shape = self.predictive_params(0.0, np.zeros(self.dim), np.zeros((self.dim,) * 2))
        return studentt_logpdf(y, dof, loc, shape)

    def log_marginal(self, slots) -> np.ndarray:
        """log p(all observations in each slot) with parameters integrated out."""
        p = self.prior
        d = self.dim
        out = []
        for slot in np.atleast_1d(slots):
            n = self.cnt[slot]
            zeta_bar, _, nu_bar, scale_bar = self.posterior(n, self.s1[slot], self.s2[slot])
            logdet_bar = np.linalg.slogdet(scale_bar)[1]
            out.append(
                -0.5 * n * d * LOG_PI
                + 0.5 * d * (np.log(p.pseudocount) - np.log(zeta_bar))
                + 0.5 * p.dof * self._prior_logdet
                - 0.5 * nu_bar * logdet_bar
                + multigammaln(0.5 * nu_bar, d)
                - multigammaln(0.5 * p.dof, d)
            )
        return np.asarray(out)

    # -- instantiated draws ----------------------------------------------------
    def sample_params(self, rng, tie: int = 1):
        """Posterior draws for every slot.

        With ``tie > 1``, consecutive groups of ``tie`` slots share one
        covariance.  The shared covariance is drawn with the component means
        integrated out, then each mean given it, which is an exact joint draw.
        """
        zeta_bar, mean_bar, nu_bar, scale_bar = self._posterior_batch()
        d = self.dim
        S = self.n_slots
        if tie == 1:
            Sigma = sample_inverse_wishart_batch(nu_bar, scale_bar, rng)
            cov = Sigma / zeta_bar[:, None, None]
        else:
            if S % tie:
                raise InvalidParameterError("slot count must be a multiple of tie")
            G = S // tie
            extra = (scale_bar - self.prior.scale[None]).reshape(G, tie, d, d).sum(axis=1)
            shared = sample_inverse_wishart_batch(
                self.prior.dof + self.cnt.reshape(G, tie).sum(axis=1),
                self.prior.scale[None] + extra,
                rng,
            )
            Sigma = np.repeat(shared, tie, axis=0)
            cov = Sigma / zeta_bar[:, None, None]
        chol = _batched_cholesky(cov, "posterior mean covariance")
        mu = mean_bar + np.einsum("sij,sj->si", chol, rng.standard_normal((S, d)))
        self.params = {"mu": mu, "Sigma": Sigma}
        return self.params

    def sample_prior_params(self, n_slots, rng, tie: int = 1):
        p = self.prior
        d = self.dim
        groups = n_slots // tie if tie > 1 else n_slots
        Sigma = sample_inverse_wishart_batch(
            p.dof, np.broadcast_to(p.scale, (groups, d, d)), rng
        )
        if tie > 1:
            Sigma = np.repeat(Sigma, tie, axis=0)
        chol = _batched_cholesky(Sigma / p.pseudocount, "prior covariance")
        mu = p.mean[None, :] + np.einsum("sij,sj->si", chol, rng.standard_normal((n_slots, d)))
        return {"mu": mu, "Sigma": Sigma}


class GaussianNonConjugate(_GaussianBase):
    """Gaussian emissions with independent Normal mean and inverse-Wishart covariance priors.

    Posterior draws alternate mean-given-covariance and covariance-given-mean
    updates ``inner_sweeps`` times, starting from the current parameters.
    """

    family = "gaussian-nonconjugate"
    collapsible = False

    def __init__(self, mean0, cov0, iw_dof, iw_scale, inner_sweeps: int = 5):
        super().__init__()
        self.mean0 = np.atleast_1d(np.asarray(mean0, dtype=float))
        self.cov0 = np.atleast_2d(np.asarray(cov0, dtype=float))
        self.iw_dof = float(iw_dof)
        self.iw_scale = np.atleast_2d(np.asarray(iw_scale, dtype=float))
        self.dim = self.mean0.shape[0]
        d = self.dim
        if self.cov0.shape != (d, d) or self.iw_scale.shape != (d, d):
            raise InvalidParameterError("prior matrices must be d x d")
        if not self.iw_dof > d - 1:
            raise InvalidParameterError(f"iw_dof must exceed {d - 1}")
        if inner_sweeps < 1:
            raise InvalidParameterError("inner_sweeps must be >= 1")
        _batched_cholesky(self.cov0[None], "mean prior covariance")
        _batched_cholesky(self.iw_scale[None], "inverse-Wishart scale")
        self.inner_sweeps = int(inner_sweeps)
        self._prec0 = np.linalg.inv(self.cov0)
        self._prec0_mean0 = self._prec0 @ self.mean0

    @classmethod
    def from_data(cls, Y, mean_cov_factor=0.75, dof=1000.0, expected_cov_factor=1.0,
                  inner_sweeps=5):
        """Data-centred priors: mean prior covariance and expected covariance scale the empirical covariance."""
        Y = np.asarray(Y, dtype=float)
        Y = Y[:, None] if Y.ndim == 1 else Y
        d = Y.shape[1]
        if dof <= d + 1:
            raise InvalidParameterError(
                f"an expected covariance needs dof > {d + 1} in dimension {d}, got {dof}")
        cov = np.atleast_2d(np.cov(Y, rowvar=False)) if Y.shape[0] > 1 else np.eye(d)
        return cls(
            Y.mean(axis=0), mean_cov_factor * cov, dof,
            (dof - d - 1) * expected_cov_factor * cov, inner_sweeps,
        )

    def _sample_means(self, Sigma_inv, rng):
        """mu_s | Sigma_s ~ N(Sbar (P0 m0 + Sigma^-1 S1), Sbar), Sbar = (P0 + n Sigma^-1)^-1."""
        post_prec = self._prec0[None] + self.cnt[:, None, None] * Sigma_inv
        post_cov = np.linalg.inv(post_prec)
        post_cov = 0.5 * (post_cov + np.swapaxes(post_cov, 1, 2))
        rhs = self._prec0_mean0[None, :] + np.einsum("sij,sj->si", Sigma_inv, self.s1)
        mean = np.einsum("sij,sj->si", post_cov, rhs)
        chol = _batched_cholesky(post_cov, "mean posterior covariance")
        return mean + np.einsum("sij,sj->si", chol, rng.standard_normal(mean.shape))

    def _initial_sigma(self, rng, tie):
        if self.params is not None and self.params["Sigma"].shape[0] == self.n_slots:
            return self.params["Sigma"]
        return self.sample_prior_params(self.n_slots, rng, tie)["Sigma"]

    def sample_params(self, rng, tie: int = 1):
        S, d = self.n_slots, self.dim
        if tie > 1 and S % tie:
            raise InvalidParameterError("slot count must be a multiple of tie")
        Sigma = self._initial_sigma(rng, tie)
        for _ in range(self.inner_sweeps):
            mu = self._sample_means(np.linalg.inv(Sigma), rng)
            scatter = self._scatter_about(mu)
            if tie == 1:
                Sigma = sample_inverse_wishart_batch(
                    self.iw_dof + self.cnt, self.iw_scale[None] + scatter, rng
                )
            else:
                G = S // tie
                shared = sample_inverse_wishart_batch(
                    self.iw_dof + self.cnt.reshape(G, tie).sum(axis=1),
                    self.iw_scale[None] + scatter.reshape(G, tie, d, d).sum(axis=1),
                    rng,
                )
                Sigma = np.repeat(shared, tie, axis=0)
        mu = self._sample_means(np.linalg.inv(Sigma), rng)
        self.params = {"mu": mu, "Sigma": Sigma}
        return self.params

    def sample_prior_params(self, n_slots, rng, tie: int = 1):
        d = self.dim
        groups = n_slots // tie if tie > 1 else n_slots
        Sigma = sample_inverse_wishart_batch(
            self.iw_dof, np.broadcast_to(self.iw_scale, (groups, d, d)), rng
        )
        if tie > 1:
            Sigma = np.repeat(Sigma, tie, axis=0)
        chol = np.linalg.cholesky(self.cov0)
        mu = self.mean0[None, :] + rng.standard_normal((n_slots, d)) @ chol.T
        return {"mu": mu, "Sigma": Sigma}


class MultinomialDirichlet(EmissionFamily):
    """Categorical emissions over ``vocab`` symbols with a Dirichlet prior.

    Symbols are 0-based integers.
    """

    family = "multinomial"
    collapsible = True

    def __init__(self, vocab: int, concentration=1.0, capacity: int = 16):
        super().__init__()
        if vocab < 2:
            raise InvalidParameterError("vocab must be at least 2")
        lam = np.broadcast_to(np.asarray(concentration, dtype=float), (vocab,)).copy()
        if np.any(lam <= 0):
            raise InvalidParameterError("Dirichlet concentration must be positive")
        self.vocab = int(vocab)
        self.lam = lam
        self.lam_total = lam.sum()
        self.reset(capacity)

    def validate(self, Y):
        Y = np.asarray(Y)
        if Y.ndim == 2 and Y.shape[1] == 1:
            Y = Y[:, 0]
        if Y.ndim != 1:
            raise InvalidParameterError("multinomial observations must be a 1-D symbol array")
        if not np.all(np.equal(np.mod(Y, 1), 0)):
            raise InvalidParameterError("multinomial observations must be integers")
        Y = Y.astype(np.int64)
        if Y.size and (Y.min() < 0 or Y.max() >= self.vocab):
            raise InvalidParameterError(f"symbols must lie in [0, {self.vocab})")
        return Y

    def reset(self, capacity: int = 16):
        capacity = max(int(capacity), 1)
        self.counts = np.zeros((capacity, self.vocab))
        self.cnt = np.zeros(capacity)
        self._active = np.zeros(capacity, dtype=bool)
        self.n_slots = capacity

    def alloc(self) -> int:
        free = np.flatnonzero(~self._active)
        if free.size == 0:
            old = self.n_slots
            self.counts = np.vstack([self.counts, np.zeros_like(self.counts)])
            self.cnt = np.concatenate([self.cnt, np.zeros(old)])
            self._active = np.concatenate([self._active, np.zeros(old, dtype=bool)])
            self.n_slots = 2 * old
            free = np.array([old])
        slot = int(free[0])
        self._active[slot] = True
        return slot

    def free(self, slot):
        if self.cnt[slot] != 0:
            raise InvalidStateError("cannot free a slot that still holds data")
        self._active[slot] = False

    def add(self, slot, y):
        self.counts[slot, int(y)] += 1
        self.cnt[slot] += 1

    def remove(self, slot, y):
        if self.counts[slot, int(y)] <= 0:
            raise InvalidStateError("removing a symbol that was never added")
        self.counts[slot, int(y)] -= 1
        self.cnt[slot] -= 1

    def predictive_logpdf(self, y, slots):
        slots = np.asarray(slots, dtype=np.int64)
        y = int(np.asarray(y).ravel()[0]) if np.ndim(y) else int(y)
        return np.log(self.lam[y] + self.counts[slots, y]) - np.log(
            self.lam_total + self.cnt[slots]
        )

    def prior_predictive_logpdf(self, y):
        y = int(np.asarray(y).ravel()[0]) if np.ndim(y) else int(y)
        return float(np.log(self.lam[y] / self.lam_total))

    def log_marginal(self, slots):
        slots = np.atleast_1d(slots)
        c = self.counts[slots]
        return (
            gammaln(self.lam_total) - gammaln(self.lam_total + self.cnt[slots])
            + (gammaln(self.lam[None] + c) - gammaln(self.lam[None])).sum(axis=1)
        )

    def set_assignments(self, Y, labels, n_slots):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= n_slots):
            raise InvalidStateError("slot label out of range")
        self.n_slots = n_slots
        flat = np.bincount(labels * self.vocab + Y, minlength=n_slots * self.vocab)
        self.counts = flat.reshape(n_slots, self.vocab).astype(float)
        self.cnt = self.counts.sum(axis=1)
        self._active = np.ones(n_slots, dtype=bool)

    def sample_params(self, rng, tie: int = 1):
        probs = sample_dirichlet_rows(self.lam[None] + self.counts, rng)
        self.params = {"logp": np.log(np.maximum(probs, 1e-300))}
        return self.params

    def sample_prior_params(self, n_slots, rng, tie: int = 1):
        probs = sample_dirichlet_rows(np.broadcast_to(self.lam, (n_slots, self.vocab)), rng)
        return {"logp": np.log(np.maximum(probs, 1e-300))}

    def loglik(self, Y, params=None):
        p = self.params if params is None else params
        return p["logp"][:, Y].T

    def draw_observations(self, labels, rng, params=None):
        p = self.params if params is None else params
        probs = np.exp(p["logp"][np.asarray(labels, dtype=np.int64)])
        cdf = np.cumsum(probs, axis=1)
        u = rng.random(len(cdf)) * cdf[:, -1]
        return np.minimum((cdf < u[:, None]).sum(axis=1), self.vocab - 1)


class DPMixGaussian:
    """Per-state Gaussian mixtures with ``Lprime`` components per state.

    Wraps a Gaussian base family whose slots are laid out as
    ``state * Lprime + component``.  With ``tied`` every component of a state
    shares one covariance matrix.
    """

    family = "dp-gaussian"

    def __init__(self, base: _GaussianBase, Lprime: int, tied: bool = False):
        if Lprime < 1:
            raise InvalidParameterError("Lprime must be >= 1")
        if not isinstance(base, _GaussianBase):
            raise InvalidParameterError("mixture components must be Gaussian")
        self.base = base
        self.Lprime = int(Lprime)
        self.tied = bool(tied)
        self.dim = base.dim

    @property
    def collapsible(self):
        return self.base.collapsible and not self.tied

    @property
    def tie(self):
        return self.Lprime if self.tied else 1

    @property
    def params(self):
        return self.base.params

    def validate(self, Y):
        return self.base.validate(Y)

    def slot(self, z, s):
        return np.asarray(z) * self.Lprime + np.asarray(s)

    def set_assignments(self, Y, z, s, n_states):
        self.base.set_assignments(Y, self.slot(z, s), n_states * self.Lprime)

    def sample_params(self, rng):
        return self.base.sample_params(rng, tie=self.tie)

    def sample_prior_params(self, n_states, rng):
        return self.base.sample_prior_params(n_states * self.Lprime, rng, tie=self.tie)

    def loglik(self, Y, params=None):
        """(N, L * Lprime) log-densities, one column per (state, component)."""
        return self.base.loglik(Y, params)

    def draw_observations(self, z, s, rng, params=None):
        return self.base.draw_observations(self.slot(z, s), rng, params)

    def get_state(self):
        return {"family": self.family, "Lprime": self.Lprime, "tied": self.tied,
                "params": self.base.params}

    def set_state(self, state):
        self.base.params = state.get("params")
