"""scikit-learn style front end for the samplers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .blocked import PI_FLOOR, BlockedSampler, mixture_state_loglik
from .direct import DirectAssignmentSampler
from .emissions import (
    DPMixGaussian,
    GaussianConjugate,
    GaussianNonConjugate,
    MultinomialDirichlet,
)
from .exceptions import ConfigError
from .kernel import as_generator
from .metrics import predictive_loglik
from .model import HyperPriors, Hyperparams

SAMPLERS = ("direct", "direct-dp", "blocked", "blocked-dp")
EMISSIONS = ("gaussian", "gaussian-nonconjugate", "multinomial")


def build_emission(emission, X, *, vocab=None, pseudocount=0.01, dof=3.0, scale_factor=0.75,
                   mean_cov_factor=1.0, expected_cov_factor=0.75, inner_sweeps=5,
                   dirichlet=1.0):
    """Emission family with a base measure set from the data's moments."""
    if emission == "gaussian":
        return GaussianConjugate.from_data(X, pseudocount, dof, scale_factor)
    if emission == "gaussian-nonconjugate":
        return GaussianNonConjugate.from_data(X, mean_cov_factor, dof, expected_cov_factor,
                                              inner_sweeps)
    if emission == "multinomial":
        if vocab is None:
            vocab = int(np.max(X)) + 1
        return MultinomialDirichlet(vocab, dirichlet)
    raise ConfigError(f"unknown emission {emission!r}; choose from {EMISSIONS}")


class StickyHDPHMM(BaseEstimator):
    """Sticky HDP-HMM fitted by Gibbs sampling.

    After ``fit`` the estimator exposes ``labels_`` (final state per
    observation), ``trace_`` (one record per sweep), ``samples_`` (label
    paths kept after ``burn_in`` every ``thin`` sweeps), ``hyper_`` and
    ``sampler_``.
    """

    def __init__(self, sampler="blocked", emission="gaussian", L=20, Lprime=20,
                 n_sweeps=1000, sticky=True, learn_hyper=True, fixed_beta=False, tied=False,
                 gamma=1.0, alpha_plus_kappa=1.0, rho=0.5, sigma=1.0, priors=None,
                 pseudocount=0.01, dof=3.0, scale_factor=0.75, mean_cov_factor=1.0,
                 expected_cov_factor=0.75, dirichlet=1.0, vocab=None, burn_in=None,
                 thin=1, hyper_from_prior=False, random_state=None):
        self.sampler = sampler
        self.emission = emission
        self.L = L
        self.Lprime = Lprime
        self.n_sweeps = n_sweeps
        self.sticky = sticky
        self.learn_hyper = learn_hyper
        self.fixed_beta = fixed_beta
        self.tied = tied
        self.gamma = gamma
        self.alpha_plus_kappa = alpha_plus_kappa
        self.rho = rho
        self.sigma = sigma
        self.priors = priors
        self.pseudocount = pseudocount
        self.dof = dof
        self.scale_factor = scale_factor
        self.mean_cov_factor = mean_cov_factor
        self.expected_cov_factor = expected_cov_factor
        self.dirichlet = dirichlet
        self.vocab = vocab
        self.burn_in = burn_in
        self.thin = thin
        self.hyper_from_prior = hyper_from_prior
        self.random_state = random_state

    def _make_sampler(self, X):
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"unknown sampler {self.sampler!r}; choose from {SAMPLERS}")
        hp = Hyperparams(self.gamma, self.alpha_plus_kappa, self.rho if self.sticky else 0.0,
                         self.sigma, self.priors or HyperPriors())
        family = build_emission(
            self.emission, X, vocab=self.vocab, pseudocount=self.pseudocount, dof=self.dof,
            scale_factor=self.scale_factor, mean_cov_factor=self.mean_cov_factor,
            expected_cov_factor=self.expected_cov_factor, dirichlet=self.dirichlet,
        )
        dp = self.sampler.endswith("-dp")
        if dp and self.emission == "multinomial":
            raise ConfigError("mixture emissions need a Gaussian family")
        if self.sampler.startswith("direct"):
            return DirectAssignmentSampler(family, hp, dp=dp, learn_hyper=self.learn_hyper,
                                           sticky=self.sticky)
        if dp:
            family = DPMixGaussian(family, self.Lprime, tied=self.tied)
        return BlockedSampler(family, self.L, hp, sticky=self.sticky,
                              fixed_beta=self.fixed_beta, learn_hyper=self.learn_hyper)

    def fit(self, X, y=None, groups=None, callback=None):
        """Run ``n_sweeps`` sweeps; ``groups`` ties consecutive observations to one state."""
        rng = as_generator(self.random_state)
        X = np.asarray(X)
        s = self._make_sampler(X)
        if isinstance(s, DirectAssignmentSampler):
            if groups is not None:
                raise ConfigError("the direct-assignment sampler does not support tied frames")
            s.initialize(X, rng)
        else:
            s.initialize(X, rng, groups=groups, hyper_from_prior=self.hyper_from_prior)
        burn = self.n_sweeps // 2 if self.burn_in is None else self.burn_in
        self.trace_, self.samples_ = [], []
        for it in range(1, self.n_sweeps + 1):
            rep = s.sweep(rng)
            hp = s.hyper
            record = {
                "iter": it,
                "loglik": float(rep.loglik),
                "K": int(rep.K),
                "gamma": hp.gamma,
                "alpha_plus_kappa": hp.alpha_plus_kappa,
                "rho": hp.rho,
                "sigma": hp.sigma,
            }
            self.trace_.append(record)
            if it > burn and (it - burn) % self.thin == 0:
                self.samples_.append(self._frame_labels(s).copy())
            if callback is not None:
                callback(it, s, record)
        self.sampler_ = s
        self.hyper_ = s.hyper.copy()
        self.labels_ = self._frame_labels(s)
        self.n_features_in_ = 1 if X.ndim == 1 else X.shape[1]
        return self

    @staticmethod
    def _frame_labels(s):
        if isinstance(s, BlockedSampler):
            return s.frame_z
        return s.z

    # ------------------------------------------------------------- prediction
    def _model_for_scoring(self, X):
        """(init, transition matrix, per-step log-likelihood) under the final state."""
        s = self.sampler_
        X = s.emission.validate(X)
        if isinstance(s, BlockedSampler):
            ll = s.emission.loglik(X)
            if s.dp:
                ll = mixture_state_loglik(ll, np.log(np.maximum(s.psi, PI_FLOOR)))
            return s.beta, s.pi, ll
        hp = s.hyper
        K = s.K
        conc = hp.alpha * np.broadcast_to(s.beta[:K], (K, K)).copy()
        conc[np.diag_indices(K)] += hp.kappa
        pi = conc + s.n
        pi /= pi.sum(axis=1, keepdims=True)
        init = s.beta[:K] / s.beta[:K].sum()
        if s.dp:
            raise ConfigError("scoring a direct mixture fit is not supported; use blocked-dp")
        slots = np.asarray(s.state_slot, dtype=np.int64)
        ll = np.array([s.emission.predictive_logpdf(x, slots) for x in X])
        return init, pi, ll

    def score(self, X, y=None):
        """Log-likelihood of a sequence under the final sampled parameters."""
        check_is_fitted(self, "sampler_")
        init, pi, ll = self._model_for_scoring(X)
        return predictive_loglik(ll, pi, init)

    def predict(self, X):
        """Most probable state of each observation under the final parameters."""
        check_is_fitted(self, "sampler_")
        init, pi, ll = self._model_for_scoring(X)
        T, L = ll.shape
        fwd = np.empty((T, L))
        a = init * np.exp(ll[0] - ll[0].max())
        fwd[0] = a / a.sum()
        for t in range(1, T):
            a = (fwd[t - 1] @ pi) * np.exp(ll[t] - ll[t].max())
            fwd[t] = a / a.sum()
        post = np.empty((T, L))
        b = np.ones(L)
        for t in range(T - 1, -1, -1):
            p = fwd[t] * b
            post[t] = p / p.sum()
            b = pi @ (np.exp(ll[t] - ll[t].max()) * b)
            b /= b.sum()
        return post.argmax(axis=1)
