"""Probability primitives: samplers and log-densities.

Every sampler takes a caller-owned :class:`numpy.random.Generator`; no
function here touches global random state, so a fixed seed and a fixed call
sequence reproduce outputs bit-for-bit.

Inverse-Wishart convention
--------------------------
``IW(dof, scale)`` has density proportional to
``|S|^{-(dof+d+1)/2} exp(-tr(scale S^{-1})/2)`` and mean
``scale / (dof - d - 1)``.  The normal-inverse-Wishart ``scale`` is the
*product* dof * Delta in the common ``NIW(pseudocount, mean, dof, Delta)``
notation, so ``NIWParams(scale=0.75 * S, dof=3)`` means "scale matrix equal
to 0.75 times the empirical covariance with three degrees of freedom".

The NIW pseudocount is the prior sample size attached to the mean.  It is
unrelated to the binary auxiliary indicator used by the indicator form of the
top-level concentration update in :mod:`stickyhdp.hyper`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, logsumexp

from ._hmm import crt_counts
from .exceptions import (
    DecompositionError,
    DegenerateDistributionError,
    InvalidParameterError,
)

MAX_STIRLING_N = 60

__all__ = [
    "NIWParams",
    "as_generator",
    "antoniak_pmf",
    "log_stirling_first",
    "sample_bernoulli",
    "sample_beta",
    "sample_binomial",
    "sample_categorical_log",
    "sample_crt",
    "sample_crt_many",
    "sample_dirichlet",
    "sample_dirichlet_rows",
    "sample_gamma",
    "sample_inverse_wishart",
    "sample_inverse_wishart_batch",
    "sample_mvnormal",
    "sample_niw",
    "sample_stick_breaking",
    "studentt_logpdf",
    "gaussian_logpdf",
]


def as_generator(seed=None) -> np.random.Generator:
    """Return ``seed`` if it already is a Generator, else a fresh PCG64 one."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class NIWParams:
    """Normal-inverse-Wishart hyperparameters.

    ``Sigma ~ IW(dof, scale)`` and ``mu | Sigma ~ N(mean, Sigma / pseudocount)``.
    """

    pseudocount: float
    mean: np.ndarray
    dof: float
    scale: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        d = self.mean.shape[0]
        if self.scale.shape != (d, d):
            raise InvalidParameterError(
                f"scale must be {d}x{d}, got {self.scale.shape}"
            )
        if not np.allclose(self.scale, self.scale.T, rtol=0, atol=1e-12):
            raise InvalidParameterError("scale matrix is not symmetric")
        if not self.pseudocount > 0:
            raise InvalidParameterError("pseudocount must be positive")
        if not self.dof > d - 1:
            raise InvalidParameterError(f"dof must exceed {d - 1}, got {self.dof}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _check_positive_vector(alpha, name="alpha", allow_zero=False):
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1:
        raise InvalidParameterError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(alpha)):
        raise InvalidParameterError(f"{name} has non-finite entries")
    if allow_zero:
        if np.any(alpha < 0) or not np.any(alpha > 0):
            raise InvalidParameterError(f"{name} must be >= 0 with a positive entry")
    elif np.any(alpha <= 0):
        raise InvalidParameterError(f"{name} entries must be positive")
    return alpha


def _log_gamma_variates(shape, rng):
    """log of Gamma(shape, 1) draws, stable for shapes far below one.

    Uses Gamma(a) = Gamma(a + 1) * U**(1/a) for a < 1, which keeps draws with
    tiny shapes representable in log space instead of underflowing to zero.
    Zero shapes give -inf.
    """
    given = np.asarray(shape, dtype=float)
    shape = np.atleast_1d(given)
    small = shape < 1.0
    g = rng.standard_gamma(np.where(small, shape + 1.0, shape))
    u = rng.random(shape.shape)
    out = np.log(g)
    if small.any():
        positive = small & (shape > 0)
        out[positive] += np.log(u[positive]) / shape[positive]
        out[shape <= 0] = -np.inf
    return out.reshape(given.shape)


def sample_dirichlet(alpha, rng, allow_zero: bool = False) -> np.ndarray:
    """Draw from Dirichlet(alpha).

    With ``allow_zero`` the zero-parameter cells get exactly zero mass, which
    is how the degenerate ``Dir(0, ..., 0, gamma)`` posterior arises in the
    direct-assignment sampler.
    """
    alpha = _check_positive_vector(alpha, allow_zero=allow_zero)
    if alpha.size < 2:
        raise InvalidParameterError("Dirichlet needs at least two cells")
    logg = _log_gamma_variates(alpha, rng)
    w = np.exp(logg - logsumexp(logg))
    return w / w.sum()


def sample_dirichlet_rows(alpha, rng) -> np.ndarray:
    """Independent Dirichlet draws, one per row of a 2-D parameter array."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 2 or alpha.shape[1] < 2:
        raise InvalidParameterError("alpha must be 2-D with at least two columns")
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise InvalidParameterError("alpha entries must be positive and finite")
    logg = _log_gamma_variates(alpha, rng)
    w = np.exp(logg - logsumexp(logg, axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


def sample_stick_breaking(concentration: float, truncation: int, rng) -> np.ndarray:
    """First ``truncation`` GEM(concentration) weights plus the leftover mass.

    The returned vector has ``truncation + 1`` entries; the last one is the
    unbroken remainder of the stick, so the whole vector sums to one.
    """
    if not concentration > 0 or not np.isfinite(concentration):
        raise InvalidParameterError("concentration must be positive")
    if truncation < 1 or int(truncation) != truncation:
        raise InvalidParameterError("truncation must be a positive integer")
    v = rng.beta(1.0, concentration, size=int(truncation))
    with np.errstate(divide="ignore"):
        log_v = np.log(v)
        log_rest = np.log1p(-v)
    cum = np.concatenate([[0.0], np.cumsum(log_rest)])
    weights = np.exp(np.concatenate([log_v + cum[:-1], [cum[-1]]]))
    return weights / weights.sum()


def sample_crt(n: int, concentration: float, rng) -> int:
    """Number of occupied tables after ``n`` Chinese-restaurant seatings.

    Customer ``i`` (0-based) opens a new table with probability
    ``c / (c + i)``; the first customer always does.
    """
    if n < 0 or int(n) != n:
        raise InvalidParameterError("n must be a non-negative integer")
    if not concentration > 0:
        raise InvalidParameterError("concentration must be positive")
    n = int(n)
    if n == 0:
        return 0
    i = np.arange(1, n)
    u = rng.random(n - 1)
    return 1 + int(np.count_nonzero(u < concentration / (concentration + i)))


def sample_crt_many(counts, concentrations, rng) -> np.ndarray:
    """Vectorised :func:`sample_crt` over matching arrays of counts/concentrations.

    Cells with zero count return zero and consume no randomness.
    """
    counts = np.asarray(counts)
    conc = np.broadcast_to(np.asarray(concentrations, dtype=float), counts.shape)
    flat_n = counts.ravel().astype(np.int64)
    if np.any(flat_n < 0):
        raise InvalidParameterError("counts must be non-negative")
    flat_c = conc.ravel()
    if np.any((flat_n > 0) & ~(flat_c > 0)):
        raise InvalidParameterError("concentration must be positive where count > 0")
    total = int(flat_n.sum())
    out = np.zeros(flat_n.shape, dtype=np.int64)
    if total == 0:
        return out.reshape(counts.shape)
    out = crt_counts(flat_n, np.ascontiguousarray(flat_c), rng.random(total))
    return out.reshape(counts.shape)


def log_stirling_first(n: int) -> np.ndarray:
    """Row ``n`` of the unsigned Stirling numbers of the first kind, in log space.

    Entry ``m`` holds ``log s(n, m)`` for ``m = 0..n`` (``-inf`` where zero).
    """
    if n < 0 or n > MAX_STIRLING_N:
        raise InvalidParameterError(f"n must lie in [0, {MAX_STIRLING_N}]")
    row = np.array([0.0])
    for k in range(n):
        nxt = np.full(k + 2, -np.inf)
        # s(k+1, m) = k s(k, m) + s(k, m-1)
        with np.errstate(divide="ignore"):
            nxt[: k + 1] = row + np.log(k) if k > 0 else -np.inf
        nxt[1:] = np.logaddexp(nxt[1:], row)
        row = nxt
    return row


def antoniak_pmf(n: int, concentration: float) -> np.ndarray:
    """Exact law of the number of tables after ``n`` seatings.

    Returns a vector of length ``n + 1`` indexed by table count.
    """
    if n < 0 or int(n) != n:
        raise InvalidParameterError("n must be a non-negative integer")
    if n > MAX_STIRLING_N:
        raise InvalidParameterError(
            f"exact pmf supported for n <= {MAX_STIRLING_N}; simulate with sample_crt"
        )
    if not concentration > 0:
        raise InvalidParameterError("concentration must be positive")
    n = int(n)
    m = np.arange(n + 1)
    logp = (
        log_stirling_first(n)
        + m * np.log(concentration)
        + gammaln(concentration)
        - gammaln(concentration + n)
    )
    p = np.exp(logp - logsumexp(logp))
    return p / p.sum()


def _cholesky(matrix, what="matrix"):
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"{what} is not positive definite") from exc


def studentt_logpdf(y, dof: float, location, scale) -> float:
    """Log-density of a multivariate Student-t with shape matrix ``scale``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    loc = np.atleast_1d(np.asarray(location, dtype=float))
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    if not dof > 0:
        raise InvalidParameterError("dof must be positive")
    d = loc.shape[0]
    chol = _cholesky(scale, "Student-t scale")
    diff = solve_triangular(chol, y - loc, lower=True)
    maha = float(diff @ diff)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(
        gammaln((dof + d) / 2.0)
        - gammaln(dof / 2.0)
        - 0.5 * d * np.log(dof * np.pi)
        - 0.5 * logdet
        - 0.5 * (dof + d) * np.log1p(maha / dof)
    )


def gaussian_logpdf(y, mean, cov) -> float:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    chol = _cholesky(np.atleast_2d(cov), "covariance")
    diff = solve_triangular(chol, y - mean, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (len(y) * np.log(2 * np.pi) + logdet + diff @ diff))


def sample_beta(a: float, b: float, rng) -> float:
    if not (a > 0 and b > 0):
        raise InvalidParameterError("Beta parameters must be positive")
    return float(rng.beta(a, b))


def sample_log_beta(a, b, rng) -> np.ndarray:
    """log of Beta(a, b) draws computed from log-Gamma variates.

    A plain Beta draw with a tiny first shape can round to exactly zero.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    both = _log_gamma_variates(np.concatenate([a.ravel(), b.ravel()]), rng)
    la, lb = both[:a.size].reshape(a.shape), both[a.size:].reshape(a.shape)
    return la - np.logaddexp(la, lb)


def sample_gamma(shape: float, rate: float, rng) -> float:
    """Gamma draw parameterised by shape and *rate* (mean shape/rate)."""
    if not (shape > 0 and rate > 0):
        raise InvalidParameterError("Gamma shape and rate must be positive")
    return float(rng.gamma(shape, 1.0 / rate))


def sample_binomial(n: int, p: float, rng) -> int:
    if n < 0 or not 0.0 <= p <= 1.0:
        raise InvalidParameterError("need n >= 0 and p in [0, 1]")
    return int(rng.binomial(int(n), p))


def sample_bernoulli(p: float, rng) -> int:
    if not 0.0 <= p <= 1.0:
        raise InvalidParameterError("p must lie in [0, 1]")
    return int(rng.random() < p)


def sample_mvnormal(mean, cov, rng) -> np.ndarray:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    chol = _cholesky(np.atleast_2d(cov), "covariance")
    return mean + chol @ rng.standard_normal(mean.shape[0])


def _bartlett_factor(dof, d, size, rng):
    """Lower-triangular Bartlett factors A with A A^T ~ Wishart(dof, I)."""
    a = np.zeros((size, d, d))
    idx = np.arange(d)
    a[:, idx, idx] = np.sqrt(rng.chisquare(np.asarray(dof)[:, None] - idx[None, :]))
    tril = np.tril_indices(d, -1)
    if len(tril[0]):
        a[:, tril[0], tril[1]] = rng.standard_normal((size, len(tril[0])))
    return a


def sample_inverse_wishart_batch(dof, scale, rng) -> np.ndarray:
    """Independent IW(dof[i], scale[i]) draws for a stack of ``n`` scales.

    ``scale`` has shape (n, d, d); ``dof`` is scalar or shape (n,).
    """
    scale = np.asarray(scale, dtype=float)
    if scale.ndim != 3 or scale.shape[1] != scale.shape[2]:
        raise InvalidParameterError("scale must have shape (n, d, d)")
    n, d, _ = scale.shape
    dof = np.broadcast_to(np.asarray(dof, dtype=float), (n,)).copy()
    if np.any(dof <= d - 1):
        raise InvalidParameterError(f"dof must exceed {d - 1}")
    if n == 0:
        return scale.copy()
    chol = _cholesky(scale, "inverse-Wishart scale")
    a = _bartlett_factor(dof, d, n, rng)
    if d == 1:
        return chol**2 / a**2
    # Sigma = (C A^{-T})(C A^{-T})^T where scale = C C^T.
    x = np.linalg.solve(a, np.swapaxes(chol, 1, 2))
    out = np.swapaxes(x, 1, 2) @ x
    return 0.5 * (out + np.swapaxes(out, 1, 2))


def sample_inverse_wishart(dof: float, scale, rng) -> np.ndarray:
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    return sample_inverse_wishart_batch(dof, scale[None], rng)[0]


def sample_niw(params: NIWParams, rng):
    """Draw (mean, covariance) from a normal-inverse-Wishart."""
    sigma = sample_inverse_wishart(params.dof, params.scale, rng)
    mu = sample_mvnormal(params.mean, sigma / params.pseudocount, rng)
    return mu, sigma


def sample_categorical_log(logweights, rng) -> int:
    """Index drawn with probability proportional to ``exp(logweights)``."""
    lw = np.asarray(logweights, dtype=float)
    if lw.ndim != 1 or lw.size == 0:
        raise InvalidParameterError("logweights must be a non-empty vector")
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise InvalidParameterError("logweights contain NaN or +inf")
    top = lw.max()
    if top == -np.inf:
        raise DegenerateDistributionError("all categorical weights are zero")
    cdf = np.cumsum(np.exp(lw - top))
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), lw.size - 1))


def sample_categorical(probs, rng, *, total: Optional[float] = None) -> int:
    """Linear-domain counterpart of :func:`sample_categorical_log`."""
    cdf = np.cumsum(probs)
    norm = cdf[-1] if total is None else total
    if not norm > 0:
        raise DegenerateDistributionError("all categorical weights are zero")
    return int(min(np.searchsorted(cdf, rng.random() * norm, side="right"), len(cdf) - 1))
