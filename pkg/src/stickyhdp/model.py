"""Core state containers: hyperparameters, count tables and chain state."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .exceptions import (
    FormatError,
    InternalConsistencyError,
    InvalidParameterError,
    InvalidStateError,
)

SNAPSHOT_FORMAT = "stickyhdp-state"
SNAPSHOT_VERSION = 1


@dataclass
class HyperPriors:
    """Gamma(shape, rate) priors on the concentrations and Beta(c, d) on rho."""

    gamma_shape: float = 1.0
    gamma_rate: float = 0.01
    apk_shape: float = 1.0
    apk_rate: float = 0.01
    sigma_shape: float = 1.0
    sigma_rate: float = 0.01
    rho_c: float = 10.0
    rho_d: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{f.name} must be positive, got {value}")


@dataclass
class Hyperparams:
    """Concentrations and the self-transition proportion.

    ``alpha`` and ``kappa`` are derived: ``alpha = (1 - rho) * (alpha + kappa)``
    and ``kappa = rho * (alpha + kappa)``.
    """

    gamma: float = 1.0
    alpha_plus_kappa: float = 1.0
    rho: float = 0.5
    sigma: float = 1.0
    priors: HyperPriors = field(default_factory=HyperPriors)

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidParameterError("gamma must be positive")
        if not self.alpha_plus_kappa > 0:
            raise InvalidParameterError("alpha_plus_kappa must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidParameterError("rho must lie in [0, 1]")
        if not self.sigma > 0:
            raise InvalidParameterError("sigma must be positive")

    @property
    def alpha(self) -> float:
        return (1.0 - self.rho) * self.alpha_plus_kappa

    @property
    def kappa(self) -> float:
        return self.rho * self.alpha_plus_kappa

    @classmethod
    def from_alpha_kappa(cls, alpha, kappa, gamma=1.0, sigma=1.0, priors=None):
        total = alpha + kappa
        if alpha < 0 or kappa < 0 or not total > 0:
            raise InvalidParameterError("alpha and kappa must be >= 0 with positive sum")
        return cls(
            gamma=gamma,
            alpha_plus_kappa=total,
            rho=kappa / total,
            sigma=sigma,
            priors=priors or HyperPriors(),
        )

    def copy(self) -> "Hyperparams":
        return Hyperparams(
            self.gamma, self.alpha_plus_kappa, self.rho, self.sigma,
            HyperPriors(**asdict(self.priors)),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        d = dict(d)
        priors = HyperPriors(**d.pop("priors", {}))
        return cls(priors=priors, **d)


@dataclass
class CountTables:
    """Transition, component and restaurant-table tallies.

    ``n[j, k]`` counts transitions j -> k, ``n_prime[k, c]`` counts frames of
    state k assigned to mixture component c, ``m`` holds served-table counts,
    ``w`` per-restaurant override totals and ``mbar`` considered-table counts.
    """

    n: np.ndarray
    n_prime: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    mbar: Optional[np.ndarray] = None

    def check(self):
        """Raise if the table invariants are violated."""
        n = self.n
        if self.m is not None:
            if np.any(self.m > n) or np.any((n > 0) & (self.m < 1)):
                raise InternalConsistencyError("m outside [min(1, n), n]")
        if self.w is not None and self.m is not None:
            if np.any(self.w < 0) or np.any(self.w > np.diag(self.m)):
                raise InternalConsistencyError("override count exceeds m_jj")
        if self.mbar is not None:
            expected = self.m - np.diag(self.w)
            if not np.array_equal(self.mbar, expected):
                raise InternalConsistencyError("mbar != m - diag(w)")


def recount(z, s=None, L: Optional[int] = None, Lprime: Optional[int] = None) -> CountTables:
    """Recompute transition (and component) counts from label sequences."""
    z = np.asarray(z, dtype=np.int64)
    if z.ndim != 1:
        raise InvalidStateError("z must be one-dimensional")
    if L is None:
        L = int(z.max()) + 1 if z.size else 0
    if z.size and (z.min() < 0 or z.max() >= L):
        raise InvalidStateError(f"state label outside [0, {L})")
    n = np.zeros((L, L), dtype=np.int64)
    if z.size > 1:
        np.add.at(n, (z[:-1], z[1:]), 1)
    n_prime = None
    if s is not None:
        s = np.asarray(s, dtype=np.int64)
        if s.shape != z.shape:
            raise InvalidStateError("s must match z in length")
        if Lprime is None:
            Lprime = int(s.max()) + 1 if s.size else 0
        if s.size and (s.min() < 0 or s.max() >= Lprime):
            raise InvalidStateError(f"component label outside [0, {Lprime})")
        n_prime = np.zeros((L, Lprime), dtype=np.int64)
        np.add.at(n_prime, (z, s), 1)
    return CountTables(n=n, n_prime=n_prime)


def expected_transition_row(beta, hp: Hyperparams, j: int) -> np.ndarray:
    """Prior mean of transition row ``j``: (alpha beta + kappa e_j) / (alpha + kappa)."""
    beta = np.asarray(beta, dtype=float)
    row = (1.0 - hp.rho) * beta
    row[j] += hp.rho
    return row


def transition_row_prior(beta, hp: Hyperparams, j: int, L: Optional[int] = None) -> np.ndarray:
    """Dirichlet parameters of transition row ``j``: alpha beta + kappa e_j."""
    beta = np.asarray(beta, dtype=float)
    if L is not None and beta.shape[0] != L:
        raise InvalidParameterError(f"beta must have length {L}")
    row = hp.alpha * beta
    row[j] += hp.kappa
    return row


def _encode(value):
    if isinstance(value, np.ndarray):
        return {"__array__": value.tolist(), "dtype": str(value.dtype)}
    if isinstance(value, dict):
        return {k: _encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def _decode(value):
    if isinstance(value, dict):
        if "__array__" in value:
            return np.asarray(value["__array__"], dtype=value["dtype"])
        return {k: _decode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


@dataclass
class ModelState:
    """One full Gibbs configuration of a chain.

    ``beta`` has a trailing remainder entry in direct-assignment mode.  ``pi``
    and ``psi`` are only instantiated by the blocked sampler.  ``emission``
    holds the emission parameters as a plain dict of arrays (whatever the
    family's ``get_state`` returns).
    """

    z: np.ndarray
    beta: np.ndarray
    hyper: Hyperparams
    s: Optional[np.ndarray] = None
    pi: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    emission: dict = field(default_factory=dict)
    counts: Optional[CountTables] = None
    sampler: str = "blocked"
    iteration: int = 0
    rng_state: Optional[dict] = None

    def to_dict(self) -> dict:
        counts = None
        if self.counts is not None:
            counts = {k: v for k, v in asdict(self.counts).items() if v is not None}
        return _encode(
            {
                "format": SNAPSHOT_FORMAT,
                "version": SNAPSHOT_VERSION,
                "sampler": self.sampler,
                "iteration": self.iteration,
                "hyper": self.hyper.to_dict(),
                "z": np.asarray(self.z),
                "s": None if self.s is None else np.asarray(self.s),
                "beta": np.asarray(self.beta),
                "pi": self.pi,
                "psi": self.psi,
                "emission": self.emission,
                "counts": counts,
                "rng_state": self.rng_state,
            }
        )

    @classmethod
    def from_dict(cls, d: dict) -> "ModelState":
        if d.get("format") != SNAPSHOT_FORMAT:
            raise FormatError("not a model-state snapshot")
        if d.get("version") != SNAPSHOT_VERSION:
            raise FormatError(f"unsupported snapshot version {d.get('version')}")
        d = _decode(d)
        counts = CountTables(**d["counts"]) if d.get("counts") else None
        return cls(
            z=d["z"],
            s=d.get("s"),
            beta=d["beta"],
            pi=d.get("pi"),
            psi=d.get("psi"),
            hyper=Hyperparams.from_dict(d["hyper"]),
            emission=d.get("emission") or {},
            counts=counts,
            sampler=d.get("sampler", "blocked"),
            iteration=int(d.get("iteration", 0)),
            rng_state=d.get("rng_state"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "ModelState":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"snapshot is not valid JSON: {exc}") from exc
        return cls.from_dict(data)
