"""Ground-truth HMM scenarios and their forward simulation.

Preset emission constants that are not fixed by the scenario structure are
drawn once from a fixed seed, so every preset is reproducible.  The labels
returned are 0-based, and so are multinomial symbols.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import InvalidParameterError
from .kernel import as_generator

PRESET_SEED = 8_675_309
PRESETS = ("persist3", "fast4", "multi5", "hub9", "mog5")


@dataclass
class ScenarioSpec:
    """Transition matrix, initial law and per-state emission description.

    ``emission`` is a dict with a ``family`` key:

    * ``"gaussian"``: ``means`` (K, d) and ``covs`` (K, d, d)
    * ``"multinomial"``: ``probs`` (K, V)
    * ``"gmm"``: per-state lists ``weights``, ``means`` and ``covs``
    """

    name: str
    transition: np.ndarray
    emission: dict
    T: int = 1000
    seed: int = 0
    initial: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise InvalidParameterError("transition matrix must be square")
        if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise InvalidParameterError("transition rows must be probability vectors")
        self.transition = P
        K = P.shape[0]
        if self.initial is None:
            self.initial = np.full(K, 1.0 / K)
        self.initial = np.asarray(self.initial, dtype=float)
        if self.initial.shape != (K,) or not np.isclose(self.initial.sum(), 1.0):
            raise InvalidParameterError("initial law must be a probability vector of length K")
        fam = self.emission.get("family")
        if fam == "gaussian":
            count = len(self.emission["means"])
        elif fam == "multinomial":
            count = len(self.emission["probs"])
        elif fam == "gmm":
            count = len(self.emission["weights"])
        else:
            raise InvalidParameterError(f"unknown emission family {fam!r}")
        if count != K:
            raise InvalidParameterError("need one emission description per state")
        if self.T < 1:
            raise InvalidParameterError("T must be positive")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]


def simulate_markov_chain(P, initial, T, rng) -> np.ndarray:
    cdf = np.cumsum(P, axis=1)
    u = rng.random(T)
    z = np.empty(T, dtype=np.int64)
    z[0] = min(np.searchsorted(np.cumsum(initial), u[0], side="right"), len(initial) - 1)
    K = P.shape[0]
    for t in range(1, T):
        z[t] = min(np.searchsorted(cdf[z[t - 1]], u[t], side="right"), K - 1)
    return z


def emit(emission: dict, z, rng, return_components=False):
    """Draw one observation per label from the described emission family."""
    z = np.asarray(z, dtype=np.int64)
    fam = emission["family"]
    comps = None
    if fam == "gaussian":
        means = np.asarray(emission["means"], dtype=float)
        chol = np.linalg.cholesky(np.asarray(emission["covs"], dtype=float))
        eps = rng.standard_normal((z.size, means.shape[1]))
        Y = means[z] + np.einsum("nij,nj->ni", chol[z], eps)
    elif fam == "multinomial":
        probs = np.asarray(emission["probs"], dtype=float)
        cdf = np.cumsum(probs, axis=1)
        u = rng.random(z.size)
        Y = np.minimum((cdf[z] <= u[:, None]).sum(axis=1), probs.shape[1] - 1)
    else:
        d = np.asarray(emission["means"][0]).shape[1]
        Y = np.empty((z.size, d))
        comps = np.empty(z.size, dtype=np.int64)
        u = rng.random(z.size)
        eps = rng.standard_normal((z.size, d))
        for k in np.unique(z):
            idx = np.flatnonzero(z == k)
            w = np.asarray(emission["weights"][k], dtype=float)
            c = np.minimum(np.searchsorted(np.cumsum(w), u[idx], side="right"), w.size - 1)
            mu = np.asarray(emission["means"][k], dtype=float)
            chol = np.linalg.cholesky(np.asarray(emission["covs"][k], dtype=float))
            Y[idx] = mu[c] + np.einsum("nij,nj->ni", chol[c], eps[idx])
            comps[idx] = c
    return (Y, comps) if return_components else Y


def gen_hmm(spec: ScenarioSpec, rng=None, T: Optional[int] = None, return_components=False):
    """Forward-simulate a scenario; returns ``(Y, z)`` (plus components for mixtures)."""
    rng = as_generator(spec.seed if rng is None else rng)
    T = spec.T if T is None else int(T)
    z = simulate_markov_chain(spec.transition, spec.initial, T, rng)
    Y, comps = emit(spec.emission, z, rng, return_components=True)
    if return_components:
        return Y, z, comps
    return Y, z


def sticky_matrix(K, self_prob):
    P = np.full((K, K), (1.0 - self_prob) / (K - 1))
    np.fill_diagonal(P, self_prob)
    return P


def hub_matrix(n_sub=8, main_self=0.9, sub_self=0.9, sub_to_main=0.08):
    """Main state 0 reaching every sub-state; sub-states mostly return to the main state."""
    K = n_sub + 1
    P = np.zeros((K, K))
    P[0, 0] = main_self
    P[0, 1:] = (1.0 - main_self) / n_sub
    leak = (1.0 - sub_self - sub_to_main) / (n_sub - 1)
    for k in range(1, K):
        P[k, :] = leak
        P[k, 0] = sub_to_main
        P[k, k] = sub_self
    return P


def _gaussian_1d(means, var=1.0):
    means = np.asarray(means, dtype=float)[:, None]
    return {"family": "gaussian", "means": means,
            "covs": np.full((means.shape[0], 1, 1), var)}


def mog_emission(n_states, rng, dim=1, max_components=10, center_spread=None,
                 component_spread=1.0, component_var=0.25):
    """Per-state Gaussian mixtures with 1..max_components equally weighted components."""
    if center_spread is None:
        center_spread = 6.0 * component_spread
    weights, means, covs = [], [], []
    if dim == 1:
        centers = center_spread * (np.arange(n_states) - (n_states - 1) / 2.0)[:, None]
    else:
        angle = 2 * np.pi * np.arange(n_states) / n_states
        centers = np.zeros((n_states, dim))
        centers[:, 0] = center_spread * np.cos(angle)
        centers[:, 1] = center_spread * np.sin(angle)
    for k in range(n_states):
        c = int(rng.integers(1, max_components + 1))
        weights.append(np.full(c, 1.0 / c))
        offsets = rng.uniform(-component_spread, component_spread, size=(c, dim))
        means.append(centers[k] + offsets)
        covs.append(np.repeat(component_var * np.eye(dim)[None], c, axis=0))
    return {"family": "gmm", "weights": weights, "means": means, "covs": covs}


def preset(name: str, T: Optional[int] = None, seed: int = 0, **options) -> ScenarioSpec:
    """Named scenario.  ``mog5`` accepts ``n_states`` and ``dim`` overrides."""
    rng = np.random.default_rng(PRESET_SEED)
    if name == "persist3":
        spec = ScenarioSpec(name, sticky_matrix(3, 0.98), _gaussian_1d([-2.0, 0.0, 2.0]),
                            T or 1000, seed)
    elif name == "fast4":
        P = np.array([[0.4, 0.4, 0.1, 0.1],
                      [0.4, 0.4, 0.1, 0.1],
                      [0.1, 0.1, 0.4, 0.4],
                      [0.1, 0.1, 0.4, 0.4]])
        spec = ScenarioSpec(name, P, _gaussian_1d([-4.5, -1.5, 1.5, 4.5]), T or 1000, seed)
    elif name == "multi5":
        probs = rng.dirichlet(np.ones(20), size=5)
        spec = ScenarioSpec(name, sticky_matrix(5, 0.98),
                            {"family": "multinomial", "probs": probs}, T or 1000, seed)
    elif name == "hub9":
        probs = rng.dirichlet(np.full(20, 0.5), size=9)
        spec = ScenarioSpec(name, hub_matrix(), {"family": "multinomial", "probs": probs},
                            T or 2000, seed)
    elif name == "mog5":
        n_states = int(options.pop("n_states", 5))
        dim = int(options.pop("dim", 1))
        emission = mog_emission(n_states, rng, dim=dim, **options)
        spec = ScenarioSpec(name, sticky_matrix(n_states, 0.98), emission, T or 1000, seed,
                            meta={"dim": dim})
    else:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return spec


def restrict_states(spec: ScenarioSpec, keep) -> ScenarioSpec:
    """Sub-scenario on the listed states with renormalised transition rows."""
    keep = list(keep)
    P = spec.transition[np.ix_(keep, keep)]
    P = P / P.sum(axis=1, keepdims=True)
    em = spec.emission
    if em["family"] == "gaussian":
        emission = {"family": "gaussian", "means": np.asarray(em["means"])[keep],
                    "covs": np.asarray(em["covs"])[keep]}
    elif em["family"] == "multinomial":
        emission = {"family": "multinomial", "probs": np.asarray(em["probs"])[keep]}
    else:
        emission = {"family": "gmm", **{key: [em[key][k] for k in keep]
                                        for key in ("weights", "means", "covs")}}
    return ScenarioSpec(f"{spec.name}[{len(keep)}]", P, emission, spec.T, spec.seed,
                        meta=dict(spec.meta))
