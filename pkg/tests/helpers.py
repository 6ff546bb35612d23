"""Shared test oracles: prior simulators, Geweke runners and enumeration helpers."""

import itertools

import numpy as np
from scipy import integrate, stats
from scipy.special import gammaln, logsumexp

from stickyhdp import (
    BlockedSampler,
    DirectAssignmentSampler,
    GaussianConjugate,
    HyperPriors,
    Hyperparams,
    NIWParams,
)
from stickyhdp.kernel import sample_niw

GEWEKE_PRIORS = HyperPriors(
    gamma_shape=3.0, gamma_rate=2.0,
    apk_shape=6.0, apk_rate=1.0,
    sigma_shape=2.0, sigma_rate=1.0,
    rho_c=3.0, rho_d=2.0,
)
GEWEKE_NIW = NIWParams(pseudocount=0.2, mean=[0.0], dof=5.0, scale=[[2.0]])


def draw_hyper(priors, rng, sticky=True):
    return Hyperparams(
        gamma=rng.gamma(priors.gamma_shape, 1 / priors.gamma_rate),
        alpha_plus_kappa=rng.gamma(priors.apk_shape, 1 / priors.apk_rate),
        rho=rng.beta(priors.rho_c, priors.rho_d) if sticky else 0.0,
        sigma=rng.gamma(priors.sigma_shape, 1 / priors.sigma_rate),
        priors=priors,
    )


def draw_gaussian_obs(z, niw, rng, n_states=None):
    n_states = int(z.max()) + 1 if n_states is None else n_states
    mus = np.empty(n_states)
    sds = np.empty(n_states)
    for k in range(n_states):
        mu, sig = sample_niw(niw, rng)
        mus[k], sds[k] = mu[0], np.sqrt(sig[0, 0])
    return (mus[z] + sds[z] * rng.standard_normal(z.size))[:, None], mus, sds


def forward_direct(T, priors, niw, rng):
    """Exact joint draw of (hyper, beta, z, y) from the infinite sticky model.

    Transition rows are integrated out through the Polya urn of each row,
    and global weights are broken lazily.
    """
    hp = draw_hyper(priors, rng)
    sticks = []
    rest = 1.0

    def draw_from_beta():
        nonlocal rest
        u = rng.random()
        acc = 0.0
        for k, b in enumerate(sticks):
            acc += b
            if u < acc:
                return k
        v = rng.beta(1.0, hp.gamma)
        sticks.append(v * rest)
        rest *= 1.0 - v
        return len(sticks) - 1

    history = {}
    z = np.empty(T, dtype=np.int64)
    z[0] = draw_from_beta()
    apk, rho = hp.alpha_plus_kappa, hp.rho
    for t in range(1, T):
        j = z[t - 1]
        past = history.setdefault(j, [])
        if rng.random() * (len(past) + apk) < len(past):
            k = past[rng.integers(len(past))]
        elif rng.random() < rho:
            k = j
        else:
            k = draw_from_beta()
        past.append(k)
        z[t] = k
    beta = np.append(sticks, rest)
    y, _, _ = draw_gaussian_obs(z, niw, rng, len(sticks))
    return hp, beta, z, y


def forward_blocked(T, L, priors, niw, rng):
    """Exact joint draw under the degree-L weak-limit model."""
    hp = draw_hyper(priors, rng)
    beta = rng.dirichlet(np.full(L, hp.gamma / L))
    beta = np.maximum(beta, 1e-300)
    beta /= beta.sum()
    pi = np.empty((L, L))
    for k in range(L):
        a = hp.alpha * beta.copy()
        a[k] += hp.kappa
        pi[k] = rng.dirichlet(np.maximum(a, 1e-300))
    z = np.empty(T, dtype=np.int64)
    z[0] = rng.choice(L, p=beta)
    for t in range(1, T):
        z[t] = rng.choice(L, p=pi[z[t - 1]] / pi[z[t - 1]].sum())
    y, mus, sds = draw_gaussian_obs(z, niw, rng, L)
    params = {"mu": mus[:, None], "Sigma": (sds ** 2)[:, None, None]}
    return hp, beta, pi, params, z, y


def summary(z, hp):
    K = np.unique(z).size
    self_frac = np.mean(z[1:] == z[:-1])
    return np.array([K, self_frac, hp.gamma, hp.alpha_plus_kappa, hp.rho])


STAT_NAMES = ("K", "self_frac", "gamma", "alpha_plus_kappa", "rho")


def geweke_direct(n_chains, steps, T, seed, priors=GEWEKE_PRIORS, niw=GEWEKE_NIW):
    """Prior draws and successive-conditional draws for the direct sampler.

    Each chain starts from an exact joint draw and alternates one sweep with
    regenerating the data given the labels; its final state is again an
    exact joint draw if the sampler is correct.
    """
    rng = np.random.default_rng(seed)
    forward, chained = [], []
    for _ in range(n_chains):
        hp, beta, z, y = forward_direct(T, priors, niw, rng)
        forward.append(summary(z, hp))
        hp0, beta0, z0, y0 = forward_direct(T, priors, niw, rng)
        sampler = DirectAssignmentSampler(GaussianConjugate(niw), hp0)
        sampler.initialize(y0, rng, z=z0, beta=beta0)
        for _ in range(steps):
            sampler.sweep(rng)
            y_new, _, _ = draw_gaussian_obs(sampler.z, niw, rng)
            sampler.initialize(y_new, rng, z=sampler.z.copy(), beta=sampler.beta.copy())
        chained.append(summary(sampler.z, sampler.hyper))
    return np.array(forward), np.array(chained)


def geweke_blocked(n_chains, steps, T, L, seed, priors=GEWEKE_PRIORS, niw=GEWEKE_NIW):
    from stickyhdp.model import ModelState

    rng = np.random.default_rng(seed)
    forward, chained = [], []
    for _ in range(n_chains):
        hp, beta, pi, params, z, y = forward_blocked(T, L, priors, niw, rng)
        forward.append(summary(z, hp))
        hp0, beta0, pi0, params0, z0, y0 = forward_blocked(T, L, priors, niw, rng)
        sampler = BlockedSampler(GaussianConjugate(niw), L, hp0)
        state = ModelState(z=z0, beta=beta0, pi=pi0, hyper=hp0,
                           emission={"params": params0})
        sampler.load_state(state, y0)
        for _ in range(steps):
            sampler.sweep(rng)
            y_new = sampler.emission.draw_observations(sampler.z, rng)
            sampler.set_data(y_new)
        chained.append(summary(sampler.z, sampler.hyper))
    return np.array(forward), np.array(chained)


def ks_pvalues(a, b):
    return [stats.ks_2samp(a[:, i], b[:, i]).pvalue for i in range(a.shape[1])]


def enumerate_paths(pi, loglik, init):
    """Exact posterior over all label paths (tiny problems only)."""
    T, L = loglik.shape
    paths = list(itertools.product(range(L), repeat=T))
    logp = []
    for path in paths:
        lp = np.log(init[path[0]]) + loglik[0, path[0]]
        for t in range(1, T):
            lp += np.log(pi[path[t - 1], path[t]]) + loglik[t, path[t]]
        logp.append(lp)
    logp = np.array(logp)
    return paths, np.exp(logp - logsumexp(logp))


def quadrature_cdf(log_density, lower, upper, grid=4000):
    """Normalised CDF of a 1-D unnormalised log-density on a fixed grid."""
    xs = np.linspace(lower, upper, grid)
    lp = np.array([log_density(x) for x in xs])
    dens = np.exp(lp - lp.max())
    cdf = integrate.cumulative_trapezoid(dens, xs, initial=0.0)
    cdf /= cdf[-1]
    return lambda q: np.interp(q, xs, cdf)


def log_gamma_pdf(x, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1) * np.log(x) - rate * x


# ------------------------------------------------------------ hyper oracles
def grid_sampler(log_density, lower, upper, grid=20000):
    """Inverse-CDF sampler and CDF of a 1-D unnormalised log-density on a grid."""
    xs = np.linspace(lower, upper, grid)
    lp = np.array([log_density(x) for x in xs])
    dens = np.exp(lp - lp.max())
    cdf = integrate.cumulative_trapezoid(dens, xs, initial=0.0)
    cdf /= cdf[-1]

    def draw(size, rng):
        return np.interp(rng.random(size), cdf, xs)

    return draw, (lambda q: np.interp(q, xs, cdf))


def hyper_oracle_cases():
    """(name, log target, support bounds, one-step update) for every concentration update.

    Each update is applied with a single inner iteration so that a draw from
    the target, pushed through one update, must again follow the target.
    """
    from stickyhdp import hyper

    flat = HyperPriors(gamma_shape=1.0, gamma_rate=0.01, apk_shape=1.0, apk_rate=0.01,
                       sigma_shape=1.0, sigma_rate=0.01)
    cases = []

    def restaurant_target(tables, counts, shape, rate):
        counts = np.asarray(counts, dtype=float)
        return lambda c: (log_gamma_pdf(c, shape, rate) + tables * np.log(c)
                          + np.sum(gammaln(c) - gammaln(c + counts)))

    cases.append((
        "alpha_plus_kappa", restaurant_target(8, [50], 1.0, 0.01), 1e-4, 60.0,
        lambda v, rng: hyper.sample_alpha_plus_kappa(8, [50], v, flat, rng, inner=1)[0],
    ))
    cases.append((
        "alpha_plus_kappa_multi", restaurant_target(14, [30, 12, 0, 5], 1.0, 0.01), 1e-4, 80.0,
        lambda v, rng: hyper.sample_alpha_plus_kappa(14, [30, 12, 0, 5], v, flat, rng,
                                                     inner=1)[0],
    ))
    cases.append((
        "sigma", restaurant_target(6, [25, 9], 1.0, 0.01), 1e-4, 60.0,
        lambda v, rng: hyper.sample_sigma(6, [25, 9], v, flat, rng, inner=1)[0],
    ))
    cases.append((
        "gamma", lambda g: (log_gamma_pdf(g, 1.0, 0.01) + 5 * np.log(g)
                            + gammaln(g) - gammaln(g + 40)), 1e-4, 40.0,
        lambda v, rng: hyper.sample_gamma_conc(5, 40, v, flat, rng, inner=1)[0],
    ))
    cases.append((
        "gamma_indicator", lambda g: (log_gamma_pdf(g, 1.0, 0.01) + 5 * np.log(g)
                                      + gammaln(g) - gammaln(g + 40)), 1e-4, 40.0,
        lambda v, rng: hyper.sample_gamma_indicator(5, 40, v, flat, rng, inner=1)[0],
    ))
    cols = np.array([5, 0, 3, 12, 0, 1])
    L = cols.size
    cases.append((
        "gamma_weaklimit",
        lambda g: (log_gamma_pdf(g, 3.0, 0.5) + gammaln(g) - gammaln(g + cols.sum())
                   + np.sum(gammaln(g / L + cols) - gammaln(g / L))),
        1e-4, 60.0,
        lambda v, rng: hyper.sample_gamma_weaklimit(
            cols, v, L, HyperPriors(gamma_shape=3.0, gamma_rate=0.5), rng, inner=1)[0],
    ))
    n_prime = np.array([[4, 0, 7], [0, 0, 0], [1, 1, 2]])
    Lp = n_prime.shape[1]

    def sigma_wl(s):
        rows = n_prime.sum(axis=1)
        rows_used = rows[rows > 0]
        cells = n_prime[rows > 0]
        return (log_gamma_pdf(s, 2.0, 0.5)
                + np.sum(gammaln(s) - gammaln(s + rows_used))
                + np.sum(gammaln(s / Lp + cells) - gammaln(s / Lp)))

    cases.append((
        "sigma_weaklimit", sigma_wl, 1e-4, 60.0,
        lambda v, rng: hyper.sample_sigma_weaklimit(
            n_prime, v, Lp, HyperPriors(sigma_shape=2.0, sigma_rate=0.5), rng, inner=1)[0],
    ))
    return cases


def hyper_stationarity_pvalue(case, n=10000, seed=0):
    """KS p-value of one update applied to exact draws from its target."""
    name, logp, lo, hi, update = case
    rng = np.random.default_rng(seed)
    draw, cdf = grid_sampler(logp, lo, hi)
    start = draw(n, rng)
    moved = np.array([update(v, rng) for v in start])
    return stats.kstest(moved, cdf).pvalue


def hyper_prior_cases():
    """(name, empty-data update, prior CDF) for every concentration and rho."""
    from stickyhdp import hyper

    pr = HyperPriors(gamma_shape=12.0, gamma_rate=2.0, apk_shape=1.0, apk_rate=0.01,
                     sigma_shape=1.0, sigma_rate=0.01, rho_c=10.0, rho_d=1.0)
    gam = lambda shape, rate: stats.gamma(shape, scale=1 / rate).cdf  # noqa: E731
    return [
        ("alpha_plus_kappa", lambda v, rng: hyper.sample_alpha_plus_kappa(
            0, np.zeros(4), v, pr, rng)[0], gam(1.0, 0.01)),
        ("sigma", lambda v, rng: hyper.sample_sigma(0, np.zeros(4), v, pr, rng)[0],
         gam(1.0, 0.01)),
        ("gamma", lambda v, rng: hyper.sample_gamma_conc(0, 0, v, pr, rng)[0], gam(12.0, 2.0)),
        ("gamma_weaklimit", lambda v, rng: hyper.sample_gamma_weaklimit(
            np.zeros(6), v, 6, pr, rng)[0], gam(12.0, 2.0)),
        ("sigma_weaklimit", lambda v, rng: hyper.sample_sigma_weaklimit(
            np.zeros((3, 4)), v, 4, pr, rng)[0], gam(1.0, 0.01)),
        ("rho", lambda v, rng: hyper.sample_rho(0, 0, pr, rng), stats.beta(10.0, 1.0).cdf),
    ]


def hyper_prior_pvalue(case, n=10000, seed=0):
    name, update, cdf = case
    rng = np.random.default_rng(seed)
    value, out = 1.0, []
    for _ in range(n):
        value = update(value, rng)
        out.append(value)
    return stats.kstest(out, cdf).pvalue


# --------------------------------------------------------- matching oracles
def brute_force_assignment(cost):
    """Minimum assignment cost over every permutation of the padded square matrix."""
    cost = np.asarray(cost, dtype=float)
    r, c = cost.shape
    n = max(r, c)
    padded = np.zeros((n, n))
    padded[:r, :c] = cost
    return min(padded[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n)))


def brute_force_hamming(z_true, z_est):
    """Best mismatch rate over every injective relabelling of the estimate."""
    a = np.unique(z_true)
    b = np.unique(z_est)
    n = max(a.size, b.size)
    best = np.inf
    targets = list(a) + [None] * (n - a.size)
    for perm in itertools.permutations(range(n), b.size):
        mapping = {lab: targets[i] for lab, i in zip(b, perm)}
        mapped = np.array([mapping[x] if mapping[x] is not None else -10**9 for x in z_est])
        best = min(best, np.mean(mapped != z_true))
    return best


def munkres_trials(n_trials, max_k, seed):
    """Count of random instances where munkres disagrees with brute force."""
    from stickyhdp.metrics import munkres

    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(n_trials):
        r, c = rng.integers(1, max_k + 1, size=2)
        cost = rng.integers(0, 20, size=(r, c)).astype(float) if rng.random() < 0.5 \
            else rng.standard_normal((r, c))
        perm, total = munkres(cost)
        n = max(r, c)
        padded = np.zeros((n, n))
        padded[:r, :c] = cost
        # dummy rows and columns cost nothing, so the real rows carry the total
        rows_cost = sum(padded[i, perm[i]] for i in range(r))
        ok = len(set(perm.tolist())) == r
        ok &= np.isclose(total, brute_force_assignment(cost), rtol=0, atol=1e-9)
        ok &= np.isclose(rows_cost, total, rtol=0, atol=1e-9)
        failures += not ok
    return failures


# ------------------------------------------------------- blocked oracles
def brute_messages(pi, loglik):
    """log of sum over future paths of p(y_{t+1:T} | z_t = k), by enumeration."""
    T, L = loglik.shape
    out = np.zeros((T, L))
    for t in range(T - 1):
        rest = T - 1 - t
        for k in range(L):
            terms = []
            for path in itertools.product(range(L), repeat=rest):
                lp, prev = 0.0, k
                for i, j in enumerate(path):
                    lp += np.log(pi[prev, j]) + loglik[t + 1 + i, j]
                    prev = j
                terms.append(lp)
            out[t, k] = logsumexp(terms)
    return out


def message_relative_error(pi, loglik):
    from stickyhdp.blocked import backward_messages

    msgs = backward_messages(pi, loglik)
    tail = np.cumsum(msgs.lognorm[::-1])[::-1]
    got = np.log(msgs.values) + tail[:, None]
    exact = brute_messages(pi, loglik)
    return float(np.max(np.abs(np.expm1(got - exact))))


def path_tv(pi, loglik, init, n_draws, seed):
    """Total variation between sampled and enumerated label-path laws."""
    from stickyhdp.blocked import backward_messages, forward_sample_z

    rng = np.random.default_rng(seed)
    T, L = loglik.shape
    msgs = backward_messages(pi, loglik)
    codes = np.empty(n_draws, dtype=np.int64)
    weights = L ** np.arange(T)[::-1]
    for i in range(n_draws):
        codes[i] = forward_sample_z(pi, loglik, msgs, init, rng) @ weights
    paths, probs = enumerate_paths(pi, loglik, init)
    exact = np.zeros(L ** T)
    for path, p in zip(paths, probs):
        exact[np.dot(path, weights)] = p
    emp = np.bincount(codes, minlength=L ** T) / n_draws
    return 0.5 * float(np.abs(emp - exact).sum())


def mixture_path_tv(pi, psi, comp_loglik, init, n_draws, seed):
    """TV between sampled (z, s) paths and their enumerated posterior."""
    from stickyhdp.blocked import forward_sample_zs

    rng = np.random.default_rng(seed)
    T = comp_loglik.shape[0]
    L, Lp = psi.shape
    joint = L * Lp
    # every (state, component) pair is one cell of an equivalent plain chain
    big_pi = np.repeat(pi, Lp, axis=0).repeat(Lp, axis=1) * np.tile(psi.ravel(), (joint, 1))
    big_init = np.repeat(init, Lp) * psi.ravel()
    paths, probs = enumerate_paths(big_pi, comp_loglik, big_init)
    weights = joint ** np.arange(T)[::-1]
    exact = np.zeros(joint ** T)
    for path, p in zip(paths, probs):
        exact[np.dot(path, weights)] = p
    codes = np.empty(n_draws, dtype=np.int64)
    for i in range(n_draws):
        z, s = forward_sample_zs(pi, psi, comp_loglik, None, init, rng)
        codes[i] = (z * Lp + s) @ weights
    emp = np.bincount(codes, minlength=joint ** T) / n_draws
    return 0.5 * float(np.abs(emp - exact).sum())


def random_hmm(T, L, seed, spread=1.5):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(L), size=L)
    init = rng.dirichlet(np.ones(L))
    loglik = spread * rng.standard_normal((T, L))
    return pi, loglik, init
