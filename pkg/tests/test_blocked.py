import json

import numpy as np
import pytest
from scipy import stats

from helpers import message_relative_error, mixture_path_tv, path_tv, random_hmm
from stickyhdp import (
    BlockedSampler,
    DPMixGaussian,
    GaussianConjugate,
    GaussianNonConjugate,
    Hyperparams,
    ModelState,
    MultinomialDirichlet,
)
from stickyhdp.blocked import (
    _reduce_groups,
    backward_messages,
    forward_sample_z,
    forward_sample_zs,
    sample_beta_weaklimit,
    sample_psi,
    sample_transitions,
)
from stickyhdp.exceptions import DegenerateDistributionError, InvalidParameterError
from stickyhdp.metrics import occupied_states, predictive_loglik
from stickyhdp.model import recount
from stickyhdp.synthetic import gen_hmm, preset


def test_single_step_messages_are_ones():
    m = backward_messages(np.eye(3), np.zeros((1, 3)))
    assert np.array_equal(m.values, np.ones((1, 3)))


def test_single_state_messages():
    ll = np.random.default_rng(0).standard_normal((5, 1))
    m = backward_messages(np.ones((1, 1)), ll)
    tail = np.cumsum(m.lognorm[::-1])[::-1]
    expected = np.array([ll[t + 1:].sum() for t in range(5)])
    assert np.allclose(np.log(m.values[:, 0]) + tail, expected)


@pytest.mark.parametrize("T,L,seed", [(6, 3, 0), (8, 2, 1), (5, 3, 2)])
def test_messages_match_enumeration(T, L, seed):
    pi, ll, _ = random_hmm(T, L, seed)
    assert message_relative_error(pi, ll) <= 1e-9


def test_sequence_loglik_matches_forward_algorithm():
    from stickyhdp._hmm import sequence_loglik

    pi, ll, init = random_hmm(40, 3, 3)
    m = backward_messages(pi, ll)
    assert abs(sequence_loglik(init, ll, m.values, m.lognorm) - predictive_loglik(ll, pi, init)) < 1e-9


def test_path_law_matches_enumeration():
    pi, ll, init = random_hmm(5, 2, 4)
    assert path_tv(pi, ll, init, 200_000, seed=5) <= 0.02


def test_mixture_path_law_matches_enumeration():
    rng = np.random.default_rng(6)
    pi = rng.dirichlet(np.ones(2), size=2)
    psi = rng.dirichlet(np.ones(2), size=2)
    init = rng.dirichlet(np.ones(2))
    comp_ll = rng.standard_normal((4, 4))
    assert mixture_path_tv(pi, psi, comp_ll, init, 200_000, seed=7) <= 0.02


def test_single_component_mixture_reduces_to_plain_draw():
    pi, ll, init = random_hmm(30, 3, 8)
    m = backward_messages(pi, ll)
    z_plain = forward_sample_z(pi, ll, m, init, np.random.default_rng(9))
    z_mix, s = forward_sample_zs(pi, np.ones((3, 1)), ll, None, init, np.random.default_rng(9))
    assert np.array_equal(z_plain, z_mix) and not s.any()


def test_marginalised_components_match_state_marginals():
    """z-marginals from joint (z, s) draws agree with the analytic mixture likelihood."""
    rng = np.random.default_rng(10)
    pi = rng.dirichlet(np.ones(2), size=2)
    psi = rng.dirichlet(np.ones(3), size=2)
    init = np.array([0.5, 0.5])
    comp_ll = rng.standard_normal((3, 6))
    state_ll = np.log((np.exp(comp_ll).reshape(3, 2, 3) * psi[None]).sum(axis=2))
    from helpers import enumerate_paths

    paths, probs = enumerate_paths(pi, state_ll, init)
    exact_first = np.array([sum(p for path, p in zip(paths, probs) if path[1] == k)
                            for k in range(2)])
    counts = np.zeros(2)
    for _ in range(20000):
        z, _ = forward_sample_zs(pi, psi, comp_ll, None, init, rng)
        counts[z[1]] += 1
    assert stats.chisquare(counts, exact_first * counts.sum()).pvalue > 0.01


def test_identity_transitions_give_constant_path():
    ll = np.random.default_rng(11).standard_normal((20, 3))
    m = backward_messages(np.eye(3), ll)
    z = forward_sample_z(np.eye(3), ll, m, np.full(3, 1 / 3), np.random.default_rng(0))
    assert np.all(z == z[0])


def test_degenerate_weights_raise():
    ll = np.array([[0.0, -np.inf], [-np.inf, 0.0]])
    msgs = backward_messages(np.eye(2), ll)
    with pytest.raises(DegenerateDistributionError):
        forward_sample_z(np.eye(2), ll, msgs, np.array([0.5, 0.5]), np.random.default_rng(0))
    with pytest.raises(InvalidParameterError):
        backward_messages(np.eye(2), np.array([[np.nan, 0.0]]))


def test_group_likelihood_is_sum_of_members():
    ll = np.random.default_rng(12).standard_normal((5, 3))
    groups = np.array([0, 0, 1, 1, 2])
    red = _reduce_groups(ll, groups)
    assert np.allclose(red, [ll[0] + ll[1], ll[2] + ll[3], ll[4]])


def test_transition_rows():
    rng = np.random.default_rng(13)
    beta = np.array([0.5, 0.3, 0.2])
    hp = Hyperparams.from_alpha_kappa(2.0, 3.0)
    n = np.array([[4, 0, 1], [0, 0, 0], [2, 2, 2]])
    draws = np.array([sample_transitions(n, beta, hp, rng) for _ in range(20000)])
    expected = hp.alpha * beta[None] + np.eye(3) * hp.kappa + n
    expected /= expected.sum(axis=1, keepdims=True)
    se = draws.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - expected) < 4 * se + 1e-12)
    hp0 = Hyperparams.from_alpha_kappa(2.0, 0.0)
    rows = np.array([sample_transitions(np.zeros((3, 3)), beta, hp0, rng)[1]
                     for _ in range(20000)])
    ref = rng.dirichlet(2.0 * beta, size=20000)
    assert stats.ks_2samp(rows[:, 0], ref[:, 0]).pvalue > 0.001
    heavy = sample_transitions(np.array([[500, 0], [0, 500]]), [0.5, 0.5], hp0, rng)
    assert np.all(np.diag(heavy) > 0.95)


def test_beta_and_psi_means():
    rng = np.random.default_rng(14)
    cols = np.array([0, 7, 2, 0])
    draws = np.array([sample_beta_weaklimit(cols, 2.0, 4, rng) for _ in range(20000)])
    expected = (2.0 / 4 + cols) / (2.0 + cols.sum())
    se = draws.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - expected) < 4 * se)
    sym = np.array([sample_beta_weaklimit(np.zeros(3), 3.0, 3, rng) for _ in range(20000)])
    assert np.allclose(sym.mean(axis=0), 1 / 3, atol=0.01)
    n_prime = np.array([[3, 0, 1], [0, 0, 0]])
    draws = np.array([sample_psi(n_prime, 1.5, 3, rng) for _ in range(20000)])
    expected = (1.5 / 3 + n_prime) / (1.5 + n_prime.sum(axis=1, keepdims=True))
    se = draws.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - expected) < 4 * se)
    assert np.array_equal(sample_psi(n_prime, 1.0, 1, rng), np.ones((2, 1)))


def persist(T=300, seed=0):
    return gen_hmm(preset("persist3", T=T), np.random.default_rng(seed))


def test_sweeps_keep_counts_consistent_and_are_deterministic():
    Y, _ = persist()
    runs = []
    for _ in range(2):
        rng = np.random.default_rng(15)
        s = BlockedSampler(GaussianConjugate.from_data(Y), 8, Hyperparams(1.0, 5.0, 0.7))
        s.initialize(Y, rng)
        for _ in range(5):
            rep = s.sweep(rng)
            c = s.counts
            assert np.array_equal(recount(s.z, L=8).n, c.n)
            c.check()
            assert np.isfinite(rep.loglik)
        runs.append((s.z.copy(), rep.loglik))
    assert np.array_equal(runs[0][0], runs[1][0]) and runs[0][1] == runs[1][1]


def test_loglik_is_forward_algorithm_value():
    Y, _ = persist(100)
    rng = np.random.default_rng(16)
    s = BlockedSampler(GaussianConjugate.from_data(Y), 5, Hyperparams(1.0, 5.0, 0.7))
    s.initialize(Y, rng)
    s.sweep(rng)
    ll = s.emission.loglik(s.Y)
    assert abs(s.loglik - predictive_loglik(ll, s.pi, s.beta)) < 1e-9


def test_dp_sweeps_and_tied_frames():
    spec = preset("mog5", T=200, dim=2)
    Y, _ = gen_hmm(spec, np.random.default_rng(17))
    rng = np.random.default_rng(18)
    fam = DPMixGaussian(GaussianConjugate.from_data(Y), 4, tied=True)
    s = BlockedSampler(fam, 6, Hyperparams(1.0, 5.0, 0.7))
    groups = np.arange(200) // 2
    s.initialize(Y, rng, groups=groups)
    for _ in range(3):
        s.sweep(rng)
        assert s.z.size == 100
        assert np.all(s.frame_z[::2] == s.frame_z[1::2])
        np_ = np.zeros((6, 4), dtype=int)
        np.add.at(np_, (s.frame_z, s.s), 1)
        assert np.array_equal(np_, s.counts.n_prime)
        assert np.array_equal(recount(s.z, L=6).n, s.counts.n)
        Sig = s.emission.params["Sigma"].reshape(6, 4, 2, 2)
        assert np.allclose(Sig, Sig[:, :1])


def test_other_families_and_fixed_beta():
    rng = np.random.default_rng(19)
    Y, _ = gen_hmm(preset("hub9", T=300), rng)
    s = BlockedSampler(MultinomialDirichlet(20, 0.5), 10, Hyperparams(1.0, 5.0, 0.7),
                       fixed_beta=True)
    s.initialize(Y, rng)
    for _ in range(3):
        s.sweep(rng)
    assert np.allclose(s.beta, 0.1)
    Yg, _ = persist(150)
    s = BlockedSampler(GaussianNonConjugate.from_data(Yg), 6, Hyperparams(1.0, 5.0, 0.7))
    s.initialize(Yg, rng)
    for _ in range(3):
        assert np.isfinite(s.sweep(rng).loglik)


def test_snapshot_resume_is_exact():
    Y, _ = persist(120)
    rng = np.random.default_rng(20)
    s = BlockedSampler(GaussianConjugate.from_data(Y), 6, Hyperparams(1.0, 5.0, 0.7))
    s.initialize(Y, rng)
    s.sweep(rng)
    snap = ModelState.loads(s.state().dumps())
    r1 = np.random.default_rng(21)
    r2 = np.random.default_rng(21)
    s.sweep(r1)
    t = BlockedSampler(GaussianConjugate.from_data(Y), 6, snap.hyper)
    t.load_state(snap, Y)
    t.sweep(r2)
    assert np.array_equal(s.z, t.z)
    assert np.isclose(s.loglik, t.loglik)
    json.loads(s.state().dumps())


def test_nonsticky_pins_rho():
    Y, _ = persist(100)
    rng = np.random.default_rng(22)
    s = BlockedSampler(GaussianConjugate.from_data(Y), 5, Hyperparams(1.0, 5.0, 0.7),
                       sticky=False)
    s.initialize(Y, rng)
    s.sweep(rng)
    assert s.hyper.rho == 0.0 and not s.w.any()


def test_truncation_level_agreement():
    Y, _ = persist(500, seed=3)
    summaries = []
    for L in (10, 20):
        rng = np.random.default_rng(23)
        s = BlockedSampler(GaussianConjugate.from_data(Y), L, Hyperparams(1.0, 5.0, 0.7))
        s.initialize(Y, rng)
        ks = []
        for it in range(400):
            s.sweep(rng)
            if it >= 200:
                ks.append(occupied_states(s.z))
        summaries.append(np.quantile(ks, [0.05, 0.95]))
    (lo1, hi1), (lo2, hi2) = summaries
    assert lo1 <= hi2 and lo2 <= hi1
