import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pgds.distributions import DomainError, rng_stream
from pgds.model import (
    ConfigError,
    CountMatrix,
    Hyperparams,
    ModelState,
    generate,
    log_joint,
    log_likelihood,
    pi_concentration,
    poisson_rate,
    rate_matrix,
    sample_prior,
    sample_theta_prior,
)


def small_state(V=4, T=5, K=3, seed=0, hyper=None):
    hyper = hyper or Hyperparams(K=K, gamma0=5.0, eps0=1.0)
    return sample_prior(hyper, V, T, rng_stream(seed))


# --------------------------------------------------------------------------
# Types


@pytest.mark.parametrize("field", ["tau0", "gamma0", "eta0", "eps0"])
@pytest.mark.parametrize("bad", [0.0, -1.0, float("inf"), float("nan")])
def test_hyperparams_reject_non_positive(field, bad):
    with pytest.raises(ConfigError, match=field):
        Hyperparams(**{field: bad})


def test_hyperparams_defaults_and_steady_requires_stationary():
    h = Hyperparams()
    assert (h.tau0, h.gamma0, h.eta0, h.eps0, h.K) == (1.0, 50.0, 0.1, 0.1, 100)
    with pytest.raises(ConfigError, match="steady_state"):
        Hyperparams(stationary=False, steady_state=True)
    with pytest.raises(ConfigError, match="K"):
        Hyperparams(K=0)


def test_count_matrix_dense_round_trip():
    Y = np.array([[0, 2, 0], [5, 0, 1]])
    cm = CountMatrix.from_dense(Y)
    assert np.array_equal(cm.to_dense(), Y)
    assert np.array_equal(cm.column_totals(), [5, 2, 1])
    assert cm.counts.min() >= 1


def test_count_matrix_triplets_sum_duplicates_and_drop_zeros():
    cm = CountMatrix.from_triplets(2, 2, [0, 0, 1], [0, 0, 1], [2, 3, 0])
    assert np.array_equal(cm.to_dense(), [[5, 0], [0, 0]])


def test_count_matrix_rejects_bad_entries():
    with pytest.raises(DomainError):
        CountMatrix(2, 2, [0], [0], [0])
    with pytest.raises(DomainError):
        CountMatrix(2, 2, [2], [0], [1])
    with pytest.raises(DomainError):
        CountMatrix.from_triplets(2, 2, [0], [5], [1])


def test_count_matrix_columns_renumbers():
    Y = np.arange(12).reshape(3, 4)
    sub = CountMatrix.from_dense(Y).columns([3, 1])
    assert np.array_equal(sub.to_dense(), Y[:, [1, 3]])


def test_state_validate_catches_non_stochastic_columns():
    s = small_state()
    s.validate()
    bad = s.copy()
    bad.Phi[0, 0] += 1e-6
    with pytest.raises(DomainError, match="Phi"):
        bad.validate()
    bad = s.copy()
    bad.Pi[:, 1] *= 1.01
    with pytest.raises(DomainError, match="Pi"):
        bad.validate()
    bad = s.copy()
    bad.nu[0] = 0.0
    with pytest.raises(DomainError, match="nu"):
        bad.validate()


def test_state_copy_is_deep():
    s = small_state()
    c = s.copy()
    c.Theta[0, 0] = -1.0
    assert s.Theta[0, 0] != -1.0
    assert s == small_state()


# --------------------------------------------------------------------------
# Prior and generative draw


def test_pi_concentration_layout():
    nu = np.array([1.0, 2.0, 3.0])
    conc = pi_concentration(nu, 10.0)
    # column k = (nu_1 nu_k, ..., xi nu_k at k, ..., nu_K nu_k)
    expected = np.array([[10.0, 2.0, 3.0], [2.0, 20.0, 6.0], [3.0, 6.0, 30.0]])
    assert np.array_equal(conc, expected)


def test_k1_forces_identity_transition():
    state = small_state(K=1, hyper=Hyperparams(K=1))
    assert np.array_equal(state.Pi, [[1.0]])


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_prior_draw_satisfies_invariants(V, T, K, seed):
    hyper = Hyperparams(K=K, gamma0=3.0, eps0=1.0)
    state, Y = generate(hyper, V, T, rng_stream(seed))
    state.validate()
    assert (Y.V, Y.T) == (V, T)


def test_stationary_prior_has_constant_delta():
    s = sample_prior(Hyperparams(K=2, stationary=True), 3, 6, rng_stream(1))
    assert np.all(s.delta == s.delta[0])
    s = sample_prior(Hyperparams(K=2, stationary=False), 3, 6, rng_stream(1))
    assert np.unique(s.delta).size == 6


def test_theta_transition_moments():
    # E = Pi theta, Var = Pi theta / tau0
    Pi = np.array([[0.7, 0.2], [0.3, 0.8]])
    theta = np.array([2.0, 5.0])
    tau0 = 3.0
    rng = rng_stream(2)
    n = 100_000
    draws = np.array([sample_theta_prior(theta, Pi, tau0, rng) for _ in range(n)])
    mean = Pi @ theta
    var = mean / tau0
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 5 * np.sqrt(var / n))
    # gamma variance of the sample variance: (2 + 6/shape) var^2 / n
    shape = tau0 * mean
    assert np.all(np.abs(draws.var(axis=0) - var) < 5 * np.sqrt((2 + 6 / shape) * var**2 / n))


def test_generate_is_reproducible():
    hyper = Hyperparams(K=4)
    a = generate(hyper, 5, 7, rng_stream(11))
    b = generate(hyper, 5, 7, rng_stream(11))
    assert a[0] == b[0] and a[1] == b[1]


def test_nu_sum_matches_gamma_moments():
    # given beta, sum_k nu_k ~ Gam(gamma0, beta); check via the unconditional draw of nu | beta
    hyper = Hyperparams()  # gamma0=50, K=100
    n = 4000
    rng = rng_stream(3)
    ratios = np.empty(n)
    for i in range(n):
        s = sample_prior(hyper, 1, 1, rng)
        ratios[i] = s.nu.sum() * s.beta  # ~ Gam(gamma0, 1) independently of beta
    assert stats.kstest(ratios, stats.gamma(hyper.gamma0).cdf).pvalue > 1e-3


def test_shrinkage_prior_is_heavy_tailed():
    # normalised nu is Dir(gamma0/K, ...); with shape 0.5 the top tenth of the
    # components carries far more than the 10% an even split would give
    rng = rng_stream(4)
    shares = []
    for _ in range(300):
        nu = np.sort(sample_prior(Hyperparams(), 1, 1, rng).nu)[::-1]
        shares.append(nu[:10].sum() / nu.sum())
    ref = np.sort(rng.dirichlet(np.full(100, 0.5), size=20_000), axis=1)[:, ::-1][:, :10].sum(axis=1)
    assert np.mean(shares) > 0.3
    assert abs(np.mean(shares) - ref.mean()) < 5 * ref.std() / math.sqrt(len(shares))


# --------------------------------------------------------------------------
# Rates and the log joint


def test_poisson_rate_k1_example():
    s = ModelState(Phi=np.array([[0.3], [0.7]]), Theta=np.array([[5.0]]), Pi=np.array([[1.0]]),
                   nu=np.array([1.0]), xi=1.0, beta=1.0, delta=np.array([2.0]))
    assert poisson_rate(s, 0, 0) == pytest.approx(3.0)


def test_poisson_rate_zero_theta_limit():
    s = small_state()
    s.Theta[2] = 0.0
    assert all(poisson_rate(s, v, 2) == 0.0 for v in range(s.V))


def test_rates_sum_over_features():
    s = small_state(V=6, T=4, K=3, seed=5)
    R = rate_matrix(s)
    assert np.allclose(R.sum(axis=0), s.delta * s.Theta.sum(axis=1), rtol=1e-12)
    assert R[2, 1] == pytest.approx(poisson_rate(s, 2, 1), rel=1e-14)


def test_log_joint_hand_computed_1x1x1():
    s = ModelState(Phi=np.array([[1.0]]), Theta=np.array([[2.0]]), Pi=np.array([[1.0]]),
                   nu=np.array([1.5]), xi=0.7, beta=1.2, delta=np.array([0.5]))
    hyper = Hyperparams(K=1, tau0=2.0, gamma0=3.0, eta0=0.1, eps0=0.1)
    Y = CountMatrix.from_dense([[3]])

    def lgam(x, a, b):
        return a * math.log(b) - math.lgamma(a) + (a - 1) * math.log(x) - b * x

    expected = (
        lgam(1.2, 0.1, 0.1)  # beta
        + lgam(1.5, 3.0, 1.2)  # nu ~ Gam(gamma0 / K, beta)
        + lgam(0.7, 0.1, 0.1)  # xi
        + 0.0 + 0.0  # one-category Dirichlets have density one
        + lgam(0.5, 0.1, 0.1)  # delta
        + lgam(2.0, 2.0 * 1.5, 2.0)  # theta1 ~ Gam(tau0 nu, tau0)
        + 3 * math.log(1.0) - 1.0 - math.log(6)  # Pois(3; rate = 0.5 * 1 * 2 = 1)
    )
    assert log_joint(s, Y, hyper) == pytest.approx(expected, rel=1e-12)


def test_log_joint_zero_column_adds_minus_rate():
    hyper = Hyperparams(K=3, gamma0=5.0, eps0=1.0, stationary=True)
    s, Y = generate(hyper, 4, 6, rng_stream(6))
    base = log_likelihood(s, Y)
    # append a time step with no counts
    s2 = s.copy()
    s2.Theta = np.vstack([s.Theta, [[1.0, 2.0, 0.5]]])
    s2.delta = np.append(s.delta, s.delta[0])
    Y2 = CountMatrix(Y.V, Y.T + 1, Y.v, Y.t, Y.counts)
    diff = log_likelihood(s2, Y2) - base
    assert diff == pytest.approx(-rate_matrix(s2)[:, -1].sum(), rel=1e-12)


def test_log_joint_permutation_invariant():
    hyper = Hyperparams(K=4, gamma0=5.0, eps0=1.0)
    s, Y = generate(hyper, 5, 6, rng_stream(7))
    perm = np.array([2, 0, 3, 1])
    p = s.copy()
    p.Phi, p.Theta, p.nu = s.Phi[:, perm], s.Theta[:, perm], s.nu[perm]
    p.Pi = s.Pi[np.ix_(perm, perm)]
    assert log_joint(p, Y, hyper) == pytest.approx(log_joint(s, Y, hyper), rel=1e-12)


def test_log_joint_rejects_invalid_state_or_shape():
    hyper = Hyperparams(K=3, gamma0=5.0, eps0=1.0)
    s, Y = generate(hyper, 4, 5, rng_stream(8))
    with pytest.raises(DomainError):
        log_joint(s, CountMatrix(4, 3, [], [], []), hyper)
    s.Phi[0, 0] = -0.1
    with pytest.raises(DomainError):
        log_joint(s, Y, hyper)
