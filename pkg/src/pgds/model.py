"""Model types, ancestral simulation and the log joint density."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.special import gammaln

from pgds.distributions import (
    TINY,
    DomainError,
    dirichlet_logpdf,
    gamma_logpdf,
    sample_dirichlet,
    sample_gamma,
    sample_poisson,
)


class ConfigError(ValueError):
    """Invalid hyperparameters or run configuration; message names the field."""


@dataclass(frozen=True)
class Hyperparams:
    tau0: float = 1.0
    gamma0: float = 50.0
    eta0: float = 0.1
    eps0: float = 0.1
    K: int = 100
    stationary: bool = True
    steady_state: bool = False

    def __post_init__(self):
        for name in ("tau0", "gamma0", "eta0", "eps0"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ConfigError(f"{name} must be a positive finite number, got {val!r}")
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError(f"K must be a positive integer, got {self.K!r}")
        if self.steady_state and not self.stationary:
            raise ConfigError("steady_state requires stationary=True")


@dataclass
class CountMatrix:
    """Sparse V x T count matrix in coordinate form (stored counts >= 1).

    Entries are kept sorted by (t, v); indices are 0-based.
    """

    V: int
    T: int
    v: np.ndarray
    t: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.V < 1 or self.T < 1:
            raise DomainError("count matrix needs V >= 1 and T >= 1")
        if not (self.v.shape == self.t.shape == self.counts.shape):
            raise DomainError("coordinate arrays must have equal length")
        if self.counts.size and (self.counts.min() < 1):
            raise DomainError("stored counts must be >= 1")
        if self.v.size and (self.v.min() < 0 or self.v.max() >= self.V
                            or self.t.min() < 0 or self.t.max() >= self.T):
            raise DomainError("count index out of range")

    @classmethod
    def from_triplets(cls, V, T, v, t, counts) -> "CountMatrix":
        """Build from possibly duplicated / zero triplets; duplicates are summed."""
        v = np.asarray(v, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if v.size and (v.min() < 0 or v.max() >= V or t.min() < 0 or t.max() >= T):
            raise DomainError("count index out of range")
        if counts.size and counts.min() < 0:
            raise DomainError("counts must be non-negative")
        key = t * V + v
        uniq, inv = np.unique(key, return_inverse=True)
        summed = np.bincount(inv, weights=counts, minlength=uniq.size).astype(np.int64)
        keep = summed > 0
        uniq = uniq[keep]
        return cls(V, T, uniq % V, uniq // V, summed[keep])

    @classmethod
    def from_dense(cls, Y) -> "CountMatrix":
        Y = np.asarray(Y)
        if np.any(Y < 0) or np.any(Y != np.round(Y)):
            raise DomainError("dense counts must be non-negative integers")
        t, v = np.nonzero(Y.T)
        return cls(Y.shape[0], Y.shape[1], v, t, Y[v, t].astype(np.int64))

    def to_dense(self) -> np.ndarray:
        Y = np.zeros((self.V, self.T), dtype=np.int64)
        Y[self.v, self.t] = self.counts
        return Y

    def column_totals(self) -> np.ndarray:
        return np.bincount(self.t, weights=self.counts, minlength=self.T).astype(np.int64)

    def columns(self, keep) -> "CountMatrix":
        """Sub-matrix restricted to the (0-based) time indices in ``keep``, renumbered."""
        keep = np.asarray(sorted(keep), dtype=np.int64)
        remap = np.full(self.T, -1, dtype=np.int64)
        remap[keep] = np.arange(keep.size)
        sel = remap[self.t] >= 0
        return CountMatrix(self.V, keep.size, self.v[sel], remap[self.t[sel]], self.counts[sel])

    def __eq__(self, other):
        if not isinstance(other, CountMatrix):
            return NotImplemented
        return (self.V, self.T) == (other.V, other.T) and all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in ("v", "t", "counts")
        )


@dataclass
class ModelState:
    """All latent parameters. ``Phi`` is V x K, ``Theta`` T x K, ``Pi`` K x K."""

    Phi: np.ndarray
    Theta: np.ndarray
    Pi: np.ndarray
    nu: np.ndarray
    xi: float
    beta: float
    delta: np.ndarray
    # Metropolis step sizes (log scale) for nu and xi; carried with the state so
    # that a resumed chain continues with the adapted values.
    step_nu: float = 1.0
    step_xi: float = 1.0

    ARRAY_FIELDS = ("Phi", "Theta", "Pi", "nu", "delta")
    SCALAR_FIELDS = ("xi", "beta", "step_nu", "step_xi")

    @property
    def K(self) -> int:
        return self.Pi.shape[0]

    @property
    def V(self) -> int:
        return self.Phi.shape[0]

    @property
    def T(self) -> int:
        return self.Theta.shape[0]

    def copy(self) -> "ModelState":
        return replace(self, **{f: getattr(self, f).copy() for f in self.ARRAY_FIELDS})

    def validate(self, tol: float = 1e-10) -> None:
        K = self.K
        if self.Phi.shape[1] != K or self.Theta.shape[1] != K or self.Pi.shape != (K, K):
            raise DomainError("inconsistent component dimension")
        if self.nu.shape != (K,) or self.delta.shape != (self.T,):
            raise DomainError("nu must have length K and delta length T")
        for name in self.ARRAY_FIELDS + ("xi", "beta"):
            val = np.asarray(getattr(self, name))
            if not np.all(np.isfinite(val)) or np.any(val <= 0):
                raise DomainError(f"{name} must be strictly positive and finite")
        if np.max(np.abs(self.Phi.sum(axis=0) - 1.0)) > tol:
            raise DomainError("columns of Phi must sum to one")
        if np.max(np.abs(self.Pi.sum(axis=0) - 1.0)) > tol:
            raise DomainError("columns of Pi must sum to one")

    def __eq__(self, other):
        if not isinstance(other, ModelState):
            return NotImplemented
        return all(np.array_equal(getattr(self, f.name), getattr(other, f.name)) for f in fields(self))


def pi_concentration(nu: np.ndarray, xi: float) -> np.ndarray:
    """K x K prior concentrations: column k is (nu_1 nu_k, ..., xi nu_k, ..., nu_K nu_k)."""
    conc = np.outer(nu, nu)
    np.fill_diagonal(conc, xi * nu)
    return np.maximum(conc, TINY)


def sample_theta_prior(theta_prev, Pi, tau0, rng):
    """One transition step: Gam(tau0 * Pi @ theta_prev, tau0)."""
    return sample_gamma(np.maximum(tau0 * (Pi @ theta_prev), TINY), tau0, rng)


def sample_prior(hyper: Hyperparams, V: int, T: int, rng: np.random.Generator) -> ModelState:
    """Ancestral draw of all parameters (prior order beta, nu, xi, Pi, Phi, delta, Theta)."""
    if V < 1 or T < 1:
        raise DomainError("V and T must be >= 1")
    K, tau0, eps0 = hyper.K, hyper.tau0, hyper.eps0
    beta = sample_gamma(eps0, eps0, rng)
    nu = sample_gamma(np.full(K, hyper.gamma0 / K), beta, rng)
    xi = sample_gamma(eps0, eps0, rng)
    Pi = sample_dirichlet(pi_concentration(nu, xi), rng, axis=0)
    Phi = sample_dirichlet(np.full((V, K), hyper.eta0), rng, axis=0)
    if hyper.stationary:
        delta = np.full(T, sample_gamma(eps0, eps0, rng))
    else:
        delta = sample_gamma(np.full(T, eps0), eps0, rng)
    Theta = np.empty((T, K))
    Theta[0] = sample_gamma(np.maximum(tau0 * nu, TINY), tau0, rng)
    for t in range(1, T):
        Theta[t] = sample_theta_prior(Theta[t - 1], Pi, tau0, rng)
    return ModelState(Phi=Phi, Theta=Theta, Pi=Pi, nu=nu, xi=xi, beta=beta, delta=delta)


def rate_matrix(state: ModelState) -> np.ndarray:
    """Dense V x T Poisson rates delta^(t) * sum_k phi_vk theta_k^(t)."""
    return (state.Phi @ state.Theta.T) * state.delta[None, :]


def poisson_rate(state: ModelState, v: int, t: int) -> float:
    return float(state.delta[t] * (state.Phi[v] @ state.Theta[t]))


def sample_counts(state: ModelState, rng: np.random.Generator) -> CountMatrix:
    """Draw Y ~ Pois(rates) given all parameters."""
    return CountMatrix.from_dense(sample_poisson(rate_matrix(state), rng))


def generate(hyper: Hyperparams, V: int, T: int, rng: np.random.Generator):
    """Ancestral simulation of (state, Y)."""
    state = sample_prior(hyper, V, T, rng)
    return state, sample_counts(state, rng)


def log_prior(state: ModelState, hyper: Hyperparams) -> float:
    K, tau0, eps0 = hyper.K, hyper.tau0, hyper.eps0
    lp = gamma_logpdf(state.beta, eps0, eps0)
    lp += np.sum(gamma_logpdf(state.nu, hyper.gamma0 / K, state.beta))
    lp += gamma_logpdf(state.xi, eps0, eps0)
    lp += dirichlet_logpdf(state.Pi, pi_concentration(state.nu, state.xi), axis=0)
    lp += dirichlet_logpdf(state.Phi, np.full(state.Phi.shape, hyper.eta0), axis=0)
    if hyper.stationary:
        lp += gamma_logpdf(state.delta[0], eps0, eps0)
    else:
        lp += np.sum(gamma_logpdf(state.delta, eps0, eps0))
    Th = state.Theta
    lp += np.sum(gamma_logpdf(Th[0], tau0 * state.nu, tau0))
    if state.T > 1:
        shapes = np.maximum(tau0 * (Th[:-1] @ state.Pi.T), TINY)
        lp += np.sum(gamma_logpdf(Th[1:], shapes, tau0))
    return float(lp)


def log_likelihood(state: ModelState, Y: CountMatrix) -> float:
    """Poisson log likelihood over every cell of Y (zeros included)."""
    total_rate = float(np.sum(state.delta * state.Theta.sum(axis=1)))
    rates = state.delta[Y.t] * np.einsum("nk,nk->n", state.Phi[Y.v], state.Theta[Y.t])
    return float(np.sum(Y.counts * np.log(rates) - gammaln(Y.counts + 1.0)) - total_rate)


def log_joint(state: ModelState, Y: CountMatrix, hyper: Hyperparams) -> float:
    state.validate()
    if (Y.V, Y.T) != (state.V, state.T):
        raise DomainError("data shape does not match state")
    return log_prior(state, hyper) + log_likelihood(state, Y)


def impute_counts(state: ModelState, Y: CountMatrix, times, rng: np.random.Generator) -> CountMatrix:
    """Replace every cell of the (0-based) columns ``times`` by a Pois(rate) draw.

    Entries outside ``times`` are passed through untouched.
    """
    times = np.unique(np.asarray(list(times), dtype=np.int64))
    if times.size == 0:
        return Y
    if times.size >= Y.T:
        raise ConfigError("mask covers every time step; nothing left to condition on")
    rates = (state.Phi @ state.Theta[times].T) * state.delta[times][None, :]
    draws = sample_poisson(rates, rng)
    keep = ~np.isin(Y.t, times)
    vv, tt = np.nonzero(draws)
    return CountMatrix.from_triplets(
        Y.V, Y.T,
        np.concatenate([Y.v[keep], vv]),
        np.concatenate([Y.t[keep], times[tt]]),
        np.concatenate([Y.counts[keep], draws[vv, tt]]),
    )
