"""Backward-filtering / forward-sampling Gibbs sampler.

Time indices are 0-based throughout: row ``s`` of ``Theta`` is time step
``s + 1``. Arrays that run to ``T + 1`` (``zeta``, ``l_col``) carry the
boundary term at index ``T``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from pgds.distributions import (
    TINY,
    sample_crt,
    sample_dirichlet,
    sample_gamma,
    sample_multinomial,
    sample_poisson,
    steady_state_zeta,
)
from pgds.model import (
    ConfigError,
    CountMatrix,
    Hyperparams,
    ModelState,
    impute_counts,
    log_joint,
    pi_concentration,
    sample_prior,
)

log = logging.getLogger(__name__)


class SamplerError(RuntimeError):
    """A sweep produced a non-finite or out-of-support value."""


@dataclass
class ZetaSchedule:
    zeta: np.ndarray  # length T + 1; zeta[s] is the backward scalar at step s+1
    steady: Optional[float] = None


@dataclass
class LatentCounts:
    y_vk: np.ndarray  # nnz x K, aligned with the entries of Y
    y_dot_k: np.ndarray  # T x K
    n_vk: np.ndarray  # V x K, subcounts summed over time
    l_kk2: np.ndarray  # T x K x K; slice s holds the step s+1 tables (slice 0 unused)
    l_row: np.ndarray  # T x K
    l_col: np.ndarray  # (T + 1) x K; l_col[T] is the boundary term

    def m(self, s: int) -> np.ndarray:
        return self.y_dot_k[s] + self.l_col[s + 1]


@dataclass(frozen=True)
class Schedule:
    iterations: int = 6000
    burn_in: int = 4000
    thin: int = 100

    def __post_init__(self):
        if self.iterations < 1 or self.burn_in < 0 or self.thin < 1:
            raise ConfigError("iterations >= 1, burn_in >= 0 and thin >= 1 required")
        if self.burn_in >= self.iterations:
            raise ConfigError(f"burn_in ({self.burn_in}) must be < iterations ({self.iterations})")

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def retains(self, it: int) -> bool:
        """Whether 1-based iteration ``it`` is kept."""
        return it > self.burn_in and (it - self.burn_in) % self.thin == 0


@dataclass
class SampleChain:
    states: list
    hyper: Hyperparams
    schedule: Schedule
    seed: int = 0
    smoothing: tuple = ()  # 0-based time indices imputed during sampling
    trace: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.states)

    def __eq__(self, other):
        if not isinstance(other, SampleChain):
            return NotImplemented
        return (
            self.hyper == other.hyper
            and self.schedule == other.schedule
            and self.seed == other.seed
            and tuple(self.smoothing) == tuple(other.smoothing)
            and self.states == other.states
            and self.trace.keys() == other.trace.keys()
            and all(np.array_equal(self.trace[k], other.trace[k]) for k in self.trace)
        )


# --------------------------------------------------------------------------
# Individual conditional updates


def compute_zeta(delta, tau0: float, steady: bool) -> ZetaSchedule:
    delta = np.asarray(delta, dtype=float)
    T = delta.size
    if steady:
        z = steady_state_zeta(float(delta[0]), tau0)
        return ZetaSchedule(np.full(T + 1, z), steady=z)
    zeta = np.zeros(T + 1)
    for s in range(T - 1, -1, -1):
        zeta[s] = np.log1p(delta[s] / tau0 + zeta[s + 1])
    return ZetaSchedule(zeta)


def sample_subcounts(Y: CountMatrix, Phi, Theta, rng):
    """Thin each non-zero count across components. Returns (y_vk, y_dot_k, n_vk)."""
    T, K = Theta.shape
    logw = np.log(Phi)[Y.v] + np.log(Theta)[Y.t]
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    y_vk = sample_multinomial(Y.counts, w, rng).reshape(-1, K)
    y_dot_k = np.zeros((T, K), dtype=np.int64)
    np.add.at(y_dot_k, Y.t, y_vk)
    n_vk = np.zeros((Phi.shape[0], K), dtype=np.int64)
    np.add.at(n_vk, Y.v, y_vk)
    return y_vk, y_dot_k, n_vk


def sample_aux_backward(state: ModelState, y_dot_k, zeta: ZetaSchedule, tau0: float, rng):
    """Backward filtering pass. Returns (l_kk2, l_row, l_col)."""
    T, K = state.Theta.shape
    l_kk2 = np.zeros((T, K, K), dtype=np.int64)
    l_row = np.zeros((T, K), dtype=np.int64)
    l_col = np.zeros((T + 1, K), dtype=np.int64)
    if zeta.steady is not None:
        l_col[T] = sample_poisson(zeta.steady * tau0 * state.Theta[T - 1], rng)
    log_pi = np.log(state.Pi)
    log_theta = np.log(state.Theta)
    for s in range(T - 1, 0, -1):
        m = y_dot_k[s] + l_col[s + 1]
        logw = log_pi + log_theta[s - 1][None, :]
        top = logw.max(axis=1)
        w = np.exp(logw - top[:, None])
        tot = w.sum(axis=1)
        shape = np.maximum(tau0 * tot * np.exp(top), TINY)
        l_row[s] = sample_crt(m, shape, rng)
        l_kk2[s] = rng.multinomial(l_row[s], w / tot[:, None])
        l_col[s] = l_kk2[s].sum(axis=0)
    return l_kk2, l_row, l_col


def sample_theta_forward(state: ModelState, latent: LatentCounts, zeta: ZetaSchedule, tau0: float, rng):
    """Forward sampling pass. Returns a new T x K Theta."""
    T, K = state.Theta.shape
    rate = tau0 + state.delta + zeta.zeta[1:] * tau0
    Theta = np.empty((T, K))
    Theta[0] = sample_gamma(
        np.maximum(latent.y_dot_k[0] + latent.l_col[1] + tau0 * state.nu, TINY), rate[0], rng
    )
    for s in range(1, T):
        shape = latent.y_dot_k[s] + latent.l_col[s + 1] + tau0 * (state.Pi @ Theta[s - 1])
        Theta[s] = sample_gamma(np.maximum(shape, TINY), rate[s], rng)
    return Theta


def pi_posterior_concentration(l_kk2, nu, xi) -> np.ndarray:
    return pi_concentration(nu, xi) + l_kk2.sum(axis=0)


def sample_pi(l_kk2, nu, xi, rng):
    return sample_dirichlet(pi_posterior_concentration(l_kk2, nu, xi), rng, axis=0)


def sample_phi(n_vk, eta0: float, rng):
    return sample_dirichlet(eta0 + n_vk, rng, axis=0)


def sample_delta(Y: CountMatrix, Theta, eps0: float, stationary: bool, rng):
    y_tot = Y.column_totals()
    th_tot = Theta.sum(axis=1)
    if stationary:
        d = sample_gamma(eps0 + y_tot.sum(), eps0 + th_tot.sum(), rng)
        return np.full(Theta.shape[0], d)
    return sample_gamma(eps0 + y_tot, eps0 + th_tot, rng)


def _dm_gain(c, n):
    # log Gamma(c + n) - log Gamma(c): the count-dependent part of a Dirichlet-multinomial
    return gammaln(c + n) - gammaln(c)


def _nu_log_target(k, nu_k, nu, xi, L, beta, m1, zeta1, hyper: Hyperparams) -> float:
    """Terms of log p(nu_k | -) that involve nu_k, with Theta and Pi marginalised.

    ``L[i, j]`` counts transitions from component j into i summed over time, so
    column j contributes a Dirichlet-multinomial with concentration pi_concentration[:, j].
    """
    K, tau0 = nu.size, hyper.tau0
    nu = nu.copy()
    nu[k] = nu_k
    L_col = L.sum(axis=0)
    lp = (hyper.gamma0 / K - 1.0) * np.log(nu_k) - beta * nu_k
    r = tau0 * nu_k
    lp += gammaln(m1[k] + r) - gammaln(r) - r * zeta1
    A = np.maximum(nu * (nu.sum() - nu + xi), TINY)
    col = np.maximum(nu * nu_k, TINY)
    col[k] = max(xi * nu_k, TINY)
    lp += gammaln(A[k]) - gammaln(A[k] + L_col[k]) + _dm_gain(col, L[:, k]).sum()
    if K > 1:
        others = np.arange(K) != k
        lp += np.sum(gammaln(A[others]) - gammaln(A[others] + L_col[others]))
        lp += _dm_gain(col[others], L[k, others]).sum()
    return float(lp)


def _nu_scale_log_target(nu, xi, L, m1, zeta1, hyper: Hyperparams) -> float:
    """log p(nu | -) for the whole vector with Theta, Pi and beta integrated out."""
    K, tau0 = nu.size, hyper.tau0
    r = tau0 * nu
    lp = (hyper.gamma0 / K - 1.0) * np.log(nu).sum()
    lp -= (hyper.gamma0 + hyper.eps0) * np.log(hyper.eps0 + nu.sum())
    lp += np.sum(gammaln(m1 + r) - gammaln(r) - r * zeta1)
    conc = np.maximum(pi_concentration(nu, xi), TINY)
    lp += np.sum(gammaln(conc.sum(axis=0)) - gammaln(conc.sum(axis=0) + L.sum(axis=0)))
    lp += _dm_gain(conc, L).sum()
    return float(lp)


# proposal scales for the joint rescaling move, one picked uniformly per sweep
SCALE_STEPS = (0.02, 0.2, 1.0)


def _xi_log_target(xi, nu, L, eps0) -> float:
    A = np.maximum(nu * (nu.sum() - nu + xi), TINY)
    diag = np.maximum(xi * nu, TINY)
    return float(
        (eps0 - 1.0) * np.log(xi) - eps0 * xi
        + np.sum(gammaln(A) - gammaln(A + L.sum(axis=0)))
        + _dm_gain(diag, np.diag(L)).sum()
    )


def sample_nu_xi_beta(state: ModelState, latent: LatentCounts, zeta: ZetaSchedule, hyper: Hyperparams, rng):
    """Random-walk Metropolis on log(nu_k) and log(xi); exact gamma draw for beta.

    Pi is integrated out of both targets, so Pi must be redrawn afterwards.
    Returns ``(nu, xi, beta, accepted_nu, accepted_xi)``.
    """
    nu = state.nu.copy()
    xi, beta = state.xi, state.beta
    L = latent.l_kk2.sum(axis=0)
    m1 = latent.m(0)
    zeta1 = zeta.zeta[0]
    acc_nu = 0
    for k in range(nu.size):
        cur = _nu_log_target(k, nu[k], nu, xi, L, beta, m1, zeta1, hyper)
        prop = nu[k] * np.exp(state.step_nu * rng.standard_normal())
        if prop < TINY or not np.isfinite(prop):
            continue
        new = _nu_log_target(k, prop, nu, xi, L, beta, m1, zeta1, hyper)
        # log-scale walk: Jacobian term log(prop) - log(cur)
        if np.log(rng.random()) < new - cur + np.log(prop / nu[k]):
            nu[k] = prop
            acc_nu += 1
    # Joint rescaling nu -> c nu with beta marginalised: the single-site walk is
    # slow along the direction where the overall scale of nu is weakly identified.
    cur = _nu_scale_log_target(nu, xi, L, m1, zeta1, hyper)
    log_c = SCALE_STEPS[rng.integers(len(SCALE_STEPS))] * rng.standard_normal()
    prop_nu = nu * np.exp(log_c)
    if np.all(prop_nu >= TINY) and np.all(np.isfinite(prop_nu)):
        new = _nu_scale_log_target(prop_nu, xi, L, m1, zeta1, hyper)
        if np.log(rng.random()) < new - cur + nu.size * log_c:
            nu = prop_nu
    cur = _xi_log_target(xi, nu, L, hyper.eps0)
    prop = xi * np.exp(state.step_xi * rng.standard_normal())
    acc_xi = 0
    if TINY <= prop < np.inf:
        new = _xi_log_target(prop, nu, L, hyper.eps0)
        if np.log(rng.random()) < new - cur + np.log(prop / xi):
            xi = prop
            acc_xi = 1
    return nu, xi, sample_beta(nu, hyper, rng), acc_nu, acc_xi


def sample_beta(nu, hyper: Hyperparams, rng) -> float:
    return sample_gamma(hyper.eps0 + hyper.gamma0, hyper.eps0 + np.sum(nu), rng)


# --------------------------------------------------------------------------
# Full sweep


def _check_finite(state: ModelState, where: str):
    bad = [
        name for name in ModelState.ARRAY_FIELDS + ("xi", "beta")
        if not np.all(np.isfinite(getattr(state, name)))
        or np.any(np.asarray(getattr(state, name)) <= 0)
    ]
    if bad:
        dump = ", ".join(
            f"{n}: min={np.min(getattr(state, n)):.3g} max={np.max(getattr(state, n)):.3g}" for n in bad
        )
        raise SamplerError(f"non-finite or non-positive values after {where}: {dump}")


def gibbs_sweep(state: ModelState, Y: CountMatrix, hyper: Hyperparams, rng, info: Optional[dict] = None) -> ModelState:
    """One full scan; returns a new state.

    nu, xi and beta are updated between the backward and forward passes with
    Theta and Pi marginalised out; Pi is then drawn given them, and Theta
    given everything. ``info`` (if given) receives acceptance counts and the latent counts.
    """
    tau0 = hyper.tau0
    zeta = compute_zeta(state.delta, tau0, hyper.steady_state)
    y_vk, y_dot_k, n_vk = sample_subcounts(Y, state.Phi, state.Theta, rng)
    l_kk2, l_row, l_col = sample_aux_backward(state, y_dot_k, zeta, tau0, rng)
    latent = LatentCounts(y_vk, y_dot_k, n_vk, l_kk2, l_row, l_col)

    new = state.copy()
    new.nu, new.xi, new.beta, acc_nu, acc_xi = sample_nu_xi_beta(new, latent, zeta, hyper, rng)
    new.Pi = sample_pi(l_kk2, new.nu, new.xi, rng)
    new.Theta = sample_theta_forward(new, latent, zeta, tau0, rng)
    new.Phi = sample_phi(n_vk, hyper.eta0, rng)
    new.delta = sample_delta(Y, new.Theta, hyper.eps0, hyper.stationary, rng)
    _check_finite(new, "gibbs sweep")
    if info is not None:
        info.update(accept_nu=acc_nu, accept_xi=acc_xi, latent=latent, zeta=zeta)
    return new


def _adapt(step: float, rate: float) -> float:
    if rate < 0.2:
        return step * 0.7
    if rate > 0.45:
        return step * 1.3
    return step


def fit(
    Y: CountMatrix,
    hyper: Hyperparams,
    schedule: Schedule,
    rng: np.random.Generator,
    *,
    smoothing=(),
    init: Optional[ModelState] = None,
    seed: int = 0,
    progress: Optional[Callable[[dict], None]] = None,
    progress_every: int = 100,
    adapt_every: int = 50,
) -> SampleChain:
    """Run the sampler and keep thinned post-burn-in states.

    ``smoothing`` lists 0-based columns of ``Y`` treated as missing: they are
    re-imputed from the current state before every sweep.
    """
    smoothing = tuple(sorted({int(s) for s in smoothing}))
    if any(s < 0 or s >= Y.T for s in smoothing):
        raise ConfigError("smoothing index out of range")
    state = init.copy() if init is not None else sample_prior(hyper, Y.V, Y.T, rng)
    if (state.V, state.T, state.K) != (Y.V, Y.T, hyper.K):
        raise ConfigError("initial state does not match data shape / K")
    retained = []
    lj = np.empty(schedule.iterations)
    acc_nu_tr = np.empty(schedule.iterations)
    acc_xi_tr = np.empty(schedule.iterations)
    win_nu = win_xi = win_n = 0
    t_last = time.perf_counter()
    for it in range(1, schedule.iterations + 1):
        Y_work = impute_counts(state, Y, smoothing, rng) if smoothing else Y
        info = {}
        try:
            state = gibbs_sweep(state, Y_work, hyper, rng, info)
        except SamplerError as err:
            raise SamplerError(f"iteration {it}: {err}") from err
        acc_nu_tr[it - 1] = info["accept_nu"] / hyper.K
        acc_xi_tr[it - 1] = info["accept_xi"]
        lj[it - 1] = log_joint(state, Y_work, hyper)
        if it <= schedule.burn_in:
            win_nu += info["accept_nu"]
            win_xi += info["accept_xi"]
            win_n += 1
            if win_n == adapt_every:
                state.step_nu = _adapt(state.step_nu, win_nu / (win_n * hyper.K))
                state.step_xi = _adapt(state.step_xi, win_xi / win_n)
                win_nu = win_xi = win_n = 0
        if schedule.retains(it):
            retained.append(state.copy())
        if progress is not None and (it % progress_every == 0 or it == schedule.iterations):
            now = time.perf_counter()
            lo = max(0, it - progress_every)
            progress({
                "iteration": it,
                "log_joint": float(lj[it - 1]),
                "accept_nu": float(acc_nu_tr[lo:it].mean()),
                "accept_xi": float(acc_xi_tr[lo:it].mean()),
                "sum_nu": float(state.nu.sum()),
                "sweeps_per_sec": (it - lo) / max(now - t_last, 1e-12),
            })
            t_last = now
    return SampleChain(
        states=retained,
        hyper=hyper,
        schedule=schedule,
        seed=seed,
        smoothing=smoothing,
        trace={"log_joint": lj, "accept_nu": acc_nu_tr, "accept_xi": acc_xi_tr},
    )
