"""Executable correctness checks for the primitives and the sampler."""
from __future__ import annotations

import contextlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from unittest import mock

import numpy as np
from scipy import stats
from scipy.integrate import quad

from pgds import gibbs
from pgds.distributions import (
    bp_link,
    crt_pmf,
    nb_logpmf,
    rng_stream,
    steady_state_zeta,
    sumlog_pmf_table,
)
from pgds.model import CountMatrix, Hyperparams, ModelState, generate, sample_counts


class ValidationFailure(RuntimeError):
    """At least one validation check failed."""


@dataclass
class CheckResult:
    name: str
    statistic: float
    threshold: float
    passed: bool
    seed: int | None = None
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: statistic={self.statistic:.6g} threshold={self.threshold:.6g}"


@dataclass
class TestReport:
    checks: list = field(default_factory=list)

    __test__ = False  # not a pytest class

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, check: CheckResult) -> CheckResult:
        self.checks.append(check)
        return check

    def to_json(self) -> str:
        return json.dumps({"passed": self.passed, "checks": [asdict(c) for c in self.checks]},
                          indent=2, default=float)


# --------------------------------------------------------------------------
# Augmentation identities


def check_def2_marginalization(a, c, b, trials=100_000, seed=0) -> CheckResult:
    """Gamma-mixed Poisson draws against the NB(a, c/(b+c)) pmf (chi-square)."""
    rng = rng_stream(seed)
    theta = rng.gamma(a, 1.0 / b, size=trials)
    y = rng.poisson(c * theta)
    p = c / (b + c)
    zeta = math.log1p(c / b)
    link_err = abs(bp_link(zeta) - p)
    # bins 0..cut-1 plus a tail bin; cut is the first value past the mode whose
    # expected count drops below 5
    support = np.arange(int(y.max()) + 2)
    expected = trials * np.exp(nb_logpmf(support, a, p))
    mode = int(np.argmax(expected))
    low = np.nonzero(expected[mode:] < 5)[0]
    cut = max(mode + (int(low[0]) if low.size else expected.size - mode), 1)
    obs = np.bincount(np.minimum(y, cut), minlength=cut + 1).astype(float)
    exp_ = np.append(expected[:cut], trials - expected[:cut].sum())
    if exp_[-1] < 5 and exp_.size > 2:
        obs = np.append(obs[:-2], obs[-2:].sum())
        exp_ = np.append(exp_[:-2], exp_[-2:].sum())
    pval = stats.chisquare(obs, exp_).pvalue
    ok = pval > 1e-3 and link_err < 1e-12
    return CheckResult(f"gamma_poisson_is_nb(a={a},c={c},b={b})", float(pval), 1e-3, bool(ok), seed,
                       {"link_error": link_err, "bins": int(obs.size)})


def joint_pmfs(a, zeta, y_max):
    """Exact joint pmfs of (y, l) under NB x CRT and Pois x SumLog on y <= y_max."""
    p = bp_link(zeta)
    nb = np.exp(nb_logpmf(np.arange(y_max + 1), a, p))
    crt_route = np.zeros((y_max + 1, y_max + 1))
    for y in range(y_max + 1):
        for l in range(y + 1):
            crt_route[y, l] = nb[y] * crt_pmf(l, y, a)
    pois = stats.poisson.pmf(np.arange(y_max + 1), a * zeta)
    sumlog_route = np.zeros_like(crt_route)
    for l in range(y_max + 1):
        sumlog_route[:, l] = pois[l] * sumlog_pmf_table(l, p, y_max)
    return crt_route, sumlog_route


def check_def3_equivalence(a, zeta, y_max=30) -> CheckResult:
    """Total variation between the two exact joint pmfs of (y, l)."""
    pa, pb = joint_pmfs(a, zeta, y_max)
    tv = 0.5 * np.abs(pa - pb).sum()
    # support (l <= y) and the (0, 0) cell are checked exactly
    support_ok = np.all(np.triu(pa, 1) == 0) and np.all(np.triu(pb, 1) == 0)
    truncated = 1.0 - pa.sum()
    ok = tv <= 1e-8 and support_ok
    return CheckResult(f"nb_crt_equals_poisson_sumlog(a={a},zeta={zeta})", float(tv), 1e-8, bool(ok), None,
                       {"truncated_mass": float(truncated)})


def check_proposition1(delta, tau0, T=200) -> CheckResult:
    """Backward recursion from zero against the closed-form fixed point."""
    zstar = steady_state_zeta(delta, tau0)
    residual = abs(zstar - math.log1p(delta / tau0 + zstar))
    z = 0.0
    iterates = []
    for _ in range(T):
        z = math.log1p(delta / tau0 + z)
        iterates.append(z)
    gap = abs(z - zstar)
    monotone = bool(np.all(np.diff(iterates) >= 0))
    ok = gap <= 1e-8 and residual <= 1e-10 and monotone
    return CheckResult(f"steady_state_fixed_point(delta={delta},tau0={tau0},T={T})", gap, 1e-8, bool(ok), None,
                       {"zeta_star": zstar, "residual": residual, "monotone": monotone})


# --------------------------------------------------------------------------
# Geweke joint-distribution test

GEWEKE_HYPER = Hyperparams(tau0=1.0, gamma0=4.0, eta0=1.0, eps0=10.0, K=2, stationary=False)


def geweke_statistics(state: ModelState, Y: CountMatrix, stationary: bool) -> np.ndarray:
    base = np.concatenate([
        [state.nu.sum(), state.xi],
        state.delta[:1] if stationary else state.delta,
        state.Theta.sum(axis=1),
        [Y.counts.sum()],
    ])
    return np.concatenate([base, base**2])


def geweke_names(T: int, stationary: bool) -> list:
    base = ["sum_nu", "xi"] + (["delta"] if stationary else [f"delta[{t+1}]" for t in range(T)])
    base += [f"sum_theta[{t+1}]" for t in range(T)] + ["total_count"]
    return base + [f"{n}^2" for n in base]


def _batch_se(x: np.ndarray, n_batches: int = 50) -> np.ndarray:
    n = (x.shape[0] // n_batches) * n_batches
    means = x[:n].reshape(n_batches, -1, x.shape[1]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(n_batches)


def geweke_test(hyper: Hyperparams = GEWEKE_HYPER, V=3, T=4, sweeps=10_000, seed=1,
                threshold=4.0, name="geweke") -> CheckResult:
    """Forward ancestral draws vs. successive-conditional (sweep + resimulate Y)."""
    rng_f = rng_stream(seed, 1)
    fwd = np.array([geweke_statistics(*generate(hyper, V, T, rng_f), hyper.stationary)
                    for _ in range(sweeps)])
    rng_g = rng_stream(seed, 2)
    state, Y = generate(hyper, V, T, rng_g)
    sc = np.empty_like(fwd)
    for i in range(sweeps):
        state = gibbs.gibbs_sweep(state, Y, hyper, rng_g)
        Y = sample_counts(state, rng_g)
        sc[i] = geweke_statistics(state, Y, hyper.stationary)
    se = np.sqrt(fwd.var(axis=0, ddof=1) / sweeps + _batch_se(sc) ** 2)
    z = (fwd.mean(axis=0) - sc.mean(axis=0)) / se
    names = geweke_names(T, hyper.stationary)
    worst = float(np.max(np.abs(z)))
    return CheckResult(name, worst, threshold, bool(worst <= threshold), seed,
                       {"z": dict(zip(names, map(float, z)))})


# Canned mutations: each replaces one ingredient of the sweep with a plausible bug.

def _theta_forward_missing_zeta(state, latent, zeta, tau0, rng):
    broken = gibbs.ZetaSchedule(np.zeros_like(zeta.zeta), zeta.steady)
    return _ORIGINAL["sample_theta_forward"](state, latent, broken, tau0, rng)


def _crt_off_by_one(y, a, rng):
    # seat index starts at 1, so the first customer may fail to open a table;
    # sum_{i=1..y} Bern(a / (a + i)) has the law of CRT(y + 1, a) - 1
    return _ORIGINAL["sample_crt"](np.asarray(y, dtype=np.int64) + 1, a, rng) - 1


def _zeta_without_recursion(delta, tau0, steady):
    delta = np.asarray(delta, dtype=float)
    return gibbs.ZetaSchedule(np.append(np.log1p(delta / tau0), 0.0))


_ORIGINAL = {"sample_theta_forward": gibbs.sample_theta_forward, "sample_crt": gibbs.sample_crt}

MUTATIONS = {
    "theta_rate_missing_zeta": ("sample_theta_forward", _theta_forward_missing_zeta),
    "crt_off_by_one": ("sample_crt", _crt_off_by_one),
    "zeta_without_recursion": ("compute_zeta", _zeta_without_recursion),
}


@contextlib.contextmanager
def mutated(name: str):
    attr, replacement = MUTATIONS[name]
    with mock.patch.object(gibbs, attr, replacement):
        yield


# --------------------------------------------------------------------------
# Small-instance posterior oracle

ORACLE_HYPER = Hyperparams(tau0=1.0, gamma0=2.0, eta0=1.0, eps0=1.0, K=1, stationary=True)
ORACLE_Y = np.array([[3, 5], [2, 3]])


def _log_grid(lo, hi, n):
    """Log-spaced points with trapezoid weights (the posterior has long right tails)."""
    g = np.geomspace(lo, hi, n)
    w = np.gradient(g)
    return g, w


def grid_posterior(Y=ORACLE_Y, hyper: Hyperparams = ORACLE_HYPER, n_grid=400,
                   theta_range=(1e-3, 2e3), delta_range=(1e-4, 50.0)):
    """Posterior marginals of theta^(1) and delta for a V=2, T=2, K=1 stationary model.

    With K=1, Pi = [1] and Phi drops out given the column totals. theta^(2) and
    beta are integrated analytically, nu by adaptive quadrature, and the
    remaining (theta^(1), delta) pair on a log-spaced grid. Returns
    ``(theta_grid, theta_mass, delta_grid, delta_mass)`` with masses summing to one.
    """
    tau0, g0, e0 = hyper.tau0, hyper.gamma0, hyper.eps0
    y1, y2 = np.asarray(Y).sum(axis=0)

    def log_p_nu(nu):
        # nu ~ Gam(g0, beta), beta ~ Gam(e0, e0), beta integrated out
        return (e0 * math.log(e0) - math.lgamma(e0) - math.lgamma(g0) + math.lgamma(g0 + e0)
                + (g0 - 1) * math.log(nu) - (g0 + e0) * math.log(e0 + nu))

    def prior_theta1(th):
        f = lambda nu: math.exp(log_p_nu(nu) + stats.gamma.logpdf(th, tau0 * nu, scale=1 / tau0))
        return quad(f, 0, np.inf, limit=200)[0]

    th, w_th = _log_grid(*theta_range, n_grid)
    de, w_de = _log_grid(*delta_range, n_grid)
    with np.errstate(divide="ignore"):  # the prior underflows far in the tail
        log_pth = np.log([prior_theta1(x) for x in th])
    TH, DE = np.meshgrid(th, de, indexing="ij")
    lp = log_pth[:, None] + stats.gamma.logpdf(DE, e0, scale=1 / e0)
    lp += stats.poisson.logpmf(y1, DE * TH)
    # theta^(2) ~ Gam(tau0 theta^(1), tau0), y2 ~ Pois(delta theta^(2)) -> NB
    lp += nb_logpmf(y2, tau0 * TH, DE / (tau0 + DE))
    w = np.exp(lp - lp.max()) * w_th[:, None] * w_de[None, :]
    w /= w.sum()
    return th, w.sum(axis=1), de, w.sum(axis=0)


def _ks_to_grid(samples, grid, mass):
    # CDF at each grid point counts half of that point's own mass
    cdf = np.cumsum(mass) - 0.5 * mass
    s = np.sort(samples)
    model = np.interp(s, grid, cdf, left=0.0, right=1.0)
    n = s.size
    return float(max(np.max(np.arange(1, n + 1) / n - model), np.max(model - np.arange(n) / n)))


def acf(x, lag):
    x = np.asarray(x) - np.mean(x)
    return float(np.dot(x[:-lag], x[lag:]) / np.dot(x, x))


def small_posterior_oracle(n_samples=5000, thin=40, burn=1000, seed=3, threshold=0.05) -> CheckResult:
    hyper = ORACLE_HYPER
    Y = CountMatrix.from_dense(ORACLE_Y)
    rng = rng_stream(seed)
    chain = gibbs.fit(Y, hyper, gibbs.Schedule(burn + n_samples * thin, burn, thin), rng)
    th1 = np.array([s.Theta[0, 0] for s in chain.states])
    de = np.array([s.delta[0] for s in chain.states])
    g_th, m_th, g_de, m_de = grid_posterior()
    ks_th = _ks_to_grid(th1, g_th, m_th)
    ks_de = _ks_to_grid(de, g_de, m_de)
    worst = max(ks_th, ks_de)
    return CheckResult("small_posterior_oracle", worst, threshold, bool(worst <= threshold), seed,
                       {"ks_theta1": ks_th, "ks_delta": ks_de,
                        "acf1_theta1": acf(th1, 1), "acf1_delta": acf(de, 1)})


# --------------------------------------------------------------------------


def run_suite(quick: bool = False, log=print) -> TestReport:
    """Run every check. ``quick`` shortens the stochastic checks (smoke mode)."""
    report = TestReport()
    t0 = time.perf_counter()
    for a in (0.5, 1.0, 3.0):
        for z in (0.25, 1.0):
            log(report.add(check_def3_equivalence(a, z)).line())
    for i, (a, c, b) in enumerate([(1, 1, 1), (0.5, 2, 1), (3, 1, 2), (10, 0.5, 0.3)]):
        log(report.add(check_def2_marginalization(a, c, b, 10_000 if quick else 100_000, seed=i)).line())
    for r in (0.1, 1.0, 10.0):
        log(report.add(check_proposition1(r, 1.0)).line())
    sweeps = 1000 if quick else 10_000
    log(report.add(geweke_test(sweeps=sweeps)).line())
    for name in MUTATIONS:
        with mutated(name):
            res = geweke_test(sweeps=sweeps, name=f"geweke_mutation[{name}]")
        caught = res.statistic > 6.0
        log(report.add(CheckResult(res.name + " detected", res.statistic, 6.0, caught, res.seed,
                                   res.details)).line())
    log(report.add(small_posterior_oracle(n_samples=1000 if quick else 5000)).line())
    log(f"suite finished in {time.perf_counter() - t0:.1f}s")
    return report
