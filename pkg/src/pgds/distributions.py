"""Sampling primitives and exact pmf oracles.

All samplers take a :class:`numpy.random.Generator` and are pure functions of
their arguments and the generator state.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

# Floor applied to gamma shapes, Dirichlet concentrations and positive draws.
TINY = 1e-300


class DomainError(ValueError):
    """Raised when a distribution parameter is outside its domain."""


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return an independent generator for ``(seed, stream_id)``.

    Distinct stream ids map to distinct spawn keys of the same seed sequence,
    which numpy guarantees to be statistically independent.
    """
    if seed < 0 or stream_id < 0:
        raise DomainError("seed and stream_id must be non-negative")
    ss = np.random.SeedSequence(seed, spawn_key=(stream_id,))
    return np.random.Generator(np.random.PCG64(ss))


def bp_link(z):
    """Bernoulli-Poisson link ``1 - exp(-z)``."""
    z_arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z_arr)) or np.any(z_arr < 0):
        raise DomainError(f"bp_link requires finite z >= 0, got {z!r}")
    out = -np.expm1(-z_arr)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Chinese restaurant table / sum-logarithmic pair


def sample_crt(y, a, rng: np.random.Generator):
    """Number of tables occupied by ``y`` customers with concentration ``a``.

    Exact Bernoulli sum ``sum_{i<y} Bern(a / (a + i))``; vectorised over
    array-valued ``y`` and ``a``.
    """
    y_arr = np.asarray(y, dtype=np.int64)
    a_arr = np.asarray(a, dtype=float)
    if not a_arr.min() > 0:
        raise DomainError("CRT concentration must be positive")
    flat_y = y_arr.ravel()
    if flat_y.size and flat_y.min() < 0:
        raise DomainError("CRT customer count must be non-negative")
    total = int(flat_y.sum())
    if total == 0:
        out = np.zeros(y_arr.shape, dtype=np.int64)
        return int(out) if out.ndim == 0 else out
    owner = np.repeat(np.arange(flat_y.size), flat_y)
    starts = np.cumsum(flat_y) - flat_y
    seat = np.arange(total) - starts[owner]
    conc = np.broadcast_to(a_arr, y_arr.shape).ravel()[owner]
    opens = rng.random(total) < conc / (conc + seat)
    out = np.bincount(owner, weights=opens, minlength=flat_y.size)
    out = out.astype(np.int64).reshape(y_arr.shape)
    return int(out) if out.ndim == 0 else out


def sample_sumlog(l, p, rng: np.random.Generator):
    """Sum of ``l`` iid logarithmic(``p``) variates (Kemp's method via numpy)."""
    if not 0 < p < 1:
        raise DomainError(f"SumLog probability must lie in (0, 1), got {p}")
    l_arr = np.asarray(l, dtype=np.int64)
    if np.any(l_arr < 0):
        raise DomainError("SumLog count must be non-negative")
    flat = l_arr.ravel()
    total = int(flat.sum())
    if total == 0:
        out = np.zeros(l_arr.shape, dtype=np.int64)
    else:
        draws = rng.logseries(p, size=total)
        owner = np.repeat(np.arange(flat.size), flat)
        out = np.bincount(owner, weights=draws, minlength=flat.size)
        out = out.astype(np.int64).reshape(l_arr.shape)
    return int(out) if out.ndim == 0 else out


@lru_cache(maxsize=None)
def _stirling_row(n: int) -> tuple[int, ...]:
    # unsigned Stirling numbers of the first kind |s(n, k)|, k = 0..n
    if n == 0:
        return (1,)
    prev = _stirling_row(n - 1)
    row = [0] * (n + 1)
    for k in range(1, n + 1):
        row[k] = prev[k - 1] + (n - 1) * (prev[k] if k < n else 0)
    return tuple(row)


def log_stirling1(n: int, k: int) -> float:
    s = _stirling_row(n)[k] if 0 <= k <= n else 0
    return math.log(s) if s > 0 else -math.inf


def crt_pmf(l: int, y: int, a: float) -> float:
    """P(l tables | y customers, concentration a) = |s(y,l)| a^l G(a)/G(a+y)."""
    if a <= 0:
        raise DomainError("CRT concentration must be positive")
    if y < 0 or l < 0 or l > y or (y > 0 and l == 0):
        return 0.0
    if y == 0:
        return 1.0
    logp = log_stirling1(y, l) + l * math.log(a) + math.lgamma(a) - math.lgamma(a + y)
    return math.exp(logp)


def logarithmic_pmf(x: int, p: float) -> float:
    if x < 1:
        return 0.0
    return -(p**x) / (x * math.log1p(-p))


def sumlog_pmf_table(l: int, p: float, y_max: int) -> np.ndarray:
    """Probabilities of ``y = 0..y_max`` for SumLog(l, p) by l-fold convolution."""
    if not 0 < p < 1:
        raise DomainError(f"SumLog probability must lie in (0, 1), got {p}")
    base = np.array([logarithmic_pmf(x, p) for x in range(y_max + 1)])
    out = np.zeros(y_max + 1)
    out[0] = 1.0
    for _ in range(l):
        out = np.convolve(out, base)[: y_max + 1]
    return out


def sumlog_pmf(y: int, l: int, p: float) -> float:
    if y < 0 or l < 0 or y < l:
        return 0.0
    return float(sumlog_pmf_table(l, p, y)[y])


def nb_logpmf(y, r, p):
    """Negative binomial log pmf with shape ``r`` and success probability ``p``.

    Matches the gamma-Poisson mixture: mean ``r p / (1 - p)``.
    """
    y = np.asarray(y, dtype=float)
    return gammaln(y + r) - gammaln(r) - gammaln(y + 1) + r * np.log1p(-p) + y * np.log(p)


# --------------------------------------------------------------------------
# Standard primitives


def sample_multinomial(n, weights, rng: np.random.Generator):
    """Thin ``n`` into categories proportional to ``weights``.

    ``weights`` may be 2-d with one row per entry of array-valued ``n``.
    """
    w = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DomainError("multinomial weights must be finite and non-negative")
    n_arr = np.asarray(n, dtype=np.int64)
    tot = w.sum(axis=-1, keepdims=True)
    bad = (tot[..., 0] <= 0) & (n_arr > 0)
    if np.any(bad):
        raise DomainError("all-zero multinomial weights with n > 0")
    probs = np.divide(w, tot, out=np.full_like(w, 1.0 / w.shape[-1]), where=tot > 0)
    return rng.multinomial(n_arr, probs)


def sample_poisson(rate, rng: np.random.Generator):
    r = np.asarray(rate, dtype=float)
    if np.any(r < 0) or not np.all(np.isfinite(r)):
        raise DomainError("Poisson rate must be finite and non-negative")
    return rng.poisson(r)


def log_sample_gamma(shape, rate, rng: np.random.Generator):
    """Log of a Gam(shape, rate) draw, accurate for arbitrarily small shapes.

    Shapes below one use the boost ``G(a) = G(a + 1) * U**(1/a)``.
    """
    a = np.maximum(np.asarray(shape, dtype=float), TINY)
    b = np.asarray(rate, dtype=float)
    if not (b.min() > 0 and np.isfinite(a.max()) and np.isfinite(b.max())):
        raise DomainError("gamma parameters must be positive and finite")
    if b.shape != a.shape:
        a, b = np.broadcast_arrays(a, b)
    small = a < 1.0
    if small.any():
        logg = np.log(rng.standard_gamma(np.where(small, a + 1.0, a)))
        u = rng.random(a.shape)
        logg = np.where(small, logg + np.log(u) / np.where(small, a, 1.0), logg)
    else:
        logg = np.log(rng.standard_gamma(a))
    out = logg - np.log(b)
    return float(out) if out.ndim == 0 else out


def sample_gamma(shape, rate, rng: np.random.Generator):
    """Gam(shape, rate) draw, floored at :data:`TINY`."""
    if not np.asarray(shape, dtype=float).min() > 0:
        raise DomainError("gamma shape must be positive")
    out = np.maximum(np.exp(log_sample_gamma(shape, rate, rng)), TINY)
    return float(out) if np.ndim(out) == 0 else out


def sample_dirichlet(conc, rng: np.random.Generator, axis: int = -1):
    """Dirichlet draw along ``axis`` (normalised log-gamma variates).

    Concentrations are floored at :data:`TINY`; components that underflow are
    clamped to :data:`TINY` and the vector renormalised.
    """
    c = np.asarray(conc, dtype=float)
    if np.any(~(c > 0)) or not np.all(np.isfinite(c)):
        raise DomainError("Dirichlet concentrations must be positive and finite")
    logg = log_sample_gamma(np.maximum(c, TINY), 1.0, rng)
    logg = logg - logg.max(axis=axis, keepdims=True)
    x = np.exp(logg)
    x /= x.sum(axis=axis, keepdims=True)
    if np.any(x < TINY):
        x = np.maximum(x, TINY)
        x /= x.sum(axis=axis, keepdims=True)
    return x


def gamma_logpdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def dirichlet_logpdf(x, conc, axis: int = 0):
    """Sum over slices along ``axis`` of the Dirichlet log density."""
    x = np.asarray(x, dtype=float)
    c = np.maximum(np.asarray(conc, dtype=float), TINY)
    return float(
        np.sum(gammaln(c.sum(axis=axis)))
        - np.sum(gammaln(c))
        + np.sum((c - 1.0) * np.log(x))
    )


# --------------------------------------------------------------------------
# Lambert W, lower branch, and the steady-state backward-pass constant

_INV_E = math.exp(-1.0)


def lambert_w_minus1(x: float, *, tol: float = 1e-14, max_iter: int = 50) -> float:
    """Lower real branch W_{-1}(x) for ``-1/e <= x < 0`` (value ``<= -1``)."""
    x = float(x)
    if not (-_INV_E - 1e-15 <= x < 0.0):
        raise DomainError(f"W_-1 is real only on [-1/e, 0), got {x!r}")
    return _wm1(math.log(-x), 1.0 + math.e * x, tol, max_iter)


def _wm1(log_negx: float, q: float, tol: float = 1e-14, max_iter: int = 50) -> float:
    # log_negx = ln(-x) and q = 1 + e*x are passed separately so callers can
    # supply them without underflow or cancellation.
    if q <= 0.0:
        return -1.0
    if q < 0.5:
        # branch-point series in p = -sqrt(2 (1 + e x)); Halley on w e^w = x
        x = -math.exp(log_negx)
        p = -math.sqrt(2.0 * q)
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3 - 43.0 / 540.0 * p**4
        for _ in range(max_iter):
            ew = math.exp(w)
            f = w * ew - x
            wp1 = w + 1.0
            if wp1 == 0.0:
                break
            w_new = min(w - f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1)), -1.0)
            done = abs(w_new - w) <= tol * abs(w_new)
            w = w_new
            if done:
                break
        return w
    # asymptotic guess; Halley on the log form w + ln(-w) = ln(-x)
    l1 = log_negx
    l2 = math.log(-l1)
    w = l1 - l2 + l2 / l1
    for _ in range(max_iter):
        f = w + math.log(-w) - l1
        d1 = 1.0 + 1.0 / w
        d2 = -1.0 / (w * w)
        w_new = min(w - 2.0 * f * d1 / (2.0 * d1 * d1 - f * d2), -1.0)
        done = abs(w_new - w) <= tol * abs(w_new)
        w = w_new
        if done:
            break
    return w


def steady_state_zeta(delta: float, tau0: float) -> float:
    """Fixed point of ``zeta = ln(1 + delta / tau0 + zeta)`` with zeta > 0."""
    if not (delta > 0 and tau0 > 0) or not (math.isfinite(delta) and math.isfinite(tau0)):
        raise DomainError("delta and tau0 must be positive and finite")
    r = delta / tau0
    if r <= 1.0:
        return -_wm1(-1.0 - r, -math.expm1(-r)) - 1.0 - r
    # Far from the branch point -w is large; substitute w = -(1 + r + zeta) in
    # the log form of W and iterate on zeta directly to avoid cancellation.
    zeta = math.log1p(r) * (1.0 + 1.0 / (1.0 + r))
    for _ in range(50):
        s = 1.0 + r + zeta
        f = zeta - math.log(s)
        d1 = 1.0 - 1.0 / s
        d2 = 1.0 / (s * s)
        step = 2.0 * f * d1 / (2.0 * d1 * d1 - f * d2)
        zeta -= step
        if abs(step) <= 1e-15 * zeta:
            break
    return zeta
