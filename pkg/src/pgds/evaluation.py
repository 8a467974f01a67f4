"""Held-out masks, smoothing / forecasting predictions and error metrics.

Masks use 1-based time steps (as in the mask files); everything handed to the
sampler is converted to 0-based column indices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from pgds.distributions import DomainError, sample_gamma
from pgds.gibbs import SampleChain, Schedule, fit
from pgds.model import ConfigError, CountMatrix, Hyperparams, ModelState, impute_counts, rate_matrix

FORECAST_ROLLOUTS = 25


@dataclass(frozen=True)
class Mask:
    T: int
    smoothing: tuple
    forecast: tuple

    def __post_init__(self):
        sm = tuple(sorted(int(t) for t in self.smoothing))
        fc = tuple(sorted(int(t) for t in self.forecast))
        object.__setattr__(self, "smoothing", sm)
        object.__setattr__(self, "forecast", fc)
        if len(set(sm)) != len(sm):
            raise ConfigError("smoothing time steps must be distinct")
        if fc and fc != tuple(range(self.T - len(fc) + 1, self.T + 1)):
            raise ConfigError("forecast steps must be contiguous and end at T")
        first_fc = fc[0] if fc else self.T + 1
        if sm and (sm[0] <= 1 or sm[-1] >= first_fc):
            raise ConfigError("smoothing steps must lie strictly after t=1 and before the forecast tail")
        if len(sm) + len(fc) >= self.T:
            raise ConfigError("mask covers every time step")

    @property
    def n_train(self) -> int:
        return self.T - len(self.forecast)

    @property
    def smoothing_idx(self) -> np.ndarray:
        return np.asarray(self.smoothing, dtype=np.int64) - 1


@dataclass(frozen=True)
class MaskSpec:
    """``n_smooth`` non-adjacent steps in [lo, T - hi_offset] plus the last ``n_forecast``."""

    n_smooth: int
    lo: int
    hi_offset: int
    n_forecast: int


PROTOCOLS = {
    "events": MaskSpec(6, 2, 3, 2),  # GDELT / ICEWS, T = 365
    "sotu": MaskSpec(5, 2, 2, 1),  # T = 225
    "short": MaskSpec(3, 2, 2, 1),  # NIPS / DBLP
}


def make_masks(T: int, spec: Union[str, MaskSpec], count: int, rng: np.random.Generator) -> list:
    """``count`` distinct random masks; smoothing steps are pairwise non-adjacent."""
    if isinstance(spec, str):
        if spec not in PROTOCOLS:
            raise ConfigError(f"unknown mask protocol {spec!r}; choose from {sorted(PROTOCOLS)}")
        spec = PROTOCOLS[spec]
    hi = T - spec.hi_offset
    width = hi - spec.lo + 1
    if spec.n_smooth < 0 or spec.n_forecast < 0 or hi >= T - spec.n_forecast + 1:
        raise ConfigError(f"mask spec {spec} infeasible for T={T}")
    if width - (spec.n_smooth - 1) < spec.n_smooth:
        raise ConfigError(f"cannot place {spec.n_smooth} non-adjacent steps in [{spec.lo}, {hi}]")
    forecast = tuple(range(T - spec.n_forecast + 1, T + 1))
    masks, seen = [], set()
    for _ in range(1000 * max(count, 1)):
        if len(masks) == count:
            break
        # uniform non-adjacent subset: choose from a shrunk range, then spread out
        pick = np.sort(rng.choice(width - (spec.n_smooth - 1), spec.n_smooth, replace=False))
        sm = tuple(int(x) for x in pick + np.arange(spec.n_smooth) + spec.lo)
        if sm not in seen:
            seen.add(sm)
            masks.append(Mask(T, sm, forecast))
    if len(masks) < count:
        raise ConfigError(f"only {len(masks)} distinct masks exist for this spec")
    return masks


# --------------------------------------------------------------------------
# Metrics


def mre(true, pred) -> float:
    """Mean of |y - yhat| / (1 + y)."""
    y, yh = np.asarray(true, dtype=float).ravel(), np.asarray(pred, dtype=float).ravel()
    if y.size == 0 or y.shape != yh.shape:
        raise DomainError("mre needs non-empty inputs of equal length")
    return float(np.mean(np.abs(y - yh) / (1.0 + y)))


def mae(true, pred) -> float:
    y, yh = np.asarray(true, dtype=float).ravel(), np.asarray(pred, dtype=float).ravel()
    if y.size == 0 or y.shape != yh.shape:
        raise DomainError("mae needs non-empty inputs of equal length")
    return float(np.mean(np.abs(y - yh)))


def burstiness(Y) -> tuple:
    """Per-feature burstiness and its mean over features with non-zero mean.

    ``Y`` is a dense V x T array, a CountMatrix, or a list of either; with a
    list the aggregate is the mean over matrices of the per-matrix means.
    Returns ``(per_feature, aggregate)``; excluded features are NaN.
    """
    if isinstance(Y, (list, tuple)):
        parts = [burstiness(y) for y in Y]
        return [p[0] for p in parts], float(np.mean([p[1] for p in parts]))
    Y = Y.to_dense() if isinstance(Y, CountMatrix) else np.asarray(Y, dtype=float)
    if Y.shape[1] < 2:
        raise DomainError("burstiness needs T >= 2")
    mu = Y.mean(axis=1)
    if not np.any(mu > 0):
        raise DomainError("burstiness undefined for an all-zero matrix")
    jumps = np.abs(np.diff(Y, axis=1)).mean(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per = np.where(mu > 0, jumps / mu, np.nan)
    return per, float(np.nanmean(per))


# --------------------------------------------------------------------------
# Predictions


def smooth_impute(state: ModelState, Y: CountMatrix, mask: Mask, rng) -> np.ndarray:
    """One imputation draw for the masked smoothing columns (V x n_smooth)."""
    filled = impute_counts(state, Y, mask.smoothing_idx, rng)
    return filled.to_dense()[:, mask.smoothing_idx]


def smoothing_predictions(chain: SampleChain, times) -> np.ndarray:
    """Posterior-mean rates at 0-based columns ``times`` (V x len(times))."""
    times = np.asarray(times, dtype=np.int64)
    return np.mean([rate_matrix(s)[:, times] for s in chain.states], axis=0)


def forecast(chain: SampleChain, s: int, rng, rollouts: int = FORECAST_ROLLOUTS) -> np.ndarray:
    """Mean predicted rates for steps T+1..T+s (V x s).

    Each retained state is rolled forward ``rollouts`` times through the gamma
    transition; the scale uses the last step's delta.
    """
    if s < 1:
        raise DomainError("forecast horizon must be >= 1")
    states, tau0 = chain.states, chain.hyper.tau0
    out = np.zeros((states[0].V, s))
    for st in states:
        theta = np.repeat(st.Theta[-1][None, :], rollouts, axis=0)
        for i in range(s):
            theta = sample_gamma(np.maximum(tau0 * theta @ st.Pi.T, 1e-300), tau0, rng)
            out[:, i] += st.delta[-1] * (st.Phi @ theta.mean(axis=0))
    return out / len(states)


def forecast_mean_oracle(state: ModelState, s: int) -> np.ndarray:
    """Closed-form expected rates delta * Phi Pi^i theta^(T), i = 1..s."""
    theta = state.Theta[-1].copy()
    cols = []
    for _ in range(s):
        theta = state.Pi @ theta
        cols.append(state.delta[-1] * (state.Phi @ theta))
    return np.stack(cols, axis=1)


def feature_mean_baseline(Y_dense: np.ndarray, train_cols) -> np.ndarray:
    return Y_dense[:, np.asarray(train_cols)].mean(axis=1)


def last_value_baseline(Y_dense: np.ndarray, n_train: int) -> np.ndarray:
    return Y_dense[:, n_train - 1].astype(float)


# --------------------------------------------------------------------------
# Harness


@dataclass
class PredictionReport:
    mre: float
    mae: float
    tasks: dict  # "S"/"F" -> {"mre", "mae", "n"}
    burstiness: np.ndarray
    burstiness_mean: float
    n_excluded: int
    rows: list = field(default_factory=list)  # (v, t, true, pred, task), 1-based


def score(rows) -> PredictionReport:
    """Aggregate (v, t, true, pred, task) rows into metrics per task and overall."""
    if not rows:
        raise DomainError("no predictions to score")
    arr = np.array([(r[2], r[3]) for r in rows], dtype=float)
    tasks = {}
    for task in ("S", "F"):
        sel = np.array([r[4] == task for r in rows])
        if sel.any():
            tasks[task] = {"mre": mre(arr[sel, 0], arr[sel, 1]),
                           "mae": mae(arr[sel, 0], arr[sel, 1]), "n": int(sel.sum())}
    return PredictionReport(mre(arr[:, 0], arr[:, 1]), mae(arr[:, 0], arr[:, 1]), tasks,
                            np.array([]), float("nan"), 0, list(rows))


def predict_mask(chain: SampleChain, Y: CountMatrix, mask: Mask, rng, rollouts: int = FORECAST_ROLLOUTS) -> list:
    """Prediction rows for every cell of the masked columns."""
    Yd = Y.to_dense()
    rows = []
    if mask.smoothing:
        pred = smoothing_predictions(chain, mask.smoothing_idx)
        for j, t in enumerate(mask.smoothing):
            for v in range(Y.V):
                rows.append((v + 1, t, int(Yd[v, t - 1]), float(pred[v, j]), "S"))
    if mask.forecast:
        pred = forecast(chain, len(mask.forecast), rng, rollouts)
        for j, t in enumerate(mask.forecast):
            for v in range(Y.V):
                rows.append((v + 1, t, int(Yd[v, t - 1]), float(pred[v, j]), "F"))
    return rows


def fit_masked(Y: CountMatrix, mask: Mask, hyper: Hyperparams, schedule: Schedule, rng, seed: int = 0, **kw) -> SampleChain:
    """Fit on the columns before the forecast tail, imputing the smoothing columns."""
    train = Y.columns(range(mask.n_train))
    return fit(train, hyper, schedule, rng, smoothing=mask.smoothing_idx, seed=seed, **kw)


def evaluate(Y: CountMatrix, mask: Mask, hyper: Hyperparams, schedule: Schedule, rng, seed: int = 0,
             rollouts: int = FORECAST_ROLLOUTS) -> tuple:
    """Fit, predict and score one mask. Returns ``(report, chain)``."""
    chain = fit_masked(Y, mask, hyper, schedule, rng, seed=seed)
    report = score(predict_mask(chain, Y, mask, rng, rollouts))
    per, agg = burstiness(Y)
    report.burstiness, report.burstiness_mean = per, agg
    report.n_excluded = int(np.isnan(per).sum())
    return report, chain


def baseline_rows(Y: CountMatrix, mask: Mask) -> dict:
    """Prediction rows for the two reference predictors on the same cells as :func:`predict_mask`.

    Smoothing cells get each feature's mean over the observed training
    columns; forecast cells get the last observed training value.
    """
    Yd = Y.to_dense()
    held = set(mask.smoothing)
    train = [t for t in range(mask.n_train) if t + 1 not in held]
    out = {"feature_mean": [], "last_value": []}
    if mask.smoothing:
        base = feature_mean_baseline(Yd, train)
        for t in mask.smoothing:
            out["feature_mean"].extend((v + 1, t, int(Yd[v, t - 1]), float(base[v]), "S") for v in range(Y.V))
    if mask.forecast:
        # the last training column may itself be a smoothing column; use the latest observed one
        last = last_value_baseline(Yd, train[-1] + 1)
        for t in mask.forecast:
            out["last_value"].extend((v + 1, t, int(Yd[v, t - 1]), float(last[v]), "F") for v in range(Y.V))
    return {k: v for k, v in out.items() if v}
