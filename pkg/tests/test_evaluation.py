import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgds.distributions import DomainError, rng_stream
from pgds.evaluation import (
    PROTOCOLS,
    Mask,
    MaskSpec,
    baseline_rows,
    burstiness,
    fit_masked,
    forecast,
    forecast_mean_oracle,
    make_masks,
    mae,
    mre,
    predict_mask,
    score,
    smooth_impute,
    smoothing_predictions,
)
from pgds.gibbs import SampleChain, Schedule
from pgds.model import ConfigError, CountMatrix, Hyperparams, impute_counts, rate_matrix, sample_prior
from pgds.synthetic import SyntheticSpec, synthetic_dataset


def chain_of(*states, tau0=1.0):
    return SampleChain(list(states), Hyperparams(K=states[0].K, tau0=tau0), Schedule(1, 0, 1))


# --------------------------------------------------------------------------
# Metrics


def test_metric_examples():
    assert mre([0], [1]) == 1.0
    assert mre([1], [0]) == 0.5
    assert mre([3], [1]) == 0.5
    assert mae([3], [1]) == 2.0
    assert mre([4, 0, 7], [4, 0, 7]) == 0.0 == mae([4, 0, 7], [4, 0, 7])


@pytest.mark.parametrize("f", [mre, mae])
def test_metrics_reject_empty_or_mismatched(f):
    with pytest.raises(DomainError):
        f([], [])
    with pytest.raises(DomainError):
        f([1, 2], [1])


@given(st.lists(st.tuples(st.integers(0, 1000), st.floats(0, 1000)), min_size=1, max_size=30),
       st.randoms())
def test_metrics_permutation_invariant(pairs, rnd):
    y, yh = map(np.array, zip(*pairs))
    perm = list(range(len(pairs)))
    rnd.shuffle(perm)
    assert mre(y[perm], yh[perm]) == pytest.approx(mre(y, yh))
    assert mae(y[perm], yh[perm]) == pytest.approx(mae(y, yh))
    assert mre(y, yh) >= 0 and mae(y, yh) >= 0


def test_metric_scaling():
    rng = rng_stream(0)
    y = rng.integers(1, 50, size=200).astype(float)
    yh = y * rng.uniform(0.5, 1.5, size=200)
    c = 1000.0
    assert mae(c * y, c * yh) == pytest.approx(c * mae(y, yh), rel=1e-12)
    # large-count limit: |cy - cyh| / (1 + cy) -> |y - yh| / y
    limit = np.mean(np.abs(y - yh) / y)
    assert mre(c * y, c * yh) == pytest.approx(limit, rel=0.02)


def test_burstiness_examples():
    per, agg = burstiness(np.array([[1, 3]]))
    assert per[0] == 1.0 and agg == 1.0
    per, agg = burstiness(np.array([[4, 4, 4], [0, 0, 0], [2, 0, 2]]))
    assert per[0] == 0.0
    assert np.isnan(per[1])  # excluded: zero mean
    assert per[2] == pytest.approx(2.0 / (4 / 3))
    assert agg == pytest.approx(np.mean([0.0, 1.5]))


def test_burstiness_errors_and_lists():
    with pytest.raises(DomainError):
        burstiness(np.zeros((2, 3)))
    with pytest.raises(DomainError):
        burstiness(np.ones((2, 1)))
    _, agg = burstiness([np.array([[1, 3]]), np.array([[5, 5]])])
    assert agg == 0.5
    assert burstiness(CountMatrix.from_dense([[1, 3]]))[1] == 1.0


# --------------------------------------------------------------------------
# Masks


def test_events_protocol_t365():
    masks = make_masks(365, "events", 4, rng_stream(1))
    assert len(masks) == 4 and len({m.smoothing for m in masks}) == 4
    for m in masks:
        assert m.forecast == (364, 365)
        assert len(m.smoothing) == 6
        assert all(2 <= t <= 362 for t in m.smoothing)
        assert np.all(np.diff(m.smoothing) > 1)  # non-contiguous


def test_sotu_protocol_t225():
    for m in make_masks(225, "sotu", 4, rng_stream(2)):
        assert m.forecast == (225,)
        assert len(m.smoothing) == 5 and all(2 <= t <= 223 for t in m.smoothing)


def test_short_protocol_t17():
    masks = make_masks(17, "short", 4, rng_stream(3))
    assert len({m.smoothing for m in masks}) == 4
    for m in masks:
        assert m.forecast == (17,)
        assert len(m.smoothing) == 3 and all(2 <= t <= 15 for t in m.smoothing)


def test_masks_deterministic_under_seed():
    assert make_masks(60, "events", 3, rng_stream(4)) == make_masks(60, "events", 3, rng_stream(4))


def test_mask_errors():
    with pytest.raises(ConfigError):
        make_masks(6, "events", 1, rng_stream(0))  # too short
    with pytest.raises(ConfigError):
        make_masks(7, MaskSpec(2, 2, 2, 1), 10, rng_stream(0))  # only a few distinct masks exist
    with pytest.raises(ConfigError):
        make_masks(50, "nope", 1, rng_stream(0))
    with pytest.raises(ConfigError):
        Mask(10, (1, 4), (10,))  # t = 1 may not be held out
    with pytest.raises(ConfigError):
        Mask(10, (3,), (8, 10))  # forecast tail must be contiguous
    with pytest.raises(ConfigError):
        Mask(10, (9,), (9, 10))  # overlap with the tail
    with pytest.raises(ConfigError):
        Mask(2, (), (1, 2))  # nothing left to train on


@given(st.integers(20, 400), st.sampled_from(sorted(PROTOCOLS)), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_masks_valid_for_any_feasible_length(T, proto, seed):
    for m in make_masks(T, proto, 1, rng_stream(seed)):
        spec = PROTOCOLS[proto]
        assert m.forecast[-1] == T and len(m.forecast) == spec.n_forecast
        assert min(m.smoothing) >= 2 and max(m.smoothing) <= T - spec.hi_offset


# --------------------------------------------------------------------------
# Predictions


def fixed_state(seed=5, V=4, T=6, K=3):
    return sample_prior(Hyperparams(K=K, gamma0=3.0, eps0=1.0), V, T, rng_stream(seed))


def test_smooth_impute_leaves_unmasked_entries():
    state = fixed_state()
    Y = CountMatrix.from_dense(np.arange(24).reshape(4, 6) % 5)
    mask = Mask(6, (3,), (6,))
    filled = impute_counts(state, Y, mask.smoothing_idx, rng_stream(6)).to_dense()
    keep = [0, 1, 3, 4, 5]
    assert np.array_equal(filled[:, keep], Y.to_dense()[:, keep])
    assert smooth_impute(state, Y, mask, rng_stream(7)).shape == (4, 1)


def test_smooth_impute_zero_rate_gives_zero():
    state = fixed_state()
    state.Theta[2] = 0.0
    Y = CountMatrix.from_dense(np.full((4, 6), 3))
    assert not smooth_impute(state, Y, Mask(6, (3,), ()), rng_stream(8)).any()


def test_smooth_impute_mean_is_rate():
    state = fixed_state()
    Y = CountMatrix.from_dense(np.ones((4, 6), dtype=int))
    mask = Mask(6, (4,), ())
    rng = rng_stream(9)
    draws = np.array([smooth_impute(state, Y, mask, rng)[:, 0] for _ in range(20_000)])
    rate = rate_matrix(state)[:, 3]
    assert np.all(np.abs(draws.mean(axis=0) - rate) < 5 * np.sqrt(rate / draws.shape[0]) + 1e-12)


def test_smoothing_predictions_average_rates():
    a, b = fixed_state(1), fixed_state(2)
    pred = smoothing_predictions(chain_of(a, b), [2, 4])
    assert np.allclose(pred, 0.5 * (rate_matrix(a) + rate_matrix(b))[:, [2, 4]])


def test_forecast_matches_matrix_power_oracle():
    state = fixed_state(10)
    state.delta[:] = 2.0
    s, R = 3, 4000
    pred = forecast(chain_of(state, tau0=2.0), s, rng_stream(11), rollouts=R)
    oracle = forecast_mean_oracle(state, s)
    # per-step rollout spread, estimated from an independent batch, bounds the error
    batches = np.array([forecast(chain_of(state, tau0=2.0), s, rng_stream(12, i), rollouts=50) for i in range(200)])
    se = batches.std(axis=0) / math.sqrt(R / 50)
    assert np.all(np.abs(pred - oracle) <= 5 * se + 1e-12)
    assert np.all(pred >= 0)


def test_forecast_identity_transition_large_tau0():
    state = fixed_state(13)
    state.Pi = np.eye(3)
    pred = forecast(chain_of(state, tau0=1e6), 2, rng_stream(14))
    last = state.delta[-1] * state.Phi @ state.Theta[-1]
    assert np.allclose(pred, last[:, None], rtol=1e-2)


def test_forecast_rejects_bad_horizon():
    with pytest.raises(DomainError):
        forecast(chain_of(fixed_state()), 0, rng_stream(0))


def test_baselines_and_scoring():
    Yd = np.array([[1, 2, 9, 4, 5, 6], [0, 0, 9, 0, 3, 1]])
    Y = CountMatrix.from_dense(Yd)
    mask = Mask(6, (3,), (6,))
    rows = baseline_rows(Y, mask)
    # feature mean over observed training columns 1, 2, 4, 5
    assert [r[3] for r in rows["feature_mean"]] == [3.0, 0.75]
    # carry forward the latest observed training column (t = 5)
    assert [r[3] for r in rows["last_value"]] == [5.0, 3.0]
    assert [r[:3] for r in rows["last_value"]] == [(1, 6, 6), (2, 6, 1)]
    rep = score(rows["feature_mean"] + rows["last_value"])
    assert rep.tasks["S"]["mae"] == pytest.approx(np.mean([6.0, 8.25]))
    assert rep.tasks["F"]["mre"] == pytest.approx(np.mean([1 / 7, 2 / 2]))
    with pytest.raises(DomainError):
        score([])


def test_masked_fit_predict_end_to_end():
    _, Y = synthetic_dataset(SyntheticSpec(V=10, T=20), 15)
    mask = Mask(20, (5, 11), (19, 20))
    chain = fit_masked(Y, mask, Hyperparams(K=4), Schedule(40, 20, 10), rng_stream(16))
    assert chain.states[0].T == 18 and chain.smoothing == (4, 10)
    rows = predict_mask(chain, Y, mask, rng_stream(17))
    assert len(rows) == 10 * 4
    assert {r[4] for r in rows} == {"S", "F"}
    assert all(r[3] >= 0 for r in rows)
    again = predict_mask(chain, Y, mask, rng_stream(17))
    assert rows == again


def test_imputation_beats_column_mean_on_synthetic():
    # per-feature mean over the observed columns is the reference predictor
    _, Y = synthetic_dataset(SyntheticSpec(V=20, T=30), 18)
    mask = Mask(30, (8, 15, 22), ())
    chain = fit_masked(Y, mask, Hyperparams(K=5), Schedule(600, 400, 20), rng_stream(19))
    ours = score(predict_mask(chain, Y, mask, rng_stream(20))).mre
    base = score(baseline_rows(Y, mask)["feature_mean"]).mre
    assert ours < base
