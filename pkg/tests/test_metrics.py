import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fixtures import censored_fixture
from lobsrv.metrics.survival import (
    LOG_FLOOR,
    Diagnostics,
    StepFunction,
    auc_at,
    brier_at,
    c_index,
    censoring_survival,
    evaluate_weibull,
    horizon_grid,
    iauc,
    ibs,
    integrate,
    ipcw_weights,
    is_undefined,
    kaplan_meier,
    rcll_eval,
    read_metric_csv,
)
from lobsrv.model.weibull import WeibullParams, log_density, log_survival
from lobsrv.tensor import Tensor
from lobsrv.training.loss import rcll_loss

# -- Kaplan-Meier -------------------------------------------------------------


def test_km_hand_fixture():
    S = kaplan_meier([1, 2, 3], [1, 0, 1])
    assert S(1.0) == pytest.approx(2 / 3, abs=1e-15)
    assert S(2.5) == pytest.approx(2 / 3, abs=1e-15)
    assert S(3.0) == 0.0
    assert S(0.5) == 1.0


def test_km_all_censored_and_single_event():
    S = kaplan_meier([1, 2, 5], [0, 0, 0])
    assert np.all(S(np.linspace(0, 10, 50)) == 1.0)
    one = kaplan_meier([1.0], [1])
    assert one(0.999) == 1.0 and one(1.0) == 0.0 and one(3.0) == 0.0


def test_km_rejects_bad_input():
    with pytest.raises(ValueError):
        kaplan_meier([], [])
    with pytest.raises(ValueError):
        kaplan_meier([0.0, 1.0], [1, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 12), st.booleans()), min_size=1, max_size=25))
def test_km_matches_product_limit_and_is_monotone(obs):
    times = [float(t) for t, _ in obs]
    events = [int(e) for _, e in obs]
    S = kaplan_meier(times, events)
    probe = np.arange(0, 14, 0.5)
    got = S(probe)
    assert np.all(np.diff(got) <= 0)
    for t, g in zip(probe, got):
        assert g == pytest.approx(oracles.km_at(times, events, t), abs=1e-13)
        assert S.left_limit(t) == pytest.approx(oracles.km_at(times, events, t, left=True), abs=1e-13)
    # right-continuous at each jump
    for u in S.times:
        assert S(u) == S(u + 1e-9)


# -- AUC / Brier / C-index ------------------------------------------------------


def test_auc_examples():
    G = censoring_survival([1, 3], [1, 1])
    assert auc_at(2.0, [0.2, 0.7], [1, 3], [1, 1], G) == 1.0
    assert auc_at(2.0, [0.7, 0.2], [1, 3], [1, 1], G) == 0.0
    T = [1, 1.5, 3, 4]
    G = censoring_survival(T, [1, 1, 1, 1])
    assert auc_at(2.0, [0.4] * 4, T, [1] * 4, G) == 1.0
    assert auc_at(2.0, [0.4] * 4, T, [1] * 4, G, ties="half") == 0.5


def test_auc_undefined_without_cases_or_controls():
    G = censoring_survival([1, 2], [1, 1])
    assert is_undefined(auc_at(0.5, [0.5, 0.5], [1, 2], [1, 1], G))
    assert is_undefined(auc_at(5.0, [0.5, 0.5], [1, 2], [1, 1], G))
    with pytest.raises(ValueError):
        auc_at(1.5, [0.5, 0.5], [1, 2], [1, 1], G, ties="bogus")


def test_brier_examples():
    T = np.array([0.5, 1.0, 2.0, 3.0])
    d = np.ones(4)
    G = censoring_survival(T, d)
    for t in (0.7, 1.5, 2.5):
        assert brier_at(t, (T > t).astype(float), T, d, G) == 0.0
        assert brier_at(t, np.full(4, 0.5), T, d, G) == 0.25


def test_c_index_examples():
    T = np.array([1.0, 2.0, 3.0, 4.0])
    d = np.ones(4)
    assert c_index([4, 3, 2, 1], T, d) == 1.0
    assert c_index([1, 1, 1, 1], T, d) == 0.5
    assert is_undefined(c_index([1, 2], [1.0, 2.0], [0, 0]))


@pytest.mark.parametrize("seed", range(10))
def test_metrics_match_direct_oracles(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 31))
    T, d, grid, surv = censored_fixture(rng, n, tie_grid=0.25 if seed % 2 else None)
    G = censoring_survival(T, d)
    for t, s in zip(grid, surv):
        assert abs(brier_at(t, s, T, d, G) - oracles.brier_direct(t, s, T, d)) <= 1e-12
        for ties, half in (("formula", False), ("half", True)):
            got = auc_at(t, s, T, d, G, ties=ties)
            want = oracles.auc_direct(t, s, T, d, half_ties=half)
            assert (math.isnan(got) and math.isnan(want)) or abs(got - want) <= 1e-12
    risk = 1 - surv[-1]
    assert c_index(risk, T, d) == oracles.c_index_pairs(risk, T, d)


@pytest.mark.parametrize("seed", range(5))
def test_zero_censoring_reduces_to_classical(seed):
    rng = np.random.default_rng(100 + seed)
    T, _, grid, surv = censored_fixture(rng, 25)
    d = np.ones_like(T)
    G = censoring_survival(T, d)
    for t, s in zip(grid, surv):
        w_case, w_ctrl = ipcw_weights(t, T, d, G)
        assert np.all((w_case + w_ctrl) == 1.0)
        assert brier_at(t, s, T, d, G) == pytest.approx(np.mean((s - (T > t)) ** 2), abs=1e-15)
        cases, ctrls = np.flatnonzero(T <= t), np.flatnonzero(T > t)
        if len(cases) and len(ctrls):
            r = 1 - s
            plain = np.mean([[r[j] <= r[i] for j in ctrls] for i in cases])
            assert auc_at(t, s, T, d, G) == pytest.approx(plain, abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_rank_metrics_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(200 + seed)
    T, d, grid, surv = censored_fixture(rng, 30)
    G = censoring_survival(T, d)
    squashed = surv**3
    for t, a, b in zip(grid, surv, squashed):
        x, y = auc_at(t, a, T, d, G), auc_at(t, b, T, d, G)
        assert (math.isnan(x) and math.isnan(y)) or x == y
    assert c_index(1 - surv[-1], T, d) == c_index(np.exp(5 * (1 - squashed[-1])), T, d)


def test_brier_bounded_by_largest_weight():
    rng = np.random.default_rng(7)
    for _ in range(20):
        T, d, grid, surv = censored_fixture(rng, 20)
        G = censoring_survival(T, d)
        for t, s in zip(grid, surv):
            w_case, w_ctrl = ipcw_weights(t, T, d, G)
            assert brier_at(t, s, T, d, G) <= (w_case + w_ctrl).max() + 1e-15


def test_zero_censoring_survival_weight_is_counted():
    T = np.array([1.0, 2.0, 3.0, 4.0])
    d = np.array([1.0, 1.0, 0.0, 1.0])
    assert censoring_survival(T, d)(3.5) > 0  # a self-fitted estimate only reaches 0 past the last sample
    G = StepFunction(np.array([1.5, 2.5]), np.array([0.5, 0.0]))
    diag = Diagnostics()
    w_case, w_ctrl = ipcw_weights(3.5, T, d, G, diag)
    assert list(w_case) == [1.0, 2.0, 0.0, 0.0]
    assert list(w_ctrl) == [0.0, 0.0, 0.0, 0.0]
    assert diag.zero_censoring_weight == 1
    assert brier_at(3.5, np.full(4, 0.5), T, d, G) == pytest.approx((0.25 + 0.5) / 4)


# -- horizons and integration ---------------------------------------------------


def test_horizon_grid():
    rng = np.random.default_rng(0)
    T = rng.exponential(1.0, 500)
    d = (rng.random(500) < 0.7).astype(float)
    grid = horizon_grid(T, d)
    assert len(grid) == 20 and np.all(np.diff(grid) > 0)
    assert grid[0] == pytest.approx(np.quantile(T[d == 1], 0.1), abs=1e-15)
    assert grid[-1] == pytest.approx(np.quantile(T[d == 1], 0.5), abs=1e-15)
    with pytest.raises(ValueError):
        horizon_grid(T, np.zeros(500))


def test_constant_integrand():
    grid = np.sort(np.random.default_rng(1).uniform(0, 5, 20))
    assert integrate(grid, np.full(20, 0.37)) == pytest.approx(0.37, abs=1e-15)
    T = np.linspace(0.1, 10, 40)
    d = np.ones(40)
    G = censoring_survival(T, d)
    flat = np.full((20, 40), 0.5)
    g2 = np.linspace(1, 5, 20)
    assert ibs(g2, flat, T, d, G) == pytest.approx(0.25, abs=1e-15)
    assert iauc(g2, flat, T, d, G) == pytest.approx(1.0, abs=1e-15)
    assert iauc(g2, flat, T, d, G, ties="half") == pytest.approx(0.5, abs=1e-15)


def test_iauc_drops_undefined_horizons():
    T = np.array([1.0, 2.0, 3.0, 4.0])
    d = np.ones(4)
    G = censoring_survival(T, d)
    grid = np.array([0.5, 1.5, 2.5, 3.5])
    surv = np.tile([0.1, 0.4, 0.6, 0.9], (4, 1))
    diag = Diagnostics()
    assert iauc(grid, surv, T, d, G, diag=diag) == 1.0
    assert diag.undefined_horizons == [0.5]


# -- RCLL ---------------------------------------------------------------------------


def test_rcll_eval_matches_training_loss():
    rng = np.random.default_rng(3)
    T = rng.uniform(0.1, 3, 64)
    d = (rng.random(64) < 0.6).astype(float)
    ll, lk = rng.normal(0, 0.5, 64), rng.normal(0, 0.3, 64)
    train = rcll_loss(Tensor(ll), Tensor(lk), T, d).data
    assert abs(rcll_eval(log_density(T, ll, lk), log_survival(T, ll, lk), d) - float(train)) <= 1e-12
    assert abs(float(train) - oracles.weibull_nll(T, d, np.exp(ll), np.exp(lk))) <= 1e-12


def test_rcll_eval_edge_cases():
    assert rcll_eval([-5.0], [0.0], [0]) == 0.0
    diag = Diagnostics()
    assert rcll_eval([-np.inf, -1.0], [0.0, 0.0], [1, 1], diag) == pytest.approx((-LOG_FLOOR + 1.0) / 2)
    assert diag.clamped_log_terms == 1


# -- report -----------------------------------------------------------------------


def test_report_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    T = rng.weibull(1.5, 300)
    d = (rng.random(300) < 0.8).astype(float)
    params = WeibullParams(np.zeros(300), np.full(300, np.log(1.5)))
    rep = evaluate_weibull(params, T, d)
    assert set(rep.scalars()) == {"rcll", "ibs", "iauc", "cindex"}
    assert rep.scalar("cindex") == 0.5
    h, auc = rep.curve("auc")
    assert len(h) == 20 and np.abs(auc - 1.0).max() <= 1e-12
    path = tmp_path / "metrics.csv"
    rep.write_csv(path)
    assert path.read_text().splitlines()[0] == "metric,horizon,value,n_effective"
    back = read_metric_csv(path)
    assert back.scalars() == rep.scalars()
    assert [(r.metric, r.horizon, r.value) for r in back.rows] == [(r.metric, r.horizon, r.value) for r in rep.rows]
