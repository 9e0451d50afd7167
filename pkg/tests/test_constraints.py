import csv

import numpy as np
import pytest

from wmcal.constraints import (
    ConstraintLabel,
    ConstraintSet,
    MartingaleWindow,
    build_constraint_set,
    build_windows,
    filter_constraints,
    forward_columns,
    martingale_columns,
    vanilla_columns,
    window_edges,
    write_removal_report,
)
from wmcal.market import Market, MarketConfig, RateCurve, VolSurface
from wmcal.paths import PathMatrix, SimConfig, simulate


@pytest.fixture(scope="module")
def ibex_paths(ibex_market):
    return simulate(SimConfig(5000, 3, ibex_market.config.maturities), ibex_market)


def flat_rate_market(vol=0.2, r=0.0, q=0.0, strikes=(80.0, 90.0, 100.0, 110.0, 120.0)):
    surface = VolSurface(np.array(strikes), np.array([0.5, 5.0]), np.full((len(strikes), 2), vol))
    return Market(MarketConfig(100.0), RateCurve(r, q), surface)


def test_case_study_column_counts(ibex_market, ibex_paths):
    van = vanilla_columns(ibex_paths, ibex_market)
    fwd = forward_columns(ibex_paths, ibex_market)
    windows = build_windows(ibex_market, ibex_paths.maturities, 0.35, 2.25)
    mtg = martingale_columns(ibex_paths, windows, ibex_market)
    assert len(van) == 105
    assert len(fwd) == 7
    per_pair = len(windows) // 6
    assert len(windows) == 6 * per_pair
    assert 37 <= per_pair <= 41
    assert len(mtg) == len(windows)
    total = build_constraint_set(ibex_paths, ibex_market, windows)
    assert len(total) == 105 + 7 + len(windows)


def test_otm_convention(ibex_market, ibex_paths):
    van = vanilla_columns(ibex_paths, ibex_market)
    for lab in van.labels:
        fwd = ibex_market.forward(lab.maturity)
        assert (lab.kind == "call") == (lab.strike > fwd)


def test_deep_otm_call_column_is_zero():
    m = flat_rate_market(strikes=(80.0, 100.0, 1e6))
    paths = simulate(SimConfig(200, 1, (1.0,)), m)
    van = vanilla_columns(paths, m)
    assert not van.payoffs[:, 2].any()


def test_zero_vol_vanilla_matches_price():
    m = flat_rate_market(vol=0.0, r=0.03, q=0.01)
    paths = simulate(SimConfig(10, 1, (1.0, 2.0)), m)
    van = vanilla_columns(paths, m)
    for j, lab in enumerate(van.labels):
        t = lab.maturity
        intrinsic = max((m.forward(t) - lab.strike) * (1 if lab.kind == "call" else -1), 0.0)
        expected = np.exp(-0.03 * t) * intrinsic
        np.testing.assert_allclose(van.payoffs[:, j], expected, rtol=1e-12, atol=1e-12)
        assert van.prices[j] == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_forward_columns():
    m = flat_rate_market(vol=0.0)
    paths = simulate(SimConfig(10, 1, (1.0, 2.0)), m)
    fwd = forward_columns(paths, m)
    np.testing.assert_allclose(fwd.payoffs.mean(axis=0), 100.0, rtol=1e-14)
    np.testing.assert_allclose(fwd.prices, 100.0)
    m2 = flat_rate_market(r=0.05, q=0.02)
    fwd2 = forward_columns(paths, m2)
    np.testing.assert_allclose(fwd2.prices, np.exp(-0.05 * paths.maturities) * m2.forward(paths.maturities),
                               rtol=1e-14)


def test_window_grid(ibex_market):
    edges = window_edges(ibex_market.surface.strikes, ibex_market.spot, 0.35, 2.25)
    assert edges[0] <= 0.35 * 10007 < edges[1]
    assert edges[-2] < 2.25 * 10007 <= edges[-1]
    assert set(ibex_market.surface.strikes) <= set(edges)
    windows = build_windows(ibex_market, ibex_market.config.maturities)
    first = [w for w in windows if w.t_from == ibex_market.config.maturities[0]]
    for a, b in zip(first, first[1:]):
        assert a.upper == b.lower
    # same grid for every pair
    grids = {}
    for w in windows:
        grids.setdefault(w.t_from, []).append((w.lower, w.upper))
    assert len({tuple(g) for g in grids.values()}) == 1


def test_degenerate_range_single_window():
    m = flat_rate_market(strikes=(90.0, 110.0))
    windows = build_windows(m, (1.0, 2.0), 0.95, 1.05)
    assert [(w.lower, w.upper) for w in windows] == [(90.0, 110.0)]
    with pytest.raises(ValueError):
        build_windows(m, (1.0, 2.0), 1.05, 1.2)


def test_martingale_column_values():
    m = flat_rate_market()
    spots = np.array([[100.0, 110.0], [100.0, 90.0], [130.0, 120.0]])
    paths = PathMatrix(spots, [1.0, 2.0])
    w = MartingaleWindow(95.0, 105.0, 1.0, 2.0)
    cs = martingale_columns(paths, [w], m)
    np.testing.assert_array_equal(cs.payoffs[:, 0], [10.0, -10.0, 0.0])
    assert cs.prices[0] == 0.0
    # uniform weights on the two in-window paths cancel
    assert cs.payoffs[:2, 0].mean() == 0.0


def test_martingale_columns_telescope(ibex_market, ibex_paths):
    windows = build_windows(ibex_market, ibex_paths.maturities)
    cs = martingale_columns(ibex_paths, windows, ibex_market)
    t1, t2 = ibex_paths.maturities[2], ibex_paths.maturities[3]
    cols = [j for j, lab in enumerate(cs.labels) if lab.maturity == t1]
    lo = min(cs.labels[j].window[0] for j in cols)
    hi = max(cs.labels[j].window[1] for j in cols)
    s1, s2 = ibex_paths.column(t1), ibex_paths.column(t2)
    covered = (s1 >= lo) & (s1 < hi)
    ratio = ibex_market.forward(t1) / ibex_market.forward(t2)
    total = cs.payoffs[:, cols].sum(axis=1)
    np.testing.assert_allclose(total[covered], (s2 * ratio - s1)[covered], rtol=1e-12)
    assert not total[~covered].any()


def test_martingale_price_must_be_zero():
    lab = ConstraintLabel("martingale", 1.0, window=(1.0, 2.0), t_to=2.0)
    with pytest.raises(ValueError, match="zero price"):
        ConstraintSet(np.zeros((2, 1)), [0.1], [0.0], (lab,))


def _toy_set():
    g = np.zeros((1000, 4))
    g[:, 0] = 1.0                # always active
    g[:3, 1] = 1.0               # 0.3% active
    g[:, 3] = np.arange(1000) % 50 == 0   # 2% active
    labels = tuple(ConstraintLabel("forward", float(i)) for i in range(4))
    return ConstraintSet(g, np.zeros(4), np.zeros(4), labels)


def test_filter_behaviour():
    cs = _toy_set()
    kept, report = filter_constraints(cs, 0.005)
    assert [lab.maturity for lab in kept.labels] == [0.0, 3.0]
    assert [e.kept for e in report] == [True, False, False, True]
    again, _ = filter_constraints(kept, 0.005)
    assert again.labels == kept.labels
    zero_only, _ = filter_constraints(cs, 0.0)
    assert [lab.maturity for lab in zero_only.labels] == [0.0, 1.0, 3.0]
    with pytest.raises(ValueError, match="all 3 constraints"):
        filter_constraints(cs.select([1, 2, 3]), 0.5)
    with pytest.raises(ValueError):
        filter_constraints(cs, 1.0)


def test_removal_report_csv(tmp_path):
    _, report = filter_constraints(_toy_set(), 0.005)
    write_removal_report(report, tmp_path / "removal.csv")
    rows = list(csv.DictReader(open(tmp_path / "removal.csv")))
    assert [r["status"] for r in rows] == ["kept", "removed", "removed", "kept"]
    assert rows[1]["active_fraction"] == "0.003000"
    assert rows[0]["kind"] == "forward"


def test_scaling_convention(ibex_market, ibex_paths):
    windows = build_windows(ibex_market, ibex_paths.maturities)
    raw = ConstraintSet.concat(
        vanilla_columns(ibex_paths, ibex_market, 1.0, 1e-7),
        forward_columns(ibex_paths, ibex_market, 1.0, 1e-7),
        martingale_columns(ibex_paths, windows, ibex_market, 1.0, 1e-7),
    )
    scaled = build_constraint_set(ibex_paths, ibex_market, windows, 1e-7)
    s0 = ibex_market.spot
    np.testing.assert_allclose(scaled.payoffs * s0, raw.payoffs, rtol=1e-14)
    np.testing.assert_allclose(scaled.prices * s0, raw.prices, rtol=1e-14)
    np.testing.assert_allclose(scaled.weights * s0**2, raw.weights, rtol=1e-14)
