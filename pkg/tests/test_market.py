from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmcal.market import (
    Market,
    MarketConfig,
    RateCurve,
    VolSurface,
    black_price,
    ibex_surface,
    year_fraction,
)

# quadrature of the lognormal payoff (mpmath, 30 digits)
ATM_CALL_F100_VOL20_T1 = 7.96556745540579629
IBEX_FORWARD_1Y = 10001.9977506665469


def make_market(spot=10007.0, r=0.0295, q=0.03, surface=None):
    return Market(MarketConfig(spot), RateCurve(r, q), surface or ibex_surface())


def test_forward_values():
    m = make_market()
    assert m.forward(1.0) == pytest.approx(IBEX_FORWARD_1Y, rel=1e-14)
    assert m.forward(0.0) == 10007.0
    flat = make_market(r=0.02, q=0.02)
    np.testing.assert_array_equal(flat.forward(np.array([0.5, 1, 10])), 10007.0)


def test_forward_monotone():
    t = np.linspace(0, 10, 50)
    assert np.all(np.diff(make_market(r=0.05, q=0.01).forward(t)) > 0)
    assert np.all(np.diff(make_market().forward(t)) < 0)


def test_surface_nodes_reproduced_exactly():
    s = ibex_surface()
    assert s.vols.shape == (15, 10)
    for i, k in enumerate(s.strikes):
        for j, t in enumerate(s.maturities):
            assert s.vol(k, t) == s.vols[i, j]
    assert s.vol(10007, 1.0) == 0.1353
    assert s.vol(10007, 10.0) == 0.2080


def test_surface_interpolation_and_extrapolation():
    s = ibex_surface()
    mid = float(s.vol(0.5 * (9507 + 10007), 1.0))
    assert 0.1353 < mid < 0.1467
    assert s.vol(1000.0, 1.0) == s.vol(6505.0, 1.0)
    assert s.vol(50000.0, 1.0) == s.vol(13509.0, 1.0)
    assert s.vol(10007, 0.01) == s.vol(10007, 0.08)
    assert s.vol(10007, 30.0) == s.vol(10007, 10.0)
    # linear in total variance between columns
    t = 1.5
    w = 0.5 * (0.1353**2 * 1 + 0.1553**2 * 2)
    assert s.vol(10007, t) == pytest.approx(np.sqrt(w / t), rel=1e-14)


def test_surface_validation(tmp_path):
    with pytest.raises(ValueError, match="ascending"):
        VolSurface([2.0, 1.0], [1.0], [[0.1], [0.1]])
    with pytest.raises(ValueError, match="shape"):
        VolSurface([1.0, 2.0], [1.0], [[0.1, 0.2]])
    with pytest.raises(ValueError, match="non-negative"):
        VolSurface([1.0], [1.0], [[-0.1]])
    bad = tmp_path / "bad.csv"
    bad.write_text("K,1y\n100,10,11\n")
    with pytest.raises(ValueError, match="expected 2 fields"):
        VolSurface.from_csv(bad)


def test_csv_round_trip(tmp_path):
    s = ibex_surface()
    s.to_csv(tmp_path / "s.csv")
    t = VolSurface.from_csv(tmp_path / "s.csv")
    np.testing.assert_allclose(t.vols, s.vols, rtol=1e-12)
    np.testing.assert_array_equal(t.strikes, s.strikes)


def test_black_atm_reference():
    assert black_price(100.0, 100.0, 1.0, 0.2, 1.0, True) == pytest.approx(
        ATM_CALL_F100_VOL20_T1, rel=1e-12
    )
    m = Market(MarketConfig(100.0), RateCurve(0.0, 0.0), VolSurface.flat(0.2))
    assert m.vanilla_price(100.0, 1.0, True) == pytest.approx(ATM_CALL_F100_VOL20_T1, rel=1e-12)


def test_zero_vol_is_discounted_intrinsic():
    m = make_market(surface=VolSurface.flat(0.0))
    t, k = 2.0, 9000.0
    expected = np.exp(-0.0295 * t) * (m.forward(t) - k)
    assert m.vanilla_price(k, t, True) == pytest.approx(expected, rel=1e-14)
    assert m.vanilla_price(k, t, False) == 0.0


def test_put_call_parity_all_nodes():
    m = make_market()
    s = m.surface
    for t in s.maturities:
        calls = m.vanilla_price(s.strikes, t, True)
        puts = m.vanilla_price(s.strikes, t, False)
        parity = np.exp(-0.0295 * t) * (m.forward(t) - s.strikes)
        np.testing.assert_allclose(calls - puts, parity, rtol=0, atol=1e-10 * 10007)


@settings(max_examples=50, deadline=None)
@given(
    vol=st.floats(0.01, 1.0),
    t=st.floats(0.05, 10.0),
    k1=st.floats(50, 150),
    k2=st.floats(50, 150),
)
def test_monotone_in_strike(vol, t, k1, k2):
    k1, k2 = sorted((k1, k2))
    m = Market(MarketConfig(100.0), RateCurve(0.01, 0.02), VolSurface.flat(vol))
    assert m.vanilla_price(k1, t, True) >= m.vanilla_price(k2, t, True) - 1e-12
    assert m.vanilla_price(k1, t, False) <= m.vanilla_price(k2, t, False) + 1e-12


def test_year_fraction():
    assert year_fraction(date(2005, 7, 21), date(2005, 11, 2)) == 104 / 365
    with pytest.raises(ValueError):
        year_fraction(date(2005, 1, 1), date(2006, 1, 1), "30/360")


def test_invalid_inputs():
    with pytest.raises(ValueError):
        MarketConfig(-1.0)
    with pytest.raises(ValueError):
        RateCurve(float("nan"))
    with pytest.raises(ValueError):
        make_market().vanilla_price(100.0, 0.0, True)
