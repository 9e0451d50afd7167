"""Market data: flat rates, implied-volatility surface and Black-Scholes vanillas."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal
from importlib import resources

import numpy as np
from scipy.special import ndtr

DAYS_PER_YEAR = {"ACT/365": 365.0, "ACT/365F": 365.0, "ACT/360": 360.0}


def year_fraction(start: date, end: date, day_count: str = "ACT/365") -> float:
    try:
        denom = DAYS_PER_YEAR[day_count.upper()]
    except KeyError:
        raise ValueError(f"unsupported day count {day_count!r}") from None
    return (end - start).days / denom


@dataclass(frozen=True)
class RateCurve:
    """Flat continuously-compounded risk-free and dividend rates."""

    risk_free_rate: float
    dividend_rate: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.risk_free_rate) and math.isfinite(self.dividend_rate)):
            raise ValueError("rates must be finite")

    def discount(self, t):
        return np.exp(-self.risk_free_rate * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class MarketConfig:
    spot: float
    maturities: tuple[float, ...] = ()
    value_date: date | None = None

    def __post_init__(self):
        if not self.spot > 0:
            raise ValueError(f"spot must be positive, got {self.spot}")
        object.__setattr__(self, "maturities", tuple(float(t) for t in self.maturities))
        if any(t <= 0 for t in self.maturities):
            raise ValueError("maturities must be positive year fractions")


@dataclass(frozen=True, eq=False)
class VolSurface:
    """Strike x maturity grid of implied vols (fractions, not percent).

    Interpolation is linear in strike for each maturity column and linear in
    total variance ``vol**2 * t`` between columns. Outside the grid the
    nearest node value is used (flat extrapolation in both directions).
    """

    strikes: np.ndarray
    maturities: np.ndarray
    vols: np.ndarray

    def __post_init__(self):
        strikes = np.asarray(self.strikes, dtype=float)
        maturities = np.asarray(self.maturities, dtype=float)
        vols = np.asarray(self.vols, dtype=float)
        if strikes.ndim != 1 or np.any(np.diff(strikes) <= 0):
            raise ValueError("strikes must be strictly ascending")
        if maturities.ndim != 1 or np.any(np.diff(maturities) <= 0):
            raise ValueError("maturities must be strictly ascending")
        if np.any(maturities <= 0):
            raise ValueError("maturities must be positive")
        if vols.shape != (strikes.size, maturities.size):
            raise ValueError(
                f"vol matrix shape {vols.shape} does not match "
                f"{strikes.size} strikes x {maturities.size} maturities"
            )
        # zero is allowed so the deterministic limit can be exercised
        if not np.all(vols >= 0):
            raise ValueError("vols must be non-negative")
        for name, arr in (("strikes", strikes), ("maturities", maturities), ("vols", vols)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def flat(cls, vol: float, strikes=(1.0, 1e12), maturities=(1e-6, 1e3)) -> VolSurface:
        strikes = np.asarray(strikes, dtype=float)
        maturities = np.asarray(maturities, dtype=float)
        return cls(strikes, maturities, np.full((strikes.size, maturities.size), vol))

    @classmethod
    def from_csv(cls, path) -> VolSurface:
        """Read a grid laid out like a quote sheet.

        First row: a corner label followed by maturities (a trailing ``y`` is
        allowed). Following rows: strike, then one vol per maturity in percent.
        """
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
        if len(rows) < 2:
            raise ValueError(f"{path}: need a header row and at least one strike row")
        maturities = [float(c.strip().rstrip("yY")) for c in rows[0][1:]]
        strikes, vols = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != len(maturities) + 1:
                raise ValueError(f"{path}:{lineno}: expected {len(maturities) + 1} fields")
            strikes.append(float(row[0]))
            vols.append([float(Decimal(c.strip()) / 100) for c in row[1:]])
        return cls(np.array(strikes), np.array(maturities), np.array(vols))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["K/Mat"] + [f"{t:g}y" for t in self.maturities])
            for k, row in zip(self.strikes, self.vols):
                w.writerow([f"{k:g}"] + [f"{100.0 * v:.10g}" for v in row])

    def vol(self, strike, t: float):
        if not t > 0:
            raise ValueError(f"maturity must be positive, got {t}")
        mats = self.maturities
        strike = np.asarray(strike, dtype=float)

        def column(j):
            return np.interp(strike, self.strikes, self.vols[:, j])

        if t <= mats[0]:
            return column(0)
        if t >= mats[-1]:
            return column(mats.size - 1)
        hi = int(np.searchsorted(mats, t))
        if mats[hi] == t:
            return column(hi)
        lo = hi - 1
        w_lo = column(lo) ** 2 * mats[lo]
        w_hi = column(hi) ** 2 * mats[hi]
        frac = (t - mats[lo]) / (mats[hi] - mats[lo])
        return np.sqrt((w_lo + frac * (w_hi - w_lo)) / t)


def ibex_surface() -> VolSurface:
    """IBEX-35 implied volatility grid as of 21 July 2005."""
    ref = resources.files("wmcal") / "data" / "ibex_vol_surface.csv"
    with resources.as_file(ref) as path:
        return VolSurface.from_csv(path)


def black_price(forward, strike, t, vol, discount, is_call):
    """Undiscounted-forward Black formula times ``discount``; vectorized."""
    forward, strike, vol = np.broadcast_arrays(
        np.asarray(forward, float), np.asarray(strike, float), np.asarray(vol, float)
    )
    is_call = np.broadcast_to(np.asarray(is_call, dtype=bool), forward.shape)
    sd = vol * np.sqrt(t)
    sign = np.where(is_call, 1.0, -1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(forward / strike) + 0.5 * sd**2) / sd
        d2 = d1 - sd
        value = sign * (forward * ndtr(sign * d1) - strike * ndtr(sign * d2))
    intrinsic = np.maximum(sign * (forward - strike), 0.0)
    value = np.where(sd > 0, value, intrinsic)
    out = discount * value
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class Market:
    """Spot, rates and vol surface bundled together; immutable."""

    config: MarketConfig
    rates: RateCurve
    surface: VolSurface = field(repr=False)

    @property
    def spot(self) -> float:
        return self.config.spot

    def forward(self, t):
        if np.any(np.asarray(t) < 0):
            raise ValueError("forward requested at negative time")
        carry = self.rates.risk_free_rate - self.rates.dividend_rate
        return self.spot * np.exp(carry * np.asarray(t, dtype=float))

    def discount(self, t):
        return self.rates.discount(t)

    def interpolate_vol(self, strike, t: float):
        return self.surface.vol(strike, t)

    def atmf_vol(self, t: float) -> float:
        return float(self.interpolate_vol(self.forward(t), t))

    def vanilla_price(self, strike, t: float, is_call):
        if not t > 0:
            raise ValueError(f"maturity must be positive, got {t}")
        return black_price(
            self.forward(t), strike, t, self.interpolate_vol(strike, t),
            self.discount(t), is_call,
        )

