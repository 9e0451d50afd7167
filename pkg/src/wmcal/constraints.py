"""Calibration securities: vanillas, forwards and martingale-window claims.

Every builder returns a :class:`ConstraintSet` whose payoff columns are
discounted to the value date and divided by ``scale`` (the orchestrator uses
the spot, so all target prices are quoted per unit of spot).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .market import Market
from .paths import PathMatrix

KINDS = ("call", "put", "forward", "martingale")


@dataclass(frozen=True)
class ConstraintLabel:
    kind: str
    maturity: float
    strike: float | None = None
    window: tuple[float, float] | None = None
    t_to: float | None = None

    def __str__(self):
        if self.kind in ("call", "put"):
            return f"{self.kind}:t={self.maturity:.4f}:K={self.strike:g}"
        if self.kind == "forward":
            return f"forward:t={self.maturity:.4f}"
        lo, hi = self.window
        return f"martingale:t={self.maturity:.4f}->{self.t_to:.4f}:W=[{lo:g},{hi:g})"


@dataclass(frozen=True)
class MartingaleWindow:
    lower: float
    upper: float
    t_from: float
    t_to: float

    def __post_init__(self):
        if not 0 < self.lower < self.upper:
            raise ValueError(f"invalid window bounds [{self.lower}, {self.upper})")
        if not self.t_from < self.t_to:
            raise ValueError(f"window dates out of order: {self.t_from} >= {self.t_to}")

    def contains(self, spots):
        spots = np.asarray(spots)
        return (spots >= self.lower) & (spots < self.upper)

    @property
    def label(self) -> ConstraintLabel:
        return ConstraintLabel("martingale", self.t_from, window=(self.lower, self.upper),
                               t_to=self.t_to)


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    payoffs: np.ndarray
    prices: np.ndarray
    weights: np.ndarray
    labels: tuple[ConstraintLabel, ...] = field(default=())

    def __post_init__(self):
        g = np.array(self.payoffs, dtype=np.float64)
        c = np.array(self.prices, dtype=np.float64).reshape(-1)
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        labels = tuple(self.labels)
        if g.ndim != 2:
            raise ValueError("payoff matrix must be 2-d (paths x securities)")
        n = g.shape[1]
        if not (c.size == w.size == len(labels) == n):
            raise ValueError(
                f"inconsistent sizes: {n} payoff columns, {c.size} prices, "
                f"{w.size} weights, {len(labels)} labels"
            )
        if np.any(w < 0):
            raise ValueError("least-squares weights must be non-negative")
        for lab, price in zip(labels, c):
            if lab.kind == "martingale" and price != 0.0:
                raise ValueError(f"{lab} must have zero price")
        for arr in (g, c, w):
            arr.setflags(write=False)
        object.__setattr__(self, "payoffs", g)
        object.__setattr__(self, "prices", c)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "labels", labels)

    @property
    def n_paths(self) -> int:
        return self.payoffs.shape[0]

    def __len__(self):
        return self.payoffs.shape[1]

    @property
    def kinds(self) -> np.ndarray:
        return np.array([lab.kind for lab in self.labels], dtype=object)

    @classmethod
    def empty(cls, n_paths: int) -> ConstraintSet:
        return cls(np.zeros((n_paths, 0)), np.zeros(0), np.zeros(0), ())

    @classmethod
    def concat(cls, *parts: ConstraintSet) -> ConstraintSet:
        if not parts:
            raise ValueError("nothing to concatenate")
        return cls(
            np.hstack([p.payoffs for p in parts]),
            np.concatenate([p.prices for p in parts]),
            np.concatenate([p.weights for p in parts]),
            tuple(lab for p in parts for lab in p.labels),
        )

    def select(self, mask) -> ConstraintSet:
        mask = np.asarray(mask)
        if mask.dtype != bool:
            idx = mask
        else:
            idx = np.flatnonzero(mask)
        return ConstraintSet(
            self.payoffs[:, idx], self.prices[idx], self.weights[idx],
            tuple(self.labels[i] for i in idx),
        )

    def of_kind(self, *kinds: str) -> ConstraintSet:
        return self.select(np.isin(self.kinds, kinds))

    def with_weights(self, weight: float) -> ConstraintSet:
        return ConstraintSet(self.payoffs, self.prices, np.full(len(self), weight), self.labels)


def vanilla_columns(
    paths: PathMatrix, market: Market, scale: float = 1.0, weight: float = 0.0
) -> ConstraintSet:
    """Out-of-the-money calls above the forward and puts at or below it.

    One column per surface strike and simulated maturity, maturity-major.
    """
    strikes = np.asarray(market.surface.strikes, dtype=float)
    blocks, prices, labels = [], [], []
    for k, t in enumerate(paths.maturities):
        is_call = strikes > market.forward(t)
        df = float(market.discount(t))
        blocks.append(kernels.vanilla_payoffs(paths.spots[:, k], strikes, is_call, df) / scale)
        prices.append(np.asarray(market.vanilla_price(strikes, t, is_call)) / scale)
        labels += [
            ConstraintLabel("call" if c else "put", float(t), strike=float(s))
            for s, c in zip(strikes, is_call)
        ]
    return ConstraintSet(
        np.hstack(blocks), np.concatenate(prices), np.full(len(labels), weight), tuple(labels)
    )


def forward_columns(
    paths: PathMatrix, market: Market, scale: float = 1.0, weight: float = 0.0
) -> ConstraintSet:
    """Discounted spot at each maturity, priced at ``S_0 * exp(-q t)``."""
    mats = paths.maturities
    g = paths.spots * market.discount(mats)[None, :] / scale
    prices = market.spot * np.exp(-market.rates.dividend_rate * mats) / scale
    labels = tuple(ConstraintLabel("forward", float(t)) for t in mats)
    return ConstraintSet(g, prices, np.full(mats.size, weight), labels)


def window_edges(strikes, spot: float, range_lo: float, range_hi: float) -> np.ndarray:
    """Window boundaries covering ``[range_lo*spot, range_hi*spot]``.

    Interior boundaries are the strikes; beyond the outermost strikes the grid
    is continued with the outermost strike spacing. Only windows that overlap
    the requested range are kept.
    """
    if not range_lo < range_hi:
        raise ValueError(f"empty window range [{range_lo}, {range_hi}]")
    strikes = np.asarray(strikes, dtype=float)
    lo, hi = range_lo * spot, range_hi * spot
    edges = list(strikes)
    if strikes.size >= 2:
        step_lo = strikes[1] - strikes[0]
        step_hi = strikes[-1] - strikes[-2]
        while edges[0] > lo and edges[0] - step_lo > 0:
            edges.insert(0, edges[0] - step_lo)
        while edges[-1] < hi:
            edges.append(edges[-1] + step_hi)
    edges = np.array(edges)
    left, right = edges[:-1], edges[1:]
    keep = (right > lo) & (left < hi)
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise ValueError("no window overlaps the requested range")
    return edges[idx[0]: idx[-1] + 2]


def build_windows(
    market: Market, maturities, range_lo: float = 0.35, range_hi: float = 2.25
) -> list[MartingaleWindow]:
    """The same window grid for every consecutive pair of ``maturities``."""
    if not range_lo < 1 < range_hi:
        raise ValueError(f"window range must bracket 1, got [{range_lo}, {range_hi}]")
    edges = window_edges(market.surface.strikes, market.spot, range_lo, range_hi)
    mats = [float(t) for t in maturities]
    return [
        MartingaleWindow(float(a), float(b), t1, t2)
        for t1, t2 in zip(mats, mats[1:])
        for a, b in zip(edges[:-1], edges[1:])
    ]


def martingale_columns(
    paths: PathMatrix,
    windows: list[MartingaleWindow],
    market: Market,
    scale: float = 1.0,
    weight: float = 0.0,
) -> ConstraintSet:
    """Zero-price claims ``(S_t2 F(t1)/F(t2) - S_t1) * 1{S_t1 in W}``."""
    if not windows:
        return ConstraintSet.empty(paths.n_paths)
    blocks, labels = [], []
    pairs = {}
    for w in windows:
        pairs.setdefault((w.t_from, w.t_to), []).append(w)
    for (t1, t2), group in pairs.items():
        group = sorted(group, key=lambda w: w.lower)
        s1, s2 = paths.column(t1), paths.column(t2)
        ratio = float(market.forward(t1) / market.forward(t2))
        lower = np.array([w.lower for w in group])
        upper = np.array([w.upper for w in group])
        if np.any(upper[:-1] > lower[1:]):
            raise ValueError(f"overlapping windows between t={t1} and t={t2}")
        blocks.append(kernels.window_payoffs(s1, s2, ratio, lower, upper) / scale)
        labels += [w.label for w in group]
    n = len(labels)
    return ConstraintSet(np.hstack(blocks), np.zeros(n), np.full(n, weight), tuple(labels))


@dataclass(frozen=True)
class RemovalEntry:
    label: ConstraintLabel
    active_fraction: float
    kept: bool


def active_fractions(cs: ConstraintSet) -> np.ndarray:
    return np.count_nonzero(cs.payoffs, axis=0) / cs.n_paths


def filter_constraints(
    cs: ConstraintSet, min_active_fraction: float = 0.0075
) -> tuple[ConstraintSet, list[RemovalEntry]]:
    """Drop columns paying on fewer than ``min_active_fraction`` of the paths.

    Such columns give near-zero rows in the covariance Jacobian. All-zero
    columns are always dropped.
    """
    if not 0 <= min_active_fraction < 1:
        raise ValueError(f"min_active_fraction must be in [0, 1), got {min_active_fraction}")
    frac = active_fractions(cs)
    keep = (frac > 0) & (frac >= min_active_fraction)
    if len(cs) and not keep.any():
        raise ValueError(
            f"all {len(cs)} constraints fall below the {min_active_fraction:.3%} activity threshold"
        )
    report = [RemovalEntry(lab, float(f), bool(k)) for lab, f, k in zip(cs.labels, frac, keep)]
    return cs.select(keep), report


def write_removal_report(report: list[RemovalEntry], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "kind", "active_fraction", "status"])
        for e in report:
            w.writerow([str(e.label), e.label.kind, f"{e.active_fraction:.6f}",
                        "kept" if e.kept else "removed"])


def build_constraint_set(
    paths: PathMatrix,
    market: Market,
    windows: list[MartingaleWindow],
    price_weight: float = 1e-7,
) -> ConstraintSet:
    """Vanillas, forwards and martingale claims, all quoted per unit of spot.

    ``price_weight`` is the least-squares weight for prices in currency units;
    since columns are divided by the spot, the internal weight is
    ``price_weight / spot**2`` so the penalty is unchanged by the rescaling.
    """
    s0 = market.spot
    w = price_weight / s0**2
    return ConstraintSet.concat(
        vanilla_columns(paths, market, s0, w),
        forward_columns(paths, market, s0, w),
        martingale_columns(paths, windows, market, s0, w),
    )
