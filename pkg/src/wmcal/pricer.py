"""Pricing under prior or posterior path probabilities, plus diagnostics."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .constraints import MartingaleWindow
from .market import Market
from .paths import PathMatrix


@dataclass(frozen=True)
class CliquetSpec:
    """Geometric cliquet: capped product of period returns, floored at zero."""

    cap: float
    dates: tuple[float, ...]

    def __post_init__(self):
        dates = tuple(float(t) for t in self.dates)
        if not self.cap > 0:
            raise ValueError("cap must be positive")
        if len(dates) < 2 or any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValueError("need at least two strictly ascending reset dates")
        object.__setattr__(self, "dates", dates)

    @property
    def maturity(self) -> float:
        return self.dates[-1]

    def max_payoff(self, discount: float = 1.0) -> float:
        return discount * (self.cap ** (len(self.dates) - 1) - 1.0) if self.cap > 1 else 0.0


def check_probabilities(probs, n=None, tol=1e-10) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if n is not None and p.size != n:
        raise ValueError(f"{p.size} probabilities for {n} paths")
    if np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise ValueError("probabilities must be non-negative and sum to 1")
    return p


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def price(payoffs, probs=None) -> float:
    g = np.asarray(payoffs, dtype=float)
    if probs is None:
        return float(np.mean(g))
    p = np.asarray(probs, dtype=float)
    if p.shape != g.shape:
        raise ValueError(f"payoff length {g.size} != probability length {p.size}")
    return float(g @ p)


def standard_error(payoffs) -> float:
    """Monte Carlo standard error of the equally weighted price."""
    g = np.asarray(payoffs, dtype=float)
    return float(np.std(g, ddof=1) / np.sqrt(g.size))


def cliquet_payoff(levels, spec: CliquetSpec, market: Market | None = None):
    """Discounted payoff for one path (1-d) or many (rows of a 2-d array)."""
    levels = np.asarray(levels, dtype=float)
    if levels.shape[-1] != len(spec.dates):
        raise ValueError(f"expected {len(spec.dates)} fixings, got {levels.shape[-1]}")
    df = 1.0 if market is None else float(market.discount(spec.maturity))
    out = kernels.cliquet_payoffs(np.atleast_2d(levels), spec.cap, df)
    return float(out[0]) if levels.ndim == 1 else out


def cliquet_payoffs(paths: PathMatrix, spec: CliquetSpec, market: Market) -> np.ndarray:
    idx = [paths.index(t) for t in spec.dates]
    return cliquet_payoff(paths.spots[:, idx], spec, market)


def martingale_mismatch(
    paths: PathMatrix, window: MartingaleWindow, probs, market: Market
) -> float:
    """Conditional drift of the forward-adjusted spot over the window, per unit spot.

    Returns NaN when the window carries no probability.
    """
    s1, s2 = paths.column(window.t_from), paths.column(window.t_to)
    ratio = float(market.forward(window.t_from) / market.forward(window.t_to))
    inside = window.contains(s1)
    p = np.asarray(probs, dtype=float)[inside]
    mass = p.sum()
    if not mass > 0:
        return float("nan")
    return float(((s2[inside] * ratio - s1[inside]) @ p) / mass / market.spot)


def cumulative_distribution(paths: PathMatrix, maturity: float, probs, predicate="all",
                            paying=None):
    """Unconditional cumulative probability against spot level at ``maturity``.

    ``predicate`` is ``"all"``, ``"paying"`` or ``"non-paying"``; the latter two
    need the boolean ``paying`` mask. Returns (levels, cumulative) sorted by level.
    """
    s = paths.column(maturity)
    p = np.asarray(probs, dtype=float)
    if predicate == "all":
        subset = np.ones(s.size, dtype=bool)
    elif predicate in ("paying", "non-paying"):
        if paying is None:
            raise ValueError(f"predicate {predicate!r} needs the paying mask")
        paying = np.asarray(paying, dtype=bool)
        subset = paying if predicate == "paying" else ~paying
    else:
        raise ValueError(f"unknown predicate {predicate!r}")
    idx = np.flatnonzero(subset)
    order = idx[np.argsort(s[idx], kind="stable")]
    return s[order], np.cumsum(p[order])


def write_series(path, columns: dict) -> None:
    names = list(columns)
    data = [np.asarray(columns[k]) for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*data):
            w.writerow([f"{v:.10g}" for v in row])
