"""Prior measure: lognormal paths under deterministic ATMF volatility."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .market import Market


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    seed: int
    maturities: tuple[float, ...]
    antithetic: bool = False

    def __post_init__(self):
        if int(self.n_paths) < 2:
            raise ValueError(f"n_paths must be at least 2, got {self.n_paths}")
        mats = tuple(float(t) for t in self.maturities)
        if not mats:
            raise ValueError("at least one maturity is required")
        if mats[0] <= 0 or any(b <= a for a, b in zip(mats, mats[1:])):
            raise ValueError("maturities must be positive and strictly ascending")
        object.__setattr__(self, "maturities", mats)


@dataclass(frozen=True, eq=False)
class PathMatrix:
    """Spot levels, one row per path and one column per maturity."""

    spots: np.ndarray
    maturities: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        spots = np.array(self.spots, dtype=np.float64)
        mats = np.array(self.maturities, dtype=np.float64)
        if spots.ndim != 2 or spots.shape[1] != mats.size:
            raise ValueError(f"spots shape {spots.shape} does not match {mats.size} maturities")
        if spots.shape[0] < 2:
            raise ValueError("need at least 2 paths")
        if not np.all(spots > 0):
            raise ValueError("spot levels must be positive")
        if np.any(np.diff(mats) <= 0):
            raise ValueError("maturities must be strictly ascending")
        spots.setflags(write=False)
        mats.setflags(write=False)
        object.__setattr__(self, "spots", spots)
        object.__setattr__(self, "maturities", mats)

    @property
    def n_paths(self) -> int:
        return self.spots.shape[0]

    def column(self, t: float) -> np.ndarray:
        return self.spots[:, self.index(t)]

    def index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.maturities, t, rtol=0.0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"maturity {t} not simulated")
        return int(hits[0])

    def save(self, path) -> None:
        np.savez(
            path,
            spots=self.spots,
            maturities=self.maturities,
            seed=np.int64(-1 if self.seed is None else self.seed),
        )

    @classmethod
    def load(cls, path) -> PathMatrix:
        with np.load(path) as data:
            seed = int(data["seed"])
            return cls(data["spots"], data["maturities"], None if seed < 0 else seed)


def forward_variances(market: Market, maturities) -> np.ndarray:
    """Per-interval variance of the log spot from consecutive ATMF total variances."""
    mats = np.asarray(maturities, dtype=float)
    total = np.array([market.atmf_vol(t) ** 2 * t for t in mats])
    steps = np.diff(total, prepend=0.0)
    for k in np.flatnonzero(steps < 0):
        lo = 0.0 if k == 0 else mats[k - 1]
        raise ValueError(
            f"negative forward variance {steps[k]:.3g} on interval "
            f"[{lo:.6g}, {mats[k]:.6g}] (total variance {total[k - 1]:.6g} -> {total[k]:.6g})"
        )
    return steps


def draw_normals(n_paths: int, n_steps: int, seed: int, antithetic: bool = False) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed))
    if not antithetic:
        return rng.standard_normal((n_paths, n_steps))
    half = rng.standard_normal(((n_paths + 1) // 2, n_steps))
    return np.concatenate([half, -half])[:n_paths]


def simulate(cfg: SimConfig, market: Market) -> PathMatrix:
    """Exact lognormal step between consecutive maturities, one per interval."""
    mats = np.asarray(cfg.maturities)
    var = forward_variances(market, mats)
    dt = np.diff(mats, prepend=0.0)
    carry = market.rates.risk_free_rate - market.rates.dividend_rate
    log_drift = carry * dt - 0.5 * var
    z = draw_normals(int(cfg.n_paths), mats.size, cfg.seed, cfg.antithetic)
    spots = kernels.lognormal_paths(market.spot, log_drift, np.sqrt(var), z)
    return PathMatrix(spots, mats, cfg.seed)
