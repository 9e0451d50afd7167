"""Command line entry point and the end-to-end cliquet experiment.

Config file (JSON)::

    {
      "market": {"spot": 10007, "risk_free_rate": 0.0295, "dividend_rate": 0.03,
                 "value_date": "2005-07-21", "day_count": "ACT/365"},
      "surface": "ibex_vol_surface.csv",
      "simulation": {"n_paths": 20000, "seed": 20050721, "antithetic": false},
      "product": {"cap": 1.1, "dates": ["2005-11-02", ..., "2011-10-25"]},
      "constraints": {"range_lo": 0.35, "range_hi": 2.25,
                      "min_active_fraction": 0.0075, "weight": 1e-7},
      "solver": {"mode": "least_squares", "alpha0": 0.01, "alpha_growth": 2,
                 "cond_guard_ratio": 10, "step_shrink": 5, "grad_tol": 1e-6,
                 "max_iters": 100},
      "output": "out"
    }

Relative paths are resolved against the config file's directory. Product dates
may be ISO dates (converted with the market day count) or year fractions.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from . import pricer
from .calibrator import CalibrationResult, SolverConfig, calibrate, write_iteration_log
from .constraints import (
    ConstraintSet,
    MartingaleWindow,
    build_constraint_set,
    build_windows,
    filter_constraints,
    write_removal_report,
)
from .market import DAYS_PER_YEAR, Market, MarketConfig, RateCurve, VolSurface, year_fraction
from .paths import PathMatrix, SimConfig, simulate

log = logging.getLogger("wmcal")

MODES = ("smile", "smile+mtgl")
SOLVER_KEYS = {f.name for f in dataclasses.fields(SolverConfig)}


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        super().__init__("invalid configuration:\n  " + "\n  ".join(diagnostics))
        self.diagnostics = list(diagnostics)


@dataclass(frozen=True)
class RunConfig:
    market: Market
    sim: SimConfig
    product: pricer.CliquetSpec
    range_lo: float
    range_hi: float
    min_active_fraction: float
    weight: float
    solver: SolverConfig
    output: Path
    source: dict = field(default_factory=dict, compare=False, repr=False)


def _number(diag, section, key, value, *, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        diag.append(f"{section}.{key}: expected a number, got {value!r}")
        return None
    if not math.isfinite(value):
        diag.append(f"{section}.{key}: must be finite")
        return None
    if integer and int(value) != value:
        diag.append(f"{section}.{key}: expected an integer, got {value!r}")
        return None
    if positive and value <= 0:
        diag.append(f"{section}.{key}: must be positive, got {value!r}")
        return None
    return value


def _date(diag, where, value):
    try:
        return date.fromisoformat(value)
    except (TypeError, ValueError):
        diag.append(f"{where}: not an ISO date: {value!r}")
        return None


def validate_config(raw: dict, base_dir: Path | str = ".") -> list[str]:
    """Every problem with a raw config dict, as human-readable lines."""
    diag: list[str] = []
    base_dir = Path(base_dir)
    if not isinstance(raw, dict):
        return ["config root must be a JSON object"]
    for section in ("market", "surface", "simulation", "product"):
        if section not in raw:
            diag.append(f"missing section {section!r}")

    m = raw.get("market", {})
    if "market" in raw:
        _number(diag, "market", "spot", m.get("spot"), positive=True)
        for key in ("risk_free_rate", "dividend_rate"):
            if key in m or key == "risk_free_rate":
                _number(diag, "market", key, m.get(key))
        if m.get("day_count", "ACT/365").upper() not in DAYS_PER_YEAR:
            diag.append(f"market.day_count: unsupported {m.get('day_count')!r}")
    value_date = _date(diag, "market.value_date", m["value_date"]) if "value_date" in m else None

    if "surface" in raw:
        path = base_dir / str(raw["surface"])
        if not path.is_file():
            diag.append(f"surface: file not found: {path}")
        else:
            try:
                VolSurface.from_csv(path)
            except ValueError as exc:
                diag.append(f"surface: {exc}")

    s = raw.get("simulation", {})
    if "simulation" in raw:
        n = _number(diag, "simulation", "n_paths", s.get("n_paths"), integer=True)
        if n is not None and n < 2:
            diag.append(f"simulation.n_paths: need at least 2 paths, got {n}")
        _number(diag, "simulation", "seed", s.get("seed"), integer=True)

    p = raw.get("product", {})
    if "product" in raw:
        _number(diag, "product", "cap", p.get("cap"), positive=True)
        dates = p.get("dates")
        if not isinstance(dates, list) or len(dates) < 2:
            diag.append("product.dates: need a list of at least two reset dates")
        else:
            times = []
            for i, d in enumerate(dates):
                if isinstance(d, str):
                    dd = _date(diag, f"product.dates[{i}]", d)
                    if dd is not None and value_date is None:
                        diag.append("product.dates: ISO dates need market.value_date")
                    elif dd is not None:
                        times.append((dd - value_date).days)
                else:
                    t = _number(diag, "product", f"dates[{i}]", d, positive=True)
                    if t is not None:
                        times.append(t)
            if len(times) == len(dates):
                if times[0] <= 0:
                    diag.append("product.dates: first reset must be after the value date")
                if any(b <= a for a, b in zip(times, times[1:])):
                    diag.append("product.dates: must be strictly ascending")

    c = raw.get("constraints", {})
    lo, hi = c.get("range_lo", 0.35), c.get("range_hi", 2.25)
    if _number(diag, "constraints", "range_lo", lo) is not None and \
            _number(diag, "constraints", "range_hi", hi) is not None and not lo < 1 < hi:
        diag.append(f"constraints: window range must bracket 1, got [{lo}, {hi}]")
    frac = _number(diag, "constraints", "min_active_fraction", c.get("min_active_fraction", 0.0075))
    if frac is not None and not 0 <= frac < 1:
        diag.append("constraints.min_active_fraction: must lie in [0, 1)")
    w = _number(diag, "constraints", "weight", c.get("weight", 1e-7))
    if w is not None and w < 0:
        diag.append("constraints.weight: must be non-negative")

    solver = raw.get("solver", {})
    unknown = set(solver) - SOLVER_KEYS
    if unknown:
        diag.append(f"solver: unknown keys {sorted(unknown)}")
    else:
        try:
            SolverConfig(**solver)
        except (TypeError, ValueError) as exc:
            diag.append(f"solver: {exc}")

    out = base_dir / str(raw.get("output", "out"))
    parent = out if out.exists() else next((q for q in out.parents if q.exists()), None)
    if parent is None or not parent.is_dir():
        diag.append(f"output: {out} is not a writable directory")
    elif not os.access(parent, os.W_OK):
        diag.append(f"output: {parent} is not writable")
    return diag


def parse_config(raw: dict, base_dir: Path | str = ".") -> RunConfig:
    diag = validate_config(raw, base_dir)
    if diag:
        raise ConfigError(diag)
    base_dir = Path(base_dir)
    m = raw["market"]
    day_count = m.get("day_count", "ACT/365")
    value_date = date.fromisoformat(m["value_date"]) if "value_date" in m else None
    dates = [
        year_fraction(value_date, date.fromisoformat(d), day_count) if isinstance(d, str) else float(d)
        for d in raw["product"]["dates"]
    ]
    market = Market(
        MarketConfig(float(m["spot"]), tuple(dates), value_date),
        RateCurve(float(m["risk_free_rate"]), float(m.get("dividend_rate", 0.0))),
        VolSurface.from_csv(base_dir / raw["surface"]),
    )
    s = raw["simulation"]
    c = raw.get("constraints", {})
    return RunConfig(
        market=market,
        sim=SimConfig(int(s["n_paths"]), int(s["seed"]), tuple(dates), bool(s.get("antithetic", False))),
        product=pricer.CliquetSpec(float(raw["product"]["cap"]), tuple(dates)),
        range_lo=float(c.get("range_lo", 0.35)),
        range_hi=float(c.get("range_hi", 2.25)),
        min_active_fraction=float(c.get("min_active_fraction", 0.0075)),
        weight=float(c.get("weight", 1e-7)),
        solver=SolverConfig(**raw.get("solver", {})),
        output=base_dir / str(raw.get("output", "out")),
        source=raw,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON: {exc}"]) from None
    return parse_config(raw, path.parent)


@dataclass(eq=False)
class Setup:
    """Paths, payoffs and filtered constraints shared by every calibration mode."""

    paths: PathMatrix
    windows: list[MartingaleWindow]
    full: ConstraintSet
    retained: ConstraintSet
    removal: list
    payoff: np.ndarray

    def constraints_for(self, mode: str) -> ConstraintSet:
        if mode == "smile":
            return self.retained.of_kind("call", "put", "forward")
        if mode == "smile+mtgl":
            return self.retained
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def prepare(cfg: RunConfig, paths: PathMatrix | None = None) -> Setup:
    if paths is None:
        paths = simulate(cfg.sim, cfg.market)
    windows = build_windows(cfg.market, paths.maturities, cfg.range_lo, cfg.range_hi)
    full = build_constraint_set(paths, cfg.market, windows, cfg.weight)
    retained, removal = filter_constraints(full, cfg.min_active_fraction)
    payoff = pricer.cliquet_payoffs(paths, cfg.product, cfg.market)
    return Setup(paths, windows, full, retained, removal, payoff)


@dataclass(eq=False)
class CalibrationReport:
    config: RunConfig
    setup: Setup
    results: dict[str, CalibrationResult]
    prices: dict[str, float]
    prior_standard_error: float

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.results.values())

    def probabilities(self, mode: str) -> np.ndarray:
        if mode == "prior":
            return pricer.uniform(self.setup.paths.n_paths)
        return self.results[mode].probs

    def fit_errors(self, mode: str) -> np.ndarray:
        cs = self.setup.constraints_for(mode)
        return self.results[mode].probs @ cs.payoffs - cs.prices

    def max_fit_error(self, mode: str, kinds=("call", "put", "forward")) -> float:
        cs = self.setup.constraints_for(mode)
        sel = np.isin(cs.kinds, kinds)
        err = np.abs(self.fit_errors(mode))[sel]
        return float(err.max()) if err.size else 0.0

    def mismatches(self, mode: str) -> np.ndarray:
        p = self.probabilities(mode)
        return np.array([
            pricer.martingale_mismatch(self.setup.paths, w, p, self.config.market)
            for w in self.setup.windows
        ])

    def retained_windows(self) -> np.ndarray:
        kept = set(self.setup.retained.labels)
        return np.array([w.label in kept for w in self.setup.windows], dtype=bool)

    def summary(self) -> dict:
        full, kept = self.setup.full, self.setup.retained
        kinds = full.kinds
        n_pairs = max(len(self.setup.paths.maturities) - 1, 1)
        retained = self.retained_windows()
        out = {
            "prices": self.prices,
            "prior_standard_error": self.prior_standard_error,
            "converged": {m: r.converged for m, r in self.results.items()},
            "iterations": {m: r.iterations for m, r in self.results.items()},
            "constraints": {
                "smile": int(np.isin(kinds, ["call", "put"]).sum()),
                "forward": int((kinds == "forward").sum()),
                "martingale": int((kinds == "martingale").sum()),
                "windows_per_pair": len(self.setup.windows) // n_pairs,
                "total": len(full),
                "removed": len(full) - len(kept),
                "retained": len(kept),
            },
            "max_fit_error": {m: self.max_fit_error(m) for m in self.results},
            "max_abs_mismatch_retained": {},
            "n_paths": self.setup.paths.n_paths,
            "seed": self.config.sim.seed,
        }
        for m in ("prior", *self.results):
            mm = self.mismatches(m)[retained]
            mm = mm[np.isfinite(mm)]
            out["max_abs_mismatch_retained"][m] = float(np.abs(mm).max()) if mm.size else 0.0
        return out

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "report.json", "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_removal_report(self.setup.removal, outdir / "removal.csv")
        for mode, res in self.results.items():
            write_iteration_log(res.log, outdir / f"iterations_{mode.replace('+', '_')}.csv")
        self._write_fit_errors(outdir / "fit_errors.csv")
        self._write_figures(outdir)

    def _write_fit_errors(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "label", "kind", "target", "model", "error"])
            for mode in self.results:
                cs = self.setup.constraints_for(mode)
                model = self.results[mode].probs @ cs.payoffs
                for lab, c, v in zip(cs.labels, cs.prices, model):
                    w.writerow([mode, str(lab), lab.kind, f"{c:.12g}", f"{v:.12g}", f"{v - c:.6e}"])

    def _write_figures(self, outdir):
        paths, market, spec = self.setup.paths, self.config.market, self.config.product
        s0 = market.spot
        modes = ["prior", *self.results]
        mats = paths.maturities
        t_cdf = mats[min(3, mats.size - 1)]
        cols = {}
        for m in modes:
            level, cum = pricer.cumulative_distribution(paths, t_cdf, self.probabilities(m))
            cols.setdefault("level", level / s0)
            cols[f"cdf_{m}"] = cum
        pricer.write_series(outdir / "fig2_cdf.csv", cols)

        mism = {m: self.mismatches(m) for m in modes}
        retained = self.retained_windows()
        for k, (t1, t2) in enumerate(zip(mats, mats[1:])):
            idx = [i for i, w in enumerate(self.setup.windows) if w.t_from == t1 and w.t_to == t2]
            cols = {
                "lower": [self.setup.windows[i].lower / s0 for i in idx],
                "upper": [self.setup.windows[i].upper / s0 for i in idx],
                "retained": [float(retained[i]) for i in idx],
            }
            for m in modes:
                cols[f"mismatch_{m}"] = mism[m][idx]
            pricer.write_series(outdir / f"fig3_mismatch_t{k + 1}_t{k + 2}.csv", cols)

        paying = self.setup.payoff > 0
        t_end = spec.maturity
        for pred, name in (("paying", "paying"), ("non-paying", "nonpaying")):
            cols = {}
            for m in modes:
                level, cum = pricer.cumulative_distribution(
                    paths, t_end, self.probabilities(m), pred, paying
                )
                cols.setdefault("level", level / s0)
                cols[f"cdf_{m}"] = cum
            pricer.write_series(outdir / f"fig4_{name}.csv", cols)


def run(cfg: RunConfig, modes=MODES, paths: PathMatrix | None = None) -> CalibrationReport:
    """Prior price plus one calibration per mode, all on the same paths."""
    setup = prepare(cfg, paths)
    prices = {"prior": pricer.price(setup.payoff)}
    results = {}
    for mode in modes:
        cs = setup.constraints_for(mode)
        log.info("calibrating %s: %d constraints", mode, len(cs))
        res = calibrate(cs, cfg.solver)
        if not res.converged:
            log.warning("%s calibration did not converge after %d iterations", mode, res.iterations)
        results[mode] = res
        prices[mode] = pricer.price(setup.payoff, res.probs)
    return CalibrationReport(cfg, setup, results, prices, pricer.standard_error(setup.payoff))


def _print_summary(report: CalibrationReport) -> None:
    s = report.summary()
    print(f"paths: {s['n_paths']}  seed: {s['seed']}")
    c = s["constraints"]
    print(f"constraints: {c['smile']} smile + {c['forward']} forward + {c['martingale']} "
          f"martingale ({c['windows_per_pair']} windows/pair); removed {c['removed']}, "
          f"retained {c['retained']}")
    print(f"prior price: {s['prices']['prior']:.4f} (s.e. {s['prior_standard_error']:.4f})")
    for m, res in report.results.items():
        print(f"{m:>11}: {s['prices'][m]:.4f}  converged={res.converged} "
              f"iterations={res.iterations} max fit error={s['max_fit_error'][m]:.2e}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wmcal", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "simulate, calibrate with and without martingale claims, price, report"),
        ("simulate", "simulate the prior paths only"),
        ("calibrate", "calibrate one mode"),
        ("validate", "check a config file"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config")
        if name != "validate":
            p.add_argument("--out", help="output directory (overrides the config)")
        if name in ("run", "calibrate"):
            p.add_argument("--paths", help="reuse paths saved by 'simulate'")
        if name == "calibrate":
            p.add_argument("--mode", choices=MODES, default="smile+mtgl")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    if args.command == "validate":
        print("ok")
        return 0
    outdir = Path(args.out) if args.out else cfg.output
    if args.command == "simulate":
        paths = simulate(cfg.sim, cfg.market)
        outdir.mkdir(parents=True, exist_ok=True)
        paths.save(outdir / "paths.npz")
        print(f"wrote {paths.n_paths} x {len(paths.maturities)} paths to {outdir / 'paths.npz'}")
        return 0
    paths = PathMatrix.load(args.paths) if args.paths else None
    modes = MODES if args.command == "run" else (args.mode,)
    report = run(cfg, modes, paths)
    report.write(outdir)
    _print_summary(report)
    return 0 if report.converged else 1


if __name__ == "__main__":
    sys.exit(main())
