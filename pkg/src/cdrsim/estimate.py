"""Frequentist CDR estimation by cation-stock differencing, with bootstrap intervals.

The reference estimator pairs each cell's post-spreading and post-weathering
samples, averages the concentration drop over treatment cells, subtracts the
same average over control cells, and converts the concentration change to a
mass per area with a soil density and depth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .mixing import EQ1_FACTORS, TracerObservation, _dissolution_fraction_raw
from .plan import CONTROL, TREATMENT
from .rng import derive_rng
from .scenario import Scenario
from .simulate import Dataset, simulate, true_cdr

log = logging.getLogger(__name__)

DEFAULT_LEVELS = (0.5, 0.8, 0.9, 0.95)


class EstimationError(ValueError):
    pass


STOCK_BASES = ("nominal", "measured")


def cell_tables(ds: Dataset, rounds: Sequence[int], cored_area: float | None = None) -> dict[str, np.ndarray]:
    """Per-group arrays of shape ``(n_cells, n_rounds, n_elements)``, cells sorted by id.

    Entries are concentrations [kg/kg], or element stocks [kg/m2] when
    ``cored_area`` (total core cross-section per composite, m2) is given.
    Only cells observed in every requested round are kept.
    """
    out = {}
    have = set(ds.rounds())
    missing = [r for r in rounds if r not in have]
    if missing:
        raise EstimationError(f"dataset is missing round(s) {missing}")
    conc = np.column_stack([ds.conc(e) for e in ds.elements])
    if cored_area is not None:
        if not cored_area > 0:
            raise EstimationError("cored area must be > 0")
        conc = conc * (ds.samples["mass_kg"] / cored_area)[:, None]
    for g in (TREATMENT, CONTROL):
        gm = ds.samples["group"] == g
        if not gm.any():
            raise EstimationError(f"dataset has no {g} samples")
        per_round = []
        for r in rounds:
            m = gm & (ds.samples["round"] == r)
            per_round.append(dict(zip(ds.samples["cell"][m].tolist(), conc[m])))
        cells = sorted(set.intersection(*(set(p) for p in per_round)))
        if not cells:
            raise EstimationError(f"no {g} cell is observed in all rounds {list(rounds)}")
        out[g] = np.stack([np.stack([p[c] for p in per_round]) for c in cells])
    return out


@dataclass(frozen=True)
class CationStockEstimator:
    """Treatment-minus-control mean concentration drop, as total CO2 [t].

    On stock tables set ``soil_density`` and ``depth`` to 1. Works on arrays with arbitrary leading batch dimensions so bootstrap
    replicates are evaluated in one call. Negative drops are kept.
    """

    elements: tuple[str, ...]
    soil_density: float = 1000.0
    depth: float = 0.1
    treatment_area: float = 3200.0
    factors: Mapping[str, float] = field(default_factory=lambda: dict(EQ1_FACTORS))
    first: int = 0  # index of the post-spreading round within the table
    second: int = 1  # index of the post-weathering round

    def deltas(self, tables: Mapping[str, np.ndarray]) -> np.ndarray:
        t, c = tables[TREATMENT], tables[CONTROL]
        dt = (t[..., self.first, :] - t[..., self.second, :]).mean(axis=-2)
        dc = (c[..., self.first, :] - c[..., self.second, :]).mean(axis=-2)
        return dt - dc

    def __call__(self, tables: Mapping[str, np.ndarray]) -> np.ndarray:
        k = np.array([self.factors[e] for e in self.elements])
        loss_per_area = self.deltas(tables) * self.soil_density * self.depth
        return (loss_per_area @ k) * self.treatment_area / 1000.0


@dataclass
class Estimate:
    point: float
    deltas: dict[str, float]
    intervals: dict[float, tuple[float, float]] = field(default_factory=dict)
    B: int = 0
    seed: int | None = None
    point_outside: dict[float, bool] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "point_t": self.point,
            "deltas_kgkg": self.deltas,
            "intervals": {f"{lvl:g}": list(iv) for lvl, iv in self.intervals.items()},
            "B": self.B,
            "seed": self.seed,
            "point_outside_interval": {f"{lvl:g}": v for lvl, v in self.point_outside.items()},
        }


def nominal_depth(scenario: Scenario) -> float:
    d = scenario.plan.depth_dist
    if d.kind == "triangular":
        mode = 0.5 * (d.low + d.high) if d.mode is None else d.mode
        return (d.low + mode + d.high) / 3.0
    return 0.5 * (d.low + d.high)


def cored_area(scenario: Scenario) -> float:
    """Total core cross-section in one composite sample [m2]."""
    return scenario.core_area * scenario.plan.stencil.n_cores


def estimator_for(
    scenario: Scenario, rounds: Sequence[int] = (2, 3), stock: str = "nominal"
) -> CationStockEstimator:
    """Reference estimator with the scenario's treated area.

    ``nominal`` converts concentrations with the scenario's mean density and
    depth; ``measured`` expects stock tables (see ``scenario_tables``).
    """
    if stock not in STOCK_BASES:
        raise EstimationError(f"stock basis must be one of {STOCK_BASES}")
    p = scenario.plan
    area = (p.extent[0] * p.extent[1]) / (p.nx * p.ny) * _n_treated(scenario)
    nominal = stock == "nominal"
    return CationStockEstimator(
        elements=scenario.elements,
        soil_density=scenario.soil_density.mean if nominal else 1.0,
        depth=nominal_depth(scenario) if nominal else 1.0,
        treatment_area=area,
    )


def scenario_tables(ds: Dataset, scenario: Scenario, rounds: Sequence[int] = (2, 3), stock: str = "nominal"):
    """Cell tables matching ``estimator_for(scenario, rounds, stock)``."""
    return cell_tables(ds, rounds, cored_area(scenario) if stock == "measured" else None)


def _n_treated(scenario: Scenario) -> int:
    p = scenario.plan
    if p.pattern == "all-treatment":
        return p.nx * p.ny
    return ((p.nx + 1) // 2) * p.ny


def cation_stock_estimate(
    ds: Dataset,
    soil_density: float = 1000.0,
    depth: float = 0.1,
    treatment_area: float = 3200.0,
    rounds: Sequence[int] = (2, 3),
    factors: Mapping[str, float] = EQ1_FACTORS,
) -> Estimate:
    est = CationStockEstimator(ds.elements, soil_density, depth, treatment_area, dict(factors))
    tables = cell_tables(ds, rounds)
    return Estimate(float(est(tables)), dict(zip(ds.elements, map(float, est.deltas(tables)))))


def _resample(strata: Mapping[str, np.ndarray], B: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    out = {}
    for name in sorted(strata):
        arr = strata[name]
        idx = rng.integers(0, len(arr), (B, len(arr)))
        out[name] = arr[idx]
    return out


def bootstrap(
    data: Dataset | Mapping[str, np.ndarray],
    estimator: Callable[[Mapping[str, np.ndarray]], np.ndarray],
    B: int = 2000,
    levels: Sequence[float] = DEFAULT_LEVELS,
    rng: np.random.Generator | None = None,
    rounds: Sequence[int] = (2, 3),
    seed: int | None = None,
) -> Estimate:
    """Percentile bootstrap resampling whole cells within each group.

    ``data`` is a Dataset or a mapping from stratum name to an array whose
    first axis indexes the resampling unit. A cell keeps all its rounds, so
    the within-cell differencing survives resampling.
    """
    if B < 200:
        raise EstimationError("B must be >= 200")
    for lvl in levels:
        if not 0 < lvl < 1:
            raise EstimationError("interval levels must lie in (0, 1)")
    strata = cell_tables(data, rounds) if isinstance(data, Dataset) else dict(data)
    for name, arr in strata.items():
        if len(arr) < 2:
            raise EstimationError(f"stratum {name!r} has fewer than 2 units")
    rng = rng if rng is not None else np.random.default_rng(seed)
    point = float(estimator(strata))
    reps = np.asarray(estimator(_resample(strata, B, rng)), dtype=float)
    intervals, outside = {}, {}
    for lvl in sorted(levels):
        lo, hi = np.quantile(reps, [(1 - lvl) / 2, (1 + lvl) / 2])
        intervals[lvl] = (float(lo), float(hi))
        outside[lvl] = not lo <= point <= hi
        if outside[lvl]:
            log.warning("point estimate lies outside the %g percentile interval", lvl)
    deltas = {}
    if hasattr(estimator, "deltas"):
        deltas = dict(zip(estimator.elements, map(float, estimator.deltas(strata))))
    return Estimate(point, deltas, intervals, B, seed, outside)


@dataclass
class CoverageReport:
    levels: tuple[float, ...]
    coverage: dict[float, float]
    n: int
    mean_point: float
    mean_truth: float
    sd_point: float
    points: np.ndarray
    truths: np.ndarray

    @property
    def bias(self) -> float:
        return self.mean_point - self.mean_truth

    @property
    def rel_bias(self) -> float:
        return self.bias / self.mean_truth

    @property
    def bias_se(self) -> float:
        return float(np.std(self.points - self.truths, ddof=1) / np.sqrt(self.n))

    def rows(self) -> list[dict]:
        return [
            {"level": f"{lvl:g}", "nominal": lvl, "empirical": self.coverage[lvl], "n": self.n}
            for lvl in self.levels
        ]


def realization_truth(
    ds: Dataset, scenario: Scenario, rounds: Sequence[int] = (2, 3), factors: Mapping[str, float] = EQ1_FACTORS
) -> float:
    """True CDR [t] accrued between two rounds of a simulated dataset."""
    times = [ds.truth["rounds"][r - 1]["time_yr"] for r in rounds]
    a = true_cdr(scenario, ds.truth, times[0], factors)
    b = true_cdr(scenario, ds.truth, times[1], factors)
    return b["total_t"] - a["total_t"]


def validate_coverage(
    scenario: Scenario,
    n_realizations: int,
    B: int,
    levels: Sequence[float] = DEFAULT_LEVELS,
    seed: int = 0,
    estimator: CationStockEstimator | None = None,
    rounds: Sequence[int] = (2, 3),
    threads: int = 1,
    min_realizations: int = 100,
    stock: str = "nominal",
) -> CoverageReport:
    """Simulate, estimate and bootstrap repeatedly; count intervals that cover the truth."""
    if n_realizations < min_realizations:
        raise EstimationError(f"n_realizations must be >= {min_realizations}")
    estimator = estimator or estimator_for(scenario, rounds, stock)
    levels = tuple(sorted(levels))

    def one(k: int):
        try:
            ds = simulate(scenario, seed, k)
            truth = realization_truth(ds, scenario, rounds, estimator.factors)
            tables = scenario_tables(ds, scenario, rounds, stock)
            est = bootstrap(tables, estimator, B, levels, derive_rng(seed, "realization", k, "bootstrap"), rounds)
        except Exception as exc:
            raise EstimationError(f"realization {k}: {exc}") from exc
        return est, truth

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_realizations)))
    else:
        results = [one(k) for k in range(n_realizations)]

    points = np.array([r[0].point for r in results])
    truths = np.array([r[1] for r in results])
    cov = {
        lvl: float(np.mean([r[0].intervals[lvl][0] <= r[1] <= r[0].intervals[lvl][1] for r in results]))
        for lvl in levels
    }
    return CoverageReport(levels, cov, n_realizations, float(points.mean()), float(truths.mean()),
                          float(points.std(ddof=1)), points, truths)


def dissolution_fraction_estimate(
    ds: Dataset,
    tracer: str,
    mobile: str,
    feedstock_conc: Mapping[str, float],
    baseline_round: int = 1,
    weathered_round: int = 3,
) -> np.ndarray:
    """Per-treatment-cell dissolution fraction of ``mobile`` using an immobile ``tracer``.

    Values outside [0, 1] are returned as they are.
    """
    tab = cell_tables(ds, (baseline_round, weathered_round))[TREATMENT]
    it, im = ds.elements.index(tracer), ds.elements.index(mobile)
    t_obs = TracerObservation(feedstock_conc[tracer], tab[:, 0, it], tab[:, 1, it])
    m_obs = TracerObservation(feedstock_conc[mobile], tab[:, 0, im], tab[:, 1, im])
    return _dissolution_fraction_raw(t_obs, m_obs)
