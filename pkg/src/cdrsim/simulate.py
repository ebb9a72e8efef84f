"""Synthetic deployment datasets with a known ground truth.

Each realization draws a sampling plan, realizes the spatial fields at every
core, runs the mixing model core by core, composites the cores of each
sample and adds measurement noise. Everything that went into the measured
values is kept in the truth manifest.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .geostat import GaussianField, realize_cross_correlated
from .mixing import BAYES_FACTORS, MixingError, MixingParams, core_composition, exponential_loss
from .plan import CONTROL, TREATMENT, build_grid_plan, composite_arrays, realize_cores
from .rng import derive_rng
from .scenario import Scenario

TRUTH_SCHEMA_VERSION = 1
BASE_COLUMNS = ("realization", "cell", "round", "group", "x_m", "y_m", "depth_m", "mass_kg")
NOISE_FLOOR = -0.99


class SimulationError(RuntimeError):
    pass


class SchemaError(ValueError):
    pass


def conc_column(element: str) -> str:
    return f"conc_{element}_kgkg"


@dataclass
class Dataset:
    """Measured composite samples plus the truth manifest that produced them.

    ``samples`` maps column name to a 1-D array; rows are ordered by round
    (1-based) then cell.
    """

    elements: tuple[str, ...]
    samples: dict[str, np.ndarray]
    truth: dict[str, Any] | None = None

    def __len__(self) -> int:
        return len(self.samples["cell"])

    @property
    def columns(self) -> list[str]:
        return list(BASE_COLUMNS) + [conc_column(e) for e in self.elements]

    def conc(self, element: str) -> np.ndarray:
        return self.samples[conc_column(element)]

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        cols = [self.samples[c] for c in self.columns]
        for row in zip(*cols):
            w.writerow([v if isinstance(v, str) else repr(v.item() if hasattr(v, "item") else v) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path_or_text: str | Path, truth: dict | None = None) -> "Dataset":
        p = Path(path_or_text) if not str(path_or_text).startswith(BASE_COLUMNS[0]) else None
        text = p.read_text(encoding="utf-8") if p is not None else str(path_or_text)
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise SchemaError("empty dataset file")
        header = rows[0]
        for i, col in enumerate(BASE_COLUMNS):
            if i >= len(header) or header[i] != col:
                found = header[i] if i < len(header) else "<end of header>"
                raise SchemaError(f"column {i + 1}: expected {col!r}, found {found!r}")
        extra = header[len(BASE_COLUMNS) :]
        elements = []
        for col in extra:
            if not (col.startswith("conc_") and col.endswith("_kgkg")):
                raise SchemaError(f"unexpected column {col!r}; element columns are conc_<element>_kgkg")
            elements.append(col[len("conc_") : -len("_kgkg")])
        if not elements:
            raise SchemaError("no conc_<element>_kgkg columns")
        data = list(zip(*rows[1:])) if len(rows) > 1 else [()] * len(header)
        samples: dict[str, np.ndarray] = {}
        for col, values in zip(header, data):
            try:
                if col == "group":
                    arr = np.array(values, dtype=object)
                    bad = set(arr) - {TREATMENT, CONTROL}
                    if bad:
                        raise ValueError(bad)
                elif col in ("realization", "cell", "round"):
                    arr = np.array([int(v) for v in values], dtype=int)
                else:
                    arr = np.array([float(v) for v in values], dtype=float)
            except ValueError as exc:
                raise SchemaError(f"column {col!r}: bad value ({exc})") from None
            samples[col] = arr
        return cls(tuple(elements), samples, truth)

    def select(self, mask: np.ndarray) -> "Dataset":
        return Dataset(self.elements, {k: v[mask] for k, v in self.samples.items()}, self.truth)

    def rounds(self) -> list[int]:
        return sorted(set(int(r) for r in self.samples["round"]))


def _realize_fields(scenario: Scenario, points: np.ndarray, seed: int, k: int):
    app = scenario.application
    q = app.mean + GaussianField(points, app.variogram).sample(derive_rng(seed, "realization", k, "field", "application"))
    soil = realize_cross_correlated(
        points,
        [scenario.soil_conc[e] for e in scenario.elements],
        scenario.soil_cross_correlation,
        derive_rng(seed, "realization", k, "field", "soil_conc"),
    )
    dens = scenario.soil_density
    rho_s = dens.mean + GaussianField(points, dens.variogram).sample(derive_rng(seed, "realization", k, "field", "soil_density"))
    return q, soil, rho_s


def simulate(scenario: Scenario, seed: int, realization: int = 0) -> Dataset:
    """One synthetic dataset; deterministic in ``(scenario, seed, realization)``.

    Application rates below zero, soil concentrations outside [0, 1] and
    soil densities below 1 kg/m3 (possible in the Gaussian tails) are clipped.
    """
    k = realization
    ps = scenario.plan
    plan = build_grid_plan(
        ps.extent, ps.nx, ps.ny, ps.rounds, ps.stencil, derive_rng(seed, "realization", k, "plan"),
        ps.sample_sigma, ps.core_sigma, ps.depth_dist, ps.pattern,
    )
    cores = realize_cores(plan, derive_rng(seed, "realization", k, "cores"))
    n = len(cores)
    els = scenario.elements
    q_field, soil, rho_s = _realize_fields(scenario, cores.points, seed, k)

    after = np.array([r.after_spreading for r in plan.rounds])[cores.round]
    t = np.array([r.time for r in plan.rounds])[cores.round]
    applied = cores.treated & after
    q = np.where(applied, np.maximum(q_field, 0.0), 0.0)
    soil = np.clip(soil, 0.0, 1.0)
    rho_s = np.maximum(rho_s, 1.0)

    frng = derive_rng(seed, "realization", k, "feedstock")
    c_f = np.array([scenario.feedstock_conc[e] for e in els])[None, :] * (
        1.0 + scenario.feedstock_rel_sd * frng.standard_normal((n, len(els)))
    )
    c_f = np.clip(c_f, 0.0, 1.0)
    loss = np.column_stack([np.where(after, exponential_loss(scenario.loss_rates[e], t), 0.0) for e in els])
    if scenario.bulk_loss == "cation-mass":
        bulk = np.sum(c_f * loss, axis=1)
    else:
        bulk = np.full(n, float(scenario.bulk_loss))
    gamma = scenario.mixing_profile.cdf(cores.depth)

    params = MixingParams(
        sampled_feedstock_fraction=gamma,
        depth=cores.depth,
        application_rate=q,
        feedstock_density=scenario.feedstock_density,
        feedstock_conc={e: c_f[:, j] for j, e in enumerate(els)},
        soil_density=rho_s,
        soil_conc={e: soil[:, j] for j, e in enumerate(els)},
        element_loss={e: loss[:, j] for j, e in enumerate(els)},
        bulk_loss=bulk,
        core_area=scenario.core_area,
    )
    try:
        comp = core_composition(params)
    except MixingError as exc:
        h = q * gamma * (1 - bulk) / scenario.feedstock_density
        bad = np.flatnonzero(h >= cores.depth)
        where = f" (first offending core index {bad[0]}, cell {cores.cell[bad[0]]}, round {cores.round[bad[0]] + 1})" if len(bad) else ""
        raise SimulationError(f"realization {k}: mixing model rejected a core{where}: {exc}") from exc

    conc_cores = np.column_stack([comp.conc[e] for e in els])
    mass, conc = composite_arrays(comp.total_mass, conc_cores, cores.n_cores_per_sample)

    nrng = derive_rng(seed, "realization", k, "noise")
    s = len(mass)
    conc_eps = np.maximum(scenario.conc_noise * nrng.standard_normal((s, len(els))), NOISE_FLOOR)
    mass_eps = np.maximum(scenario.mass_noise * nrng.standard_normal(s), NOISE_FLOOR)
    conc_meas = conc * (1.0 + conc_eps)
    mass_meas = mass * (1.0 + mass_eps)

    per = cores.n_cores_per_sample
    first = np.arange(0, n, per)
    treated_s = cores.treated[first]
    samples = {
        "realization": np.full(s, k, dtype=int),
        "cell": cores.cell[first].astype(int),
        "round": cores.round[first].astype(int) + 1,
        "group": np.where(treated_s, TREATMENT, CONTROL).astype(object),
        "x_m": cores.sample_x[first],
        "y_m": cores.sample_y[first],
        "depth_m": cores.depth.reshape(-1, per).mean(axis=1),
        "mass_kg": mass_meas,
    }
    for j, e in enumerate(els):
        samples[conc_column(e)] = conc_meas[:, j]

    truth = {
        "schema_version": TRUTH_SCHEMA_VERSION,
        "tool_version": __version__,
        "seed": int(seed),
        "realization": int(k),
        "config_hash": scenario.config_hash(),
        "elements": list(els),
        "rounds": [{"label": r.label, "time_yr": r.time, "after_spreading": r.after_spreading} for r in plan.rounds],
        "treatment_area_m2": plan.cell_area(TREATMENT),
        "plot_area_m2": plan.cell_area(),
        "loss_rates_per_yr": dict(scenario.loss_rates),
        "loss_fraction_by_round": [
            {e: float(exponential_loss(scenario.loss_rates[e], r.time)) if r.after_spreading else 0.0 for e in els}
            for r in plan.rounds
        ],
        "feedstock_density_kgm3": scenario.feedstock_density,
        "core_area_m2": scenario.core_area,
        "n_cores_per_sample": per,
        "targets": plan.targets.tolist(),
        "cores": {
            "cell": cores.cell.tolist(),
            "round": (cores.round + 1).tolist(),
            "treated": cores.treated.tolist(),
            "x_m": cores.x.tolist(),
            "y_m": cores.y.tolist(),
            "outside_plot": cores.outside.tolist(),
            "depth_m": cores.depth.tolist(),
            "gamma": np.asarray(gamma, dtype=float).tolist(),
            "application_rate_kgm2": q.tolist(),
            "soil_density_kgm3": rho_s.tolist(),
            "soil_conc_kgkg": {e: soil[:, j].tolist() for j, e in enumerate(els)},
            "feedstock_conc_kgkg": {e: c_f[:, j].tolist() for j, e in enumerate(els)},
            "element_loss": {e: loss[:, j].tolist() for j, e in enumerate(els)},
            "bulk_loss": bulk.tolist(),
        },
        "samples_noise_free": {
            "mass_kg": mass.tolist(),
            "conc_kgkg": {e: conc[:, j].tolist() for j, e in enumerate(els)},
        },
    }
    final_t = max(r.time for r in plan.rounds)
    truth["cdr"] = true_cdr(scenario, truth, final_t)
    return Dataset(els, samples, truth)


def true_cdr(scenario: Scenario, truth: Mapping[str, Any], t: float, factors: Mapping[str, float] = BAYES_FACTORS) -> dict[str, float]:
    """Prescribed CDR at time ``t`` over the treated area.

    Per-area CDR is the mean, over all post-spreading treatment cores, of the
    realized application rate times the CO2 equivalent of the cation mass lost
    by ``t``. Completion is relative to losing every cation.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    c = truth["cores"]
    els = truth["elements"]
    treated = np.asarray(c["treated"], dtype=bool)
    rounds = truth["rounds"]
    after = np.array([rounds[r - 1]["after_spreading"] for r in c["round"]], dtype=bool)
    sel = treated & after
    q = np.asarray(c["application_rate_kgm2"])[sel]
    if not sel.any():
        return {"time_yr": float(t), "per_area_kgm2": 0.0, "potential_kgm2": 0.0, "total_t": 0.0, "completion": 0.0}
    cdr = np.zeros(sel.sum())
    pot = np.zeros(sel.sum())
    for e in els:
        cf = np.asarray(c["feedstock_conc_kgkg"][e])[sel]
        l = exponential_loss(scenario.loss_rates[e], t)
        cdr += q * l * cf * factors[e]
        pot += q * cf * factors[e]
    per_area = float(cdr.mean())
    potential = float(pot.mean())
    area = float(truth["treatment_area_m2"])
    return {
        "time_yr": float(t),
        "per_area_kgm2": per_area,
        "potential_kgm2": potential,
        "total_t": area * per_area / 1000.0,
        "completion": per_area / potential if potential > 0 else 0.0,
    }


def replay(truth: Mapping[str, Any]) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Recompute noise-free composite masses and concentrations from a manifest."""
    c = truth["cores"]
    els = truth["elements"]
    params = MixingParams(
        sampled_feedstock_fraction=np.asarray(c["gamma"]),
        depth=np.asarray(c["depth_m"]),
        application_rate=np.asarray(c["application_rate_kgm2"]),
        feedstock_density=truth["feedstock_density_kgm3"],
        feedstock_conc={e: np.asarray(c["feedstock_conc_kgkg"][e]) for e in els},
        soil_density=np.asarray(c["soil_density_kgm3"]),
        soil_conc={e: np.asarray(c["soil_conc_kgkg"][e]) for e in els},
        element_loss={e: np.asarray(c["element_loss"][e]) for e in els},
        bulk_loss=np.asarray(c["bulk_loss"]),
        core_area=truth["core_area_m2"],
    )
    comp = core_composition(params)
    conc = np.column_stack([comp.conc[e] for e in els])
    mass, mixed = composite_arrays(comp.total_mass, conc, truth["n_cores_per_sample"])
    return mass, {e: mixed[:, j] for j, e in enumerate(els)}


def batch_simulate(scenario: Scenario, n_realizations: int, seed: int, threads: int = 1) -> list[Dataset]:
    """``n_realizations`` independent datasets; output does not depend on ``threads``."""
    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")

    def one(k: int) -> Dataset:
        try:
            return simulate(scenario, seed, k)
        except Exception as exc:
            raise SimulationError(f"realization {k} failed: {exc}") from exc

    if threads <= 1:
        return [one(k) for k in range(n_realizations)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n_realizations)))


def write_truth(truth: Mapping[str, Any], path: str | Path) -> None:
    Path(path).write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_truth(path: str | Path) -> dict[str, Any]:
    truth = json.loads(Path(path).read_text(encoding="utf-8"))
    if truth.get("schema_version") != TRUTH_SCHEMA_VERSION:
        raise SchemaError(f"unsupported truth manifest schema_version {truth.get('schema_version')!r}")
    return truth


def concat(datasets: Sequence[Dataset]) -> Dataset:
    els = datasets[0].elements
    cols = datasets[0].samples.keys()
    return Dataset(els, {c: np.concatenate([d.samples[c] for d in datasets]) for c in cols})
