"""Local (finite-difference) and variance-based (Sobol) sensitivity of a core's concentration."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .mixing import MixingError, MixingParams, core_composition

# Order used in tables: the Table-1 inputs that affect concentration.
PARAMETERS = (
    "sampled_feedstock_fraction",
    "depth",
    "application_rate",
    "feedstock_density",
    "feedstock_conc",
    "soil_density",
    "soil_conc",
    "element_loss",
    "bulk_loss",
)
SYMBOLS = {
    "sampled_feedstock_fraction": "gamma",
    "depth": "d",
    "application_rate": "Q",
    "feedstock_density": "rho_f",
    "feedstock_conc": "c_f",
    "soil_density": "rho_s",
    "soil_conc": "c_s",
    "element_loss": "l",
    "bulk_loss": "L",
}
_PER_ELEMENT = {"feedstock_conc", "soil_conc", "element_loss"}


def example_params() -> MixingParams:
    """Representative calcium-like single-core inputs used for the gradient bar chart."""
    return MixingParams(
        sampled_feedstock_fraction=0.9,
        depth=0.10,
        application_rate=3.0,
        feedstock_density=3000.0,
        feedstock_conc={"Ca": 0.05},
        soil_density=1000.0,
        soil_conc={"Ca": 0.003},
        element_loss={"Ca": 0.5},
        bulk_loss=0.5,
    )


def _get(p: MixingParams, name: str, element: str) -> float:
    v = getattr(p, name)
    return float(v[element] if name in _PER_ELEMENT else v)


def _set(p: MixingParams, name: str, element: str, value) -> MixingParams:
    if name in _PER_ELEMENT:
        d = dict(getattr(p, name))
        d[element] = value
        return replace(p, **{name: d})
    return replace(p, **{name: value})


def _conc(p: MixingParams, element: str) -> float:
    return float(core_composition(p).conc[element])


class LocalSensitivity(NamedTuple):
    parameter: str
    symbol: str
    value: float
    delta_ppm: float
    derivative: float
    step: float
    richardson_rel_diff: float
    step_adjusted: bool


def local_sensitivity(
    p: MixingParams,
    element: str | None = None,
    perturbation: float = 0.01,
    parameters: Sequence[str] = PARAMETERS,
) -> list[LocalSensitivity]:
    """Change in core concentration [ppm] for a relative ``perturbation`` of each input.

    The derivative is a central difference with step ``perturbation * value``,
    refined by Richardson extrapolation against a half-step pass. If a step
    would leave the valid parameter domain it is halved (up to 20 times), or,
    at a boundary, replaced by a one-sided three-point difference; either case
    sets ``step_adjusted``.
    """
    if not perturbation > 0:
        raise ValueError("perturbation must be > 0")
    element = element or p.elements[0]
    out = []
    for name in parameters:
        x0 = _get(p, name, element)
        h = perturbation * abs(x0)
        if h == 0:
            out.append(LocalSensitivity(name, SYMBOLS[name], x0, 0.0, float("nan"), 0.0, 0.0, False))
            continue
        f = lambda x: _conc(_set(p, name, element, x), element)
        adjusted = False
        step = h
        deriv = deriv_half = None
        for _ in range(20):
            try:
                d_full = (f(x0 + step) - f(x0 - step)) / (2 * step)
                d_half = (f(x0 + step / 2) - f(x0 - step / 2)) / step
                deriv, deriv_half = (4 * d_half - d_full) / 3, d_full
                break
            except MixingError:
                step /= 2
                adjusted = True
        if deriv is None:
            deriv, deriv_half = _one_sided(f, x0, h)
        rel = abs(deriv - deriv_half) / abs(deriv) if deriv != 0 else abs(deriv_half)
        out.append(
            LocalSensitivity(name, SYMBOLS[name], x0, deriv * h * 1e6, deriv, step, rel, adjusted)
        )
    return out


def _one_sided(f: Callable[[float], float], x0: float, h: float) -> tuple[float, float]:
    for sign in (1.0, -1.0):
        try:
            f0, f1, f2 = f(x0), f(x0 + sign * h), f(x0 + 2 * sign * h)
            g1, g2 = f(x0 + sign * h / 2), f(x0 + sign * h)
        except MixingError:
            continue
        d = sign * (-3 * f0 + 4 * f1 - f2) / (2 * h)
        dh = sign * (-3 * f0 + 4 * g1 - g2) / h
        return d, dh
    raise MixingError("no valid finite-difference stencil around the parameter value")


# --- Sobol -------------------------------------------------------------------

@dataclass(frozen=True)
class ParamRanges:
    """Uniform ranges of the analyzed inputs; ``fixed`` pins the others."""

    ranges: Mapping[str, tuple[float, float]]
    fixed: Mapping[str, float]

    def __post_init__(self):
        for name, (lo, hi) in self.ranges.items():
            if not lo < hi:
                raise ValueError(f"range for {name} must have low < high")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.ranges)


def default_ranges() -> ParamRanges:
    """Plausible deployment ranges with soil concentration pinned at 3000 ppm."""
    return ParamRanges(
        ranges={
            "sampled_feedstock_fraction": (0.1, 1.0),
            "depth": (0.05, 0.25),
            "application_rate": (0.0, 5.6),
            "feedstock_density": (1000.0, 3000.0),
            "feedstock_conc": (0.04, 0.1),
            "soil_density": (500.0, 1500.0),
            "element_loss": (0.0, 1.0),
            "bulk_loss": (0.0, 1.0),
        },
        fixed={"soil_conc": 0.003},
    )


def mixing_model(ranges: ParamRanges) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized concentration of one element as a function of an ``(n, k)`` input matrix."""
    names = ranges.names

    def f(x: np.ndarray) -> np.ndarray:
        vals = dict(ranges.fixed)
        vals.update({n: x[:, i] for i, n in enumerate(names)})
        p = MixingParams(
            sampled_feedstock_fraction=vals.get("sampled_feedstock_fraction", 1.0),
            depth=vals["depth"],
            application_rate=vals["application_rate"],
            feedstock_density=vals["feedstock_density"],
            feedstock_conc={"X": vals["feedstock_conc"]},
            soil_density=vals["soil_density"],
            soil_conc={"X": vals["soil_conc"]},
            element_loss={"X": vals.get("element_loss", 0.0)},
            bulk_loss=vals.get("bulk_loss", 0.0),
        )
        return core_composition(p).conc["X"]

    return f


class SobolResult(NamedTuple):
    names: tuple[str, ...]
    S1: np.ndarray
    S1_se: np.ndarray
    S2: np.ndarray  # upper triangle filled, NaN elsewhere
    S2_se: np.ndarray
    n_base: int


def _sobol_indices(fA, fB, fAB, fBA):
    k = fAB.shape[1]
    both = np.concatenate([fA, fB])
    # centering leaves the estimators' expectations unchanged and cuts their variance
    mu = both.mean()
    fA, fB, fAB, fBA = fA - mu, fB - mu, fAB - mu, fBA - mu
    var = np.var(both)
    s1 = np.mean(fB[:, None] * (fAB - fA[:, None]), axis=0) / var
    s2 = np.full((k, k), np.nan)
    for i in range(k):
        for j in range(i + 1, k):
            vij = np.mean(fBA[:, i] * fAB[:, j] - fA * fB) / var
            s2[i, j] = vij - s1[i] - s1[j]
    return s1, s2


def sobol(
    model: Callable[[np.ndarray], np.ndarray],
    bounds: Sequence[tuple[float, float]],
    n_base: int,
    rng: np.random.Generator,
    names: Sequence[str] | None = None,
    n_boot: int = 100,
) -> SobolResult:
    """First- and second-order Sobol indices with the Saltelli (2010) estimators.

    Uses ``n_base * (2k + 2)`` model evaluations on plain pseudo-random
    uniforms. Standard errors come from bootstrap resampling of the base rows.
    """
    k = len(bounds)
    if n_base < 2**10:
        raise ValueError("n_base must be >= 1024")
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    if np.any(hi <= lo):
        raise ValueError("every analyzed range must have positive width")
    names = tuple(names) if names is not None else tuple(f"x{i + 1}" for i in range(k))
    u = rng.random((n_base, 2 * k))
    a = lo + (hi - lo) * u[:, :k]
    b = lo + (hi - lo) * u[:, k:]
    fA, fB = model(a), model(b)
    fAB = np.empty((n_base, k))
    fBA = np.empty((n_base, k))
    for i in range(k):
        ab = a.copy()
        ab[:, i] = b[:, i]
        fAB[:, i] = model(ab)
        ba = b.copy()
        ba[:, i] = a[:, i]
        fBA[:, i] = model(ba)
    s1, s2 = _sobol_indices(fA, fB, fAB, fBA)

    boot_rng = np.random.default_rng(rng.integers(2**63))
    b1 = np.empty((n_boot, k))
    b2 = np.empty((n_boot, k, k))
    for r in range(n_boot):
        idx = boot_rng.integers(0, n_base, n_base)
        b1[r], b2[r] = _sobol_indices(fA[idx], fB[idx], fAB[idx], fBA[idx])
    return SobolResult(names, s1, b1.std(axis=0, ddof=1), s2, b2.std(axis=0, ddof=1), n_base)


def mixing_sobol(ranges: ParamRanges | None, n_base: int, rng: np.random.Generator, n_boot: int = 100) -> SobolResult:
    ranges = ranges or default_ranges()
    return sobol(mixing_model(ranges), list(ranges.ranges.values()), n_base, rng, ranges.names, n_boot)
