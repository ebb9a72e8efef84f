"""Soil-feedstock mixing bookkeeping.

Closed-form mass balance for a single soil core, the two-end-member mixing
algebra used by tracer methods, and the cation to CO2 mass conversion.
Everything here is a pure function and accepts numpy arrays wherever a
scalar is accepted, so the simulator can evaluate thousands of cores at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

__all__ = [
    "EQ1_FACTORS",
    "BAYES_FACTORS",
    "MixingError",
    "TracerSignalError",
    "MixingParams",
    "CoreComposition",
    "TracerObservation",
    "core_composition",
    "mixed_concentration",
    "mixing_fraction",
    "dissolution_fraction",
    "DissolutionFraction",
    "tracer_difference",
    "cdr_from_losses",
    "exponential_loss",
    "TriangleScenario",
    "TriangleResult",
    "triangle_pathology_demo",
]

# kg CO2 per kg cation dissolved, two moles of bicarbonate per divalent cation.
EQ1_FACTORS: Mapping[str, float] = {"Mg": 3.62, "Ca": 2.2, "Na": 1.91, "K": 1.12}
# Extra digit for Ca and Mg, used by the Bayesian model nodes.
BAYES_FACTORS: Mapping[str, float] = {"Ca": 2.196, "Mg": 3.621}

DEFAULT_RTOL = 1e-9


class MixingError(ValueError):
    """Raised for inputs that break the mixing model's physical constraints."""


class TracerSignalError(MixingError):
    """End members (or mixture and baseline) are indistinguishable."""


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _check_fraction(name: str, x, lo: float = 0.0, hi: float = 1.0) -> None:
    a = _arr(x)
    if not np.all(np.isfinite(a)) or np.any(a < lo) or np.any(a > hi):
        raise MixingError(f"{name} must lie in [{lo}, {hi}]")


@dataclass(frozen=True)
class MixingParams:
    """Inputs of the single-core mixing model.

    Element-indexed quantities are mappings from element symbol to a value
    (or an array of per-core values). Units are SI: kg, m, kg/kg.
    """

    sampled_feedstock_fraction: float | np.ndarray
    depth: float | np.ndarray
    application_rate: float | np.ndarray
    feedstock_density: float | np.ndarray
    feedstock_conc: Mapping[str, float | np.ndarray]
    soil_density: float | np.ndarray
    soil_conc: Mapping[str, float | np.ndarray]
    element_loss: Mapping[str, float | np.ndarray]
    bulk_loss: float | np.ndarray = 0.0
    core_area: float | np.ndarray = 1.0

    @property
    def elements(self) -> tuple[str, ...]:
        return tuple(self.feedstock_conc)

    def validate(self) -> None:
        keys = set(self.feedstock_conc)
        if keys != set(self.soil_conc) or keys != set(self.element_loss):
            raise MixingError("feedstock_conc, soil_conc and element_loss must share elements")
        _check_fraction("sampled_feedstock_fraction", self.sampled_feedstock_fraction)
        _check_fraction("bulk_loss", self.bulk_loss)
        for el in keys:
            _check_fraction(f"element_loss[{el}]", self.element_loss[el])
            _check_fraction(f"feedstock_conc[{el}]", self.feedstock_conc[el])
            _check_fraction(f"soil_conc[{el}]", self.soil_conc[el])
        q = _arr(self.application_rate)
        if not np.all(np.isfinite(q)) or np.any(q < 0):
            raise MixingError("application_rate must be >= 0")
        rho_f = _arr(self.feedstock_density)
        if np.any(~(rho_f > 0) & (q > 0)):
            raise MixingError("feedstock_density must be > 0 where application_rate > 0")
        if not np.all(_arr(self.soil_density) > 0):
            raise MixingError("soil_density must be > 0")
        if not np.all(_arr(self.depth) > 0):
            raise MixingError("depth must be > 0")
        if not np.all(_arr(self.core_area) > 0):
            raise MixingError("core_area must be > 0")


@dataclass(frozen=True)
class CoreComposition:
    total_mass_per_area: np.ndarray
    total_mass: np.ndarray
    conc: dict[str, np.ndarray]
    feedstock_mass_per_area: np.ndarray
    soil_mass_per_area: np.ndarray
    feedstock_height: np.ndarray = field(default=None)

    @property
    def mixing_fraction(self) -> np.ndarray:
        """Feedstock mass per unit core mass."""
        return self.feedstock_mass_per_area / self.total_mass_per_area


def core_composition(p: MixingParams) -> CoreComposition:
    """Mass and element concentrations of a soil core.

    Feedstock mass, the vertical space it occupies, and the soil mass it
    displaces are computed per unit area; concentrations are total element
    mass over total mass.
    """
    p.validate()
    gamma = _arr(p.sampled_feedstock_fraction)
    q = _arr(p.application_rate)
    depth = _arr(p.depth)
    rho_s = _arr(p.soil_density)
    rho_f = _arr(p.feedstock_density)

    m_f = q * gamma * (1.0 - _arr(p.bulk_loss))
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(m_f > 0, m_f / np.where(rho_f > 0, rho_f, 1.0), 0.0)
    if np.any(h >= depth):
        raise MixingError("feedstock layer fills the sampled depth (h >= depth)")
    m_s = rho_s * (depth - h)
    total = m_f + m_s
    conc = {}
    for el in p.elements:
        m_fi = q * gamma * (1.0 - _arr(p.element_loss[el])) * _arr(p.feedstock_conc[el])
        m_si = m_s * _arr(p.soil_conc[el])
        conc[el] = (m_fi + m_si) / total
    return CoreComposition(
        total_mass_per_area=total,
        total_mass=total * _arr(p.core_area),
        conc=conc,
        feedstock_mass_per_area=m_f,
        soil_mass_per_area=m_s,
        feedstock_height=h,
    )


class TracerObservation(NamedTuple):
    """Feedstock, baseline soil and weathered-mixture concentration of one element."""

    feedstock: float
    baseline: float
    weathered: float


def _indistinct(a, b, rtol: float) -> np.ndarray:
    a, b = _arr(a), _arr(b)
    return (a == b) | (np.abs(a - b) <= rtol * np.maximum(np.abs(a), np.abs(b)))


def mixed_concentration(alpha, feedstock, baseline):
    """Mass-weighted mix: ``alpha * feedstock + (1 - alpha) * baseline``."""
    _check_fraction("alpha", alpha)
    alpha = _arr(alpha)
    out = alpha * _arr(feedstock) + (1.0 - alpha) * _arr(baseline)
    return out.item() if out.ndim == 0 else out


def mixing_fraction(obs: TracerObservation, rtol: float = DEFAULT_RTOL):
    """Invert the mixing line for one element. The result is not clamped."""
    f, s, w = (_arr(v) for v in obs)
    if np.any(_indistinct(f, s, rtol)):
        raise TracerSignalError("feedstock and baseline concentrations are equal")
    out = (w - s) / (f - s)
    return out.item() if out.ndim == 0 else out


class DissolutionFraction(NamedTuple):
    value: float
    in_range: bool


def _dissolution_fraction_raw(tracer, mobile, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    ft, st, wt = (_arr(v) for v in tracer)
    fm, sm, wm = (_arr(v) for v in mobile)
    if np.any(_indistinct(ft, st, rtol)):
        raise TracerSignalError("tracer feedstock and baseline concentrations are equal")
    if np.any(_indistinct(fm, sm, rtol)):
        raise TracerSignalError("mobile feedstock and baseline concentrations are equal")
    if np.any(wt == st):
        raise ZeroDivisionError("tracer mixture equals tracer baseline (w_t == s_t)")
    return 1.0 - (ft - st) / (wt - st) * (wm - sm) / (fm - sm)


def dissolution_fraction(
    tracer: TracerObservation, mobile: TracerObservation, rtol: float = DEFAULT_RTOL
) -> DissolutionFraction:
    """Fraction of the feedstock's mobile element lost, from tracer and mobile triples.

    Values outside [0, 1] are returned unchanged; ``in_range`` flags them.
    """
    value = float(_dissolution_fraction_raw(tracer, mobile, rtol))
    return DissolutionFraction(value, 0.0 <= value <= 1.0)


def tracer_difference(alpha, mobile: TracerObservation):
    """Concentration lost from the mixture since spreading (positive means loss)."""
    _check_fraction("alpha", alpha)
    fm, sm, wm = (_arr(v) for v in mobile)
    out = _arr(alpha) * fm + (1.0 - _arr(alpha)) * sm - wm
    return out.item() if out.ndim == 0 else out


def cdr_from_losses(loss_mass: Mapping[str, float], factors: Mapping[str, float] = EQ1_FACTORS) -> float:
    """CO2 mass implied by dissolved cation masses (same mass unit in and out)."""
    total = 0.0
    for el, mass in loss_mass.items():
        if el not in factors:
            raise KeyError(f"no CO2 conversion factor for {el!r}")
        if mass < 0:
            raise ValueError(f"negative loss mass for {el}")
        total += factors[el] * mass
    return total


def exponential_loss(rate, t):
    """Loss fraction ``1 - exp(-rate * t)`` of a first-order weathering curve."""
    rate, t = _arr(rate), _arr(t)
    if np.any(rate < 0) or np.any(t < 0):
        raise ValueError("rate and time must be non-negative")
    out = -np.expm1(-rate * t)
    return out.item() if out.ndim == 0 else out


@dataclass(frozen=True)
class TriangleScenario:
    """Two-element mixing example: one immobile tracer, one mobile cation."""

    tracer_feedstock: float = 1000e-6
    tracer_baseline: float = 200e-6
    mobile_feedstock: float = 0.05
    mobile_baseline: float = 0.002
    alpha: float = 0.02
    loss: float = 0.5

    def expected(self) -> tuple[float, float]:
        wt = mixed_concentration(self.alpha, self.tracer_feedstock, self.tracer_baseline)
        wm = mixed_concentration(
            self.alpha * (1.0 - self.loss), self.mobile_feedstock, self.mobile_baseline
        )
        return wt, wm


class TriangleResult(NamedTuple):
    tracer: np.ndarray
    mobile: np.ndarray
    dissolution: np.ndarray
    fraction_outside: float


def triangle_pathology_demo(
    scenario: TriangleScenario | None = None,
    n_draws: int = 50,
    rel_noise: float = 0.1,
    rng: np.random.Generator | None = None,
) -> TriangleResult:
    """Noisy draws of the weathered mixture and the dissolution fraction of each.

    Tracer and mobile concentrations get independent normal relative noise
    around their expected values.
    """
    scenario = scenario or TriangleScenario()
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    if rel_noise < 0:
        raise ValueError("rel_noise must be >= 0")
    rng = rng if rng is not None else np.random.default_rng()
    wt, wm = scenario.expected()
    tracer = wt * (1.0 + rel_noise * rng.standard_normal(n_draws))
    mobile = wm * (1.0 + rel_noise * rng.standard_normal(n_draws))
    d = _dissolution_fraction_raw(
        (scenario.tracer_feedstock, scenario.tracer_baseline, tracer),
        (scenario.mobile_feedstock, scenario.mobile_baseline, mobile),
    )
    outside = float(np.mean((d < 0) | (d > 1)))
    return TriangleResult(tracer, mobile, d, outside)
