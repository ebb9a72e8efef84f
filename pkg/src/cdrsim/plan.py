"""Sampling plans: grid cells, treatment/control groups, rounds and compositing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

TREATMENT = "treatment"
CONTROL = "control"
PATTERNS = ("alternate-columns", "all-treatment")


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Round:
    label: str
    time: float
    after_spreading: bool


@dataclass(frozen=True)
class Stencil:
    kind: str = "circle"
    n_cores: int = 5
    radius: float = 2.0

    def __post_init__(self):
        if self.kind == "single":
            if self.n_cores != 1:
                raise PlanError("a single stencil has exactly one core")
        elif self.kind == "circle":
            if self.n_cores < 1 or not self.radius > 0:
                raise PlanError("a circle stencil needs n_cores >= 1 and radius > 0")
        else:
            raise PlanError(f"unknown stencil kind {self.kind!r}")

    def offsets(self) -> np.ndarray:
        """Core offsets from the sample location, equally spaced from angle 0."""
        if self.kind == "single":
            return np.zeros((1, 2))
        ang = 2.0 * np.pi * np.arange(self.n_cores) / self.n_cores
        return self.radius * np.column_stack([np.cos(ang), np.sin(ang)])


@dataclass(frozen=True)
class DepthDistribution:
    """Core depth distribution: ``triangular``, ``uniform`` or ``fixed`` [m]."""

    kind: str = "triangular"
    low: float = 0.05
    high: float = 0.15
    mode: float | None = None

    def __post_init__(self):
        if self.kind not in ("triangular", "uniform", "fixed"):
            raise PlanError(f"unknown depth distribution {self.kind!r}")
        if not 0 < self.low <= self.high:
            raise PlanError("depth bounds must satisfy 0 < low <= high")
        if self.kind == "triangular" and self.mode is not None and not self.low <= self.mode <= self.high:
            raise PlanError("triangular mode must lie within [low, high]")

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "fixed" or self.low == self.high:
            return np.full(shape, self.low)
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, shape)
        mode = 0.5 * (self.low + self.high) if self.mode is None else self.mode
        return rng.triangular(self.low, mode, self.high, shape)


@dataclass(frozen=True)
class Cell:
    id: int
    column: int
    row: int
    x0: float
    y0: float
    x1: float
    y1: float
    group: str


@dataclass(frozen=True)
class Plan:
    extent: tuple[float, float]
    cells: tuple[Cell, ...]
    rounds: tuple[Round, ...]
    targets: np.ndarray
    stencil: Stencil = field(default_factory=Stencil)
    sample_sigma: float = 0.0
    core_sigma: float = 0.0
    depth_dist: DepthDistribution = field(default_factory=DepthDistribution)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_samples(self) -> int:
        return self.n_cells * len(self.rounds)

    @property
    def n_cores(self) -> int:
        return self.n_samples * self.stencil.n_cores

    def cell_area(self, group: str | None = None) -> float:
        return sum((c.x1 - c.x0) * (c.y1 - c.y0) for c in self.cells if group in (None, c.group))

    def group_counts(self) -> dict[str, int]:
        out = {TREATMENT: 0, CONTROL: 0}
        for c in self.cells:
            out[c.group] += 1
        return out


def build_grid_plan(
    extent: tuple[float, float],
    nx: int,
    ny: int,
    rounds: Sequence[Round],
    stencil: Stencil,
    rng: np.random.Generator,
    sample_sigma: float = 0.0,
    core_sigma: float = 0.0,
    depth_dist: DepthDistribution | None = None,
    pattern: str = "alternate-columns",
) -> Plan:
    """Regular ``nx`` by ``ny`` grid over ``extent`` with one random target per cell.

    With ``alternate-columns`` the even columns (counting from 0 at x = 0) are
    treatment and the odd columns control. Cell ids run row-major from the
    origin corner.
    """
    if nx < 1 or ny < 1:
        raise PlanError("nx and ny must be >= 1")
    width, height = map(float, extent)
    if not (width > 0 and height > 0):
        raise PlanError("extent must be positive")
    if pattern not in PATTERNS:
        raise PlanError(f"unknown group pattern {pattern!r}")
    if sample_sigma < 0 or core_sigma < 0:
        raise PlanError("location noise must be >= 0")
    if not rounds:
        raise PlanError("at least one sampling round is required")
    dx, dy = width / nx, height / ny
    if not (dx > 0 and dy > 0):
        raise PlanError("cells have zero area")
    cells = []
    for j in range(ny):
        for i in range(nx):
            group = TREATMENT if pattern == "all-treatment" or i % 2 == 0 else CONTROL
            cells.append(Cell(j * nx + i, i, j, i * dx, j * dy, (i + 1) * dx, (j + 1) * dy, group))
    lo = np.array([[c.x0, c.y0] for c in cells])
    targets = lo + rng.uniform(0.0, 1.0, (len(cells), 2)) * np.array([dx, dy])
    return Plan(
        extent=(width, height),
        cells=tuple(cells),
        rounds=tuple(rounds),
        targets=targets,
        stencil=stencil,
        sample_sigma=float(sample_sigma),
        core_sigma=float(core_sigma),
        depth_dist=depth_dist or DepthDistribution(),
    )


class CoreDraw(NamedTuple):
    cell: int
    round: int
    group: str
    x: float
    y: float
    depth: float
    outside: bool


@dataclass(frozen=True)
class CoreDraws:
    """Realized cores in columnar form, ordered by round, then cell, then core.

    ``sample_x``/``sample_y`` hold the realized composite location of the
    core's sample, before the per-core stencil offset and jitter.
    """

    cell: np.ndarray
    round: np.ndarray
    treated: np.ndarray
    x: np.ndarray
    y: np.ndarray
    depth: np.ndarray
    sample_x: np.ndarray
    sample_y: np.ndarray
    outside: np.ndarray
    n_cores_per_sample: int

    def __len__(self) -> int:
        return len(self.x)

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    @property
    def sample_index(self) -> np.ndarray:
        return np.arange(len(self)) // self.n_cores_per_sample

    def __iter__(self) -> Iterator[CoreDraw]:
        for k in range(len(self)):
            yield CoreDraw(
                int(self.cell[k]),
                int(self.round[k]),
                TREATMENT if self.treated[k] else CONTROL,
                float(self.x[k]),
                float(self.y[k]),
                float(self.depth[k]),
                bool(self.outside[k]),
            )


def realize_cores(plan: Plan, rng: np.random.Generator) -> CoreDraws:
    """Jitter sample and core locations and draw core depths.

    Each round is an independent field visit: the sample location is the
    cell target plus fresh isotropic normal error. Cores that land outside the
    plot are kept and flagged.
    """
    n_r, n_c = len(plan.rounds), plan.n_cells
    offsets = plan.stencil.offsets()
    k = len(offsets)
    sample = plan.targets[None, :, :] + plan.sample_sigma * rng.standard_normal((n_r, n_c, 2))
    cores = sample[:, :, None, :] + offsets[None, None, :, :]
    cores = cores + plan.core_sigma * rng.standard_normal((n_r, n_c, k, 2))
    depth = plan.depth_dist.sample(rng, (n_r, n_c, k))

    treated = np.array([c.group == TREATMENT for c in plan.cells])
    cell = np.broadcast_to(np.arange(n_c)[None, :, None], (n_r, n_c, k)).ravel()
    rnd = np.broadcast_to(np.arange(n_r)[:, None, None], (n_r, n_c, k)).ravel()
    x, y = cores[..., 0].ravel(), cores[..., 1].ravel()
    w, h = plan.extent
    outside = (x < 0) | (x > w) | (y < 0) | (y > h)
    return CoreDraws(
        cell=cell.copy(),
        round=rnd.copy(),
        treated=treated[cell],
        x=x,
        y=y,
        depth=depth.ravel(),
        sample_x=np.repeat(sample[..., 0].ravel(), k),
        sample_y=np.repeat(sample[..., 1].ravel(), k),
        outside=outside,
        n_cores_per_sample=k,
    )


@dataclass(frozen=True)
class Sample:
    """Mass [kg] and element concentrations [kg/kg] of a core or composite.

    Adding samples composites them.
    """

    mass: float
    conc: dict[str, float]

    def __add__(self, other: "Sample") -> "Sample":
        return composite([self, other])


def composite(samples: Iterable) -> Sample:
    """Mass-weighted combination of cores (anything with ``mass``/``total_mass`` and ``conc``)."""
    samples = list(samples)
    if not samples:
        raise PlanError("cannot composite an empty list of samples")
    elements = set(samples[0].conc)
    for s in samples[1:]:
        if set(s.conc) != elements:
            raise PlanError("samples have mismatched element sets")
    masses = np.array([float(getattr(s, "mass", getattr(s, "total_mass", np.nan))) for s in samples])
    total = masses.sum()
    conc = {el: float(np.dot(masses, [s.conc[el] for s in samples]) / total) for el in samples[0].conc}
    return Sample(float(total), conc)


def composite_arrays(mass: np.ndarray, conc: np.ndarray, group_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized compositing of consecutive runs of ``group_size`` cores.

    ``conc`` has shape ``(n_cores, n_elements)``.
    """
    m = mass.reshape(-1, group_size)
    c = conc.reshape(m.shape[0], group_size, -1)
    total = m.sum(axis=1)
    return total, np.einsum("sk,ske->se", m, c) / total[:, None]
