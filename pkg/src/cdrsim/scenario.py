"""Declarative deployment scenarios and their config-file form.

A scenario is a nested key/value tree (YAML or JSON on disk). ``from_dict``
validates the whole tree and reports every problem at once.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml
from scipy import stats

from .geostat import FieldError, FieldSpec, Variogram, anisotropy_transform, check_correlation
from .plan import DepthDistribution, PlanError, Round, Stencil

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid scenario configuration; ``problems`` lists every violated field."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class MixingProfile:
    """Vertical distribution of applied feedstock mass; only its CDF is used."""

    kind: str = "uniform"
    depth: float = 0.05  # uniform: mixing depth; exponential/halfnormal: scale

    def cdf(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind == "surface":
            return np.where(z >= 0, 1.0, 0.0)
        if self.kind == "uniform":
            return np.clip(z / self.depth, 0.0, 1.0)
        if self.kind == "exponential":
            return stats.expon.cdf(z, scale=self.depth)
        if self.kind == "halfnormal":
            return stats.halfnorm.cdf(z, scale=self.depth)
        raise ValueError(f"unknown mixing profile {self.kind!r}")


@dataclass(frozen=True)
class PlanSpec:
    extent: tuple[float, float] = (80.0, 80.0)
    nx: int = 8
    ny: int = 8
    pattern: str = "alternate-columns"
    rounds: tuple[Round, ...] = (
        Round("before spreading", 0.0, False),
        Round("after spreading", 0.0, True),
        Round("one year", 1.0, True),
    )
    stencil: Stencil = field(default_factory=Stencil)
    sample_sigma: float = 0.75
    core_sigma: float = 0.10
    depth_dist: DepthDistribution = field(default_factory=DepthDistribution)


@dataclass(frozen=True)
class Scenario:
    elements: tuple[str, ...]
    plan: PlanSpec
    feedstock_conc: dict[str, float]
    feedstock_rel_sd: float
    feedstock_density: float
    mixing_profile: MixingProfile
    application: FieldSpec
    soil_conc: dict[str, FieldSpec]
    soil_cross_correlation: np.ndarray
    soil_density: FieldSpec
    loss_rates: dict[str, float]
    bulk_loss: str | float = "cation-mass"
    conc_noise: float = 0.0
    mass_noise: float = 0.0
    core_area: float = 3.14e-4
    name: str = "scenario"

    def to_dict(self) -> dict[str, Any]:
        return scenario_to_dict(self)

    def config_hash(self) -> str:
        return config_hash(self.to_dict())


# --- tree <-> objects -------------------------------------------------------

def _variogram_to_dict(v: Variogram) -> dict:
    out = {"model": v.model, "nugget": v.nugget, "sill": v.sill, "range": v.range}
    if not np.array_equal(v.anisotropy, np.eye(2)):
        out["anisotropy"] = {"matrix": v.anisotropy.tolist()}
    return out


def _field_to_dict(f: FieldSpec) -> dict:
    return {"mean": f.mean, "variogram": _variogram_to_dict(f.variogram)}


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    p = s.plan
    return {
        "schema_version": SCHEMA_VERSION,
        "name": s.name,
        "elements": list(s.elements),
        "plan": {
            "extent_m": list(p.extent),
            "nx": p.nx,
            "ny": p.ny,
            "pattern": p.pattern,
            "rounds": [{"label": r.label, "time_yr": r.time, "after_spreading": r.after_spreading} for r in p.rounds],
            "stencil": {"kind": p.stencil.kind, "n_cores": p.stencil.n_cores, "radius_m": p.stencil.radius},
            "sample_sigma_m": p.sample_sigma,
            "core_sigma_m": p.core_sigma,
            "depth": {
                "kind": p.depth_dist.kind,
                "low_m": p.depth_dist.low,
                "high_m": p.depth_dist.high,
                **({"mode_m": p.depth_dist.mode} if p.depth_dist.mode is not None else {}),
            },
        },
        "feedstock": {
            "conc_kgkg": dict(s.feedstock_conc),
            "rel_sd": s.feedstock_rel_sd,
            "density_kgm3": s.feedstock_density,
            "mixing_profile": {"kind": s.mixing_profile.kind, "depth_m": s.mixing_profile.depth},
        },
        "application": _field_to_dict(s.application),
        "soil": {
            "conc": {el: _field_to_dict(f) for el, f in s.soil_conc.items()},
            "cross_correlation": np.asarray(s.soil_cross_correlation).tolist(),
            "density": _field_to_dict(s.soil_density),
        },
        "losses": {"rate_per_yr": dict(s.loss_rates), "bulk": s.bulk_loss},
        "noise": {"conc_rel_sd": s.conc_noise, "mass_rel_sd": s.mass_noise},
        "core_area_m2": s.core_area,
    }


class _Reader:
    def __init__(self):
        self.problems: list[str] = []

    def get(self, tree: Mapping, key: str, path: str, kind=float, default=...):
        if not isinstance(tree, Mapping) or key not in tree:
            if default is ...:
                self.problems.append(f"{path}.{key}: missing")
                return None
            return default
        val = tree[key]
        try:
            if kind is float:
                val = float(val)
                if not np.isfinite(val):
                    raise ValueError
            elif kind is int:
                if isinstance(val, bool) or float(val) != int(val):
                    raise ValueError
                val = int(val)
            elif kind is bool:
                if not isinstance(val, bool):
                    raise ValueError
            elif kind is str:
                val = str(val)
        except (TypeError, ValueError):
            self.problems.append(f"{path}.{key}: expected {kind.__name__}, got {val!r}")
            return None
        return val

    def check(self, cond: bool, msg: str):
        if not cond:
            self.problems.append(msg)

    def attempt(self, fn, path: str):
        try:
            return fn()
        except (FieldError, PlanError, ValueError, TypeError) as exc:
            self.problems.append(f"{path}: {exc}")
            return None


def _read_variogram(r: _Reader, tree, path) -> Variogram | None:
    model = r.get(tree, "model", path, str, "exponential")
    nugget = r.get(tree, "nugget", path, float, 0.0)
    sill = r.get(tree, "sill", path)
    rng = r.get(tree, "range", path)
    aniso_tree = tree.get("anisotropy") if isinstance(tree, Mapping) else None
    if None in (model, nugget, sill, rng):
        return None
    if aniso_tree is None:
        t = np.eye(2)
    elif "matrix" in aniso_tree:
        t = r.attempt(lambda: np.array(aniso_tree["matrix"], dtype=float), path + ".anisotropy.matrix")
    else:
        angle = r.get(aniso_tree, "angle_deg", path + ".anisotropy", float, 0.0)
        ratio = r.get(aniso_tree, "ratio", path + ".anisotropy", float, 1.0)
        if angle is None or ratio is None:
            return None
        t = r.attempt(lambda: anisotropy_transform(angle, ratio), path + ".anisotropy")
    if t is None:
        return None
    return r.attempt(lambda: Variogram(model, nugget, sill, rng, t), path)


def _read_field(r: _Reader, tree, path) -> FieldSpec | None:
    if not isinstance(tree, Mapping):
        r.problems.append(f"{path}: missing")
        return None
    mean = r.get(tree, "mean", path)
    v = _read_variogram(r, tree.get("variogram", {}), path + ".variogram")
    if mean is None or v is None:
        return None
    return FieldSpec(mean, v)


def scenario_from_dict(tree: Mapping[str, Any]) -> Scenario:
    r = _Reader()
    if not isinstance(tree, Mapping):
        raise ConfigError(["root: expected a mapping"])
    version = tree.get("schema_version", SCHEMA_VERSION)
    r.check(version == SCHEMA_VERSION, f"schema_version: unsupported version {version!r}")
    elements = tuple(str(e) for e in tree.get("elements", []))
    r.check(len(elements) >= 1, "elements: at least one element is required")

    pt = tree.get("plan", {})
    extent = pt.get("extent_m", [80.0, 80.0])
    r.check(isinstance(extent, (list, tuple)) and len(extent) == 2, "plan.extent_m: expected [width, height]")
    rounds = []
    for i, rt in enumerate(pt.get("rounds", [])):
        label = r.get(rt, "label", f"plan.rounds[{i}]", str)
        t = r.get(rt, "time_yr", f"plan.rounds[{i}]")
        after = r.get(rt, "after_spreading", f"plan.rounds[{i}]", bool)
        if t is not None:
            r.check(t >= 0, f"plan.rounds[{i}].time_yr: must be >= 0")
        rounds.append(Round(label, t, after))
    r.check(len(rounds) >= 1, "plan.rounds: at least one round is required")
    st = pt.get("stencil", {})
    stencil = r.attempt(
        lambda: Stencil(st.get("kind", "circle"), int(st.get("n_cores", 5)), float(st.get("radius_m", 2.0))),
        "plan.stencil",
    )
    dt = pt.get("depth", {})
    depth = r.attempt(
        lambda: DepthDistribution(
            dt.get("kind", "triangular"),
            float(dt.get("low_m", 0.05)),
            float(dt.get("high_m", 0.15)),
            None if dt.get("mode_m") is None else float(dt["mode_m"]),
        ),
        "plan.depth",
    )
    nx = r.get(pt, "nx", "plan", int, 8)
    ny = r.get(pt, "ny", "plan", int, 8)
    for nm, v in (("nx", nx), ("ny", ny)):
        if v is not None:
            r.check(v >= 1, f"plan.{nm}: must be >= 1")
    ss = r.get(pt, "sample_sigma_m", "plan", float, 0.0)
    cs = r.get(pt, "core_sigma_m", "plan", float, 0.0)
    for nm, v in (("sample_sigma_m", ss), ("core_sigma_m", cs)):
        if v is not None:
            r.check(v >= 0, f"plan.{nm}: must be >= 0")
    pattern = r.get(pt, "pattern", "plan", str, "alternate-columns")

    ft = tree.get("feedstock", {})
    fconc = {}
    for el in elements:
        v = r.get(ft.get("conc_kgkg", {}), el, "feedstock.conc_kgkg")
        if v is not None:
            r.check(0 <= v <= 1, f"feedstock.conc_kgkg.{el}: must lie in [0, 1]")
        fconc[el] = v
    frsd = r.get(ft, "rel_sd", "feedstock", float, 0.0)
    fdens = r.get(ft, "density_kgm3", "feedstock")
    if frsd is not None:
        r.check(frsd >= 0, "feedstock.rel_sd: must be >= 0")
    if fdens is not None:
        r.check(fdens > 0, "feedstock.density_kgm3: must be > 0")
    mp = ft.get("mixing_profile", {})
    profile = MixingProfile(str(mp.get("kind", "uniform")), float(mp.get("depth_m", 0.05)))
    r.check(profile.kind in ("surface", "uniform", "exponential", "halfnormal"),
            f"feedstock.mixing_profile.kind: unknown profile {profile.kind!r}")
    r.check(profile.depth > 0, "feedstock.mixing_profile.depth_m: must be > 0")

    application = _read_field(r, tree.get("application"), "application")
    if application is not None:
        r.check(application.mean >= 0, "application.mean: must be >= 0")

    so = tree.get("soil", {})
    soil_conc = {el: _read_field(r, so.get("conc", {}).get(el), f"soil.conc.{el}") for el in elements}
    rho = so.get("cross_correlation", np.eye(len(elements)).tolist())
    rho = r.attempt(lambda: check_correlation(rho), "soil.cross_correlation")
    if rho is not None:
        r.check(len(rho) == len(elements), "soil.cross_correlation: must be n_elements x n_elements")
    sdens = _read_field(r, so.get("density"), "soil.density")
    if sdens is not None:
        r.check(sdens.mean > 0, "soil.density.mean: must be > 0")

    lo = tree.get("losses", {})
    rates = {}
    for el in elements:
        v = r.get(lo.get("rate_per_yr", {}), el, "losses.rate_per_yr")
        if v is not None:
            r.check(v >= 0, f"losses.rate_per_yr.{el}: must be >= 0")
        rates[el] = v
    bulk = lo.get("bulk", "cation-mass")
    if bulk != "cation-mass":
        try:
            bulk = float(bulk)
            r.check(0 <= bulk <= 1, "losses.bulk: constant bulk loss must lie in [0, 1]")
        except (TypeError, ValueError):
            r.problems.append(f"losses.bulk: expected 'cation-mass' or a number, got {bulk!r}")

    no = tree.get("noise", {})
    cn = r.get(no, "conc_rel_sd", "noise", float, 0.0)
    mn = r.get(no, "mass_rel_sd", "noise", float, 0.0)
    for nm, v in (("conc_rel_sd", cn), ("mass_rel_sd", mn)):
        if v is not None:
            r.check(v >= 0, f"noise.{nm}: must be >= 0")
    area = r.get(tree, "core_area_m2", "root", float, 3.14e-4)
    if area is not None:
        r.check(area > 0, "core_area_m2: must be > 0")

    if r.problems:
        raise ConfigError(r.problems)
    plan = PlanSpec(
        extent=(float(extent[0]), float(extent[1])),
        nx=nx,
        ny=ny,
        pattern=pattern,
        rounds=tuple(rounds),
        stencil=stencil,
        sample_sigma=ss,
        core_sigma=cs,
        depth_dist=depth,
    )
    return Scenario(
        elements=elements,
        plan=plan,
        feedstock_conc=fconc,
        feedstock_rel_sd=frsd,
        feedstock_density=fdens,
        mixing_profile=profile,
        application=application,
        soil_conc=soil_conc,
        soil_cross_correlation=rho,
        soil_density=sdens,
        loss_rates=rates,
        bulk_loss=bulk,
        conc_noise=cn,
        mass_noise=mn,
        core_area=area,
        name=str(tree.get("name", "scenario")),
    )


# --- demo -------------------------------------------------------------------

# Variogram ranges, sills and anisotropy below are placeholders: the source
# deployment states means, spreads and the Ca/Mg correlation but not these.
DEMO_CONFIG: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "name": "demo-8x8",
    "elements": ["Ca", "Mg"],
    "plan": {
        "extent_m": [80.0, 80.0],
        "nx": 8,
        "ny": 8,
        "pattern": "alternate-columns",
        "rounds": [
            {"label": "before spreading", "time_yr": 0.0, "after_spreading": False},
            {"label": "after spreading", "time_yr": 0.0, "after_spreading": True},
            {"label": "one year", "time_yr": 1.0, "after_spreading": True},
        ],
        "stencil": {"kind": "circle", "n_cores": 5, "radius_m": 2.0},
        "sample_sigma_m": 0.75,
        "core_sigma_m": 0.10,
        "depth": {"kind": "triangular", "low_m": 0.05, "high_m": 0.15},
    },
    "feedstock": {
        "conc_kgkg": {"Ca": 0.07, "Mg": 0.05},
        "rel_sd": 0.03,
        "density_kgm3": 1000.0,
        "mixing_profile": {"kind": "uniform", "depth_m": 0.05},
    },
    "application": {
        "mean": 3.5,
        "variogram": {
            "model": "exponential",
            "nugget": 0.0025,
            "sill": 0.12,
            "range": 30.0,
            "anisotropy": {"angle_deg": 90.0, "ratio": 0.2},
        },
    },
    "soil": {
        "conc": {
            "Ca": {"mean": 0.002, "variogram": {"model": "spherical", "nugget": 1.0e-8, "sill": 8.0e-8, "range": 25.0}},
            "Mg": {"mean": 0.001, "variogram": {"model": "spherical", "nugget": 2.5e-9, "sill": 2.0e-8, "range": 25.0}},
        },
        "cross_correlation": [[1.0, 0.75], [0.75, 1.0]],
        "density": {"mean": 1000.0, "variogram": {"model": "exponential", "nugget": 400.0, "sill": 9600.0, "range": 20.0}},
    },
    "losses": {"rate_per_yr": {"Ca": 0.4, "Mg": 0.8}, "bulk": "cation-mass"},
    "noise": {"conc_rel_sd": 0.03, "mass_rel_sd": 0.005},
    "core_area_m2": 3.14e-4,
}


def demo_config() -> dict[str, Any]:
    return copy.deepcopy(DEMO_CONFIG)


def demo_scenario(**overrides) -> Scenario:
    """The 8 x 8 alternating-column demo deployment."""
    tree = demo_config()
    for dotted, value in overrides.items():
        node = tree
        *parents, leaf = dotted.split("__")
        for key in parents:
            node = node[key]
        node[leaf] = value
    return scenario_from_dict(tree)


def noise_free(tree: Mapping[str, Any]) -> dict[str, Any]:
    """Copy of a config tree with every random component switched off."""
    t = copy.deepcopy(dict(tree))
    t["plan"]["sample_sigma_m"] = 0.0
    t["plan"]["core_sigma_m"] = 0.0
    t["feedstock"]["rel_sd"] = 0.0
    t["noise"] = {"conc_rel_sd": 0.0, "mass_rel_sd": 0.0}
    d = t["plan"].get("depth", {"kind": "triangular", "low_m": 0.05, "high_m": 0.15})
    mid = d.get("mode_m", 0.5 * (d["low_m"] + d["high_m"])) if d["kind"] == "triangular" else 0.5 * (d["low_m"] + d["high_m"])
    t["plan"]["depth"] = {"kind": "fixed", "low_m": mid, "high_m": mid}
    for f in [t["application"], t["soil"]["density"], *t["soil"]["conc"].values()]:
        f["variogram"]["nugget"] = 0.0
        f["variogram"]["sill"] = 0.0
    return t


# --- files ------------------------------------------------------------------

def load_config(path: str | Path) -> dict[str, Any]:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        return json.loads(text)
    return yaml.safe_load(text)


def dump_config(tree: Mapping[str, Any], path: str | Path | None = None, fmt: str = "yaml") -> str:
    if fmt == "json":
        text = json.dumps(tree, indent=2, sort_keys=False) + "\n"
    else:
        text = yaml.safe_dump(dict(tree), sort_keys=False)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def config_hash(tree: Mapping[str, Any]) -> str:
    canon = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def load_scenario(path: str | Path) -> Scenario:
    if str(path) == "demo":
        return demo_scenario()
    return scenario_from_dict(load_config(path))
