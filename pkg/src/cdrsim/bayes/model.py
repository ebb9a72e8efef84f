"""Bayesian deployment model: priors, likelihood blocks and deterministic CDR nodes.

Parameters live in an unconstrained vector ``theta`` (last axis of length
``N_PARAMS``). Positive quantities are stored as logs and unit-interval ones as
logits; the log-density includes the matching Jacobian terms, so it is the
density of ``theta`` itself.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping

import numpy as np
from scipy.special import betaln, expit, gammaln, log_expit

from ..estimate import cell_tables
from ..mixing import BAYES_FACTORS
from ..plan import CONTROL, TREATMENT
from ..simulate import Dataset

_LOG_2PI = np.log(2.0 * np.pi)
CDR_NODES = ("CDR", "CDR_potential", "CDR_completion", "CDR_total")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class BayesConfig:
    """Prior hyperparameters. Every scale is a standard deviation or a mean, never a rate."""

    elements: tuple[str, str] = ("Ca", "Mg")
    m_wet_mean: float = 12800.0
    m_wet_sd: float = 100.0
    area_mean: float = 3200.0
    area_sd: float = 32.0
    depth_mean: float = 0.1
    depth_sd: float = 0.025
    moisture_mean: float = 0.125
    moisture_sd: float = 0.025
    feedstock_mean: tuple[float, float] = (0.07, 0.05)
    feedstock_sd: tuple[float, float] = (0.0035, 0.0025)
    soil_density_mean: float = 1000.0
    soil_density_sd: float = 100.0
    sigma_enrichment_mean: float = 0.001  # Exponential, parameterized by its mean
    sigma_control_scale: float = 0.001  # HalfNormal scale
    control_drift_sd: float = 0.001
    loss_spread_beta: tuple[float, float] = (1.0, 6.0)
    sigma_weathered_mean: float = 0.001  # Exponential, parameterized by its mean
    factors: Mapping[str, float] = field(default_factory=lambda: dict(BAYES_FACTORS))

    def __post_init__(self):
        positive = [
            "m_wet_sd", "area_sd", "depth_mean", "depth_sd", "moisture_sd", "soil_density_sd",
            "sigma_enrichment_mean", "sigma_control_scale", "control_drift_sd", "sigma_weathered_mean",
        ]
        bad = [n for n in positive if not getattr(self, n) > 0]
        bad += ["feedstock_sd"] if min(self.feedstock_sd) <= 0 else []
        bad += ["loss_spread_beta"] if min(self.loss_spread_beta) <= 0 else []
        if bad:
            raise ModelError(f"these prior scales must be > 0: {', '.join(bad)}")
        if len(self.elements) != 2:
            raise ModelError("the model is written for exactly two cations")
        missing = [e for e in self.elements if e not in self.factors]
        if missing:
            raise ModelError(f"no CO2 factor for {missing}")

    @classmethod
    def from_dict(cls, tree: Mapping[str, Any]) -> "BayesConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(tree) - names)
        if unknown:
            raise ModelError(f"unknown BayesConfig keys: {', '.join(unknown)}")
        kw = dict(tree)
        for k in ("elements", "feedstock_mean", "feedstock_sd", "loss_spread_beta"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["factors"] = dict(self.factors)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


@dataclass(frozen=True)
class BayesData:
    """Per-cell concentrations, rows are cells and columns the two cations.

    ``C1..C3`` are treatment rounds (before spreading, after spreading, after
    weathering) and ``O1..O3`` the same rounds for control cells.
    """

    elements: tuple[str, str]
    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    O1: np.ndarray
    O2: np.ndarray
    O3: np.ndarray

    def __post_init__(self):
        for g, arrs in (("treatment", (self.C1, self.C2, self.C3)), ("control", (self.O1, self.O2, self.O3))):
            shapes = {a.shape for a in arrs}
            if len(shapes) != 1:
                raise ModelError(f"{g} rounds have inconsistent shapes {sorted(shapes)}")
            (shape,) = shapes
            if len(shape) != 2 or shape[1] != 2 or shape[0] < 1:
                raise ModelError(f"{g} arrays must have shape (n_cells, 2), got {shape}")
            if not all(np.isfinite(a).all() for a in arrs):
                raise ModelError(f"{g} concentrations contain non-finite values")

    @classmethod
    def from_dataset(cls, ds: Dataset, elements: tuple[str, str] = ("Ca", "Mg")) -> "BayesData":
        missing = [e for e in elements if e not in ds.elements]
        if missing:
            raise ModelError(f"dataset lacks {missing}")
        tabs = cell_tables(ds, (1, 2, 3))
        idx = [ds.elements.index(e) for e in elements]
        t, c = tabs[TREATMENT][..., idx], tabs[CONTROL][..., idx]
        return cls(tuple(elements), t[:, 0], t[:, 1], t[:, 2], c[:, 0], c[:, 1], c[:, 2])

    @property
    def enrichment(self) -> np.ndarray:
        return self.C2 - self.C1

    @property
    def control_change(self) -> np.ndarray:
        return self.O3 - 0.5 * (self.O1 + self.O2)


# name, transform
_LAYOUT = [
    ("M_wet", "identity"),
    ("A", "identity"),
    ("d", "log"),
    ("phi", "identity"),
    ("c_f[0]", "identity"),
    ("c_f[1]", "identity"),
    ("rho_s", "log"),
    ("sigma_E[0]", "log"),
    ("sigma_E[1]", "log"),
    ("sigma_omega[0]", "log"),
    ("sigma_omega[1]", "log"),
    ("delta_omega[0]", "identity"),
    ("delta_omega[1]", "identity"),
    ("mu_loss", "logit"),
    ("sigma_loss", "logit"),
    ("l[0]", "identity"),
    ("l[1]", "identity"),
    ("sigma_weathered[0]", "log"),
    ("sigma_weathered[1]", "log"),
]
N_PARAMS = len(_LAYOUT)
_TRANSFORMS = np.array([t for _, t in _LAYOUT])
_LOG = _TRANSFORMS == "log"
_LOGIT = _TRANSFORMS == "logit"


def parameter_names(elements: tuple[str, str] = ("Ca", "Mg")) -> list[str]:
    return [n.replace("[0]", f"[{elements[0]}]").replace("[1]", f"[{elements[1]}]") for n, _ in _LAYOUT]


def constrain(theta: np.ndarray) -> np.ndarray:
    x = np.array(theta, dtype=float, copy=True)
    x[..., _LOG] = np.exp(x[..., _LOG])
    x[..., _LOGIT] = expit(x[..., _LOGIT])
    return x


def unconstrain(x: np.ndarray) -> np.ndarray:
    u = np.array(x, dtype=float, copy=True)
    u[..., _LOG] = np.log(u[..., _LOG])
    p = u[..., _LOGIT]
    u[..., _LOGIT] = np.log(p) - np.log1p(-p)
    return u


def _normal(x, mu, sd):
    z = (x - mu) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * _LOG_2PI


def _split(x: np.ndarray) -> dict[str, np.ndarray]:
    return {
        "M_wet": x[..., 0], "A": x[..., 1], "d": x[..., 2], "phi": x[..., 3], "c_f": x[..., 4:6],
        "rho_s": x[..., 6], "sigma_E": x[..., 7:9], "sigma_omega": x[..., 9:11],
        "delta_omega": x[..., 11:13], "mu_loss": x[..., 13], "sigma_loss": x[..., 14],
        "l": x[..., 15:17], "sigma_weathered": x[..., 17:19],
    }


def deterministic(x: Mapping[str, np.ndarray] | np.ndarray, cfg: BayesConfig) -> dict[str, np.ndarray]:
    """Derived nodes from constrained parameters (a mapping or a constrained vector)."""
    p = _split(x) if isinstance(x, np.ndarray) else x
    k = np.array([cfg.factors[e] for e in cfg.elements])
    m_dry = (1.0 - p["phi"]) * p["M_wet"]
    q = m_dry / p["A"]
    m_soil = p["rho_s"] * p["d"]
    alpha = q / (q + m_soil)
    potential = q * (p["c_f"] @ k)
    cdr = q * ((p["l"] * p["c_f"]) @ k)
    return {
        "M_dry": m_dry,
        "Q": q,
        "M_soil": m_soil,
        "alpha": alpha,
        "CDR_potential": potential,
        "CDR": cdr,
        "CDR_completion": cdr / potential,
        "CDR_total": p["A"] * cdr / 1000.0,
    }


def log_prior_blocks(theta: np.ndarray, cfg: BayesConfig) -> dict[str, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    x = constrain(theta)
    p = _split(x)
    u = _split(theta)
    shape_d = (cfg.depth_mean / cfg.depth_sd) ** 2
    rate_d = cfg.depth_mean / cfg.depth_sd**2
    a_b, b_b = cfg.loss_spread_beta
    fm, fs = np.asarray(cfg.feedstock_mean), np.asarray(cfg.feedstock_sd)

    def expo(v, mean):
        return np.sum(-np.log(mean) - v / mean, axis=-1)

    out = {
        "M_wet": _normal(p["M_wet"], cfg.m_wet_mean, cfg.m_wet_sd),
        "A": _normal(p["A"], cfg.area_mean, cfg.area_sd),
        "d": shape_d * np.log(rate_d) - gammaln(shape_d) + (shape_d - 1) * u["d"] - rate_d * p["d"],
        "phi": _normal(p["phi"], cfg.moisture_mean, cfg.moisture_sd),
        "c_f": np.sum(_normal(p["c_f"], fm, fs), axis=-1),
        "rho_s": _normal(p["rho_s"], cfg.soil_density_mean, cfg.soil_density_sd),
        "sigma_E": expo(p["sigma_E"], cfg.sigma_enrichment_mean),
        "sigma_omega": np.sum(np.log(2.0) + _normal(p["sigma_omega"], 0.0, cfg.sigma_control_scale), axis=-1),
        "delta_omega": np.sum(_normal(p["delta_omega"], 0.0, cfg.control_drift_sd), axis=-1),
        "mu_loss": np.zeros_like(p["mu_loss"]),
        "sigma_loss": (a_b - 1) * np.log(p["sigma_loss"]) + (b_b - 1) * np.log1p(-p["sigma_loss"]) - betaln(a_b, b_b),
        "l": np.sum(_normal(p["l"], p["mu_loss"][..., None], p["sigma_loss"][..., None]), axis=-1),
        "sigma_weathered": expo(p["sigma_weathered"], cfg.sigma_weathered_mean),
        # log|dx/du|: exp gives u itself, expit gives log p + log(1 - p)
        "jacobian": np.sum(theta[..., _LOG], axis=-1)
        + np.sum(log_expit(theta[..., _LOGIT]) + log_expit(-theta[..., _LOGIT]), axis=-1),
    }
    return out


def log_likelihood_blocks(theta: np.ndarray, data: BayesData, cfg: BayesConfig) -> dict[str, np.ndarray]:
    x = constrain(np.asarray(theta, dtype=float))
    p = _split(x)
    det = deterministic(p, cfg)
    alpha = det["alpha"][..., None, None]
    cf = p["c_f"][..., None, :]
    E = alpha * (cf - data.C1)
    sig_e = p["sigma_E"][..., None, :]
    sig_o = p["sigma_omega"][..., None, :]
    d_om = p["delta_omega"][..., None, :]
    sig_w = p["sigma_weathered"][..., None, :]
    c_weathered = data.C2 - (p["l"][..., None, :] * E - d_om)
    return {
        "enrichment": np.sum(_normal(data.enrichment, E, sig_e), axis=(-2, -1)),
        "control": np.sum(_normal(data.control_change, d_om, sig_o), axis=(-2, -1)),
        "weathered": np.sum(_normal(data.C3, c_weathered, sig_w), axis=(-2, -1)),
    }


def log_density_blocks(theta: np.ndarray, data: BayesData, cfg: BayesConfig) -> dict[str, np.ndarray]:
    with np.errstate(all="ignore"):
        out = {f"prior:{k}": v for k, v in log_prior_blocks(theta, cfg).items()}
        out.update({f"likelihood:{k}": v for k, v in log_likelihood_blocks(theta, data, cfg).items()})
    return out


def log_posterior(theta: np.ndarray, data: BayesData, cfg: BayesConfig, blocks: bool = False):
    """Unnormalized log posterior of unconstrained ``theta`` (batched over leading axes).

    Raises ModelError naming the first block that is not finite. With
    ``blocks=True`` returns ``(total, per_block)``.
    """
    parts = log_density_blocks(theta, data, cfg)
    for name, v in parts.items():
        if not np.all(np.isfinite(v)):
            raise ModelError(f"log density block {name!r} is not finite")
    total = sum(parts.values())
    return (total, parts) if blocks else total


def log_density_fn(data: BayesData, cfg: BayesConfig):
    """Batched log posterior that maps non-finite values to -inf (for samplers)."""

    def f(theta: np.ndarray) -> np.ndarray:
        v = sum(log_density_blocks(theta, data, cfg).values())
        return np.where(np.isfinite(v), v, -np.inf)

    return f


def prior_mean_theta(cfg: BayesConfig) -> np.ndarray:
    x = np.array(
        [
            cfg.m_wet_mean, cfg.area_mean, cfg.depth_mean, cfg.moisture_mean, *cfg.feedstock_mean,
            cfg.soil_density_mean, cfg.sigma_enrichment_mean, cfg.sigma_enrichment_mean,
            cfg.sigma_control_scale, cfg.sigma_control_scale, 0.0, 0.0, 0.5,
            cfg.loss_spread_beta[0] / sum(cfg.loss_spread_beta), 0.5, 0.5,
            cfg.sigma_weathered_mean, cfg.sigma_weathered_mean,
        ]
    )
    return unconstrain(x)


def prior_scale(cfg: BayesConfig) -> np.ndarray:
    """Rough prior standard deviations in unconstrained space, used to seed proposals."""
    return np.array(
        [
            cfg.m_wet_sd, cfg.area_sd, cfg.depth_sd / cfg.depth_mean, cfg.moisture_sd, *cfg.feedstock_sd,
            cfg.soil_density_sd / cfg.soil_density_mean, 1.0, 1.0, 1.0, 1.0,
            cfg.control_drift_sd, cfg.control_drift_sd, 1.0, 1.0, 0.2, 0.2, 1.0, 1.0,
        ]
    )


def data_informed_start(data: BayesData, cfg: BayesConfig) -> np.ndarray:
    """Prior means with the noise scales set from the data's own spread."""
    theta = prior_mean_theta(cfg)
    theta[7:9] = np.log(np.maximum(data.enrichment.std(axis=0), 1e-12))
    theta[9:11] = np.log(np.maximum(data.control_change.std(axis=0), 1e-12))
    theta[11:13] = data.control_change.mean(axis=0)
    theta[17:19] = np.log(np.maximum((data.C3 - data.C2).std(axis=0), 1e-12))
    return theta


def prior_draws(cfg: BayesConfig, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Forward draws of every constrained parameter from its prior."""
    if n < 1:
        raise ModelError("n must be >= 1")
    shape_d = (cfg.depth_mean / cfg.depth_sd) ** 2
    mu = rng.uniform(0.0, 1.0, n)
    sl = rng.beta(*cfg.loss_spread_beta, n)
    return {
        "M_wet": rng.normal(cfg.m_wet_mean, cfg.m_wet_sd, n),
        "A": rng.normal(cfg.area_mean, cfg.area_sd, n),
        "d": rng.gamma(shape_d, cfg.depth_mean / shape_d, n),
        "phi": rng.normal(cfg.moisture_mean, cfg.moisture_sd, n),
        "c_f": rng.normal(cfg.feedstock_mean, cfg.feedstock_sd, (n, 2)),
        "rho_s": rng.normal(cfg.soil_density_mean, cfg.soil_density_sd, n),
        "sigma_E": rng.exponential(cfg.sigma_enrichment_mean, (n, 2)),
        "sigma_omega": np.abs(rng.normal(0.0, cfg.sigma_control_scale, (n, 2))),
        "delta_omega": rng.normal(0.0, cfg.control_drift_sd, (n, 2)),
        "mu_loss": mu,
        "sigma_loss": sl,
        "l": rng.normal(mu[:, None], sl[:, None], (n, 2)),
        "sigma_weathered": rng.exponential(cfg.sigma_weathered_mean, (n, 2)),
    }


def prior_predictive(cfg: BayesConfig, n: int, seed: int) -> dict[str, np.ndarray]:
    """Prior draws of the parameters plus every deterministic node."""
    from ..rng import derive_rng

    p = prior_draws(cfg, n, derive_rng(seed, "prior-predictive"))
    out = dict(p)
    out.update(deterministic(p, cfg))
    return out
