"""Posterior sampling for the deployment model, summaries and draw files."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import ess_bulk, hdi, rhat
from .model import (
    CDR_NODES,
    N_PARAMS,
    BayesConfig,
    BayesData,
    constrain,
    data_informed_start,
    deterministic,
    log_density_fn,
    parameter_names,
    prior_scale,
)
from .sampler import adaptive_metropolis
from ..rng import derive_rng

log = logging.getLogger(__name__)

RHAT_MAX = 1.01
_NOISE = [7, 8, 9, 10, 17, 18]
ESS_MIN = 400.0


class ConvergenceError(RuntimeError):
    def __init__(self, failures: dict[str, dict[str, float]]):
        self.failures = failures
        lines = [f"{k}: r_hat={v['r_hat']:.4f} ess={v['ess']:.0f}" for k, v in failures.items()]
        super().__init__("sampler did not converge:\n  " + "\n  ".join(lines))


@dataclass
class PosteriorDraws:
    """Post-warmup draws in constrained units plus derived nodes and diagnostics."""

    names: list[str]
    values: np.ndarray  # (chains, draws, n_params)
    nodes: dict[str, np.ndarray]  # each (chains, draws)
    acceptance: np.ndarray
    seed: int
    r_hat: dict[str, float] = field(default_factory=dict)
    ess: dict[str, float] = field(default_factory=dict)

    @property
    def chains(self) -> int:
        return self.values.shape[0]

    @property
    def n_draws(self) -> int:
        return self.values.shape[1]

    def get(self, name: str) -> np.ndarray:
        if name in self.nodes:
            return self.nodes[name]
        return self.values[..., self.names.index(name)]

    def all_names(self) -> list[str]:
        return self.names + [n for n in self.nodes if n not in self.names]

    def failures(self) -> dict[str, dict[str, float]]:
        """Quantities breaking the convergence contract."""
        out = {}
        for n in self.all_names():
            bad_r = self.r_hat[n] > RHAT_MAX
            bad_e = n in CDR_NODES and self.ess[n] < ESS_MIN
            if bad_r or bad_e:
                out[n] = {"r_hat": self.r_hat[n], "ess": self.ess[n]}
        return out

    @property
    def converged(self) -> bool:
        return not self.failures()

    def to_long_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["chain", "draw", "parameter", "value"])
        for n in self.all_names():
            v = self.get(n)
            for c in range(self.chains):
                for d in range(self.n_draws):
                    w.writerow([c, d, n, repr(float(v[c, d]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _diagnose(draws: PosteriorDraws) -> None:
    for n in draws.all_names():
        v = draws.get(n)
        draws.r_hat[n] = rhat(v)
        draws.ess[n] = ess_bulk(v)


def sample_posterior(
    data: BayesData,
    cfg: BayesConfig | None = None,
    chains: int = 8,
    draws: int = 4000,
    warmup: int = 20000,
    seed: int = 0,
    thin: int = 10,
) -> PosteriorDraws:
    """Run independent adaptive Metropolis chains from dispersed starts around a data-informed point."""
    cfg = cfg or BayesConfig()
    if chains < 4:
        raise ValueError("at least 4 chains are required")
    if tuple(data.elements) != tuple(cfg.elements):
        raise ValueError(f"data elements {data.elements} do not match config {cfg.elements}")
    start = data_informed_start(data, cfg)
    scale = prior_scale(cfg)
    # dispersed starts; the log noise scales already sit near their data values
    spread = 0.5 * scale
    spread[_NOISE] = 0.1
    init = start + spread * derive_rng(seed, "init").standard_normal((chains, N_PARAMS))
    res = adaptive_metropolis(log_density_fn(data, cfg), init, 0.1 * scale, warmup, draws, seed, thin)
    values = constrain(res.draws)
    nodes = deterministic(values, cfg)
    names = parameter_names(cfg.elements)
    out = PosteriorDraws(names, values, nodes, res.acceptance, seed)
    _diagnose(out)
    if not out.converged:
        log.warning("posterior did not converge: %s", ", ".join(out.failures()))
    return out


def summarize(draws: PosteriorDraws, hdi_mass: float = 0.95) -> dict[str, dict[str, float]]:
    """Per-quantity mean, sd, HDI bounds, R-hat and bulk ESS."""
    out = {}
    for n in draws.all_names():
        v = draws.get(n)
        lo, hi = hdi(v, hdi_mass)
        out[n] = {
            "mean": float(v.mean()),
            "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
            "hdi_lo": lo,
            "hdi_hi": hi,
            "r_hat": draws.r_hat.get(n, float("nan")),
            "ess": draws.ess.get(n, float("nan")),
        }
    return out


def write_summary(draws: PosteriorDraws, path: str | Path, hdi_mass: float = 0.95, extra: dict | None = None) -> dict:
    doc = {
        "hdi_mass": hdi_mass,
        "chains": draws.chains,
        "draws_per_chain": draws.n_draws,
        "converged": draws.converged,
        "failures": draws.failures(),
        "acceptance": draws.acceptance.tolist(),
        "nodes": summarize(draws, hdi_mass),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))
    return doc
