"""Adaptive random-walk Metropolis, vectorized over independent chains.

Warmup has two phases. A short single-site phase learns one proposal scale
per coordinate. The block phase then proposes all coordinates at once from a
Gaussian whose covariance is re-estimated from the chain's own history on
doubling windows, with an overall scale tuned towards a 0.234 acceptance
rate. Adaptation stops after warmup, so the recorded draws come from a fixed
Markov kernel. Each chain uses its own random stream and its own adapted
proposal; chains never exchange information.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..rng import derive_rng

LogDensity = Callable[[np.ndarray], np.ndarray]

_BLOCK_TARGET = 0.234
_SITE_TARGET = 0.44


class _Streams:
    """Per-chain generators that hand out noise in chunks."""

    def __init__(self, seed: int, chains: int, dim: int, chunk: int = 512):
        self.gens = [derive_rng(seed, "chain", c) for c in range(chains)]
        self.dim = dim
        self.chunk = chunk
        self._z = self._u = None
        self._i = chunk

    def next(self) -> tuple[np.ndarray, np.ndarray]:
        if self._i == self.chunk:
            self._z = np.stack([g.standard_normal((self.chunk, self.dim)) for g in self.gens], axis=1)
            self._u = np.stack([g.random(self.chunk) for g in self.gens], axis=1)
            self._i = 0
        i = self._i
        self._i += 1
        return self._z[i], self._u[i]

    def sweep(self) -> tuple[np.ndarray, np.ndarray]:
        """One normal and one uniform per coordinate and chain."""
        z = np.stack([g.standard_normal(self.dim) for g in self.gens])
        u = np.stack([g.random(self.dim) for g in self.gens])
        return z, u


@dataclass
class ChainResult:
    draws: np.ndarray  # (chains, draws, dim), unconstrained
    logp: np.ndarray  # (chains, draws)
    acceptance: np.ndarray  # post-warmup acceptance rate per chain
    proposal_chol: np.ndarray  # (chains, dim, dim) final proposal factor


def _accept(logp_fn, x, lp, prop, u):
    lp_prop = logp_fn(prop)
    ok = np.log(u) < lp_prop - lp
    x = np.where(ok[:, None], prop, x)
    lp = np.where(ok, lp_prop, lp)
    return x, lp, ok


def _windows(n: int) -> list[int]:
    """End points of doubling adaptation windows covering ``n`` iterations."""
    ends, w, start = [], max(25, n // 32), 0
    while start + w < n:
        ends.append(start + w)
        start += w
        w *= 2
    ends.append(n)
    return ends


def adaptive_metropolis(
    logp_fn: LogDensity,
    init: np.ndarray,
    scale: np.ndarray,
    warmup: int,
    draws: int,
    seed: int,
    thin: int = 1,
    site_fraction: float = 0.05,
) -> ChainResult:
    """Sample ``logp_fn`` (batched: ``(chains, dim) -> (chains,)``) from ``init`` of shape ``(chains, dim)``."""
    x = np.array(init, dtype=float)
    chains, dim = x.shape
    if thin < 1 or draws < 1 or warmup < 0:
        raise ValueError("draws and thin must be >= 1, warmup >= 0")
    lp = logp_fn(x)
    if not np.all(np.isfinite(lp)):
        raise ValueError("log density is not finite at the initial point of some chain")
    streams = _Streams(seed, chains, dim)

    # single-site phase
    n_site = int(site_fraction * warmup)
    log_s = np.tile(np.log(np.asarray(scale, dtype=float)), (chains, 1))
    acc_site = np.zeros((chains, dim))
    for t in range(n_site):
        z, u = streams.sweep()
        for i in range(dim):
            prop = x.copy()
            prop[:, i] += np.exp(log_s[:, i]) * z[:, i]
            x, lp, ok = _accept(logp_fn, x, lp, prop, u[:, i])
            acc_site[:, i] += ok
        if (t + 1) % 20 == 0:
            delta = min(0.5, 2.0 / np.sqrt((t + 1) / 20))
            log_s += np.where(acc_site / 20 > _SITE_TARGET, delta, -delta)
            acc_site[:] = 0

    # block phase
    n_block = warmup - n_site
    chol = np.stack([np.diag(np.exp(ls)) for ls in log_s])
    log_lam = np.full(chains, np.log(2.38 / np.sqrt(dim)))
    hist = np.empty((max(n_block, 1), chains, dim))
    ends = _windows(n_block) if n_block > 0 else []
    w_start = 0
    for t in range(n_block):
        z, u = streams.next()
        step = np.einsum("cij,cj->ci", chol, z) * np.exp(log_lam)[:, None]
        x, lp, ok = _accept(logp_fn, x, lp, x + step, u)
        log_lam += (ok - _BLOCK_TARGET) / (t + 1) ** 0.6
        hist[t] = x
        if ends and t + 1 == ends[0] and len(ends) > 1:
            window = hist[w_start : t + 1]
            ends.pop(0)
            w_start = t + 1
            if len(window) > dim + 1:
                for c in range(chains):
                    cov = np.atleast_2d(np.cov(window[:, c, :], rowvar=False))
                    cov = cov + 1e-10 * np.diag(np.diag(cov) + 1e-300)
                    try:
                        chol[c] = np.linalg.cholesky(cov)
                        log_lam[c] = np.log(2.38 / np.sqrt(dim))
                    except np.linalg.LinAlgError:
                        pass

    out = np.empty((chains, draws, dim))
    out_lp = np.empty((chains, draws))
    n_acc = np.zeros(chains)
    lam = np.exp(log_lam)[:, None]
    for k in range(draws * thin):
        z, u = streams.next()
        step = np.einsum("cij,cj->ci", chol, z) * lam
        x, lp, ok = _accept(logp_fn, x, lp, x + step, u)
        n_acc += ok
        if (k + 1) % thin == 0:
            out[:, k // thin] = x
            out_lp[:, k // thin] = lp
    return ChainResult(out, out_lp, n_acc / (draws * thin), chol * lam[..., None])
