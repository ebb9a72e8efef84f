"""Convergence diagnostics (rank-normalized split R-hat, bulk ESS) and HDIs."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata


def _as_chains(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected an array of shape (chains, draws)")
    return x


def _split_chains(x: np.ndarray) -> np.ndarray:
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, -n:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _rhat(x: np.ndarray) -> float:
    m, n = x.shape
    chain_var = x.var(axis=1, ddof=1)
    w = chain_var.mean()
    b = n * x.mean(axis=1).var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else np.inf
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def rhat(x) -> float:
    """Rank-normalized split R-hat: the larger of the bulk and folded versions."""
    x = _as_chains(x)
    if np.ptp(x) == 0:
        return 1.0
    s = _split_chains(x)
    bulk = _rhat(_rank_normalize(s))
    folded = _rhat(_rank_normalize(np.abs(s - np.median(s))))
    return max(bulk, folded)


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    m = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, m)
    return np.fft.irfft(f * np.conj(f), m)[..., :n] / n


def _ess(x: np.ndarray) -> float:
    m, n = x.shape
    if n < 4:
        return float(m * n)
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n + (chain_mean.var(ddof=1) if m > 1 else 0.0)
    if var_plus == 0:
        return float(m * n)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer's initial positive, monotone sequence over pairs of lags
    pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
    pos = np.flatnonzero(pairs <= 0)
    pairs = pairs[: pos[0]] if len(pos) else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def ess_bulk(x) -> float:
    """Bulk effective sample size on rank-normalized split chains."""
    x = _as_chains(x)
    if np.ptp(x) == 0:
        return float(x.size)
    return _ess(_rank_normalize(_split_chains(x)))


def hdi(x, mass: float = 0.95) -> tuple[float, float]:
    """Narrowest interval holding ``mass`` of the pooled draws (sorted-window search)."""
    if not 0 < mass <= 1:
        raise ValueError("mass must lie in (0, 1]")
    s = np.sort(np.ravel(np.asarray(x, dtype=float)))
    n = len(s)
    k = min(n - 1, int(np.floor(mass * n)))
    widths = s[k:] - s[: n - k]
    i = int(np.argmin(widths))
    return float(s[i]), float(s[i + k])
