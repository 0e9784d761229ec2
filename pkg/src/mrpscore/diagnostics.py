"""Convergence diagnostics for MCMC draws: split R-hat and effective sample
sizes computed with the usual split-chain, paired-autocorrelation recipe."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm, rankdata

__all__ = ["split_rhat", "ess_mean", "ess_bulk", "ess_tail", "rank_normalize"]


def _split(chains: np.ndarray) -> np.ndarray:
    """Split each chain in half: (C, T) -> (2C, T // 2)."""
    c, t = chains.shape
    half = t // 2
    return chains[:, : 2 * half].reshape(c, 2, half).reshape(2 * c, half)


def rank_normalize(chains: np.ndarray) -> np.ndarray:
    """Map draws to normal scores by their pooled fractional ranks."""
    ranks = rankdata(chains, method="average").reshape(chains.shape)
    return norm.ppf((ranks - 0.375) / (chains.size + 0.25))


def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction factor."""
    z = _split(np.asarray(chains, dtype=float))
    m, n = z.shape
    if n < 2:
        return np.nan
    within = z.var(axis=1, ddof=1).mean()
    between = n * z.mean(axis=1).var(ddof=1)
    if within <= 0:
        return 1.0
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, n=nfft, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=-1)[..., :n].real
    return acov / n


def ess_mean(chains: np.ndarray) -> float:
    """Effective sample size via Geyer's initial positive/monotone sequence."""
    z = _split(np.asarray(chains, dtype=float))
    m, n = z.shape
    if n < 4:
        return np.nan
    acov = _autocov(z)
    chain_var = acov[:, 0] * n / (n - 1)
    within = chain_var.mean()
    var_plus = within * (n - 1) / n + z.mean(axis=1).var(ddof=1)
    if var_plus <= 0 or within <= 0:
        return float(m * n)
    mean_acov = acov.mean(axis=0)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho[1] = 1.0 - (within - mean_acov[1]) / var_plus
    t = 1
    while t < n - 3:
        even = 1.0 - (within - mean_acov[t + 1]) / var_plus
        odd = 1.0 - (within - mean_acov[t + 2]) / var_plus
        if even + odd < 0:
            break
        rho[t + 1] = even
        rho[t + 2] = odd
        t += 2
    max_t = t
    # enforce monotone nonincreasing pair sums
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    tau = -1.0 + 2.0 * rho[:max_t + 1].sum()
    tau = max(tau, 1.0 / np.log10(m * n + 10.0))
    return float(m * n / tau)


def ess_bulk(chains: np.ndarray) -> float:
    """ESS of the rank-normalized draws."""
    return ess_mean(rank_normalize(np.asarray(chains, dtype=float)))


def ess_tail(chains: np.ndarray) -> float:
    """Minimum ESS of the 5% and 95% quantile indicator draws."""
    x = np.asarray(chains, dtype=float)
    out = []
    for q in (0.05, 0.95):
        ind = (x <= np.quantile(x, q)).astype(float)
        if ind.std() == 0:
            out.append(float(x.size))
        else:
            out.append(ess_mean(ind))
    return float(min(out))
