"""Random-intercept binomial logistic models fit by adaptive MCMC.

The model for cell counts is

    y_j ~ Binomial(n_j, p_j),  logit(p_j) = b0 + sum_k a_kl(j)

with a non-centered parameterization a_kl = sigma_k * z_kl, z_kl ~ normal(0,1),
sigma_k ~ half-t(3, 0, 2.5) and b0 ~ t(3, 0, 2.5). Sampling is
Metropolis-within-Gibbs over blocks (b0; each z vector; each log sigma),
with per-coordinate step sizes adapted during warmup toward a 0.44
acceptance rate. Chains are jittered at initialization and updated in
lockstep as vectorized numpy state.

Predictions are emitted for every table cell. A level that carries no
observations only ever feels its prior, so its effect mixes over
normal(0, sigma_k) automatically, which is exactly the draw needed for
unobserved-cell prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, gammaln

from .diagnostics import ess_bulk, ess_tail, split_rhat
from .poststrat import PostStratTable
from .seeds import substream

__all__ = ["ModelSpec", "McmcConfig", "CellProbDraws", "STANDARD_MODELS",
           "fit", "log_lik_cell"]

STANDARD_MODELS = {
    "full": (1, 2, 3, 4),
    "precision": (1, 2, 3),
    "bias": (1, 3, 4),
    "nuisance": (1, 3),
    "x1_only": (1,),
    "x3_only": (3,),
}

_ETA_CLIP = 36.0  # keeps expit strictly inside (0, 1) in float64


@dataclass(frozen=True)
class ModelSpec:
    """Which covariates enter the model, plus prior hyperparameters."""

    label: str
    included_covariates: tuple
    intercept_prior_df: float = 3.0
    intercept_prior_scale: float = 2.5
    sd_prior_df: float = 3.0
    sd_prior_scale: float = 2.5

    def __post_init__(self):
        object.__setattr__(self, "included_covariates",
                           tuple(sorted(int(c) for c in self.included_covariates)))
        if self.intercept_prior_scale <= 0 or self.sd_prior_scale <= 0:
            raise ValueError("prior scales must be positive")

    @classmethod
    def from_label(cls, label: str) -> "ModelSpec":
        if label not in STANDARD_MODELS:
            raise KeyError(f"unknown model label {label!r}; known: {sorted(STANDARD_MODELS)}")
        return cls(label=label, included_covariates=STANDARD_MODELS[label])


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000          # kept per chain
    total_draws: int = 1000    # thinned total B (<= chains * draws)
    seed: int = 0
    rhat_threshold: float = 1.05
    target_accept: float = 0.44
    adapt_batch: int = 50

    def with_seed(self, seed: int) -> "McmcConfig":
        return replace(self, seed=seed)

    @classmethod
    def desk(cls, seed: int = 0) -> "McmcConfig":
        return cls(chains=2, warmup=400, draws=250, total_draws=500, seed=seed)

    @classmethod
    def paper(cls, seed: int = 0) -> "McmcConfig":
        return cls(chains=4, warmup=1000, draws=1000, total_draws=1000, seed=seed)


@dataclass
class CellProbDraws:
    """Posterior draws of every table cell's outcome probability."""

    probs: np.ndarray      # (B, J), strictly inside (0, 1)
    model: str
    chain_id: np.ndarray   # (B,) provenance
    iter_id: np.ndarray    # (B,)
    diagnostics: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)  # thinned beta0 / sigma draws

    @property
    def num_draws(self) -> int:
        return self.probs.shape[0]

    @property
    def num_cells(self) -> int:
        return self.probs.shape[1]

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged", True))

    def cell_means(self) -> np.ndarray:
        return self.probs.mean(axis=0)


def _t_logpdf_kernel(x, df, scale):
    return -0.5 * (df + 1.0) * np.log1p((x / scale) ** 2 / df)


def _softplus(x):
    return np.logaddexp(0.0, x)


class _AdaptiveScale:
    """Per-coordinate proposal scales with batched warmup adaptation."""

    def __init__(self, shape, init, target, batch):
        self.log_scale = np.full(shape, np.log(init))
        self.accepts = np.zeros(shape)
        self.target = target
        self.batch = batch
        self.batch_number = 0

    @property
    def scale(self):
        return np.exp(self.log_scale)

    def record(self, accepted):
        self.accepts += accepted

    def adapt(self):
        self.batch_number += 1
        delta = min(0.25, self.batch_number ** -0.5)
        rate = self.accepts / self.batch
        self.log_scale += np.where(rate > self.target, delta, -delta)
        self.accepts[:] = 0.0

    def warm_start(self, scales):
        if scales is None:
            return
        arr = np.asarray(scales, dtype=float)
        if arr.shape == self.log_scale.shape:
            self.log_scale = np.log(np.maximum(arr, 1e-6))


def _sample(spec: ModelSpec, table: PostStratTable, mcmc: McmcConfig, warm_start):
    rng = substream(mcmc.seed, "mcmc")
    incl = np.asarray(spec.included_covariates, dtype=int) - 1
    nkov = incl.shape[0]
    nlev = table.levels_per_covariate
    chains = mcmc.chains

    obs = table.observed_ids()
    lev_obs = table.levels[np.ix_(obs, incl)] if nkov else np.zeros((obs.shape[0], 0), int)
    n_obs = table.n_j[obs].astype(float)
    y_obs = table.y_j[obs].astype(float)
    ncell = obs.shape[0]

    # flattened (chain, level) ids for per-level likelihood sums
    flat_ids = [
        (lev_obs[:, kk][None, :] + nlev * np.arange(chains)[:, None]).ravel()
        for kk in range(nkov)
    ]

    beta0 = rng.normal(0.0, 1.0, size=chains)
    z = rng.normal(0.0, 0.5, size=(chains, nkov, nlev))
    logsig = rng.normal(np.log(0.5), 0.5, size=(chains, nkov))
    positions = (warm_start or {}).get("positions")
    if positions is not None:
        b0 = np.asarray(positions["beta0"], dtype=float)
        zz = np.asarray(positions["z"], dtype=float)
        ls = np.asarray(positions["logsig"], dtype=float)
        if b0.shape == beta0.shape and zz.shape == z.shape and ls.shape == logsig.shape:
            beta0 = b0 + 0.05 * rng.standard_normal(beta0.shape)
            z = zz + 0.05 * rng.standard_normal(z.shape)
            logsig = ls + 0.05 * rng.standard_normal(logsig.shape)

    scale_b = _AdaptiveScale((chains,), 0.5, mcmc.target_accept, mcmc.adapt_batch)
    scale_z = [_AdaptiveScale((chains, nlev), 0.8, mcmc.target_accept, mcmc.adapt_batch)
               for _ in range(nkov)]
    scale_s = [_AdaptiveScale((chains,), 0.5, mcmc.target_accept, mcmc.adapt_batch)
               for _ in range(nkov)]
    scale_c = [_AdaptiveScale((chains, nlev), 0.5, mcmc.target_accept, mcmc.adapt_batch)
               for _ in range(nkov)]
    scale_a = [_AdaptiveScale((chains,), 0.5, mcmc.target_accept, mcmc.adapt_batch)
               for _ in range(nkov)]
    scale_t = [_AdaptiveScale((chains,), 0.5, mcmc.target_accept, mcmc.adapt_batch)
               for _ in range(nkov)]
    if warm_start is not None:
        scale_b.warm_start(warm_start.get("beta0"))
        for kk in range(nkov):
            for group, scales in (("z", scale_z), ("z_centered", scale_c),
                                  ("logsig", scale_s), ("rescale", scale_a),
                                  ("shift", scale_t)):
                vals = warm_start.get(group, [])
                scales[kk].warm_start(vals[kk] if len(vals) == nkov else None)

    sigma = np.exp(logsig)

    def linear_predictor():
        eta = np.repeat(beta0[:, None], ncell, axis=1)
        for kk in range(nkov):
            eta += sigma[:, kk:kk + 1] * z[:, kk, :][:, lev_obs[:, kk]]
        return eta

    eta = linear_predictor()
    sp = _softplus(eta)

    kept_b = np.empty((chains, mcmc.draws))
    kept_z = np.empty((chains, mcmc.draws, nkov, nlev))
    kept_s = np.empty((chains, mcmc.draws, nkov))

    total_sweeps = mcmc.warmup + mcmc.draws
    for sweep in range(total_sweeps):
        warming = sweep < mcmc.warmup

        # intercept block
        prop = beta0 + scale_b.scale * rng.standard_normal(chains)
        d = (prop - beta0)[:, None]
        sp_new = _softplus(eta + d)
        dll = (y_obs * d - n_obs * (sp_new - sp)).sum(axis=1)
        dll += (_t_logpdf_kernel(prop, spec.intercept_prior_df, spec.intercept_prior_scale)
                - _t_logpdf_kernel(beta0, spec.intercept_prior_df, spec.intercept_prior_scale))
        acc = np.log(rng.random(chains)) < dll
        beta0 = np.where(acc, prop, beta0)
        eta = np.where(acc[:, None], eta + d, eta)
        sp = np.where(acc[:, None], sp_new, sp)
        scale_b.record(acc)

        for kk in range(nkov):
            lev = lev_obs[:, kk]

            # level-effect block: all levels propose at once; levels touch
            # disjoint cells, so acceptance is decided per (chain, level)
            zk = z[:, kk, :]
            prop_z = zk + scale_z[kk].scale * rng.standard_normal((chains, nlev))
            d = sigma[:, kk:kk + 1] * (prop_z - zk)[:, lev]
            sp_new = _softplus(eta + d)
            dll_cell = y_obs * d - n_obs * (sp_new - sp)
            dll_lev = np.bincount(flat_ids[kk], weights=dll_cell.ravel(),
                                  minlength=chains * nlev).reshape(chains, nlev)
            dll_lev += 0.5 * (zk ** 2 - prop_z ** 2)
            acc = np.log(rng.random((chains, nlev))) < dll_lev
            z[:, kk, :] = np.where(acc, prop_z, zk)
            acc_cell = acc[np.arange(chains)[:, None], lev[None, :]]
            eta = np.where(acc_cell, eta + d, eta)
            sp = np.where(acc_cell, sp_new, sp)
            scale_z[kk].record(acc)

            # the same block in the centered parameterization (effects
            # alpha = sigma * z with a normal(0, sigma) prior); interweaving
            # the two keeps both weakly and strongly identified covariates
            # mixing
            sig_k = sigma[:, kk:kk + 1]
            alpha = sig_k * z[:, kk, :]
            prop_a = alpha + scale_c[kk].scale * rng.standard_normal((chains, nlev))
            d = (prop_a - alpha)[:, lev]
            sp_new = _softplus(eta + d)
            dll_cell = y_obs * d - n_obs * (sp_new - sp)
            dll_lev = np.bincount(flat_ids[kk], weights=dll_cell.ravel(),
                                  minlength=chains * nlev).reshape(chains, nlev)
            dll_lev += (alpha ** 2 - prop_a ** 2) / (2.0 * sig_k ** 2)
            acc = np.log(rng.random((chains, nlev))) < dll_lev
            z[:, kk, :] = np.where(acc, prop_a / sig_k, z[:, kk, :])
            acc_cell = acc[np.arange(chains)[:, None], lev[None, :]]
            eta = np.where(acc_cell, eta + d, eta)
            sp = np.where(acc_cell, sp_new, sp)
            scale_c[kk].record(acc)

            # scale block on log sigma (half-t prior plus Jacobian)
            t_old = logsig[:, kk]
            t_prop = t_old + scale_s[kk].scale * rng.standard_normal(chains)
            d = (np.exp(t_prop) - np.exp(t_old))[:, None] * z[:, kk, :][:, lev]
            sp_new = _softplus(eta + d)
            dll = (y_obs * d - n_obs * (sp_new - sp)).sum(axis=1)
            dll += (_t_logpdf_kernel(np.exp(t_prop), spec.sd_prior_df, spec.sd_prior_scale)
                    + t_prop
                    - _t_logpdf_kernel(np.exp(t_old), spec.sd_prior_df, spec.sd_prior_scale)
                    - t_old)
            acc = np.log(rng.random(chains)) < dll
            logsig[:, kk] = np.where(acc, t_prop, t_old)
            sigma = np.exp(logsig)
            eta = np.where(acc[:, None], eta + d, eta)
            sp = np.where(acc[:, None], sp_new, sp)
            scale_s[kk].record(acc)

            # interweaved rescale: move sigma with the effects sigma*z held
            # fixed (likelihood-invariant; breaks the sigma-z ridge for
            # strongly identified covariates)
            t_old = logsig[:, kk]
            eps = scale_a[kk].scale * rng.standard_normal(chains)
            t_prop = t_old + eps
            zsq = (z[:, kk, :] ** 2).sum(axis=1)
            dlp = (0.5 * zsq * (1.0 - np.exp(-2.0 * eps)) - nlev * eps
                   + _t_logpdf_kernel(np.exp(t_prop), spec.sd_prior_df, spec.sd_prior_scale)
                   - _t_logpdf_kernel(np.exp(t_old), spec.sd_prior_df, spec.sd_prior_scale)
                   + eps)
            acc = np.log(rng.random(chains)) < dlp
            logsig[:, kk] = np.where(acc, t_prop, t_old)
            sigma = np.exp(logsig)
            ratio = np.where(acc, np.exp(-eps), 1.0)
            z[:, kk, :] *= ratio[:, None]
            scale_a[kk].record(acc)

            # likelihood-invariant translation between the intercept and
            # this covariate's level-effect mean
            delta = scale_t[kk].scale * rng.standard_normal(chains)
            shift = delta / sigma[:, kk]
            z_shifted = z[:, kk, :] - shift[:, None]
            b_prop = beta0 + delta
            dlp = (0.5 * ((z[:, kk, :] ** 2).sum(axis=1) - (z_shifted ** 2).sum(axis=1))
                   + _t_logpdf_kernel(b_prop, spec.intercept_prior_df, spec.intercept_prior_scale)
                   - _t_logpdf_kernel(beta0, spec.intercept_prior_df, spec.intercept_prior_scale))
            acc = np.log(rng.random(chains)) < dlp
            beta0 = np.where(acc, b_prop, beta0)
            z[:, kk, :] = np.where(acc[:, None], z_shifted, z[:, kk, :])
            scale_t[kk].record(acc)

        if warming and (sweep + 1) % mcmc.adapt_batch == 0:
            scale_b.adapt()
            for kk in range(nkov):
                scale_z[kk].adapt()
                scale_c[kk].adapt()
                scale_s[kk].adapt()
                scale_a[kk].adapt()
                scale_t[kk].adapt()
        if not warming:
            i = sweep - mcmc.warmup
            kept_b[:, i] = beta0
            kept_z[:, i] = z
            kept_s[:, i] = logsig

    step_sizes = {"beta0": scale_b.scale.tolist(),
                  "z": [sc.scale.tolist() for sc in scale_z],
                  "z_centered": [sc.scale.tolist() for sc in scale_c],
                  "logsig": [sc.scale.tolist() for sc in scale_s],
                  "rescale": [sc.scale.tolist() for sc in scale_a],
                  "shift": [sc.scale.tolist() for sc in scale_t],
                  "positions": {"beta0": beta0.tolist(), "z": z.tolist(),
                                "logsig": logsig.tolist()}}
    accept_rates = {"beta0": float(np.mean(scale_b.accepts) / max(1, mcmc.draws))}
    if nkov:
        accept_rates["z"] = float(np.mean([sc.accepts.mean() for sc in scale_z]) / max(1, mcmc.draws))
        accept_rates["logsig"] = float(np.mean([sc.accepts.mean() for sc in scale_s]) / max(1, mcmc.draws))
    return kept_b, kept_z, kept_s, step_sizes, accept_rates


def _diagnose(kept_b, kept_z, kept_s, threshold):
    params = {"beta0": kept_b}
    _, _, nkov, nlev = kept_z.shape
    for kk in range(nkov):
        params[f"log_sigma[{kk}]"] = kept_s[:, :, kk]
        for lv in range(nlev):
            params[f"z[{kk},{lv}]"] = kept_z[:, :, kk, lv]
    rhat = {name: split_rhat(x) for name, x in params.items()}
    monitor = {"beta0": kept_b}
    monitor.update({f"log_sigma[{kk}]": kept_s[:, :, kk] for kk in range(nkov)})
    bulk = {name: ess_bulk(x) for name, x in monitor.items()}
    tail = {name: ess_tail(x) for name, x in monitor.items()}
    rhat_max = float(np.nanmax(list(rhat.values())))
    return {
        "rhat": rhat,
        "rhat_max": rhat_max,
        "ess_bulk_min": float(np.nanmin(list(bulk.values()))),
        "ess_tail_min": float(np.nanmin(list(tail.values()))),
        "converged": bool(rhat_max <= threshold),
    }


def fit(spec: ModelSpec, table: PostStratTable, mcmc: McmcConfig,
        warm_start: dict | None = None) -> CellProbDraws:
    """Fit the model on the observed cells and predict every table cell.

    An R-hat above the threshold is reported through the ``converged``
    diagnostic rather than raised, so sweeps can record flagged fits.
    A table with no observed cells yields draws from the prior.
    """
    kept_b, kept_z, kept_s, step_sizes, accept_rates = _sample(spec, table, mcmc, warm_start)
    diagnostics = _diagnose(kept_b, kept_z, kept_s, mcmc.rhat_threshold)
    diagnostics["step_sizes"] = step_sizes
    diagnostics["accept_rates"] = accept_rates

    chains, draws = kept_b.shape
    total = chains * draws
    b_target = min(mcmc.total_draws or total, total)
    sel = np.floor(np.arange(b_target) * (total / b_target)).astype(int)

    flat_b = kept_b.reshape(total)
    flat_z = kept_z.reshape(total, *kept_z.shape[2:])
    flat_s = kept_s.reshape(total, -1)
    chain_id = np.repeat(np.arange(chains), draws)[sel]
    iter_id = np.tile(np.arange(draws), chains)[sel]

    incl = np.asarray(spec.included_covariates, dtype=int) - 1
    eta = np.repeat(flat_b[sel][:, None], table.num_cells, axis=1)
    for i, kk in enumerate(incl):
        lev = table.levels[:, kk]
        eta += np.exp(flat_s[sel][:, i:i + 1]) * flat_z[sel][:, i, :][:, lev]
    probs = expit(np.clip(eta, -_ETA_CLIP, _ETA_CLIP))

    params = {"beta0": flat_b[sel], "sigma": np.exp(flat_s[sel])}
    return CellProbDraws(probs=probs, model=spec.label, chain_id=chain_id,
                         iter_id=iter_id, diagnostics=diagnostics, params=params)


def log_lik_cell(draws: CellProbDraws, cell_id: int, n: int, y: int) -> np.ndarray:
    """Per-draw binomial log pmf of the cell's observed counts."""
    if n < 1:
        raise ValueError("log_lik_cell needs n >= 1")
    p = draws.probs[:, cell_id]
    const = gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
    return const + y * np.log(p) + (n - y) * np.log1p(-p)
