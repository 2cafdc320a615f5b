"""Gaussian variational posterior over Q tables, fit by ELBO ascent.

Every Q entry gets an independent normal ``N(mean, exp(log_std)^2)``.  Samples
are stored as their standard-normal noise ``z`` so that a sample drawn several
iterations ago can be re-evaluated at the current parameters
(``Q = mean + exp(log_std) * z``), which is what the FIFO sample-reuse window
needs.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import instances
from .hypotheses import greedy_policy, implied_reward_tables
from .mdp import (EpisodicMdp, TabularPolicy, exact_policy_value, optimal_policy,
                  sample_trajectory, trajectory_reward)
from .posterior import PreferenceRecord, dataset_features
from .preference import LinkFunction, sample_preference


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GaussianQPosterior:
    mean: np.ndarray      # (P, S, A) with P = H, or P = 1 for step-shared parameters
    log_std: np.ndarray
    horizon: int

    def __post_init__(self):
        m = np.array(self.mean, dtype=float)
        r = np.array(self.log_std, dtype=float)
        if m.shape != r.shape or m.ndim != 3 or m.shape[0] not in (1, self.horizon):
            raise ValueError("mean/log_std must share shape (H, S, A) or (1, S, A)")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "log_std", r)

    @classmethod
    def isotropic(cls, H: int, S: int, A: int, mean: float = 0.0, std: float = 1.0,
                  stationary: bool = False) -> "GaussianQPosterior":
        shape = (1 if stationary else H, S, A)
        return cls(np.full(shape, float(mean)), np.full(shape, math.log(std)), H)

    @property
    def stationary(self) -> bool:
        return self.mean.shape[0] == 1 and self.horizon > 1

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def tables(self, z: np.ndarray) -> np.ndarray:
        """Q tables for noise ``z`` of shape ``(..., P, S, A)``; output ``(..., H, S, A)``."""
        q = self.mean + self.std * z
        return np.broadcast_to(q, q.shape[:-3] + (self.horizon,) + q.shape[-2:])

    def mean_tables(self) -> np.ndarray:
        return np.broadcast_to(self.mean, (self.horizon,) + self.mean.shape[1:])

    def draw_noise(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return rng.standard_normal((m,) + self.mean.shape)

    def replace(self, mean=None, log_std=None) -> "GaussianQPosterior":
        return GaussianQPosterior(self.mean if mean is None else mean,
                                  self.log_std if log_std is None else log_std, self.horizon)


def kl_divergence(q: GaussianQPosterior, p: GaussianQPosterior) -> float:
    """Closed-form KL(q || p) for diagonal Gaussians."""
    var_ratio = np.exp(2.0 * (q.log_std - p.log_std))
    diff = (q.mean - p.mean) ** 2 / np.exp(2.0 * p.log_std)
    return float(np.sum((p.log_std - q.log_std) + 0.5 * (var_ratio + diff) - 0.5))


def kl_gradient(q: GaussianQPosterior, p: GaussianQPosterior):
    prior_var = np.exp(2.0 * p.log_std)
    return (q.mean - p.mean) / prior_var, np.exp(2.0 * q.log_std) / prior_var - 1.0


def loglik_and_grad(Q: np.ndarray, features: np.ndarray, link: LinkFunction, transitions):
    """Preference log-likelihood of each sampled table and its gradient.

    ``Q`` has shape ``(K, H, S, A)``, ``features`` the signed visit counts
    ``(n, H*S*A)``.  The max inside the implied reward routes its gradient to the
    first maximizing action.
    """
    K, H, S, A = Q.shape
    g = implied_reward_tables(Q, transitions).reshape(K, -1)
    y = g @ features.T                                         # (K, n)
    ll = link.log_prob(y).sum(axis=1)
    dg = (link.dlog_prob(y) @ features).reshape(K, H, S, A)
    dQ = dg.copy()
    rows = np.arange(K)[:, None]
    cols = np.arange(S)[None, :]
    for k in range(H - 1):
        coef = -np.einsum("ksa,sat->kt", dg[:, k], transitions[k])          # (K, S)
        best = np.argmax(Q[:, k + 1], axis=-1)                               # (K, S)
        np.add.at(dQ[:, k + 1], (rows, cols, best), coef)
    return ll, dQ


def _features(dataset, shape):
    if isinstance(dataset, np.ndarray):
        return dataset
    return dataset_features(dataset, shape)


def elbo_estimate(q: GaussianQPosterior, dataset, prior: GaussianQPosterior,
                  link: LinkFunction, transitions, samples) -> float:
    """Sample-average log-likelihood minus the closed-form KL to the prior."""
    z = np.asarray(samples, dtype=float)
    if z.ndim == 3:
        z = z[None]
    if z.shape[0] == 0:
        raise ValueError("elbo_estimate needs at least one sample")
    Q = q.tables(z)
    feats = _features(dataset, Q.shape[1:])
    ll = np.zeros(len(z)) if feats.shape[0] == 0 else loglik_and_grad(Q, feats, link, transitions)[0]
    return float(ll.mean()) - kl_divergence(q, prior)


def elbo_gradient(q: GaussianQPosterior, dataset, prior: GaussianQPosterior,
                  link: LinkFunction, transitions, samples, ll_scale: float = 1.0):
    """Pathwise gradient of ``ll_scale * E_q[loglik] - KL`` for (mean, log_std)."""
    z = np.asarray(samples, dtype=float)
    if z.ndim == 3:
        z = z[None]
    if z.shape[0] == 0:
        raise ValueError("elbo_gradient needs at least one sample")
    Q = np.ascontiguousarray(q.tables(z))
    feats = _features(dataset, Q.shape[1:])
    kl_mu, kl_rho = kl_gradient(q, prior)
    if feats.shape[0] == 0:
        return -kl_mu, -kl_rho
    _, dQ = loglik_and_grad(Q, feats, link, transitions)
    if q.mean.shape[0] == 1:
        dQ = dQ.sum(axis=1, keepdims=True)
    g_mu = ll_scale * dQ.mean(axis=0)
    g_rho = ll_scale * (dQ * z).mean(axis=0) * q.std
    return g_mu - kl_mu, g_rho - kl_rho


@dataclass
class ElboConfig:
    batch_size: int = 5        # n
    samples_per_iter: int = 20  # m
    reuse_window: int = 50     # l
    step_size: float = 0.05
    iterations: int = 200
    smoothing: int = 20        # omega
    stationary: bool = False
    prior_std: float | None = None   # defaults to H

    def __post_init__(self):
        for name in ("batch_size", "samples_per_iter", "reuse_window", "smoothing"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")


def smooth(series, window: int) -> np.ndarray:
    """Trailing moving average; the first entries average over what is available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=float)
    return np.array([x[max(0, i + 1 - window):i + 1].mean() for i in range(len(x))])


@dataclass
class FitState:
    """Carries the sample FIFO and mini-batch cursor across calls."""
    fifo: deque = field(default_factory=deque)
    iteration: int = 0


@dataclass
class FitResult:
    q: GaussianQPosterior
    trace: np.ndarray
    state: FitState


def fit_variational(dataset, init: GaussianQPosterior, prior: GaussianQPosterior,
                    cfg: ElboConfig, rng: np.random.Generator, link: LinkFunction,
                    transitions, state: FitState | None = None) -> FitResult:
    """Fixed-step ELBO ascent with mini-batches and a window of reused samples.

    The step is taken on the ELBO divided by the dataset size, so one step size
    stays stable as data accumulates; the returned trace is on the same
    per-record scale, evaluated on the whole dataset with the reuse window.
    """
    state = state or FitState(deque(maxlen=cfg.reuse_window))
    if state.fifo.maxlen != cfg.reuse_window:
        state.fifo = deque(state.fifo, maxlen=cfg.reuse_window)
    H = init.horizon
    feats = _features(dataset, (H,) + init.mean.shape[1:])
    N = feats.shape[0]
    q = init
    trace = []
    limit = 1e3 * H
    for _ in range(cfg.iterations):
        for z in q.draw_noise(rng, cfg.samples_per_iter):
            state.fifo.append(z)
        z = np.stack(state.fifo)
        if N:
            n = min(cfg.batch_size, N)
            idx = (state.iteration * cfg.batch_size + np.arange(n)) % N
            g_mu, g_rho = elbo_gradient(q, feats[idx], prior, link, transitions, z, ll_scale=N / n)
        else:
            g_mu, g_rho = elbo_gradient(q, feats, prior, link, transitions, z)
        scale = cfg.step_size / max(N, 1)
        q = q.replace(q.mean + scale * g_mu, q.log_std + scale * g_rho)
        state.iteration += 1
        if not np.all(np.isfinite(q.mean)) or np.max(np.abs(q.mean)) > limit:
            raise DivergenceError(f"variational mean exceeded {limit:g} at iteration {state.iteration}")
        trace.append(elbo_estimate(q, feats, prior, link, transitions, z) / max(N, 1))
    return FitResult(q, np.array(trace), state)


@dataclass
class ElboRunResult:
    q: GaussianQPosterior
    elbo: np.ndarray
    smoothed_elbo: np.ndarray
    value_of_mean_greedy: np.ndarray
    regret: np.ndarray            # per-iteration 2V* - V^{pi0} - V^{pi1}
    v_star: float

    def csv_rows(self):
        for i in range(len(self.elbo)):
            yield (i + 1, float(self.elbo[i]), float(self.smoothed_elbo[i]),
                   float(self.value_of_mean_greedy[i]))


def run_elbo_ts(mdp: EpisodicMdp, link: LinkFunction, cfg: ElboConfig, seed: int,
                transitions=None) -> ElboRunResult:
    """Posterior sampling with the Gaussian approximation in place of the exact posterior.

    Each iteration draws one Q sample, plays its greedy policy against the
    previous iteration's, collects ``batch_size`` comparisons, then takes one
    ELBO ascent step.
    """
    H, S, A = mdp.shape
    s1 = mdp.initial_state
    transitions = mdp.transitions if transitions is None else transitions
    rng_var = instances.stream(seed, "variational")
    rng_alg = instances.stream(seed, "algorithm")
    rng_env = instances.stream(seed, "environment")
    rng_pref = instances.stream(seed, "preference")
    prior_std = float(H) if cfg.prior_std is None else cfg.prior_std
    prior = GaussianQPosterior.isotropic(H, S, A, 0.0, prior_std, cfg.stationary)
    q = prior
    v_star = optimal_policy(mdp)[1].v1(s1)
    prev = TabularPolicy.uniform(H, S, A)
    prev_value = exact_policy_value(mdp, prev).v1(s1)
    step_cfg = ElboConfig(**{**cfg.__dict__, "iterations": 1})
    state = FitState(deque(maxlen=cfg.reuse_window))
    feats = np.zeros((cfg.iterations * cfg.batch_size, H * S * A))
    elbo, value, regret = [], [], []
    for it in range(cfg.iterations):
        sample = q.tables(q.draw_noise(rng_alg, 1))[0]
        pi0 = greedy_policy(sample)
        v0 = exact_policy_value(mdp, pi0).v1(s1)
        for j in range(cfg.batch_size):
            tau0 = sample_trajectory(mdp, pi0, rng_env)
            tau1 = sample_trajectory(mdp, prev, rng_env)
            o = sample_preference(link, trajectory_reward(mdp, tau0),
                                  trajectory_reward(mdp, tau1), rng_pref)
            feats[it * cfg.batch_size + j] = PreferenceRecord(tau0, tau1, o).signed_counts(mdp.shape).ravel()
        res = fit_variational(feats[:(it + 1) * cfg.batch_size], q, prior, step_cfg, rng_var,
                              link, transitions, state)
        q = res.q
        elbo.append(res.trace[-1])
        value.append(exact_policy_value(mdp, greedy_policy(q.mean_tables())).v1(s1))
        regret.append(2.0 * v_star - v0 - prev_value)
        prev, prev_value = pi0, v0
    elbo = np.array(elbo)
    return ElboRunResult(q, elbo, smooth(elbo, cfg.smoothing), np.array(value),
                         np.array(regret), v_star)
