"""Finite Q-function classes and the diagnostics that run on them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mdp import (ConfigurationError, EpisodicMdp, TabularPolicy, Trajectory,
                  bellman_image, expected_max, optimal_policy)

RANGE_TOL = 1e-9


def step_upper_bounds(H: int) -> np.ndarray:
    """Per-step range ceilings ``H - h + 1`` for h = 1..H."""
    return np.arange(H, 0, -1, dtype=float)


def clip_to_range(q: np.ndarray) -> np.ndarray:
    H = q.shape[-3]
    return np.clip(q, 0.0, step_upper_bounds(H)[:, None, None])


@dataclass(frozen=True, eq=False)
class QHypothesis:
    tables: np.ndarray  # (H, S, A)

    def __post_init__(self):
        t = np.array(self.tables, dtype=float, copy=True)
        if t.ndim != 3:
            raise ConfigurationError(f"Q tables must have shape (H, S, A), got {t.shape}")
        hi = step_upper_bounds(t.shape[0])[:, None, None]
        if np.any(t < -RANGE_TOL) or np.any(t > hi + RANGE_TOL):
            raise ConfigurationError("Q table entries must lie in [0, H - h + 1]")
        t.setflags(write=False)
        object.__setattr__(self, "tables", t)

    @property
    def shape(self):
        return self.tables.shape

    def __eq__(self, other):
        return isinstance(other, QHypothesis) and np.array_equal(self.tables, other.tables)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class HypothesisClass:
    members: tuple[QHypothesis, ...]
    prior: np.ndarray = field(default=None)

    def __post_init__(self):
        members = tuple(m if isinstance(m, QHypothesis) else QHypothesis(m)
                        for m in self.members)
        if not members:
            raise ConfigurationError("hypothesis class must be nonempty")
        if len({m.shape for m in members}) != 1:
            raise ConfigurationError("all members must share one shape")
        n = len(members)
        prior = np.full(n, 1.0 / n) if self.prior is None else np.array(self.prior, dtype=float)
        if prior.shape != (n,) or np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-12:
            raise ConfigurationError("prior must be a probability vector over members")
        prior.setflags(write=False)
        stacked = np.stack([m.tables for m in members])
        stacked.setflags(write=False)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "_stacked", stacked)

    def __len__(self):
        return len(self.members)

    @property
    def tables(self) -> np.ndarray:
        """All member tables stacked, shape ``(N, H, S, A)``."""
        return self._stacked

    @property
    def shape(self):
        return self.members[0].shape

    def to_dict(self) -> dict:
        return {"members": [m.tables.tolist() for m in self.members],
                "prior": self.prior.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "HypothesisClass":
        return cls(tuple(QHypothesis(np.array(m, dtype=float)) for m in d["members"]),
                   d.get("prior"))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "HypothesisClass":
        return cls.from_dict(json.loads(text))


def _tables(f) -> np.ndarray:
    return f.tables if isinstance(f, QHypothesis) else np.asarray(f, dtype=float)


def greedy_actions(q) -> np.ndarray:
    return np.argmax(_tables(q), axis=-1)


def greedy_policy(f) -> TabularPolicy:
    q = _tables(f)
    return TabularPolicy.deterministic(np.argmax(q, axis=-1), q.shape[-1])


def implied_reward_tables(q, transitions) -> np.ndarray:
    """Per-step implied rewards ``f_h - P_h max f_{h+1}``, with ``f_{H+1} = 0``.

    Works on a single ``(H, S, A)`` table or any leading batch of them.
    """
    q = np.asarray(_tables(q), dtype=float)
    H = q.shape[-3]
    g = np.array(q, copy=True)
    if H > 1:
        vnext = q[..., 1:, :, :].max(axis=-1)                        # (..., H-1, S)
        g[..., :-1, :, :] -= np.einsum("ksat,...kt->...ksa", transitions, vnext)
    return g


def visit_counts(tau: Trajectory, shape) -> np.ndarray:
    c = np.zeros(shape)
    for k, (s, a) in enumerate(tau.steps):
        c[k, s, a] += 1.0
    return c


def implied_reward(f, transitions, tau: Trajectory) -> float:
    g = implied_reward_tables(f, transitions)
    return float(sum(g[k, s, a] for k, (s, a) in enumerate(tau.steps)))


def bellman_residuals(f, mdp: EpisodicMdp) -> np.ndarray:
    """``f_h - T_h f_{h+1}`` for every step, shape ``(H, S, A)``."""
    q = _tables(f)
    return q - bellman_image(mdp, q)


@dataclass(frozen=True)
class CheckReport:
    holds: bool
    gap: float
    argbest: int | None = None


def _sup(x) -> float:
    return float(np.max(np.abs(x))) if np.size(x) else 0.0


def check_realizability(hclass: HypothesisClass, mdp: EpisodicMdp, tol: float) -> CheckReport:
    _, vt = optimal_policy(mdp)
    gaps = np.abs(hclass.tables - vt.q).reshape(len(hclass), -1).max(axis=1)
    best = int(np.argmin(gaps))
    return CheckReport(bool(gaps[best] <= tol), float(gaps[best]), best)


def check_completeness(hclass: HypothesisClass, mdp: EpisodicMdp, tol: float) -> CheckReport:
    """Worst case over (f, h) of the distance from ``T_h f_{h+1}`` to the class at step h."""
    worst = 0.0
    Q = hclass.tables
    for f in Q:
        img = bellman_image(mdp, f)                                 # (H, S, A)
        # dist[g, h] = sup-norm of img_h - g_h
        dist = np.abs(Q - img).max(axis=(2, 3))
        worst = max(worst, float(dist.min(axis=0).max()))
    return CheckReport(worst <= tol, worst)


def bracketing_bound(hclass: HypothesisClass) -> int:
    """Distinct members under exact equality; bounds N_[](w, F_h) for every w > 0."""
    return len({m.tables.tobytes() for m in hclass.members})


@dataclass(frozen=True)
class MixtureReport:
    distances: tuple[float, ...]
    nearest: tuple[int, ...]
    tol: float = 0.0

    @property
    def worst(self) -> float:
        return max(self.distances) if self.distances else 0.0

    @property
    def holds(self) -> bool:
        return self.worst <= self.tol


def mixture_closure_check(hclass: HypothesisClass, weight_vectors: Sequence,
                          tol: float = 0.0) -> MixtureReport:
    """Distance from each posterior-mean mixture to the nearest raw member."""
    Q = hclass.tables
    dists, nearest = [], []
    for w in weight_vectors:
        w = np.asarray(w, dtype=float)
        if w.shape != (len(hclass),):
            raise ConfigurationError("weight vector does not match class size")
        mix = np.tensordot(w, Q, axes=1)
        d = np.abs(Q - mix).reshape(len(hclass), -1).max(axis=1)
        i = int(np.argmin(d))
        dists.append(float(d[i]))
        nearest.append(i)
    return MixtureReport(tuple(dists), tuple(nearest), tol)


def reward_from_q(f, mdp: EpisodicMdp, tol: float = 1e-9) -> np.ndarray:
    """Rewards that make ``f`` the optimal Q function under ``mdp``'s transitions.

    Raises ConfigurationError when any implied reward leaves [0, 1].
    """
    r = implied_reward_tables(f, mdp.transitions)
    if np.any(r < -tol) or np.any(r > 1 + tol):
        raise ConfigurationError("hypothesis does not induce rewards in [0, 1]")
    return np.clip(r, 0.0, 1.0)


def mdp_from_q(f, template: EpisodicMdp) -> EpisodicMdp:
    return template.with_rewards(reward_from_q(f, template))
