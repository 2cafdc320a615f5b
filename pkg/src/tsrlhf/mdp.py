"""Finite-horizon tabular MDPs: simulation, dynamic programming, Bellman operator.

Array conventions used throughout the package (0-based step index ``k = h - 1``):

* rewards      ``(H, S, A)``
* transitions  ``(H - 1, S, A, S)``; step ``H`` terminates, so there is no last kernel
* policy probs ``(H, S, A)``
* Q tables     ``(H, S, A)``; step ``k`` lives in ``[0, H - k]``
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ROW_TOL = 1e-12


class ConfigurationError(ValueError):
    """Raised when shapes or parameters of a configuration are inconsistent."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EpisodicMdp:
    rewards: np.ndarray
    transitions: np.ndarray
    initial_state: int = 0

    def __post_init__(self):
        r = _frozen(self.rewards)
        if r.ndim != 3 or min(r.shape) < 1:
            raise ConfigurationError(f"rewards must have shape (H, S, A), got {r.shape}")
        H, S, A = r.shape
        p = np.asarray(self.transitions, dtype=float)
        if p.size == 0 and H == 1:
            p = np.zeros((0, S, A, S))
        p = _frozen(p)
        if p.shape != (H - 1, S, A, S):
            raise ConfigurationError(
                f"transitions must have shape {(H - 1, S, A, S)}, got {p.shape}")
        if np.any(r < 0) or np.any(r > 1) or not np.all(np.isfinite(r)):
            raise ConfigurationError("rewards must lie in [0, 1]")
        if np.any(p < 0) or np.any(np.abs(p.sum(-1) - 1.0) > ROW_TOL):
            raise ConfigurationError("transition rows must be distributions")
        if not 0 <= int(self.initial_state) < S:
            raise ConfigurationError("initial_state out of range")
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "initial_state", int(self.initial_state))

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_states(self) -> int:
        return self.rewards.shape[1]

    @property
    def num_actions(self) -> int:
        return self.rewards.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.rewards.shape

    def with_rewards(self, rewards) -> "EpisodicMdp":
        return EpisodicMdp(rewards, self.transitions, self.initial_state)

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "rewards": self.rewards.tolist(),
            "transitions": self.transitions.tolist(),
            "initial_state": self.initial_state,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodicMdp":
        H, S, A = int(d["horizon"]), int(d["num_states"]), int(d["num_actions"])
        rewards = np.array(d["rewards"], dtype=float).reshape(H, S, A)
        transitions = np.array(d["transitions"], dtype=float).reshape(H - 1, S, A, S)
        return cls(rewards, transitions, int(d.get("initial_state", 0)))

    def dumps(self) -> str:
        # json writes floats with repr(), the shortest string that round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "EpisodicMdp":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Trajectory:
    """Exactly ``H`` (state, action) pairs; the absorbing final state is implicit."""

    steps: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple((int(s), int(a)) for s, a in self.steps))

    def __len__(self):
        return len(self.steps)

    @property
    def states(self) -> tuple[int, ...]:
        return tuple(s for s, _ in self.steps)

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(a for _, a in self.steps)

    def validate(self, mdp: EpisodicMdp) -> None:
        if len(self.steps) != mdp.horizon:
            raise ConfigurationError(f"trajectory length {len(self)} != horizon {mdp.horizon}")
        for s, a in self.steps:
            if not (0 <= s < mdp.num_states and 0 <= a < mdp.num_actions):
                raise ConfigurationError(f"trajectory step {(s, a)} out of range")

    def to_list(self) -> list[list[int]]:
        return [list(p) for p in self.steps]

    @classmethod
    def from_list(cls, steps: Sequence[Sequence[int]]) -> "Trajectory":
        return cls(tuple((s, a) for s, a in steps))


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 3:
            raise ConfigurationError(f"policy must have shape (H, S, A), got {p.shape}")
        if np.any(p < 0) or np.any(np.abs(p.sum(-1) - 1.0) > ROW_TOL):
            raise ConfigurationError("policy rows must be distributions")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, H: int, S: int, A: int) -> "TabularPolicy":
        return cls(np.full((H, S, A), 1.0 / A))

    @classmethod
    def deterministic(cls, actions, num_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros(actions.shape + (num_actions,))
        np.put_along_axis(probs, actions[..., None], 1.0, axis=-1)
        return cls(probs)

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    def actions(self) -> np.ndarray:
        """Action table ``(H, S)``; only meaningful for deterministic policies."""
        return np.argmax(self.probs, axis=-1)

    def __eq__(self, other):
        return isinstance(other, TabularPolicy) and np.array_equal(self.probs, other.probs)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ValueTables:
    v: np.ndarray  # (H, S)
    q: np.ndarray  # (H, S, A)

    def v1(self, s1: int) -> float:
        return float(self.v[0, s1])


def _check_policy(mdp: EpisodicMdp, policy: TabularPolicy) -> None:
    if policy.probs.shape != mdp.shape:
        raise ConfigurationError(
            f"policy shape {policy.probs.shape} does not match MDP {mdp.shape}")


def expected_max(transitions_h: np.ndarray, f_next: np.ndarray) -> np.ndarray:
    """E_{s' ~ P(.|s,a)} max_a' f_next(s', a') for every (s, a)."""
    return transitions_h @ f_next.max(axis=-1)


def bellman_apply(mdp: EpisodicMdp, f_next, h: int) -> np.ndarray:
    """(T_h f_{h+1})(s, a) for 1-based step ``h``; ``f_next`` is ignored at h = H."""
    H = mdp.horizon
    if not 1 <= h <= H:
        raise ConfigurationError(f"step {h} outside [1, {H}]")
    r = mdp.rewards[h - 1]
    if h == H:
        return r.copy()
    f_next = np.asarray(f_next, dtype=float)
    if f_next.shape != (mdp.num_states, mdp.num_actions):
        raise ConfigurationError(f"f_next must have shape {(mdp.num_states, mdp.num_actions)}")
    return r + expected_max(mdp.transitions[h - 1], f_next)


def bellman_image(mdp: EpisodicMdp, q) -> np.ndarray:
    """Stacked ``T_h q_{h+1}`` for every step, with ``q_{H+1} = 0``."""
    q = np.asarray(q, dtype=float)
    out = np.array(mdp.rewards, dtype=float, copy=True)
    for k in range(mdp.horizon - 1):
        out[k] += expected_max(mdp.transitions[k], q[k + 1])
    return out


def exact_policy_value(mdp: EpisodicMdp, policy: TabularPolicy) -> ValueTables:
    _check_policy(mdp, policy)
    H, S, A = mdp.shape
    v = np.zeros((H, S))
    q = np.zeros((H, S, A))
    for k in range(H - 1, -1, -1):
        q[k] = mdp.rewards[k]
        if k < H - 1:
            q[k] = q[k] + mdp.transitions[k] @ v[k + 1]
        v[k] = np.sum(policy.probs[k] * q[k], axis=-1)
    return ValueTables(v, q)


def optimal_policy(mdp: EpisodicMdp) -> tuple[TabularPolicy, ValueTables]:
    """Backward induction; argmax ties go to the lowest action index."""
    H, S, A = mdp.shape
    v = np.zeros((H, S))
    q = np.zeros((H, S, A))
    actions = np.zeros((H, S), dtype=int)
    for k in range(H - 1, -1, -1):
        q[k] = mdp.rewards[k]
        if k < H - 1:
            q[k] = q[k] + mdp.transitions[k] @ v[k + 1]
        actions[k] = np.argmax(q[k], axis=-1)
        v[k] = q[k].max(axis=-1)
    return TabularPolicy.deterministic(actions, A), ValueTables(v, q)


def occupancy(mdp: EpisodicMdp, policy: TabularPolicy) -> np.ndarray:
    """State-action visitation probabilities d_h(s, a), shape ``(H, S, A)``."""
    _check_policy(mdp, policy)
    H, S, A = mdp.shape
    d = np.zeros((H, S, A))
    state = np.zeros(S)
    state[mdp.initial_state] = 1.0
    for k in range(H):
        d[k] = state[:, None] * policy.probs[k]
        if k < H - 1:
            state = np.einsum("sa,sat->t", d[k], mdp.transitions[k])
    return d


def trajectory_reward(mdp: EpisodicMdp, tau: Trajectory) -> float:
    return float(sum(mdp.rewards[k, s, a] for k, (s, a) in enumerate(tau.steps)))


def _draw(cdf_row: np.ndarray, u: float) -> int:
    i = int(np.searchsorted(cdf_row, u, side="right"))
    return min(i, cdf_row.shape[-1] - 1)


def sample_trajectory(mdp: EpisodicMdp, policy: TabularPolicy,
                      rng: np.random.Generator) -> Trajectory:
    _check_policy(mdp, policy)
    pol_cdf = np.cumsum(policy.probs, axis=-1)
    P_cdf = np.cumsum(mdp.transitions, axis=-1)
    H = mdp.horizon
    s = mdp.initial_state
    steps = []
    for k in range(H):
        a = _draw(pol_cdf[k, s], rng.random())
        steps.append((s, a))
        if k < H - 1:
            s = _draw(P_cdf[k, s, a], rng.random())
    return Trajectory(tuple(steps))


def sample_trajectories(mdp: EpisodicMdp, policy: TabularPolicy,
                        rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized batch rollout. Returns ``(states, actions)`` each of shape ``(n, H)``."""
    _check_policy(mdp, policy)
    H = mdp.horizon
    pol_cdf = np.cumsum(policy.probs, axis=-1)
    P_cdf = np.cumsum(mdp.transitions, axis=-1)
    states = np.zeros((n, H), dtype=int)
    actions = np.zeros((n, H), dtype=int)
    s = np.full(n, mdp.initial_state)
    for k in range(H):
        u = rng.random(n)[:, None]
        a = np.minimum((pol_cdf[k, s] <= u).sum(-1), mdp.num_actions - 1)
        states[:, k], actions[:, k] = s, a
        if k < H - 1:
            u = rng.random(n)[:, None]
            s = np.minimum((P_cdf[k, s, a] <= u).sum(-1), mdp.num_states - 1)
    return states, actions
