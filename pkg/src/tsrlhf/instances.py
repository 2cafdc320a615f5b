"""Random instance generators and the seed-splitting scheme.

Every run has one root seed. Each purpose gets its own independent stream
``SeedSequence([root, PURPOSE])`` (plus an optional extra key, e.g. a draw
index), so changing how many numbers one component consumes never shifts
another component's draws.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .hypotheses import HypothesisClass, QHypothesis, clip_to_range
from .mdp import ConfigurationError, EpisodicMdp, optimal_policy

PURPOSES = {
    "mdp": 0,
    "class": 1,
    "algorithm": 2,     # posterior draws
    "preference": 3,    # Bernoulli feedback
    "environment": 4,   # trajectory rollouts
    "prior": 5,         # Bayesian draw of the true hypothesis
    "variational": 6,   # reparameterization noise
}


def stream(root_seed: int, purpose: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), PURPOSES[purpose], *extra]))


def random_mdp(seed, S: int, A: int, H: int) -> EpisodicMdp:
    """Uniform [0, 1] rewards and flat-Dirichlet transition rows; starts in state 0."""
    if min(S, A, H) < 1:
        raise ConfigurationError("S, A and H must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    rewards = rng.uniform(0.0, 1.0, size=(H, S, A))
    P = rng.dirichlet(np.ones(S), size=(H - 1, S, A)) if H > 1 else np.zeros((0, S, A, S))
    # re-normalize so every row sums to one within roundoff of a single division
    P = P / P.sum(axis=-1, keepdims=True)
    return EpisodicMdp(rewards, P, 0)


def generate_class(mdp: EpisodicMdp, count: int, noise: float, seed) -> HypothesisClass:
    """Member 0 is Q* exactly; the rest are Q* plus clipped Gaussian noise."""
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    _, vt = optimal_policy(mdp)
    qstar = vt.q
    members = [QHypothesis(qstar)]
    for _ in range(count - 1):
        members.append(QHypothesis(clip_to_range(qstar + noise * rng.standard_normal(qstar.shape))))
    return HypothesisClass(tuple(members))


def random_reward_class(template: EpisodicMdp, count: int, seed) -> HypothesisClass:
    """Optimal Q functions of ``count`` random reward tables sharing ``template``'s kernels.

    Every member is the Q* of a valid environment, which is what a Bayesian draw
    of the true hypothesis needs.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    members = []
    for _ in range(count):
        env = template.with_rewards(rng.uniform(0.0, 1.0, size=template.shape))
        members.append(QHypothesis(optimal_policy(env)[1].q))
    return HypothesisClass(tuple(members))


def resolve_mdp(spec, root_seed: int) -> EpisodicMdp:
    if isinstance(spec, EpisodicMdp):
        return spec
    try:
        return _resolve_mdp(spec, root_seed)
    except (KeyError, TypeError, OSError) as e:
        raise ConfigurationError(f"bad mdp spec: {e!r}") from e


def _resolve_mdp(spec, root_seed: int) -> EpisodicMdp:
    kind = spec.get("kind", "random")
    if kind == "random":
        seed = spec.get("seed")
        rng = np.random.default_rng(seed) if seed is not None else stream(root_seed, "mdp")
        return random_mdp(rng, int(spec["num_states"]), int(spec["num_actions"]), int(spec["horizon"]))
    if kind == "file":
        return EpisodicMdp.loads(Path(spec["path"]).read_text())
    if kind == "inline":
        return EpisodicMdp.from_dict(spec)
    raise ConfigurationError(f"unknown mdp kind {kind!r}")


def resolve_class(spec, mdp: EpisodicMdp, root_seed: int) -> HypothesisClass:
    if isinstance(spec, HypothesisClass):
        return spec
    try:
        hclass = _resolve_class(spec, mdp, root_seed)
    except (KeyError, TypeError, OSError) as e:
        raise ConfigurationError(f"bad hypothesis class spec: {e!r}") from e
    if hclass.shape != mdp.shape:
        raise ConfigurationError(f"class shape {hclass.shape} does not match mdp {mdp.shape}")
    return hclass


def _resolve_class(spec, mdp: EpisodicMdp, root_seed: int) -> HypothesisClass:
    kind = spec.get("kind", "perturbed_qstar")
    seed = spec.get("seed")
    rng = np.random.default_rng(seed) if seed is not None else stream(root_seed, "class")
    if kind == "perturbed_qstar":
        return generate_class(mdp, int(spec["count"]), float(spec.get("noise", 0.5)), rng)
    if kind == "random_rewards":
        return random_reward_class(mdp, int(spec["count"]), rng)
    if kind == "file":
        return HypothesisClass.loads(Path(spec["path"]).read_text())
    if kind == "inline":
        return HypothesisClass.from_dict(spec)
    raise ConfigurationError(f"unknown hypothesis class kind {kind!r}")
