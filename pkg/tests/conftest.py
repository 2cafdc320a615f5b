import itertools
import sys

import numpy as np
import pytest
from hypothesis import settings

from tsrlhf.instances import random_mdp
from tsrlhf.mdp import EpisodicMdp

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def enumerate_paths(mdp: EpisodicMdp, policy_probs):
    """Every (trajectory, probability) pair with positive probability, by brute force."""
    H, S, A = mdp.shape
    paths = []

    def extend(prefix, prob, s, k):
        for a in range(A):
            pa = prob * policy_probs[k, s, a]
            if pa == 0.0:
                continue
            steps = prefix + [(s, a)]
            if k == H - 1:
                paths.append((steps, pa))
                continue
            for s2 in range(S):
                ps = pa * mdp.transitions[k, s, a, s2]
                if ps > 0.0:
                    extend(steps, ps, s2, k + 1)

    extend([], 1.0, mdp.initial_state, 0)
    return paths


def brute_force_optimal_q(mdp: EpisodicMdp) -> np.ndarray:
    """Q* by looping over indices directly, no vectorization."""
    H, S, A = mdp.shape
    q = np.zeros((H, S, A))
    for k in reversed(range(H)):
        for s, a in itertools.product(range(S), range(A)):
            nxt = 0.0
            if k < H - 1:
                for s2 in range(S):
                    nxt += mdp.transitions[k, s, a, s2] * max(q[k + 1, s2])
            q[k, s, a] = mdp.rewards[k, s, a] + nxt
    return q


@pytest.fixture
def small_mdp():
    return random_mdp(7, 3, 2, 2)


@pytest.fixture
def chain_mdp():
    """Two states, one action, H=2, moves to state 1 with probability 0.3."""
    rewards = np.zeros((2, 2, 1))
    transitions = np.array([[[[0.7, 0.3]], [[0.5, 0.5]]]])
    return EpisodicMdp(rewards, transitions)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
