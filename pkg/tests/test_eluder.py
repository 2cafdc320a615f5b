import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsrlhf.eluder import (EluderCertificate, FiniteDistribution, InstanceTooLargeError,
                           ScalarFunctionClass, be_dimension, de_dimension, is_independent,
                           residual_classes, verify_certificate)
from tsrlhf.hypotheses import HypothesisClass
from tsrlhf.instances import generate_class, random_mdp
from tsrlhf.mdp import EpisodicMdp, optimal_policy

E1, E2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
D1, D2 = FiniteDistribution.point_mass(2, 0), FiniteDistribution.point_mass(2, 1)


def brute_force_dimension(F, dists, eps, max_len):
    """Longest sequence (repeats allowed, up to ``max_len``) admitting a common eps' >= eps.

    Independence status only changes at the values sqrt(partial sum), so testing
    eps itself and every such value >= eps covers every eps'.
    """
    F = [list(map(float, f)) for f in F]
    P = [list(map(float, d)) for d in dists]

    def ex(p, f):
        return sum(a * b for a, b in zip(p, f))

    def all_independent(seq, c):
        for k, j in enumerate(seq):
            ok = False
            for f in F:
                s = math.sqrt(sum(ex(P[i], f) ** 2 for i in seq[:k]))
                if s <= c and abs(ex(P[j], f)) > c:
                    ok = True
                    break
            if not ok:
                return False
        return True

    best = 0
    for L in range(1, max_len + 1):
        found = False
        for seq in itertools.product(range(len(P)), repeat=L):
            cands = {eps}
            for k in range(L + 1):
                for f in F:
                    v = math.sqrt(sum(ex(P[i], f) ** 2 for i in seq[:k]))
                    if v >= eps:
                        cands.add(v)
            if any(all_independent(seq, c) for c in cands):
                found = True
                break
        if not found:
            break
        best = L
    return best


@st.composite
def small_problems(draw):
    n_x = draw(st.integers(1, 3))
    n_f = draw(st.integers(1, 4))
    n_d = draw(st.integers(1, 3))
    vals = st.sampled_from([-1.0, -0.5, 0.0, 0.25, 0.5, 1.0])
    F = np.array([[draw(vals) for _ in range(n_x)] for _ in range(n_f)])
    dists = []
    for _ in range(n_d):
        w = np.array([draw(st.integers(0, 3)) for _ in range(n_x)], dtype=float)
        if w.sum() == 0:
            w[0] = 1.0
        dists.append(w / w.sum())
    eps = draw(st.sampled_from([0.0, 0.1, 0.3, 0.6]))
    return F, dists, eps


class TestIsIndependent:
    def test_zero_function_always_dependent(self):
        assert is_independent([np.zeros(2)], [D1], D2, 0.1) == (False, None)
        assert is_independent([np.zeros(2)], [], D2, 0.0) == (False, None)

    def test_indicator_pair(self):
        assert is_independent([E1, E2], [D1], D2, 0.5) == (True, 1)

    def test_repeated_distribution_dependent(self):
        F = np.array([[1.0, -1.0], [0.5, 0.2]])
        mu = FiniteDistribution(np.array([0.5, 0.5]))
        # at eps=0 any f with E_mu f = 0 on the predecessor also has E_mu f = 0
        ok, _ = is_independent(F, [mu], mu, 0.0)
        assert not ok

    def test_empty_predecessors(self):
        assert is_independent([E1], [], D1, 0.5) == (True, 0)

    def test_negative_eps(self):
        with pytest.raises(ValueError):
            is_independent([E1], [], D1, -1.0)


class TestDeDimension:
    def test_zero_class(self):
        assert de_dimension([np.zeros(3)], [FiniteDistribution.point_mass(3, i) for i in range(3)], 0.1).dimension == 0

    def test_indicator_pair(self):
        cert = de_dimension([E1, E2], [D1, D2], 0.5)
        assert cert.dimension == 2
        assert cert.dimension == brute_force_dimension([E1, E2], [D1.probs, D2.probs], 0.5, 4)
        assert verify_certificate([E1, E2], cert)
        assert cert.sequence == (0, 1) and cert.witnesses == (0, 1)

    def test_eps_above_every_expectation(self):
        rng = np.random.default_rng(0)
        F = rng.uniform(-1, 1, size=(5, 3))
        dists = [FiniteDistribution(p) for p in rng.dirichlet(np.ones(3), size=4)]
        top = max(abs(float(np.dot(d.probs, f))) for d in dists for f in F)
        assert de_dimension(F, dists, top + 1e-9).dimension == 0
        assert de_dimension(F, dists, top).dimension == 0

    def test_caps(self):
        dists = [FiniteDistribution.point_mass(9, i) for i in range(9)]
        with pytest.raises(InstanceTooLargeError):
            de_dimension([np.zeros(9)], dists, 0.1)
        with pytest.raises(InstanceTooLargeError):
            de_dimension(np.zeros((65, 2)), [D1], 0.1)
        assert de_dimension([np.zeros(9)], dists, 0.1, max_distributions=9).dimension == 0

    def test_certificate_serializes(self):
        cert = de_dimension([E1, E2], [D1, D2], 0.5)
        d = json.loads(cert.dumps())
        assert d["dimension"] == 2 and d["sequence"] == [0, 1]
        assert d["metadata"] == {"with_repetition": 2, "without_repetition": 2}
        assert d["eps_prime"] >= 0.5

    @given(small_problems())
    def test_matches_brute_force(self, prob):
        F, dists, eps = prob
        cert = de_dimension(F, dists, eps)
        assert cert.dimension == brute_force_dimension(F, dists, eps, len(dists) + 1)
        assert verify_certificate(F, cert)
        assert cert.metadata["with_repetition"] == cert.metadata["without_repetition"]

    @given(small_problems(), st.floats(0, 0.5))
    def test_monotone_in_eps(self, prob, extra):
        F, dists, eps = prob
        assert de_dimension(F, dists, eps).dimension >= de_dimension(F, dists, eps + extra).dimension

    @given(small_problems())
    def test_removing_member_never_increases(self, prob):
        F, dists, eps = prob
        if len(F) > 1:
            assert de_dimension(F[1:], dists, eps).dimension <= de_dimension(F, dists, eps).dimension

    @given(small_problems(), st.randoms(use_true_random=False))
    def test_relabeling_invariance(self, prob, rnd):
        F, dists, eps = prob
        perm = list(range(F.shape[1]))
        rnd.shuffle(perm)
        relabeled = de_dimension(F[:, perm], [d[perm] for d in dists], eps)
        assert relabeled.dimension == de_dimension(F, dists, eps).dimension


class TestBeDimension:
    def test_singleton_optimal_q(self, small_mdp):
        q = optimal_policy(small_mdp)[1].q
        for kind in ("delta", "greedy"):
            assert be_dimension(HypothesisClass((q,)), small_mdp, kind, 0.01).dimension == 0

    def test_horizon_one_hand_built(self):
        r = np.array([[[0.2, 0.6], [0.4, 0.1]]])
        mdp = EpisodicMdp(r, np.zeros((0, 2, 2, 2)))
        f = r.copy()
        g = r.copy()
        g[0, 1, 0] += 0.3
        rep = be_dimension(HypothesisClass((f, g)), mdp, "delta", 0.1)
        # residuals f - r are zero and 0.3 on a single pair
        hand = [np.zeros(4), np.array([0.0, 0.0, 0.3, 0.0])]
        cert = de_dimension(hand, [FiniteDistribution.point_mass(4, i) for i in range(4)], 0.1)
        assert rep.dimension == cert.dimension == 1
        assert rep.per_step[0].sequence == cert.sequence == (2,)

    @pytest.mark.parametrize("seed", range(6))
    def test_delta_family_ceiling(self, seed):
        mdp = random_mdp(seed, 2, 2, 2)
        hc = generate_class(mdp, 8, 0.5, seed)
        rep = be_dimension(hc, mdp, "delta", 0.05)
        assert rep.dimension <= mdp.num_states * mdp.num_actions
        for k, cert in enumerate(rep.per_step):
            assert verify_certificate(residual_classes(hc, mdp)[k], cert)

    def test_greedy_family_runs(self):
        mdp = random_mdp(1, 3, 2, 2)
        hc = generate_class(mdp, 6, 0.5, 1)
        rep = be_dimension(hc, mdp, "greedy", 0.05)
        assert 0 <= rep.dimension <= 6
        assert json.loads(json.dumps(rep.to_dict()))["dimension"] == rep.dimension


def test_types_validate():
    with pytest.raises(ValueError):
        FiniteDistribution(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        ScalarFunctionClass(np.zeros(3))
    assert isinstance(de_dimension([E1], [D1], 0.1), EluderCertificate)
