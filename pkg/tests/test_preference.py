import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsrlhf.preference import (LOG_FLOOR, InvalidLinkError, LinkFunction, derivative_bounds,
                               link_eval, preference_prob, sample_preference)

SIGMOID = LinkFunction()
LINKS = [SIGMOID, LinkFunction("scaled_linear", 3.0), LinkFunction("scaled_linear", 7.5)]


def sigmoid_ref(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestEval:
    def test_sigmoid_values(self):
        assert link_eval(SIGMOID, 0.0) == 0.5
        assert link_eval(SIGMOID, math.log(3)) == pytest.approx(0.75, abs=1e-15)

    def test_scaled_linear(self):
        assert link_eval(LinkFunction("scaled_linear", 4), 2.0) == 0.75
        assert link_eval(LinkFunction("scaled_linear", 4), 9.0) == 1.0
        assert link_eval(LinkFunction("scaled_linear", 4), -9.0) == 0.0

    def test_no_overflow_for_large_inputs(self):
        assert link_eval(SIGMOID, 1000.0) == 1.0
        assert link_eval(SIGMOID, -1000.0) == 0.0
        assert SIGMOID.log_prob(-1e6) == LOG_FLOOR

    @pytest.mark.parametrize("link", LINKS)
    def test_monotone_and_skew_symmetric(self, link):
        H = 3
        grid = np.linspace(-H, H, 1000)
        vals = link(grid)
        assert np.all(np.diff(vals) >= 0)
        assert np.max(np.abs(vals + link(-grid) - 1.0)) <= 1e-12

    @given(st.floats(-30, 30))
    def test_log_prob_matches_log_of_link(self, x):
        assert SIGMOID.log_prob(x) == pytest.approx(math.log(sigmoid_ref(x)), abs=1e-12)

    def test_invalid_links(self):
        with pytest.raises(InvalidLinkError):
            LinkFunction("probit")
        with pytest.raises(InvalidLinkError):
            LinkFunction("scaled_linear")

    def test_config_round_trip(self):
        for link in LINKS:
            assert LinkFunction.from_dict(link.to_dict()) == link
        assert LinkFunction.from_dict({"kind": "scaled_linear", "range": 2}).range == 2.0


class TestDerivativeBounds:
    def test_small_horizon_limit(self):
        b = derivative_bounds(SIGMOID, 1e-8)
        assert b.kappa == pytest.approx(4.0, rel=1e-12) and b.kappa_bar == 4.0

    def test_sigmoid_unit_horizon(self):
        s1 = sigmoid_ref(1.0)
        assert s1 == pytest.approx(0.73106, abs=1e-5)
        b = derivative_bounds(SIGMOID, 1)
        assert b.kappa == pytest.approx(1 / (s1 * (1 - s1)), rel=1e-12)
        assert b.kappa == pytest.approx(5.0861, abs=1e-4)
        assert b.kappa_bar == 4.0

    @pytest.mark.parametrize("H", [1, 2, 5])
    def test_scaled_linear_at_twice_horizon(self, H):
        b = derivative_bounds(LinkFunction("scaled_linear", 2 * H), H)
        assert b.kappa == b.kappa_bar == 4 * H

    def test_flat_region_rejected(self):
        with pytest.raises(InvalidLinkError):
            derivative_bounds(LinkFunction("scaled_linear", 2.0), 3)

    @pytest.mark.parametrize("link", LINKS)
    @pytest.mark.parametrize("H", [1, 3])
    def test_finite_differences_inside_bounds(self, link, H):
        b = derivative_bounds(link, H)
        step = 1e-6
        grid = np.linspace(-H + step, H - step, 1000)
        fd = (link(grid + step) - link(grid - step)) / (2 * step)
        assert np.all(fd >= 1 / b.kappa - 1e-6)
        assert np.all(fd <= 1 / b.kappa_bar + 1e-6)


class TestPreferenceOracle:
    def test_probabilities(self):
        assert preference_prob(SIGMOID, 1.2, 1.2) == 0.5
        assert preference_prob(SIGMOID, 1 + math.log(3), 1.0) == pytest.approx(0.75, abs=1e-12)

    @given(st.floats(0, 5), st.floats(0, 5))
    def test_swapping_pair_complements(self, r0, r1):
        for link in LINKS:
            assert preference_prob(link, r0, r1) + preference_prob(link, r1, r0) == pytest.approx(1.0, abs=1e-12)

    def test_saturated_link_always_prefers_first(self):
        rng = np.random.default_rng(0)
        link = LinkFunction("scaled_linear", 1.0)
        assert all(sample_preference(link, 3.0, 0.0, rng) == 0 for _ in range(1000))

    @pytest.mark.parametrize("gap,target,band", [(0.0, 0.5, 0.02), (math.log(3), 0.75, 0.018)])
    def test_empirical_rate(self, gap, target, band):
        rng = np.random.default_rng(1234)
        zeros = sum(sample_preference(SIGMOID, gap, 0.0, rng) == 0 for _ in range(10_000))
        assert abs(zeros / 10_000 - target) <= band

    def test_deterministic_given_seed(self):
        draws = [[sample_preference(SIGMOID, 0.3, 0.1, np.random.default_rng(4)) for _ in range(20)]
                 for _ in range(2)]
        assert draws[0] == draws[1]
