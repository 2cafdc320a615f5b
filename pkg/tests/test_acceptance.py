"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are printed at the end of the pytest run (see ``conftest.py``), and
also when this file is executed directly with ``python tests/test_acceptance.py``.
"""

import math
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_force_posterior, random_instance
from tsrlhf.eluder import FiniteDistribution, be_dimension, de_dimension
from tsrlhf.experiments import ExperimentSpec, run
from tsrlhf.hypotheses import HypothesisClass
from tsrlhf.instances import generate_class, random_mdp
from tsrlhf.mdp import EpisodicMdp, TabularPolicy, optimal_policy
from tsrlhf.posterior import TransitionEstimate, posterior, transition_error, update_transition_estimate
from tsrlhf.preference import LinkFunction, sample_preference
from tsrlhf.thompson import (RunConfig, bellman_error, confidence_diagnostics, loss_decomposition_check,
                             run_ts)
from tsrlhf.variational import GaussianQPosterior, kl_divergence, smooth

from test_variational import gradient_rel_error, random_data, random_q

RESULTS: dict[int, str] = {}
SIGMOID = LinkFunction()
LEARNING_MDP = {"kind": "random", "num_states": 5, "num_actions": 3, "horizon": 3}
LEARNING_CLASS = {"kind": "perturbed_qstar", "count": 31, "noise": 0.5}
SMALL_MDP = {"kind": "random", "num_states": 3, "num_actions": 2, "horizon": 2}
SMALL_CLASS = {"kind": "perturbed_qstar", "count": 8, "noise": 0.5}


def report(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])
    assert ok, RESULTS[n]


def _parallel(fn, items):
    with ProcessPoolExecutor() as ex:
        return list(ex.map(fn, items))


def test_01_posterior_oracle():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        mdp, hc, data = random_instance(1000 + seed, max_members=50, max_records=20)
        got = posterior(hc, data, SIGMOID, mdp.transitions).weights
        ref = brute_force_posterior(hc.tables, hc.prior, mdp.transitions, data, SIGMOID)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    elapsed = time.perf_counter() - start
    report(1, worst <= 1e-10 and elapsed < 5.0, f"max |w - w_ref| = {worst:.2e}, {elapsed:.2f}s")


def test_02_bellman_identities():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_decomp = 0.0
    worst_star = 0.0
    for _ in range(100):
        S, A, H = (int(x) for x in rng.integers(1, 5, size=3))
        mdp = random_mdp(rng, S, A, H)
        f = rng.uniform(0, H, size=(H, S, A))
        worst_decomp = max(worst_decomp, loss_decomposition_check(f, mdp))
        pi, vt = optimal_policy(mdp)
        for h in range(1, H + 1):
            worst_star = max(worst_star, abs(bellman_error(vt.q, pi, h, mdp)))
            uniform = np.full((H, S, A), 1.0 / A)
            worst_star = max(worst_star, abs(bellman_error(vt.q, TabularPolicy(uniform), h, mdp)))
    elapsed = time.perf_counter() - start
    ok = worst_decomp <= 1e-8 and worst_star <= 1e-10 and elapsed < 5.0
    report(2, ok, f"decomposition {worst_decomp:.2e}, E(Q*) {worst_star:.2e}, {elapsed:.2f}s")


def _learning_run(seed):
    cfg = RunConfig(rounds=3000, seed=seed, link=SIGMOID, mdp=LEARNING_MDP, hypothesis_class=LEARNING_CLASS)
    start = time.perf_counter()
    log = run_ts(cfg, keep_posteriors=False)
    return log.increments, time.perf_counter() - start


@pytest.fixture(scope="module")
def learning_runs():
    return _parallel(_learning_run, range(20))


@pytest.mark.slow
def test_03_regret_vanishes(learning_runs):
    hits = 0
    worst_time = 0.0
    ratios = []
    for inc, elapsed in learning_runs[:10]:
        sm = smooth(inc, 20)
        first, last = sm[:100].mean(), sm[-100:].mean()
        ratios.append(last / first if first > 0 else 0.0)
        hits += last <= 0.25 * first
        worst_time = max(worst_time, elapsed)
    report(3, hits >= 8 and worst_time < 60.0,
           f"{hits}/10 seeds with last-100/first-100 <= 0.25 (max ratio {max(ratios):.3f}), "
           f"slowest seed {worst_time:.1f}s")


@pytest.mark.slow
def test_04_sqrt_shape(learning_runs):
    cum = np.mean([np.cumsum(inc) for inc, _ in learning_runs], axis=0)
    T = len(cum)
    ratio = cum[-1] / cum[T // 4 - 1]
    report(4, ratio <= 2.6, f"Regret(T)/Regret(T/4) = {ratio:.3f} over 20 seeds")


def _small_diagnostics(seed):
    cfg = RunConfig(rounds=200, delta=0.1, seed=seed, link=SIGMOID, mdp=SMALL_MDP, hypothesis_class=SMALL_CLASS)
    mdp, hc = cfg.resolve()
    log = run_ts(cfg, mdp, hc, keep_posteriors=False)
    final = confidence_diagnostics(log, hc, mdp, cfg.delta, SIGMOID, grid=[200]).final
    return all(final.coverage_holds), all(final.bellman_bound_holds), final


@pytest.fixture(scope="module")
def small_diagnostics():
    return _parallel(_small_diagnostics, range(200))


@pytest.mark.slow
def test_05_coverage(small_diagnostics):
    frac = np.mean([c for c, _, _ in small_diagnostics])
    mle_frac = np.mean([all(d <= b for d, b in zip(p.sq_dev_mle, p.beta)) for _, _, p in small_diagnostics])
    report(5, frac >= 0.85, f"coverage {frac:.3f} over 200 seeds (MLE-centered variant {mle_frac:.3f})")


@pytest.mark.slow
def test_06_bellman_bound(small_diagnostics):
    frac = np.mean([b for _, b, _ in small_diagnostics])
    slack = max(max(s / (6 * (p.beta[k] + p.beta[k + 1])) for k, s in enumerate(p.sq_bellman))
                for _, _, p in small_diagnostics)
    report(6, frac >= 0.95, f"bound holds in {frac:.3f} of 200 seeds (largest lhs/rhs {slack:.3f})")


def test_07_eluder_oracle():
    start = time.perf_counter()
    pts3 = [FiniteDistribution.point_mass(3, i) for i in range(3)]
    zero = de_dimension([np.zeros(3)], pts3, 0.1).dimension
    e1, e2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    pair = de_dimension([e1, e2], [FiniteDistribution.point_mass(2, i) for i in range(2)], 0.5).dimension
    rng = np.random.default_rng(7)
    above = []
    for _ in range(10):
        F = rng.uniform(-1, 1, size=(6, 4))
        dists = [FiniteDistribution(p) for p in rng.dirichlet(np.ones(4), size=5)]
        top = max(abs(float(d.probs @ f)) for d in dists for f in F)
        above.append(de_dimension(F, dists, top + 1e-6).dimension)
    mdp = random_mdp(3, 3, 2, 3)
    singleton = HypothesisClass((optimal_policy(mdp)[1].q,))
    be = [be_dimension(singleton, mdp, fam, 0.01).dimension for fam in ("delta", "greedy")]
    elapsed = time.perf_counter() - start
    ok = zero == 0 and pair == 2 and not any(above) and be == [0, 0] and elapsed < 10.0
    report(7, ok, f"zero class {zero}, indicator pair {pair}, above max {max(above)}, "
                  f"be({{Q*}}) {be}, {elapsed:.2f}s")


def _chain_errors(seed):
    # two states, one action; state 0 moves with probability 0.3, state 1 with 0.6
    H = 4
    P = np.tile(np.array([[[0.7, 0.3]], [[0.6, 0.4]]]), (H - 1, 1, 1, 1))
    chain = EpisodicMdp(np.random.default_rng(seed).uniform(size=(H, 2, 1)), P)
    hc = generate_class(chain, 4, 0.5, seed)
    cfg = RunConfig(rounds=1600, seed=seed, transition_mode="estimated_P")
    log = run_ts(cfg, chain, hc, keep_posteriors=False)
    est, errs = TransitionEstimate.empty(H, 2, 1), {}
    for r in log.rounds:
        est = update_transition_estimate(update_transition_estimate(est, r.tau0), r.tau1)
        if r.t in (400, 1600):
            errs[r.t] = transition_error(est, chain)
    return errs[400], errs[1600]


@pytest.mark.slow
def test_08_transition_rate():
    errs = np.array(_parallel(_chain_errors, range(20)))
    med400, med1600 = np.median(errs[:, 0]), np.median(errs[:, 1])
    report(8, med1600 <= 0.6 * med400,
           f"median sup error {med400:.4f} at t=400, {med1600:.4f} at t=1600 (ratio {med1600 / med400:.3f})")


def test_09_elbo_gradient():
    start = time.perf_counter()
    rng = np.random.default_rng(9)
    worst = 0.0
    kl_self = []
    for k in range(20):
        S, A, H = (int(x) for x in rng.integers(1, 4, size=3))
        mdp = random_mdp(rng, S, A, H)
        stationary = bool(k % 4 == 3)
        q = random_q(rng, H, S, A, stationary)
        prior = GaussianQPosterior.isotropic(H, S, A, 0.0, float(H), stationary)
        z = rng.standard_normal((3,) + q.mean.shape)
        worst = max(worst, gradient_rel_error(q, random_data(mdp, rng, 4), prior, mdp, z))
        kl_self.append(kl_divergence(q, q))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and all(v == 0.0 for v in kl_self) and elapsed < 10.0
    report(9, ok, f"max relative gradient error {worst:.2e}, KL(q||q) max {max(kl_self)}, {elapsed:.2f}s")


def test_10_preference_calibration():
    rng = np.random.default_rng(10)
    equal = np.mean([sample_preference(SIGMOID, 0.4, 0.4, rng) == 0 for _ in range(10_000)])
    gap = np.mean([sample_preference(SIGMOID, math.log(3), 0.0, rng) == 0 for _ in range(10_000)])
    ok = abs(equal - 0.5) <= 0.02 and abs(gap - 0.75) <= 0.018
    report(10, ok, f"equal rewards {equal:.4f}, gap ln 3 {gap:.4f}")


DETERMINISM_SPECS = [
    {"mode": "single_run", "rounds": 200, "seed": 11, "mdp": LEARNING_MDP, "hypothesis_class": LEARNING_CLASS},
    {"mode": "single_run", "rounds": 100, "seed": 11, "transition_mode": "estimated_P", "mdp": SMALL_MDP,
     "hypothesis_class": SMALL_CLASS},
    {"mode": "bayes_regret", "rounds": 50, "num_seeds": 3, "seed": 11, "mdp": SMALL_MDP,
     "hypothesis_class": {"kind": "random_rewards", "count": 6}},
    {"mode": "eluder_report", "seed": 11, "mdp": SMALL_MDP, "hypothesis_class": SMALL_CLASS},
    {"mode": "elbo_run", "seed": 11, "mdp": SMALL_MDP, "elbo": {"iterations": 30}},
]


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_11_determinism():
    same = []
    with tempfile.TemporaryDirectory() as tmp:
        for i, d in enumerate(DETERMINISM_SPECS):
            spec = ExperimentSpec.from_dict(d)
            codes = [run(spec, Path(tmp) / f"{i}_{k}") for k in "ab"]
            a, b = _tree(Path(tmp) / f"{i}_a"), _tree(Path(tmp) / f"{i}_b")
            same.append(codes == [0, 0] and a == b)
        diag = ExperimentSpec.from_dict({"mode": "diagnostics", "run_dir": str(Path(tmp) / "0_a")})
        codes = [run(diag, Path(tmp) / f"diag_{k}") for k in "ab"]
        same.append(codes == [0, 0] and _tree(Path(tmp) / "diag_a") == _tree(Path(tmp) / "diag_b"))
    report(11, all(same), f"{sum(same)}/{len(same)} modes byte-identical across reruns")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
