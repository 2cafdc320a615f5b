"""Posterior-sampling loop for online preference feedback, regret and diagnostics."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import instances
from .eluder import be_dimension
from .hypotheses import (HypothesisClass, bellman_residuals, bracketing_bound,
                         greedy_policy, implied_reward_tables, mdp_from_q)
from .mdp import (ConfigurationError, EpisodicMdp, TabularPolicy, Trajectory,
                  exact_policy_value, occupancy, optimal_policy, sample_trajectory,
                  trajectory_reward)
from .posterior import (PosteriorWeights, PreferenceRecord, TransitionEstimate, beta,
                        log_likelihoods_from_tables, log_prior, mle,
                        normalize_log_weights, sample_hypothesis, update_transition_estimate)
from .preference import LinkFunction, derivative_bounds, sample_preference

TRANSITION_MODES = ("true_P", "estimated_P")


@dataclass
class RunConfig:
    rounds: int
    delta: float = 0.1
    transition_mode: str = "true_P"
    seed: int = 0
    link: LinkFunction = field(default_factory=LinkFunction)
    mdp: object = None                # EpisodicMdp or a generator spec dict
    hypothesis_class: object = None   # HypothesisClass or a generator spec dict

    def __post_init__(self):
        if isinstance(self.link, dict):
            self.link = LinkFunction.from_dict(self.link)
        if int(self.rounds) < 1:
            raise ConfigurationError("rounds must be >= 1")
        if not 0 < float(self.delta) <= 1:
            raise ConfigurationError("delta must lie in (0, 1]")
        if self.transition_mode not in TRANSITION_MODES:
            raise ConfigurationError(f"transition_mode must be one of {TRANSITION_MODES}")

    def resolve(self) -> tuple[EpisodicMdp, HypothesisClass]:
        if self.mdp is None or self.hypothesis_class is None:
            raise ConfigurationError("config needs both an mdp and a hypothesis_class")
        mdp = instances.resolve_mdp(self.mdp, self.seed)
        hclass = instances.resolve_class(self.hypothesis_class, mdp, self.seed)
        if hclass.shape != mdp.shape:
            raise ConfigurationError(f"class shape {hclass.shape} does not match MDP {mdp.shape}")
        return mdp, hclass


def policy_to_json(policy: TabularPolicy):
    if policy.is_deterministic:
        return {"actions": policy.actions().tolist()}
    return {"probs": policy.probs.tolist()}


def policy_from_json(d, num_actions: int) -> TabularPolicy:
    if "actions" in d:
        return TabularPolicy.deterministic(d["actions"], num_actions)
    return TabularPolicy(np.array(d["probs"], dtype=float))


@dataclass
class RoundRecord:
    t: int
    member: int
    pi0: TabularPolicy
    pi1: TabularPolicy
    tau0: Trajectory
    tau1: Trajectory
    o: int
    posterior_sha256: str
    regret: float
    wall_time: float = 0.0   # in memory only; never persisted

    @property
    def preference(self) -> PreferenceRecord:
        return PreferenceRecord(self.tau0, self.tau1, self.o)

    def to_json(self) -> str:
        return json.dumps({
            "t": self.t, "member": self.member,
            "pi0": policy_to_json(self.pi0), "pi1": policy_to_json(self.pi1),
            "tau0": self.tau0.to_list(), "tau1": self.tau1.to_list(), "o": self.o,
            "posterior_sha256": self.posterior_sha256, "regret": self.regret,
        })

    @classmethod
    def from_json(cls, line: str, num_actions: int) -> "RoundRecord":
        d = json.loads(line)
        return cls(d["t"], d["member"], policy_from_json(d["pi0"], num_actions),
                   policy_from_json(d["pi1"], num_actions), Trajectory.from_list(d["tau0"]),
                   Trajectory.from_list(d["tau1"]), d["o"], d["posterior_sha256"], d["regret"])


@dataclass
class RunLog:
    rounds: list[RoundRecord]
    v_star: float
    posteriors: list[np.ndarray] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.rounds)

    @property
    def members(self) -> np.ndarray:
        return np.array([r.member for r in self.rounds], dtype=int)

    @property
    def increments(self) -> np.ndarray:
        return np.array([r.regret for r in self.rounds])

    @property
    def dataset(self) -> list[PreferenceRecord]:
        return [r.preference for r in self.rounds]

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"v_star": self.v_star}) + "\n")
            for r in self.rounds:
                fh.write(r.to_json() + "\n")

    @classmethod
    def read(cls, path, num_actions: int) -> "RunLog":
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip()]
        head = json.loads(lines[0])
        return cls([RoundRecord.from_json(ln, num_actions) for ln in lines[1:]], head["v_star"])


def run_ts(config: RunConfig, mdp: EpisodicMdp | None = None,
           hclass: HypothesisClass | None = None, keep_posteriors: bool = True) -> RunLog:
    """Run the posterior-sampling loop for ``config.rounds`` rounds.

    Preferences are drawn from the environment's true trajectory rewards; the
    learner scores hypotheses through their implied rewards, computed with the
    true kernels or with the running count estimate depending on
    ``config.transition_mode``.
    """
    if mdp is None or hclass is None:
        mdp, hclass = config.resolve()
    if hclass.shape != mdp.shape:
        raise ConfigurationError(f"class shape {hclass.shape} does not match MDP {mdp.shape}")
    H, S, A = mdp.shape
    s1 = mdp.initial_state
    link = config.link
    rng_alg = instances.stream(config.seed, "algorithm")
    rng_env = instances.stream(config.seed, "environment")
    rng_pref = instances.stream(config.seed, "preference")

    v_star = optimal_policy(mdp)[1].v1(s1)
    greedy = [greedy_policy(f) for f in hclass.tables]
    values = [exact_policy_value(mdp, p).v1(s1) for p in greedy]
    prev_policy = TabularPolicy.uniform(H, S, A)
    prev_value = exact_policy_value(mdp, prev_policy).v1(s1)

    N = len(hclass)
    lp = log_prior(hclass)
    estimated = config.transition_mode == "estimated_P"
    if estimated:
        est = TransitionEstimate.empty(H, S, A)
        feats = np.zeros((config.rounds, H * S * A))
    else:
        g = implied_reward_tables(hclass.tables, mdp.transitions).reshape(N, -1)
        loglik = np.zeros(N)

    log = RunLog([], v_star)
    for t in range(1, config.rounds + 1):
        start = time.perf_counter()
        if estimated:
            g_hat = implied_reward_tables(hclass.tables, est.p_hat)
            weights = normalize_log_weights(lp, log_likelihoods_from_tables(g_hat, feats[:t - 1], link))
        else:
            weights = normalize_log_weights(lp, loglik)
        i = sample_hypothesis(weights, rng_alg)
        pi0, pi1 = greedy[i], prev_policy
        tau0 = sample_trajectory(mdp, pi0, rng_env)
        tau1 = sample_trajectory(mdp, pi1, rng_env)
        o = sample_preference(link, trajectory_reward(mdp, tau0), trajectory_reward(mdp, tau1), rng_pref)
        rec = PreferenceRecord(tau0, tau1, o)
        w = rec.signed_counts(mdp.shape).ravel()
        if estimated:
            feats[t - 1] = w
            est = update_transition_estimate(update_transition_estimate(est, tau0), tau1)
        else:
            loglik = loglik + link.log_prob(g @ w)
        log.rounds.append(RoundRecord(
            t, i, pi0, pi1, tau0, tau1, o, weights.sha256(),
            2.0 * v_star - values[i] - prev_value, time.perf_counter() - start))
        if keep_posteriors:
            log.posteriors.append(weights.weights)
        prev_policy, prev_value = pi0, values[i]
    return log


def _policy_values(mdp: EpisodicMdp, policies) -> list[float]:
    cache = {}
    out = []
    for p in policies:
        key = p.probs.tobytes()
        if key not in cache:
            cache[key] = exact_policy_value(mdp, p).v1(mdp.initial_state)
        out.append(cache[key])
    return out


def cumulative_regret(log: RunLog, mdp: EpisodicMdp) -> np.ndarray:
    """Prefix sums of ``2 V* - V^{pi0} - V^{pi1}``, all values computed exactly."""
    v_star = optimal_policy(mdp)[1].v1(mdp.initial_state)
    v0 = _policy_values(mdp, [r.pi0 for r in log.rounds])
    v1 = _policy_values(mdp, [r.pi1 for r in log.rounds])
    return np.cumsum(2.0 * v_star - np.array(v0) - np.array(v1))


@dataclass
class BayesRegretResult:
    mean: np.ndarray
    stderr: np.ndarray
    series: np.ndarray        # (num_draws, T)
    true_members: np.ndarray  # index of the drawn f* per draw


def bayes_draw(config: RunConfig, template: EpisodicMdp, hclass: HypothesisClass, d: int):
    """Draw ``d``: sample f* from the prior, build its environment, run TS on it.

    Returns ``(member index, environment, run log)``.
    """
    rng = instances.stream(config.seed, "prior", d)
    k = int(rng.choice(len(hclass), p=hclass.prior))
    env = mdp_from_q(hclass.tables[k], template)
    run_cfg = replace(config, seed=int(np.random.SeedSequence([config.seed, d]).generate_state(1)[0]))
    return k, env, run_ts(run_cfg, env, hclass, keep_posteriors=False)


def _bayes_draw(args):
    k, env, log = bayes_draw(*args)
    return k, cumulative_regret(log, env)


def bayes_regret(template: EpisodicMdp, hclass: HypothesisClass, config: RunConfig,
                 num_draws: int, workers: int = 1) -> BayesRegretResult:
    """Average regret over draws of the true hypothesis from the class prior.

    Each member must be the optimal Q function of ``template``'s kernels under
    some reward in [0, 1]; the environment for a draw uses exactly that reward.
    """
    jobs = [(config, template, hclass, d) for d in range(num_draws)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_bayes_draw, jobs))
    else:
        results = [_bayes_draw(j) for j in jobs]
    series = np.stack([r[1] for r in results])
    se = series.std(axis=0, ddof=1) / math.sqrt(num_draws) if num_draws > 1 else np.zeros(series.shape[1])
    return BayesRegretResult(series.mean(axis=0), se, series, np.array([r[0] for r in results]))


def bellman_error(f, policy: TabularPolicy, h: int, mdp: EpisodicMdp) -> float:
    """Expected Bellman residual of ``f`` at 1-based step ``h`` under ``policy``."""
    res = bellman_residuals(f, mdp)[h - 1]
    return float(np.sum(occupancy(mdp, policy)[h - 1] * res))


def loss_decomposition_check(f, mdp: EpisodicMdp) -> float:
    """|max_a f_1(s1, a) - V^{pi_f}(s1) - sum_h E(f, pi_f, h)|; zero up to roundoff."""
    q = f.tables if hasattr(f, "tables") else np.asarray(f, dtype=float)
    pi = greedy_policy(q)
    s1 = mdp.initial_state
    lhs = q[0, s1].max() - exact_policy_value(mdp, pi).v1(s1)
    res = bellman_residuals(q, mdp)
    rhs = float(np.sum(occupancy(mdp, pi) * res))
    return abs(lhs - rhs)


def log_grid(T: int) -> list[int]:
    grid, t = [], 1
    while t < T:
        grid.append(t)
        t *= 2
    return grid + [T]


@dataclass
class GridPoint:
    t: int
    member: int
    beta: list[float]           # beta_h(t) for h = 1..H+1 (the last one is the zero step)
    sq_dev_sampled: list[float]  # sum_{i<t} E_{pi0^i}[(f^t_h - f*_h)^2]
    sq_dev_mle: list[float]      # same with the MLE on D^{t-1} in place of f^t
    sq_bellman: list[float]      # sum_{i<t} E_{pi0^i}[(f^t_h - T_h f^t_{h+1})^2]
    sq_bellman_data: list[float]  # same summed over the visited pairs of both trajectories
    bellman_bound_holds: list[bool]
    coverage_holds: list[bool]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DiagnosticsReport:
    points: list[GridPoint]

    @property
    def final(self) -> GridPoint:
        return self.points[-1]

    def to_dict(self) -> dict:
        return {"points": [p.to_dict() for p in self.points]}


def confidence_diagnostics(log: RunLog, hclass: HypothesisClass, mdp: EpisodicMdp,
                           delta: float, link: LinkFunction | None = None,
                           f_star=None, grid=None, transitions=None) -> DiagnosticsReport:
    """Squared-deviation and squared-Bellman sums against the beta widths.

    ``f_star`` defaults to the simulator's Q*.  Sums run over rounds before t and
    are exact expectations under the greedy policies' occupancy measures.
    """
    link = link or LinkFunction()
    H, S, A = mdp.shape
    T = len(log)
    grid = log_grid(T) if grid is None else list(grid)
    if f_star is None:
        f_star = optimal_policy(mdp)[1].q
    transitions = mdp.transitions if transitions is None else transitions
    kb = derivative_bounds(link, H)
    n_brackets = bracketing_bound(hclass)

    occ_cache = {}
    occ = np.zeros((T + 1, H, S, A))
    visits = np.zeros((T + 1, H, S, A))
    for j, r in enumerate(log.rounds):
        key = r.pi0.probs.tobytes()
        if key not in occ_cache:
            occ_cache[key] = occupancy(mdp, r.pi0)
        occ[j + 1] = occ[j] + occ_cache[key]
        visits[j + 1] = visits[j]
        for tau in (r.tau0, r.tau1):
            for k, (s, a) in enumerate(tau.steps):
                visits[j + 1, k, s, a] += 1.0
    dataset = log.dataset

    points = []
    for t in grid:
        m = log.rounds[t - 1].member
        ft = hclass.tables[m]
        before = occ[t - 1]
        dev = ((ft - f_star) ** 2 * before).sum(axis=(1, 2))
        f_mle = hclass.tables[mle(hclass, dataset[:t - 1], link, transitions)]
        dev_mle = ((f_mle - f_star) ** 2 * before).sum(axis=(1, 2))
        res2 = bellman_residuals(ft, mdp) ** 2
        sq_b = (res2 * before).sum(axis=(1, 2))
        sq_data = (res2 * visits[t - 1]).sum(axis=(1, 2))
        b = [beta(t, kb.kappa, kb.kappa_bar, H, n_brackets, delta)] * H
        b.append(beta(t, kb.kappa, kb.kappa_bar, H, 1, delta))
        points.append(GridPoint(
            t, int(m), b, dev.tolist(), dev_mle.tolist(), sq_b.tolist(), sq_data.tolist(),
            [bool(sq_b[k] <= 6 * (b[k] + b[k + 1])) for k in range(H)],
            [bool(dev[k] <= b[k]) for k in range(H)]))
    return DiagnosticsReport(points)


@dataclass
class PigeonholeRow:
    h: int
    lhs: float
    rhs: float
    dimension: int
    holds: bool


def pigeonhole_check(log: RunLog, hclass: HypothesisClass, mdp: EpisodicMdp, delta: float,
                     link: LinkFunction | None = None, c: float = 10.0,
                     family: str = "delta", **caps) -> list[PigeonholeRow]:
    """Compare cumulative |Bellman error| with c*sqrt(d*beta*t) + min(t, d)*C + t*w.

    ``w = 1/sqrt(t)`` and ``d`` is the brute-force eluder dimension of the
    step's residual class at scale ``w``.  An empirical check with a chosen constant c.
    """
    link = link or LinkFunction()
    H = mdp.horizon
    t = len(log)
    omega = 1.0 / math.sqrt(t)
    kb = derivative_bounds(link, H)
    n = bracketing_bound(hclass)
    report = be_dimension(hclass, mdp, family, omega, **caps)
    residuals = np.stack([bellman_residuals(f, mdp) for f in hclass.tables])
    occ_cache = {}
    rows = []
    for h in range(1, H + 1):
        lhs = 0.0
        for r in log.rounds:
            key = (r.pi0.probs.tobytes())
            if key not in occ_cache:
                occ_cache[key] = occupancy(mdp, r.pi0)
            lhs += abs(float(np.sum(occ_cache[key][h - 1] * residuals[r.member, h - 1])))
        d = report.per_step[h - 1].dimension
        iota = beta(t, kb.kappa, kb.kappa_bar, H, n, delta) + \
            beta(t, kb.kappa, kb.kappa_bar, H, n if h < H else 1, delta)
        C = float(np.abs(residuals[:, h - 1]).max())
        rhs = c * math.sqrt(d * iota * t) + min(t, d) * C + t * omega
        rows.append(PigeonholeRow(h, lhs, rhs, d, lhs <= rhs))
    return rows
