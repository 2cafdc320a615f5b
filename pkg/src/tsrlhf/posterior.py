"""Exact posterior over a finite Q class, MLE, transition estimator and beta width."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .hypotheses import HypothesisClass, implied_reward_tables, visit_counts
from .mdp import EpisodicMdp, Trajectory
from .preference import LinkFunction


class DegeneratePosteriorError(RuntimeError):
    pass


@dataclass(frozen=True)
class PreferenceRecord:
    tau0: Trajectory
    tau1: Trajectory
    o: int

    def __post_init__(self):
        if self.o not in (0, 1):
            raise ValueError("feedback must be 0 or 1")

    def signed_counts(self, shape) -> np.ndarray:
        """Visit-count difference oriented so that ``<g, w>`` is the winning margin."""
        diff = visit_counts(self.tau1, shape) - visit_counts(self.tau0, shape)
        return diff if self.o == 1 else -diff

    def to_dict(self, t: int | None = None) -> dict:
        d = {"tau0": self.tau0.to_list(), "tau1": self.tau1.to_list(), "o": self.o}
        return d if t is None else {"t": t, **d}

    @classmethod
    def from_dict(cls, d: dict) -> "PreferenceRecord":
        return cls(Trajectory.from_list(d["tau0"]), Trajectory.from_list(d["tau1"]), int(d["o"]))


def write_dataset(path, dataset: Sequence[PreferenceRecord]) -> None:
    with open(path, "w") as fh:
        for t, rec in enumerate(dataset, start=1):
            fh.write(json.dumps(rec.to_dict(t)) + "\n")


def read_dataset(path) -> list[PreferenceRecord]:
    with open(path) as fh:
        return [PreferenceRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


@dataclass(frozen=True, eq=False)
class PosteriorWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("posterior weights must be a probability vector")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def sha256(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.weights, dtype="<f8").tobytes()).hexdigest()

    def __len__(self):
        return len(self.weights)


def dataset_features(dataset: Sequence[PreferenceRecord], shape) -> np.ndarray:
    """Stacked signed visit counts, shape ``(len(dataset), H*S*A)``."""
    n = int(np.prod(shape))
    if not dataset:
        return np.zeros((0, n))
    return np.stack([rec.signed_counts(shape).ravel() for rec in dataset])


def log_likelihoods_from_tables(g: np.ndarray, features: np.ndarray,
                                link: LinkFunction) -> np.ndarray:
    """Log-likelihood per hypothesis given implied-reward tables ``g`` of shape (N, H, S, A)."""
    if features.shape[0] == 0:
        return np.zeros(g.shape[0])
    margins = g.reshape(g.shape[0], -1) @ features.T
    return link.log_prob(margins).sum(axis=1)


def log_likelihood(dataset: Sequence[PreferenceRecord], f, link: LinkFunction,
                   transitions) -> float:
    g = implied_reward_tables(f, transitions)
    feats = dataset_features(dataset, g.shape)
    return float(log_likelihoods_from_tables(g[None], feats, link)[0])


def class_log_likelihoods(hclass: HypothesisClass, dataset, link, transitions) -> np.ndarray:
    g = implied_reward_tables(hclass.tables, transitions)
    return log_likelihoods_from_tables(g, dataset_features(dataset, hclass.shape), link)


def normalize_log_weights(log_prior: np.ndarray, loglik: np.ndarray) -> PosteriorWeights:
    logw = log_prior + loglik
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegeneratePosteriorError("every member has zero posterior mass")
    w = np.exp(logw - top)
    total = w.sum()
    if not total > 0:
        raise DegeneratePosteriorError("posterior underflowed")
    return PosteriorWeights(w / total)


def log_prior(hclass: HypothesisClass) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(hclass.prior)


def posterior(hclass: HypothesisClass, dataset, link: LinkFunction,
              transitions) -> PosteriorWeights:
    return normalize_log_weights(log_prior(hclass),
                                 class_log_likelihoods(hclass, dataset, link, transitions))


def sample_hypothesis(weights: PosteriorWeights, rng: np.random.Generator) -> int:
    w = weights.weights
    cdf = np.cumsum(w)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, int(np.flatnonzero(w > 0)[-1]))


def mle(hclass: HypothesisClass, dataset, link, transitions) -> int:
    # np.argmax returns the first maximizer, i.e. ties go to the lowest index
    return int(np.argmax(class_log_likelihoods(hclass, dataset, link, transitions)))


@dataclass(frozen=True, eq=False)
class TransitionEstimate:
    counts: np.ndarray  # (H-1, S, A, S) integer

    @classmethod
    def empty(cls, H: int, S: int, A: int) -> "TransitionEstimate":
        return cls(np.zeros((H - 1, S, A, S), dtype=np.int64))

    @property
    def p_hat(self) -> np.ndarray:
        totals = self.counts.sum(axis=-1, keepdims=True)
        return self.counts / np.maximum(totals, 1)

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=-1)


def update_transition_estimate(est: TransitionEstimate, tau: Trajectory) -> TransitionEstimate:
    counts = np.array(est.counts, copy=True)
    for k in range(len(tau.steps) - 1):
        s, a = tau.steps[k]
        counts[k, s, a, tau.steps[k + 1][0]] += 1
    return TransitionEstimate(counts)


def transition_error(est: TransitionEstimate, mdp: EpisodicMdp, visited_only: bool = True) -> float:
    """Sup-norm of ``P_hat - P`` over rows, optionally restricted to visited (h, s, a)."""
    err = np.abs(est.p_hat - mdp.transitions).max(axis=-1)
    if visited_only:
        err = err[est.row_totals > 0]
    return float(err.max()) if err.size else 0.0


def beta(t: int, kappa: float, kappa_bar: float, H: int, bracket_N: int, delta: float) -> float:
    """Confidence width ``98 kappa^2 log(2 H N / delta)``.

    For finite classes the bracketing number is the class size at every scale, so
    ``t`` and ``kappa_bar`` (which only set the bracket scale) do not enter.
    """
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    if t < 1 or bracket_N < 1 or H < 1:
        raise ValueError("t, H and bracket_N must be >= 1")
    return 98.0 * kappa ** 2 * math.log(2.0 * H * bracket_N / delta)


def replay_posteriors(hclass: HypothesisClass, dataset: Iterable[PreferenceRecord],
                      link: LinkFunction, transitions) -> list[PosteriorWeights]:
    """Posterior before each record, built by record-by-record reweighting."""
    g = implied_reward_tables(hclass.tables, transitions).reshape(len(hclass), -1)
    lp = log_prior(hclass)
    ll = np.zeros(len(hclass))
    out = [normalize_log_weights(lp, ll)]
    for rec in dataset:
        ll = ll + link.log_prob(g @ rec.signed_counts(hclass.shape).ravel())
        out.append(normalize_log_weights(lp, ll))
    return out
