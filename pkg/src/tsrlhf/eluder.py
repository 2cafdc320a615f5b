"""Brute-force distributional and Bellman eluder dimensions for tiny instances.

A candidate ``mu`` is eps'-independent of predecessors ``nu_1..nu_n`` when some
function ``f`` has ``sqrt(sum_i E_{nu_i}[f]^2) <= eps'`` and ``|E_mu[f]| > eps'``.
For a fixed prefix and witness the set of admissible eps' is the half-open
interval ``[sqrt(S_f), |E_mu f|)``, so the search carries the set of eps' >= eps
under which the whole sequence stays independent as a union of such intervals.
The set is empty exactly when no single eps' works for every position.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .hypotheses import HypothesisClass, bellman_residuals, greedy_policy
from .mdp import EpisodicMdp, occupancy

DEFAULT_MAX_DISTRIBUTIONS = 8
DEFAULT_MAX_FUNCTIONS = 64


class InstanceTooLargeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    probs: np.ndarray
    support: tuple | None = None

    def __post_init__(self):
        p = np.array(self.probs, dtype=float, copy=True)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("distribution must be a probability vector")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def point_mass(cls, n: int, i: int) -> "FiniteDistribution":
        p = np.zeros(n)
        p[i] = 1.0
        return cls(p)


@dataclass(frozen=True, eq=False)
class ScalarFunctionClass:
    members: np.ndarray  # (num_functions, ground_set_size)

    def __post_init__(self):
        m = np.array(self.members, dtype=float, copy=True)
        if m.ndim != 2:
            raise ValueError("members must be a 2-D array (functions x ground set)")
        m.setflags(write=False)
        object.__setattr__(self, "members", m)

    def __len__(self):
        return self.members.shape[0]


@dataclass(frozen=True)
class EluderCertificate:
    dimension: int
    eps: float
    eps_prime: float | None
    sequence: tuple[int, ...]
    witnesses: tuple[int, ...]
    distributions: tuple[FiniteDistribution, ...] = field(repr=False, default=())
    metadata: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "eps": self.eps,
            "eps_prime": self.eps_prime,
            "sequence": list(self.sequence),
            "witnesses": list(self.witnesses),
            "distributions": [d.probs.tolist() for d in self.distributions],
            "metadata": self.metadata,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def expectation(p: np.ndarray, f: np.ndarray) -> float:
    # one fixed code path so search and verification agree to the last bit
    return float(np.dot(p, f))


def _as_probs(d) -> np.ndarray:
    return d.probs if isinstance(d, FiniteDistribution) else np.asarray(d, dtype=float)


def _members(fclass) -> np.ndarray:
    return fclass.members if isinstance(fclass, ScalarFunctionClass) else np.asarray(fclass, dtype=float)


def is_independent(fclass, predecessors: Sequence, mu, eps: float) -> tuple[bool, int | None]:
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    F = _members(fclass)
    mu = _as_probs(mu)
    preds = [_as_probs(p) for p in predecessors]
    for i, f in enumerate(F):
        sq = 0.0
        for nu in preds:
            sq += expectation(nu, f) ** 2
        if math.sqrt(sq) <= eps and abs(expectation(mu, f)) > eps:
            return True, i
    return False, None


# interval-union helpers; each interval is half-open [lo, hi)

def _union(intervals):
    out = []
    for lo, hi in sorted(i for i in intervals if i[0] < i[1]):
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def _intersect(a, b):
    out, i, j = [], 0, 0
    while i < len(a) and j < len(b):
        lo, hi = max(a[i][0], b[j][0]), min(a[i][1], b[j][1])
        if lo < hi:
            out.append((lo, hi))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def _search(E: np.ndarray, eps: float, allow_repeats: bool):
    """Depth-first search for the longest admissible sequence.

    ``E[j, i]`` is the expectation of function i under distribution j. Children
    are tried in index order and only strictly longer sequences replace the
    incumbent, so the result is the lexicographically smallest longest sequence.
    """
    n_dist, n_f = E.shape
    absE = np.abs(E)
    best = {"seq": (), "feasible": [(eps, math.inf)]}

    def dfs(seq, sq, feasible):
        if len(seq) > len(best["seq"]):
            best["seq"], best["feasible"] = tuple(seq), feasible
        if not allow_repeats and len(seq) + (n_dist - len(seq)) <= len(best["seq"]):
            return
        roots = np.sqrt(sq)
        for j in range(n_dist):
            if not allow_repeats and j in seq:
                continue
            cand = _union(zip(roots, absE[j]))
            nxt = _intersect(feasible, cand)
            if nxt:
                seq.append(j)
                dfs(seq, sq + E[j] ** 2, nxt)
                seq.pop()

    dfs([], np.zeros(n_f), [(eps, math.inf)])
    return best["seq"], best["feasible"]


def de_dimension(fclass, dist_family: Sequence, eps: float,
                 max_distributions: int = DEFAULT_MAX_DISTRIBUTIONS,
                 max_functions: int = DEFAULT_MAX_FUNCTIONS) -> EluderCertificate:
    """Distributional eluder dimension by exhaustive search, with a certificate."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    F = _members(fclass)
    dists = tuple(d if isinstance(d, FiniteDistribution) else FiniteDistribution(d)
                  for d in dist_family)
    if len(dists) > max_distributions or F.shape[0] > max_functions:
        raise InstanceTooLargeError(
            f"{len(dists)} distributions / {F.shape[0]} functions exceed caps "
            f"({max_distributions} / {max_functions})")
    E = np.array([[expectation(d.probs, f) for f in F] for d in dists]).reshape(len(dists), F.shape[0])
    seq, feasible = _search(E, eps, allow_repeats=True)
    seq_norep, _ = _search(E, eps, allow_repeats=False)
    eps_prime = feasible[0][0] if seq else None
    witnesses = []
    if seq:
        for k, j in enumerate(seq):
            ok, w = is_independent(F, [dists[i] for i in seq[:k]], dists[j], eps_prime)
            if not ok:  # pragma: no cover - would mean the search and check disagree
                raise AssertionError("certificate failed re-verification")
            witnesses.append(w)
    return EluderCertificate(
        dimension=len(seq), eps=float(eps), eps_prime=eps_prime, sequence=seq,
        witnesses=tuple(witnesses), distributions=dists,
        metadata={"with_repetition": len(seq), "without_repetition": len(seq_norep)})


def verify_certificate(fclass, cert: EluderCertificate) -> bool:
    if cert.dimension == 0:
        return True
    if cert.eps_prime is None or cert.eps_prime < cert.eps:
        return False
    seq = [cert.distributions[j] for j in cert.sequence]
    return all(is_independent(fclass, seq[:k], seq[k], cert.eps_prime)[0] for k in range(len(seq)))


def dedupe_rows(x: np.ndarray) -> np.ndarray:
    seen, keep = set(), []
    for i, row in enumerate(x):
        key = row.tobytes()
        if key not in seen:
            seen.add(key)
            keep.append(i)
    return x[keep]


def residual_classes(hclass: HypothesisClass, mdp: EpisodicMdp) -> list[ScalarFunctionClass]:
    """Bellman residual classes ``F_h - T_h F_{h+1}`` flattened over (s, a), one per step."""
    res = np.stack([bellman_residuals(f, mdp) for f in hclass.tables])   # (N, H, S, A)
    N, H = res.shape[:2]
    return [ScalarFunctionClass(dedupe_rows(res[:, k].reshape(N, -1))) for k in range(H)]


def distribution_family(hclass: HypothesisClass, mdp: EpisodicMdp, kind: str, h: int) -> list:
    """Step-h family: point masses (``delta``) or greedy-policy occupancies (``greedy``)."""
    n = mdp.num_states * mdp.num_actions
    if kind == "delta":
        return [FiniteDistribution.point_mass(n, i) for i in range(n)]
    if kind == "greedy":
        occ = np.stack([occupancy(mdp, greedy_policy(f))[h - 1].ravel() for f in hclass.tables])
        return [FiniteDistribution(p) for p in dedupe_rows(occ)]
    raise ValueError(f"unknown distribution family {kind!r}")


@dataclass(frozen=True)
class BellmanEluderReport:
    per_step: tuple[EluderCertificate, ...]

    @property
    def dimension(self) -> int:
        return max(c.dimension for c in self.per_step)

    def to_dict(self) -> dict:
        return {"dimension": self.dimension,
                "per_step": [c.to_dict() for c in self.per_step]}


def be_dimension(hclass: HypothesisClass, mdp: EpisodicMdp, family_kind: str, eps: float,
                 **caps) -> BellmanEluderReport:
    classes = residual_classes(hclass, mdp)
    certs = []
    for h, fc in enumerate(classes, start=1):
        fam = distribution_family(hclass, mdp, family_kind, h)
        certs.append(de_dimension(fc, fam, eps, **caps))
    return BellmanEluderReport(tuple(certs))
