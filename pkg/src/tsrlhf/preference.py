"""Link functions and the Bernoulli trajectory-preference oracle.

``o = 0`` means the first trajectory is preferred, drawn with probability
``link(r0 - r1)``.  Both shipped links satisfy ``link(x) + link(-x) = 1``, which
the likelihood in :mod:`tsrlhf.posterior` relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_FLOOR = math.log(1e-300)


class InvalidLinkError(ValueError):
    pass


@dataclass(frozen=True)
class DerivativeBounds:
    kappa: float      # link' >= 1 / kappa on [-H, H]
    kappa_bar: float  # link' <= 1 / kappa_bar on [-H, H]


@dataclass(frozen=True)
class LinkFunction:
    kind: str = "sigmoid"
    range: float | None = None

    def __post_init__(self):
        if self.kind not in ("sigmoid", "scaled_linear"):
            raise InvalidLinkError(f"unknown link kind {self.kind!r}")
        if self.kind == "scaled_linear":
            if self.range is None or not self.range > 0:
                raise InvalidLinkError("scaled_linear link needs range > 0")
            object.__setattr__(self, "range", float(self.range))

    def __call__(self, x):
        return link_eval(self, x)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "sigmoid":
            p = _sigmoid(x)
            return p * (1.0 - p)
        return np.where(np.abs(x) < self.range, 0.5 / self.range, 0.0)

    def log_prob(self, x):
        """log link(x), floored at log(1e-300)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "sigmoid":
            out = -np.logaddexp(0.0, -x)
        else:
            with np.errstate(divide="ignore"):
                out = np.log(link_eval(self, x))
        return np.maximum(out, LOG_FLOOR)

    def dlog_prob(self, x):
        """d/dx of :meth:`log_prob`; zero wherever the floor is active."""
        x = np.asarray(x, dtype=float)
        if self.kind == "sigmoid":
            g = _sigmoid(-x)
            return np.where(-np.logaddexp(0.0, -x) > LOG_FLOOR, g, 0.0)
        p = link_eval(self, x)
        inside = (np.abs(x) < self.range) & (p > 1e-300)
        return np.where(inside, 0.5 / self.range / np.where(inside, p, 1.0), 0.0)

    def to_dict(self) -> dict:
        if self.kind == "sigmoid":
            return {"kind": "sigmoid"}
        return {"kind": "scaled_linear", "range": self.range}

    @classmethod
    def from_dict(cls, d: dict) -> "LinkFunction":
        return cls(d.get("kind", "sigmoid"), d.get("range"))


def _sigmoid(x):
    # exp(-logaddexp(0, -x)) avoids overflow for large |x|
    return np.exp(-np.logaddexp(0.0, -np.asarray(x, dtype=float)))


def link_eval(link: LinkFunction, x):
    if link.kind == "sigmoid":
        out = _sigmoid(x)
    else:
        out = np.clip(0.5 + np.asarray(x, dtype=float) / (2.0 * link.range), 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def derivative_bounds(link: LinkFunction, H: float) -> DerivativeBounds:
    """Tightest (kappa, kappa_bar) with 1/kappa <= link' <= 1/kappa_bar on [-H, H]."""
    if not H > 0:
        raise ValueError("horizon must be positive")
    if link.kind == "sigmoid":
        p = float(_sigmoid(H))
        return DerivativeBounds(kappa=1.0 / (p * (1.0 - p)), kappa_bar=4.0)
    if link.range < H:
        raise InvalidLinkError(
            f"scaled_linear link with range {link.range} is flat on part of [-{H}, {H}]")
    return DerivativeBounds(kappa=2.0 * link.range, kappa_bar=2.0 * link.range)


def preference_prob(link: LinkFunction, r0: float, r1: float) -> float:
    """P(o = 0), i.e. the probability that the first trajectory wins."""
    return link_eval(link, r0 - r1)


def sample_preference(link: LinkFunction, r0: float, r1: float,
                      rng: np.random.Generator) -> int:
    return 0 if rng.random() < preference_prob(link, r0, r1) else 1
