"""Plan explicability, performance level and the trust dynamic.

The explicability score is the Jaccard distance between two
acceleration plans after shifting every entry by ``eps`` so that all
entries are positive::

    a = u_av + eps,  b = u_expected + eps
    E = 1 - sum(a*b) / sum(a^2 + b^2 - a*b)

Identical plans score 0. Performance is ``P = 1 - tanh(E)`` and the trust
level moves by ``delta * P`` when ``P >= p_thre`` and by
``-delta * (1 - P)`` otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .core import ContractError

EQUAL_TOL = 1e-12


@dataclass(frozen=True)
class TrustState:
    T: float = 0.0
    delta: float = 0.1
    p_thre: float = 0.8

    def __post_init__(self):
        if not self.delta > 0:
            raise ContractError(f"delta must be positive, got {self.delta}")
        if not 0 < self.p_thre < 1:
            raise ContractError(f"p_thre must lie in (0, 1), got {self.p_thre}")


@dataclass(frozen=True)
class ExplicabilityRecord:
    E: float
    P: float

    @classmethod
    def of(cls, plan_av, plan_expected, eps: float) -> "ExplicabilityRecord":
        E = explicability(plan_av, plan_expected, eps)
        return cls(E, performance(E))


def explicability(plan_av: Sequence[float], plan_expected: Sequence[float], eps: float) -> float:
    if len(plan_av) != len(plan_expected):
        raise ContractError(
            f"plans differ in length: {len(plan_av)} vs {len(plan_expected)}"
        )
    num = 0.0
    den = 0.0
    equal = True
    for u, w in zip(plan_av, plan_expected):
        a = u + eps
        b = w + eps
        if a <= 0 or b <= 0:
            raise ContractError(f"eps={eps} too small: shifted accelerations must be positive")
        if abs(u - w) > EQUAL_TOL:
            equal = False
        ab = a * b
        num += ab
        den += a * a + b * b - ab
    if equal:
        return 0.0
    return 1.0 - num / den


def performance(E: float) -> float:
    if E < 0:
        raise ContractError(f"explicability score must be >= 0, got {E}")
    return 1.0 - math.tanh(E)


def trust_input(P: float, p_thre: float) -> float:
    if not 0.0 <= P <= 1.0:
        raise ContractError(f"performance level must lie in [0, 1], got {P}")
    return P if P >= p_thre else -(1.0 - P)


def trust_step(state: TrustState, P: float) -> TrustState:
    """One update of the trust level; no upper bound is applied."""
    u_T = trust_input(P, state.p_thre)
    return TrustState(state.T + state.delta * u_T, state.delta, state.p_thre)


def trust_horizon(T0: float, E_plan: float, N: int, delta: float = 0.1, p_thre: float = 0.8) -> float:
    """Trust after ``N`` steps of a constant trust input derived from ``E_plan``.

    Used by the trust-aware controller to check the minimum-trust constraint
    for a candidate plan.
    """
    return T0 + N * delta * trust_input(performance(E_plan), p_thre)
