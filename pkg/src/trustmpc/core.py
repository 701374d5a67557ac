"""Shared domain types and discrete-time longitudinal kinematics.

A follower/leader pair is described by the gap (follower front to leader
rear) and both speeds. Gaps advance with the *current* speeds and the
follower speed advances with the commanded acceleration::

    gap'        = gap + (v_leader - v_follower) * dt
    v_follower' = clamp(v_follower + u * dt, v_min, v_max)
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called outside its documented preconditions."""


@dataclass(frozen=True)
class SimParams:
    """Controller and simulation parameters.

    Defaults reproduce the NMPC design table: horizon 3 s, accelerations in
    [-3, 3] m/s^2, gap in [5, 60] m, standstill gap 5 m, time headway 1.2 s,
    explicability offset 6 m/s^2, minimum trust 0. ``v_max=None`` means "use
    the maximum speed of the driving cycle".

    ``gap_scale`` normalizes the car-following error before squaring so the
    tracking cost is dimensionless and commensurate with the explicability
    score. ``gap_scale=1`` gives the raw squared error in m^2.
    """

    dt: float = 1.0
    N: int = 3
    H: int = 10
    d_s: float = 5.0
    tau_R: float = 1.2
    tau_H: float = 1.2
    eps: float = 6.0
    u_min: float = -3.0
    u_max: float = 3.0
    d_min: float = 5.0
    d_max: float = 60.0
    v_min: float = 0.0
    v_max: Optional[float] = None
    T_min: float = 0.0
    delta: float = 0.1
    p_thre: float = 0.8
    alpha: float = 0.0
    penalty: float = 1e4
    gap_scale: float = 10.0
    v_floor: float = 0.1

    def __post_init__(self):
        if not self.dt > 0:
            raise ContractError(f"dt must be positive, got {self.dt}")
        if self.N < 1 or self.H < 1:
            raise ContractError(f"N and H must be >= 1, got N={self.N}, H={self.H}")
        if not self.eps > abs(self.u_min):
            raise ContractError(
                f"eps={self.eps} must exceed |u_min|={abs(self.u_min)} so shifted accelerations stay positive"
            )
        if self.u_min > self.u_max:
            raise ContractError("u_min must not exceed u_max")
        if self.alpha < 0:
            raise ContractError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 < self.p_thre < 1:
            raise ContractError(f"p_thre must lie in (0, 1), got {self.p_thre}")
        if not self.delta > 0:
            raise ContractError(f"delta must be positive, got {self.delta}")
        if not self.gap_scale > 0:
            raise ContractError(f"gap_scale must be positive, got {self.gap_scale}")

    @classmethod
    def preset(cls, name: str = "default", **overrides) -> "SimParams":
        """Return a named parameter preset with individual fields overridden."""
        if name not in PRESETS:
            raise KeyError(f"unknown parameter preset {name!r}; known: {sorted(PRESETS)}")
        return dataclasses.replace(PRESETS[name], **overrides)

    def with_cycle(self, speeds: Sequence[float]) -> "SimParams":
        """Fill ``v_max`` from a speed profile when it is left unset."""
        if self.v_max is not None:
            return self
        return dataclasses.replace(self, v_max=float(np.max(speeds)))

    @property
    def speed_cap(self) -> float:
        return math.inf if self.v_max is None else self.v_max


PRESETS = {"default": SimParams()}


@dataclass(frozen=True)
class PairState:
    """Gap and speeds of a leader/follower pair.

    ``clamped`` is set when the follower speed hit a bound on the step that
    produced this state; ``overshoot`` is the unclamped speed minus the
    clamped one (m/s), so costs can penalize infeasible commands.
    """

    gap: float
    v_leader: float
    v_follower: float
    clamped: bool = False
    overshoot: float = 0.0


def step_pair(s: PairState, v_leader_next: float, u_follower: float, params: SimParams) -> PairState:
    """Advance the pair by one time step."""
    dt = params.dt
    gap = s.gap + (s.v_leader - s.v_follower) * dt
    v_raw = s.v_follower + u_follower * dt
    v = min(max(v_raw, params.v_min), params.speed_cap)
    return PairState(gap, float(v_leader_next), v, clamped=v != v_raw, overshoot=v_raw - v)


def rollout(
    s: PairState, leader_speeds: Sequence[float], plan: Sequence[float], params: SimParams
) -> list[PairState]:
    """Apply ``plan`` step by step; ``leader_speeds[k]`` is the leader speed after step k."""
    if len(leader_speeds) != len(plan):
        raise ContractError(
            f"leader_speeds has length {len(leader_speeds)} but plan has length {len(plan)}"
        )
    states = []
    for v_next, u in zip(leader_speeds, plan):
        s = step_pair(s, v_next, u, params)
        states.append(s)
    return states


def speed_profile(v0: float, plan: Sequence[float], params: SimParams) -> list[float]:
    """Follower speeds after each step of ``plan``, with the same clamping as :func:`step_pair`."""
    out = []
    v = v0
    cap = params.speed_cap
    for u in plan:
        v = min(max(v + u * params.dt, params.v_min), cap)
        out.append(v)
    return out
