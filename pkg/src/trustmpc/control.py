"""Receding-horizon controllers for the automated vehicle and the human follower.

Both agents minimize a horizon cost over an N-step acceleration plan with
hard box bounds on acceleration. State constraints (gap, speed, trust) are
quadratic penalties so that a plan always exists even when the leader
brakes harder than the follower can.

The optimizer is a derivative-free pattern search with shrinking steps
started from several plans: coordinate moves first, then diagonal moves
when no single coordinate improves. The explicability term is piecewise and
the trust constraint is thresholded, so gradients are unreliable, and with
N = 3 the search is cheap. Plans that would let trust fall below its floor
are projected back onto the boundary toward the expected plan.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from .core import ContractError, PairState, SimParams, rollout, speed_profile
from .trust import explicability, performance, trust_horizon, trust_input


MAX_COARSE_POINTS = 1000
HUMAN_COARSE = 5


class SolverError(RuntimeError):
    """The horizon optimizer could not produce a plan."""


@dataclass(frozen=True)
class HumanCost:
    """Feature weights of the human driver's cost.

    Weights are for (acceleration, desired speed, relative speed, relative
    distance) and are normalized to sum to one.
    """

    weights: tuple = (0.25, 0.25, 0.25, 0.25)
    v_des: Optional[float] = None
    tau_H: float = 1.2
    d_s: float = 5.0

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) != 4:
            raise ContractError(f"expected 4 feature weights, got {len(w)}")
        if any(x < 0 or not math.isfinite(x) for x in w) or not any(x > 0 for x in w):
            raise ContractError(f"weights must be non-negative with at least one positive: {w}")
        total = sum(w)
        object.__setattr__(self, "weights", tuple(x / total for x in w))


@dataclass(frozen=True)
class SolveReport:
    plan: np.ndarray
    cost: float
    evaluations: int
    violations: tuple = ()


# -- costs -----------------------------------------------------------------


def _sq_pos(x: float) -> float:
    return x * x if x > 0 else 0.0


def av_stage_cost(states: Sequence[PairState], params: SimParams) -> float:
    """Constant-time-headway tracking cost plus soft gap/speed penalties."""
    cost = 0.0
    pen = 0.0
    for s in states:
        err = (params.d_s + s.v_follower * params.tau_R - s.gap) / params.gap_scale
        cost += err * err
        if s.gap < params.d_min:
            pen += (params.d_min - s.gap) ** 2
        elif s.gap > params.d_max:
            pen += (s.gap - params.d_max) ** 2
        if s.clamped:
            pen += s.overshoot ** 2
    return cost + params.penalty * pen


def trust_penalty(T0: float, E: float, params: SimParams) -> float:
    T_N = trust_horizon(T0, E, params.N, params.delta, params.p_thre)
    return params.penalty * _sq_pos(params.T_min - T_N)


def av_total_cost(
    plan: Sequence[float],
    expected: Sequence[float],
    states: Sequence[PairState],
    T0: float,
    params: SimParams,
) -> float:
    """Tracking cost + alpha * explicability + minimum-trust penalty.

    With ``alpha == 0`` the controller is trust-unaware and the cost reduces
    to :func:`av_stage_cost`.
    """
    stage = av_stage_cost(states, params)
    if params.alpha == 0:
        return stage
    E = explicability(plan, expected, params.eps)
    return stage + params.alpha * E + trust_penalty(T0, E, params)


def human_cost(
    plan_h: Sequence[float],
    av_speeds: Sequence[float],
    states_h: Sequence[PairState],
    w: HumanCost,
    params: SimParams,
    v_av_now: Optional[float] = None,
) -> float:
    """Weighted sum of the four driver features over the horizon.

    ``av_speeds`` are the AV speeds the human expects after each step and
    ``states_h`` the human rollout against them. Quadratic feature forms:
    u^2, (v - v_des)^2, (v_av - v)^2 and (gap - (d_s + v * tau_H))^2.

    Soft constraints keep the gap above ``d_s`` and, at the end of the
    horizon, above the distance needed to stop behind the AV should it brake
    at ``u_min``. For these safety terms the human does not count on the AV
    speeding up beyond its observed speed ``v_av_now``.
    """
    w_a, w_ds, w_rs, w_rd = w.weights
    v_des = params.speed_cap if w.v_des is None else w.v_des
    cap = math.inf if v_av_now is None else v_av_now
    cost = 0.0
    pen = 0.0
    lag = 0.0
    v_safe = cap
    g = 0.0
    for u, v_av, s in zip(plan_h, av_speeds, states_h):
        v = s.v_follower
        cost += (
            w_a * u * u
            + w_ds * (v - v_des) ** 2
            + w_rs * (v_av - v) ** 2
            + w_rd * (s.gap - (w.d_s + v * w.tau_H)) ** 2
        )
        g = s.gap - lag
        if g < w.d_s:
            pen += (w.d_s - g) ** 2
        if s.clamped:
            pen += s.overshoot ** 2
        v_safe = v_av if v_av < cap else cap
        lag += (v_av - v_safe) * params.dt
    if states_h:
        short = stopping_gap(states_h[-1].v_follower, v_safe, w.d_s, params) - g
        if short > 0:
            pen += short * short
    return cost + params.penalty * pen


def stopping_gap(v_follower: float, v_leader: float, d_s: float, params: SimParams) -> float:
    """Gap needed to stay at least ``d_s`` behind a leader when both brake at ``u_min``."""
    b = -params.u_min
    if b <= 0 or v_follower <= v_leader:
        return d_s
    return d_s + (v_follower * v_follower - v_leader * v_leader) / (2.0 * b)


# Fused closures used by the controllers. They compute exactly the same
# quantities as rollout + the cost functions above without building states.


def av_cost_fn(
    state: PairState, preview: Sequence[float], expected: Sequence[float], T0: float, params: SimParams
) -> Callable[[Sequence[float]], float]:
    N = params.N
    if len(preview) != N or len(expected) != N:
        raise ContractError(f"preview and expected plan must have length N={N}")
    dt = params.dt
    d_s, tau, scale = params.d_s, params.tau_R, params.gap_scale
    d_min, d_max, v_min, v_max = params.d_min, params.d_max, params.v_min, params.speed_cap
    alpha, eps, penalty = params.alpha, params.eps, params.penalty
    lead = [float(v) for v in preview]
    exp = [float(u) for u in expected]
    g0, vl0, v0 = state.gap, state.v_leader, state.v_follower

    def cost(plan):
        g, vl, v = g0, vl0, v0
        c = 0.0
        pen = 0.0
        for k in range(N):
            g = g + (vl - v) * dt
            raw = v + plan[k] * dt
            v = v_min if raw < v_min else (v_max if raw > v_max else raw)
            vl = lead[k]
            err = (d_s + v * tau - g) / scale
            c += err * err
            if g < d_min:
                pen += (d_min - g) ** 2
            elif g > d_max:
                pen += (g - d_max) ** 2
            if raw != v:
                pen += (raw - v) ** 2
        c += penalty * pen
        if alpha == 0:
            return c
        E = explicability(plan, exp, eps)
        T_N = T0 + N * params.delta * trust_input(performance(E), params.p_thre)
        tpen = penalty * (params.T_min - T_N) ** 2 if T_N < params.T_min else 0.0
        return c + alpha * E + tpen

    return cost


def human_cost_fn(
    state_h: PairState, av_speeds: Sequence[float], w: HumanCost, params: SimParams
) -> Callable[[Sequence[float]], float]:
    N = params.N
    if len(av_speeds) != N:
        raise ContractError(f"expected {N} AV speeds, got {len(av_speeds)}")
    dt = params.dt
    w_a, w_ds, w_rs, w_rd = w.weights
    v_des = params.speed_cap if w.v_des is None else w.v_des
    d_s, tau = w.d_s, w.tau_H
    v_min, v_max, penalty = params.v_min, params.speed_cap, params.penalty
    lead = [float(v) for v in av_speeds]
    g0, vl0, v0 = state_h.gap, state_h.v_leader, state_h.v_follower
    cap = vl0
    safe = [v if v < cap else cap for v in lead]
    lags = []
    lag = 0.0
    for v, vs in zip(lead, safe):
        lags.append(lag)
        lag += (v - vs) * dt

    def cost(plan):
        g, vl, v = g0, vl0, v0
        c = 0.0
        pen = 0.0
        gs = g0
        for k in range(N):
            u = plan[k]
            g = g + (vl - v) * dt
            raw = v + u * dt
            v = v_min if raw < v_min else (v_max if raw > v_max else raw)
            vl = lead[k]
            c += (
                w_a * u * u
                + w_ds * (v - v_des) ** 2
                + w_rs * (vl - v) ** 2
                + w_rd * (g - (d_s + v * tau)) ** 2
            )
            gs = g - lags[k]
            if gs < d_s:
                pen += (d_s - gs) ** 2
            if raw != v:
                pen += (raw - v) ** 2
        short = stopping_gap(v, safe[-1], d_s, params) - gs
        if short > 0:
            pen += short * short
        return c + penalty * pen

    return cost


# -- solver ----------------------------------------------------------------


def _sweep(f, x, fx, lo, hi, directions, repair=None):
    """Try each group of moves in turn, keeping the first improving move of
    every group. A candidate that ``repair`` maps elsewhere is also tried in
    its repaired form. Returns the new point, its cost, evaluations and
    whether anything improved."""
    evals = 0
    improved = False
    for group in directions:
        for move in group:
            y = list(x)
            for i, d in move:
                y[i] = min(max(y[i] + d, lo), hi)
            if y == x:
                continue
            y, fy, k = _evaluate(f, y, repair)
            evals += k
            if fy < fx:
                x, fx = y, fy
                improved = True
                break
    return x, fx, evals, improved


def _evaluate(f, y, repair=None):
    """Cost of ``y`` and of ``repair(y)``; returns the better point."""
    fy = f(y)
    if not math.isfinite(fy):
        raise SolverError(f"cost is not finite ({fy}) at plan {y}")
    if repair is None:
        return y, fy, 1
    z = repair(y)
    if z == y:
        return y, fy, 1
    fz = f(z)
    if not math.isfinite(fz):
        raise SolverError(f"cost is not finite ({fz}) at plan {z}")
    return (z, fz, 2) if fz < fy else (y, fy, 2)


def _direction_groups(n: int) -> list:
    """Nonzero directions in {-1, 0, 1}^n grouped by how many coordinates
    they move: singles (plain coordinate descent), then pairs, and so on.
    Each group of moves is a list of (coordinate, sign) tuples."""
    groups = []
    for k in range(1, n + 1):
        level = []
        for idx in itertools.combinations(range(n), k):
            level.append([tuple(zip(idx, signs)) for signs in itertools.product((1, -1), repeat=k)])
        groups.append(level)
    return groups


def _explore(f, x, fx, lo, hi, step, groups, repair):
    """Exploratory moves of size ``step`` around ``x``: coordinate moves
    first, then moves along two or more coordinates at once if no single
    coordinate improves."""
    evals = 0
    for level in groups:
        scaled = [[tuple((i, s * step) for i, s in move) for move in g] for g in level]
        x, fx, k, improved = _sweep(f, x, fx, lo, hi, scaled, repair)
        evals += k
        if improved:
            return x, fx, evals, True
    return x, fx, evals, False


def _descend(f, x, fx, lo, hi, step, tol, repair=None):
    """Cyclic coordinate descent with pattern moves and step halving.

    Penalties on the gap (a running sum of accelerations), the stopping
    distance check and the trust threshold create narrow diagonal valleys,
    so exploration falls back to multi-coordinate moves, and after every
    successful exploration the search extrapolates along the last
    displacement (Hooke-Jeeves) to travel quickly down long valleys.
    """
    evals = 0
    groups = _direction_groups(len(x))
    while step >= tol:
        y, fy, k, improved = _explore(f, x, fx, lo, hi, step, groups, repair)
        evals += k
        if not improved:
            step *= 0.5
            continue
        while True:
            moved = max(abs(b - a) for a, b in zip(x, y))
            p = [min(max(2.0 * b - a, lo), hi) for a, b in zip(x, y)]
            x, fx = y, fy
            # displacements below the step tolerance would creep forever
            if moved < tol or p == x:
                break
            p, fp, k = _evaluate(f, p, repair)
            evals += k
            z, fz, k, _ = _explore(f, p, fp, lo, hi, step, groups, repair)
            evals += k
            if fz < fx:
                y, fy = z, fz
            else:
                break
    return x, fx, evals


def solve_horizon(
    cost_fn: Callable[[Sequence[float]], float],
    params: SimParams,
    warm_start: Optional[Sequence[float]] = None,
    hold: Optional[float] = None,
    step0: float = 1.0,
    tol: float = 1e-3,
    coarse: int = 0,
    repair: Optional[Callable[[list], list]] = None,
    polish: bool = False,
) -> SolveReport:
    """Minimize ``cost_fn`` over box-bounded plans of length ``params.N``.

    Descent is started from the warm start, the zero plan, the plan holding
    ``hold`` (if given) and, when ``coarse >= 2``, the best point of a
    ``coarse``-level grid over the box (skipped when ``coarse ** N`` exceeds
    ``MAX_COARSE_POINTS``).
    The best result wins, ties going to the earlier start. The returned cost
    never exceeds the warm start's cost.

    ``repair`` optionally maps a plan to a nearby plan inside the box that
    satisfies a constraint the cost only penalizes; every candidate is
    scored both as is and repaired. This lets the search slide along a
    penalty cliff instead of stalling on it. With ``polish`` the winner is
    refined by a bounded Powell search and kept only if that improves it.
    """
    N, lo, hi = params.N, params.u_min, params.u_max
    starts = [list(warm_start) if warm_start is not None else [0.0] * N, [0.0] * N]
    if hold is not None:
        starts.append([float(hold)] * N)
    evals = 0
    if coarse >= 2 and coarse ** N <= MAX_COARSE_POINTS:
        levels = np.linspace(lo, hi, coarse).tolist()
        best_c, best_p = math.inf, None
        for x in itertools.product(levels, repeat=N):
            x, fx, k = _evaluate(cost_fn, list(x), repair)
            evals += k
            if fx < best_c:
                best_c, best_p = fx, x
        starts.append(best_p)
    seen = []
    best_x, best_f = None, math.inf
    for s in starts:
        if len(s) != N:
            raise ContractError(f"start plan has length {len(s)}, expected {N}")
        x = [min(max(float(u), lo), hi) for u in s]
        if x in seen:
            continue
        seen.append(x)
        x, fx, k = _evaluate(cost_fn, x, repair)
        evals += k
        x, fx, k = _descend(cost_fn, x, fx, lo, hi, step0, tol, repair)
        evals += k
        if fx < best_f:
            best_x, best_f = x, fx
    if polish:
        x, fx, k = _polish(cost_fn, best_x, best_f, lo, hi, tol)
        evals += k
        if fx < best_f:
            best_x, best_f = x, fx
    return SolveReport(np.array(best_x), float(best_f), evals)


def _polish(f, x, fx, lo, hi, tol):
    """Bounded Powell search from the pattern-search optimum.

    Powell's conjugate directions follow valleys narrower than the final
    pattern step, which the fixed direction set cannot resolve."""
    count = [0]

    def g(z):
        count[0] += 1
        v = f([float(u) for u in z])
        if not math.isfinite(v):
            raise SolverError(f"cost is not finite ({v}) at plan {list(z)}")
        return v

    res = optimize.minimize(
        g, np.asarray(x, dtype=float), method="Powell",
        bounds=[(lo, hi)] * len(x), options={"xtol": tol * 0.1, "ftol": 1e-12},
    )
    z = [min(max(float(u), lo), hi) for u in res.x]
    fz = f(z)
    return (z, fz, count[0] + 1) if fz < fx else (x, fx, count[0] + 1)


def shift_plan(plan: Sequence[float]) -> list[float]:
    """Drop the executed first action and repeat the last one."""
    plan = list(plan)
    return plan[1:] + plan[-1:]


# -- agents ----------------------------------------------------------------


def max_explicability(T0: float, params: SimParams) -> Optional[float]:
    """Largest explicability score that keeps the predicted trust level
    ``trust_horizon(T0, E, N)`` at or above ``T_min``.

    The trust input falls monotonically with the score, so the admissible
    scores form an interval ``[0, E_max]``. Returns ``math.inf`` when every
    score is admissible and ``None`` when none is.
    """
    r = (params.T_min - T0) / (params.N * params.delta)
    p = params.p_thre
    if r <= -1.0:
        return math.inf
    if r <= -(1.0 - p):
        return math.atanh(-r)
    if r <= p:
        return math.atanh(1.0 - p)
    if r < 1.0:
        return math.atanh(1.0 - r)
    return 0.0 if r == 1.0 else None


def trust_repair(expected: Sequence[float], T0: float, params: SimParams) -> Optional[Callable[[list], list]]:
    """Map a plan whose explicability score breaks the minimum-trust
    condition onto the admissible boundary by pulling it toward ``expected``.

    Along the segment from ``expected`` to a plan the shifted-Jaccard score
    is ``s^2 D / (B + s C + s^2 D)``, increasing in ``s``, so the boundary
    point solves a quadratic.
    """
    E_max = max_explicability(T0, params)
    if E_max is None or math.isinf(E_max):
        return None
    eps, lo, hi = params.eps, params.u_min, params.u_max
    exp = [float(u) for u in expected]
    b = [u + eps for u in exp]
    B = sum(x * x for x in b)
    Et = E_max * (1.0 - 1e-9)

    def repair(plan):
        if explicability(plan, exp, eps) <= E_max:
            return plan
        d = [u - w for u, w in zip(plan, exp)]
        C = sum(x * y for x, y in zip(b, d))
        D = sum(x * x for x in d)
        a2 = D * (1.0 - Et)
        s = (Et * C + math.sqrt(Et * Et * C * C + 4.0 * a2 * Et * B)) / (2.0 * a2)
        return [min(max(w + s * x, lo), hi) for w, x in zip(exp, d)]

    return repair




def av_violations(states: Sequence[PairState], T_N: Optional[float], params: SimParams) -> tuple:
    flags = []
    if any(s.gap < params.d_min for s in states):
        flags.append("gap_min")
    if any(s.gap > params.d_max for s in states):
        flags.append("gap_max")
    if any(s.clamped for s in states):
        flags.append("speed")
    if T_N is not None and T_N < params.T_min:
        flags.append("trust")
    return tuple(flags)


def av_decide(
    state: PairState,
    trust: float,
    expected: Sequence[float],
    preview: Sequence[float],
    params: SimParams,
    warm_start: Optional[Sequence[float]] = None,
    hold: Optional[float] = None,
) -> SolveReport:
    """Trust-aware AV plan for one receding-horizon step."""
    f = av_cost_fn(state, preview, expected, trust, params)
    repair = trust_repair(expected, trust, params) if params.alpha > 0 else None
    rep = solve_horizon(f, params, warm_start, hold, repair=repair)
    states = rollout(state, preview, rep.plan, params)
    T_N = None
    if params.alpha > 0:
        T_N = trust_horizon(trust, explicability(rep.plan, expected, params.eps), params.N, params.delta, params.p_thre)
    return SolveReport(rep.plan, rep.cost, rep.evaluations, av_violations(states, T_N, params))


def human_decide(
    state_h: PairState,
    expected_av: Sequence[float],
    v_av: float,
    w: HumanCost,
    params: SimParams,
    warm_start: Optional[Sequence[float]] = None,
    hold: Optional[float] = None,
) -> SolveReport:
    """Human plan given the AV plan the human expects.

    The human rolls the AV forward from its current speed ``v_av`` with the
    expected plan and plans against those speeds.
    """
    av_speeds = speed_profile(v_av, expected_av, params)
    f = human_cost_fn(state_h, av_speeds, w, params)
    # the stopping-distance term makes this cost multimodal with narrow
    # valleys: seed from a coarse grid and polish the winner
    rep = solve_horizon(f, params, warm_start, hold, coarse=HUMAN_COARSE, polish=True)
    states = rollout(state_h, av_speeds, rep.plan, params)
    flags = []
    if any(s.gap < w.d_s for s in states):
        flags.append("gap_min")
    if any(s.clamped for s in states):
        flags.append("speed")
    return SolveReport(rep.plan, rep.cost, rep.evaluations, tuple(flags))


@dataclass
class AvController:
    """Stateful wrapper that warm-starts each solve from the previous plan."""

    params: SimParams
    _prev: Optional[list] = field(default=None, repr=False)

    def reset(self):
        self._prev = None

    def decide(self, state, trust, expected, preview, hold=None) -> SolveReport:
        warm = shift_plan(self._prev) if self._prev is not None else [0.0] * self.params.N
        rep = av_decide(state, trust, expected, preview, self.params, warm, hold)
        self._prev = list(rep.plan)
        return rep


@dataclass
class HumanController:
    params: SimParams
    cost: HumanCost = field(default_factory=HumanCost)
    _prev: Optional[list] = field(default=None, repr=False)

    def reset(self):
        self._prev = None

    def decide(self, state_h, expected_av, v_av, hold=None) -> SolveReport:
        warm = shift_plan(self._prev) if self._prev is not None else [0.0] * self.params.N
        rep = human_decide(state_h, expected_av, v_av, self.cost, self.params, warm, hold)
        self._prev = list(rep.plan)
        return rep
