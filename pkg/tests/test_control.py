import dataclasses
import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trustmpc.control import (
    AvController,
    HumanCost,
    HumanController,
    SolverError,
    av_cost_fn,
    av_decide,
    av_stage_cost,
    av_total_cost,
    human_cost,
    human_cost_fn,
    human_decide,
    max_explicability,
    shift_plan,
    solve_horizon,
    stopping_gap,
    trust_repair,
)
from trustmpc.core import ContractError, PairState, SimParams, rollout, speed_profile
from trustmpc.trust import explicability, trust_horizon

P0 = SimParams(v_max=40.0)
EQ = PairState(17.0, 10.0, 10.0)  # d_s + tau * v = 5 + 1.2 * 10

acc = st.floats(-3.0, 3.0)
spd = st.floats(0.0, 35.0)


# -- grid oracle ------------------------------------------------------------

GRID = np.round(np.arange(-3.0, 3.0 + 1e-9, 0.1), 10)
PLANS = np.array(list(itertools.product(GRID, repeat=3)))  # 61^3 x 3


def oracle_av_costs(state, preview, expected, T0, p):
    """Vectorized AV objective over every plan in PLANS, written from the
    model definition independently of the library code."""
    n = len(PLANS)
    g = np.full(n, state.gap)
    vl = np.full(n, state.v_leader)
    v = np.full(n, state.v_follower)
    track = np.zeros(n)
    pen = np.zeros(n)
    for k in range(3):
        g = g + (vl - v) * p.dt
        raw = v + PLANS[:, k] * p.dt
        v = np.clip(raw, p.v_min, p.v_max)
        vl = np.full(n, preview[k])
        track += ((p.d_s + p.tau_R * v - g) / p.gap_scale) ** 2
        pen += np.where(g < p.d_min, (p.d_min - g) ** 2, 0.0)
        pen += np.where(g > p.d_max, (g - p.d_max) ** 2, 0.0)
        pen += (raw - v) ** 2
    cost = track + p.penalty * pen
    if p.alpha == 0:
        return cost
    a = PLANS + p.eps
    b = np.asarray(expected) + p.eps
    E = 1.0 - (a * b).sum(1) / (a * a + b * b - a * b).sum(1)
    E = np.where(np.all(np.abs(PLANS - np.asarray(expected)) <= 1e-12, axis=1), 0.0, E)
    Pf = 1.0 - np.tanh(E)
    uT = np.where(Pf >= p.p_thre, Pf, -(1.0 - Pf))
    TN = T0 + 3 * p.delta * uT
    return cost + p.alpha * E + p.penalty * np.where(TN < p.T_min, (p.T_min - TN) ** 2, 0.0)


def random_instance(rng):
    v_max = 36.0
    vf = rng.uniform(0.0, 30.0)
    vl = max(0.0, vf + rng.uniform(-5.0, 5.0))
    gap = rng.uniform(3.0, 65.0)
    pv, x = [], vl
    for _ in range(3):
        x = min(max(x + rng.uniform(-3.0, 3.0), 0.0), v_max)
        pv.append(x)
    expected = rng.uniform(-3.0, 3.0, size=3)
    if rng.random() < 0.3:
        expected = np.round(expected, 1)
    alpha = float(rng.choice([0.0, 0.25, 0.5, 0.75, 1.0, 5.0]))
    T0 = float(rng.choice([10.0, 0.05, -0.2]))
    p = dataclasses.replace(P0, v_max=v_max, alpha=alpha)
    return PairState(gap, vl, vf), pv, expected, T0, p


def test_solver_matches_grid_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    for _ in range(50):
        state, pv, expected, T0, p = random_instance(rng)
        grid_best = float(oracle_av_costs(state, pv, expected, T0, p).min())
        rep = av_decide(state, T0, expected, pv, p, hold=float(rng.uniform(-3, 3)))
        assert rep.cost <= grid_best + 0.01 * grid_best + 1e-12, (state, pv, expected, T0, p.alpha)
    assert time.perf_counter() - t0 < 30.0


def test_oracle_agrees_with_library_cost():
    rng = np.random.default_rng(7)
    for _ in range(5):
        state, pv, expected, T0, p = random_instance(rng)
        idx = rng.integers(0, len(PLANS), size=20)
        costs = oracle_av_costs(state, pv, expected, T0, p)[idx]
        f = av_cost_fn(state, pv, expected, T0, p)
        for i, c in zip(idx, costs):
            assert f(list(PLANS[i])) == pytest.approx(c, rel=1e-12, abs=1e-12)


def test_human_solver_matches_grid():
    rng = np.random.default_rng(11)
    grid = [list(x) for x in itertools.product(np.arange(-3.0, 3.0 + 1e-9, 0.2), repeat=3)]
    w = HumanCost(tau_H=1.2, d_s=5.0)
    p = dataclasses.replace(P0, v_max=30.0)
    for _ in range(20):
        vh = rng.uniform(0.0, 25.0)
        vav = max(0.0, vh + rng.uniform(-4.0, 4.0))
        sh = PairState(rng.uniform(6.0, 50.0), vav, vh)
        exp_av = rng.uniform(-3, 3, size=3)
        f = human_cost_fn(sh, speed_profile(vav, exp_av, p), w, p)
        grid_best = min(f(x) for x in grid)
        rep = human_decide(sh, exp_av, vav, w, p, hold=0.0)
        assert rep.cost <= grid_best * 1.01 + 1e-12


def test_pattern_search_terminates_on_flat_creep():
    # a pattern point that is better only by rounding used to be accepted
    # forever at full step size
    p = dataclasses.replace(P0, v_max=36.0)
    sh = PairState(12.0, 3.0, 3.2)
    expected = [2.9999311876919927, -2.048960983838585, -2.048960983838585]
    t0 = time.perf_counter()
    rep = human_decide(sh, expected, 3.0, HumanCost(), p, hold=2.9999999985099466)
    assert time.perf_counter() - t0 < 5.0
    assert np.all(np.abs(rep.plan) <= 3.0)


def test_max_explicability_branches():
    p = SimParams()  # T_min = 0, N = 3, delta = 0.1, p_thre = 0.8
    assert max_explicability(10.0, p) == math.inf
    # T0 = 0.2: r = -2/3 lies in the lower branch
    assert max_explicability(0.2, p) == pytest.approx(math.atanh(2 / 3))
    assert max_explicability(0.0, p) == pytest.approx(math.atanh(0.2))
    # T0 = -0.27: r = 0.9 needs P >= 0.9
    assert max_explicability(-0.27, p) == pytest.approx(math.atanh(0.1))
    assert max_explicability(-0.3, p) == pytest.approx(0.0, abs=1e-12)
    assert max_explicability(-1.0, p) is None
    for T0 in (0.2, 0.0, -0.27):
        E = max_explicability(T0, p)
        assert trust_horizon(T0, E * (1 - 1e-9), 3) >= p.T_min - 1e-12
        assert trust_horizon(T0, E * (1 + 1e-6) + 1e-9, 3) < p.T_min


@settings(max_examples=200, deadline=None)
@given(
    plan=st.lists(acc, min_size=3, max_size=3),
    expected=st.lists(acc, min_size=3, max_size=3),
    T0=st.floats(-0.29, 0.5),
)
def test_trust_repair_lands_inside_admissible_set(plan, expected, T0):
    p = SimParams()
    repair = trust_repair(expected, T0, p)
    E_max = max_explicability(T0, p)
    if repair is None:
        assert E_max is None or math.isinf(E_max)
        return
    z = repair(list(plan))
    assert all(p.u_min <= u <= p.u_max for u in z)
    assert explicability(z, expected, p.eps) <= E_max + 1e-12
    if explicability(plan, expected, p.eps) <= E_max:
        assert z == list(plan)


# -- fused costs equal the composed definitions ---------------------------

@settings(max_examples=300, deadline=None)
@given(
    gap=st.floats(2.0, 70.0), vl=spd, vf=spd,
    pv=st.lists(spd, min_size=3, max_size=3),
    plan=st.lists(acc, min_size=3, max_size=3),
    expected=st.lists(acc, min_size=3, max_size=3),
    T0=st.floats(-1.0, 5.0),
    alpha=st.sampled_from([0.0, 0.5, 1.0]),
)
def test_fused_av_cost_equals_composed(gap, vl, vf, pv, plan, expected, T0, alpha):
    p = dataclasses.replace(P0, alpha=alpha)
    s = PairState(gap, vl, vf)
    composed = av_total_cost(plan, expected, rollout(s, pv, plan, p), T0, p)
    assert av_cost_fn(s, pv, expected, T0, p)(plan) == pytest.approx(composed, rel=1e-12, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(
    gap=st.floats(2.0, 70.0), vav=spd, vh=spd,
    exp_av=st.lists(acc, min_size=3, max_size=3),
    plan=st.lists(acc, min_size=3, max_size=3),
)
def test_fused_human_cost_equals_composed(gap, vav, vh, exp_av, plan):
    w = HumanCost(weights=(1, 2, 3, 4))
    sh = PairState(gap, vav, vh)
    speeds = speed_profile(vav, exp_av, P0)
    composed = human_cost(plan, speeds, rollout(sh, speeds, plan, P0), w, P0, v_av_now=vav)
    assert human_cost_fn(sh, speeds, w, P0)(plan) == pytest.approx(composed, rel=1e-12, abs=1e-12)


# -- cost examples --------------------------------------------------------


def test_stage_cost_zero_at_headway():
    assert av_stage_cost([EQ] * 3, P0) == 0.0


def test_stage_cost_quadratic():
    p = dataclasses.replace(P0, gap_scale=1.0)
    for x in (0.5, -2.0, 3.0):
        s = PairState(17.0 + x, 10.0, 10.0)
        assert av_stage_cost([EQ, s, EQ], p) == pytest.approx(x * x)
    # default scaling divides the error by gap_scale before squaring
    assert av_stage_cost([PairState(20.0, 10.0, 10.0)], P0) == pytest.approx((3.0 / P0.gap_scale) ** 2)


def test_stage_cost_gap_penalties():
    s = PairState(4.0, 0.0, 0.0)
    track = ((5.0 - 4.0) / P0.gap_scale) ** 2
    assert av_stage_cost([s], P0) == pytest.approx(track + P0.penalty * 1.0)
    far = PairState(61.0, 10.0, 10.0)
    assert av_stage_cost([far], P0) > P0.penalty


def test_total_cost_terms():
    states = [EQ] * 3
    assert av_total_cost([1, 1, 1], [0, 0, 0], states, 5.0, P0) == av_stage_cost(states, P0)
    p1 = dataclasses.replace(P0, alpha=1.0)
    assert av_total_cost([0.2, 0, 0], [0.2, 0, 0], states, 5.0, p1) == 0.0
    got = av_total_cost([1, 1, 1], [0, 0, 0], states, 5.0, p1)
    assert got == pytest.approx(1 - 126 / 129, abs=1e-12)
    # a plan whose score drags trust below T_min over the horizon is penalized
    poor = av_total_cost([3, 3, 3], [-3, -3, -3], states, 0.0, p1)
    assert poor > P0.penalty * 0.01


def _human_setup(v=10.0, v_av=10.0, gap=None):
    gap = 5.0 + 1.2 * v if gap is None else gap
    sh = PairState(gap, v_av, v)
    speeds = [v_av] * 3
    return sh, speeds


def test_human_cost_vanishes_at_equilibrium():
    sh, speeds = _human_setup()
    w = HumanCost(v_des=10.0)
    states = rollout(sh, speeds, [0, 0, 0], P0)
    assert human_cost([0, 0, 0], speeds, states, w, P0, v_av_now=10.0) == 0.0


def test_human_cost_single_features():
    sh, speeds = _human_setup(gap=60.0)
    plan = [0.5, -1.0, 0.25]
    states = rollout(sh, speeds, plan, P0)
    w = HumanCost(weights=(1, 0, 0, 0))
    assert human_cost(plan, speeds, states, w, P0, v_av_now=10.0) == pytest.approx(sum(u * u for u in plan))

    sh, speeds = _human_setup(v=10.0, v_av=12.0, gap=50.0)
    states = rollout(sh, speeds, [0, 0, 0], P0)
    w = HumanCost(weights=(0, 0, 5, 0))
    assert human_cost([0, 0, 0], speeds, states, w, P0, v_av_now=12.0) == pytest.approx(12.0)


def test_human_cost_penalizes_short_gap():
    sh = PairState(6.0, 10.0, 14.0)
    speeds = [10.0] * 3
    states = rollout(sh, speeds, [0, 0, 0], P0)
    assert human_cost([0, 0, 0], speeds, states, HumanCost(), P0, v_av_now=10.0) > P0.penalty


def test_stopping_gap():
    assert stopping_gap(10.0, 12.0, 5.0, P0) == 5.0
    assert stopping_gap(12.0, 6.0, 5.0, P0) == pytest.approx(5.0 + (144 - 36) / 6.0)


def test_human_weights_are_normalized_and_validated():
    assert HumanCost(weights=(2, 2, 0, 4)).weights == (0.25, 0.25, 0.0, 0.5)
    for bad in ((0, 0, 0, 0), (1, -1, 1, 1), (1, 1, 1)):
        with pytest.raises(ContractError):
            HumanCost(weights=bad)


# -- solver ---------------------------------------------------------------


def test_equilibrium_is_optimal():
    for alpha in (0.0, 0.5, 1.0):
        p = dataclasses.replace(P0, alpha=alpha)
        rep = av_decide(EQ, 5.0, [0, 0, 0], [10.0] * 3, p)
        np.testing.assert_array_equal(rep.plan, [0.0, 0.0, 0.0])
        assert rep.cost == 0.0 and rep.violations == ()


def test_short_gap_opens_up():
    rep = av_decide(PairState(10.0, 10.0, 10.0), 5.0, [0, 0, 0], [10.0] * 3, P0)
    assert rep.plan[0] < 0


def test_non_finite_cost_aborts():
    with pytest.raises(SolverError):
        solve_horizon(lambda x: math.nan, P0)
    with pytest.raises(SolverError):
        solve_horizon(lambda x: math.inf if x[0] > 0.5 else x[1] ** 2, P0, warm_start=[0.0, 1.0, 0.0])


def test_solver_respects_bounds_and_warm_start():
    f = lambda x: sum((u - 10.0) ** 2 for u in x)  # noqa: E731
    warm = [2.0, -1.0, 0.5]
    rep = solve_horizon(f, P0, warm_start=warm)
    np.testing.assert_array_equal(rep.plan, [3.0, 3.0, 3.0])
    assert rep.cost <= f(warm)
    with pytest.raises(ContractError):
        solve_horizon(f, P0, warm_start=[0.0])


def test_shift_plan():
    assert shift_plan([1.0, 2.0, 3.0]) == [2.0, 3.0, 3.0]


def test_decide_is_deterministic_and_first_step_starts_from_zero():
    s, pv, ex = PairState(14.0, 12.0, 11.0), [12.5, 13.0, 13.0], [0.3, 0.3, 0.3]
    p = dataclasses.replace(P0, alpha=0.5)
    a = av_decide(s, 1.0, ex, pv, p)
    b = av_decide(s, 1.0, ex, pv, p)
    np.testing.assert_array_equal(a.plan, b.plan)
    ctl = AvController(p)
    c = ctl.decide(s, 1.0, ex, pv)
    np.testing.assert_array_equal(c.plan, av_decide(s, 1.0, ex, pv, p, warm_start=[0.0] * 3).plan)
    hc = HumanController(P0, HumanCost())
    h = hc.decide(PairState(20.0, 12.0, 11.0), ex, 12.0)
    np.testing.assert_array_equal(
        h.plan, human_decide(PairState(20.0, 12.0, 11.0), ex, 12.0, HumanCost(), P0, [0.0] * 3).plan
    )


@settings(max_examples=60, deadline=None)
@given(
    gap=st.floats(5.0, 60.0), vl=st.floats(0.0, 35.0), vf=st.floats(0.0, 35.0),
    dv=st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3),
    ex1=st.lists(acc, min_size=3, max_size=3), ex2=st.lists(acc, min_size=3, max_size=3),
)
def test_trust_unaware_ignores_expected_plan(gap, vl, vf, dv, ex1, ex2):
    pv = list(np.clip(vl + np.cumsum(dv), 0.0, 40.0))
    s = PairState(gap, vl, vf)
    a = av_decide(s, 0.0, ex1, pv, P0, hold=0.5)
    b = av_decide(s, 0.0, ex2, pv, P0, hold=0.5)
    np.testing.assert_array_equal(a.plan, b.plan)
    assert np.all((a.plan >= P0.u_min) & (a.plan <= P0.u_max))


def test_alpha_ordering_at_fixed_state():
    rng = np.random.default_rng(5)
    for _ in range(40):
        state, pv, expected, _, _ = random_instance(rng)
        scores = []
        for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
            p = dataclasses.replace(P0, v_max=36.0, alpha=alpha)
            rep = av_decide(state, 10.0, expected, pv, p, hold=float(expected[0]))
            scores.append(explicability(rep.plan, expected, p.eps))
        assert all(b <= a + 1e-12 for a, b in zip(scores, scores[1:])), scores
