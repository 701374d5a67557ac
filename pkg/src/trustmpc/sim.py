"""Closed-loop simulation of preceding traffic -> AV -> human driver.

Every step the human's estimate of the AV plan is formed from the
observation history, the AV solves its trust-aware problem against the
preview of the preceding traffic, the explicability of the chosen plan
updates the trust level, the human solves against the expected AV plan and
both followers execute their first action.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .control import AvController, HumanController, HumanCost, SolverError
from .core import PairState, SimParams, step_pair
from .cycles import DriveCycle, preview
from .predict import GruModel, PredictorWindow, feature_row, predict_ca, predict_gru
from .trust import TrustState, explicability, performance, trust_step

SCALAR_COLUMNS = (
    "t", "v_pt", "v_av", "v_h", "gap_av", "gap_h", "u_av", "u_h", "E", "P", "T", "evals_av", "evals_h",
)


class SimulationError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {cause}")
        self.step = step


@dataclass(eq=False)
class RunLog:
    """Per-step record of a run.

    Speeds and gaps are the state at the start of step ``t``; ``u_av`` and
    ``u_h`` are the accelerations executed during the step; ``T`` is the
    trust level after the step's update, starting from ``T0``.
    """

    t: np.ndarray
    v_pt: np.ndarray
    v_av: np.ndarray
    v_h: np.ndarray
    gap_av: np.ndarray
    gap_h: np.ndarray
    u_av: np.ndarray
    u_h: np.ndarray
    plan_av: np.ndarray
    plan_exp: np.ndarray
    E: np.ndarray
    P: np.ndarray
    T: np.ndarray
    evals_av: np.ndarray
    evals_h: np.ndarray
    T0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def columns(self) -> list[str]:
        N = self.plan_av.shape[1]
        return (
            list(SCALAR_COLUMNS[:8])
            + [f"plan_av_{k}" for k in range(N)]
            + [f"plan_exp_{k}" for k in range(N)]
            + list(SCALAR_COLUMNS[8:])
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns()) + "\n")
        for i in range(len(self)):
            row = [str(int(self.t[i]))]
            row += [repr(float(getattr(self, c)[i])) for c in SCALAR_COLUMNS[1:8]]
            row += [repr(float(x)) for x in self.plan_av[i]]
            row += [repr(float(x)) for x in self.plan_exp[i]]
            row += [repr(float(self.E[i])), repr(float(self.P[i])), repr(float(self.T[i]))]
            row += [str(int(self.evals_av[i])), str(int(self.evals_h[i]))]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


@dataclass(frozen=True)
class RunMetrics:
    final_trust: float
    avg_explicability: float
    rmse_pred: float
    violations: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "final_trust": self.final_trust,
            "avg_explicability": self.avg_explicability,
            "rmse": self.rmse_pred,
            "violations": dict(self.violations),
        }


def make_predictor(kind: str, model: Optional[GruModel] = None) -> Callable[[PredictorWindow, int], np.ndarray]:
    if kind == "ca":
        return lambda w, N: predict_ca(w.last_u_av, N)
    if kind == "gru":
        if model is None:
            raise ValueError("predictor 'gru' needs a trained model")
        return lambda w, N: predict_gru(model, w)
    raise ValueError(f"unknown predictor kind {kind!r}; expected 'ca' or 'gru'")


def run(
    cycle: DriveCycle,
    predictor: str = "ca",
    alpha: float = 0.0,
    params: Optional[SimParams] = None,
    seed: int = 0,
    model: Optional[GruModel] = None,
    human: Optional[HumanCost] = None,
    T0: float = 0.0,
) -> RunLog:
    """Simulate one full cycle and return the per-step log.

    The run is deterministic; ``seed`` is recorded in the log metadata only.
    """
    params = dataclasses.replace((params or SimParams()).with_cycle(cycle.speeds), alpha=float(alpha))
    human = human or HumanCost(tau_H=params.tau_H, d_s=params.d_s)
    predict = make_predictor(predictor, model)
    N, H, dt = params.N, params.H, params.dt
    L = len(cycle)
    v_pt = cycle.speeds

    av = AvController(params)
    hu = HumanController(params, human)
    trust = TrustState(T0, params.delta, params.p_thre)

    v0 = float(v_pt[0])
    av_state = PairState(params.d_s + v0 * params.tau_R, v0, v0)
    h_state = PairState(human.d_s + v0 * human.tau_H, v0, v0)

    rec = {c: np.zeros(L) for c in SCALAR_COLUMNS}
    plan_av = np.zeros((L, N))
    plan_exp = np.zeros((L, N))
    # before the first step the AV is assumed to be cruising (zero acceleration)
    history = [feature_row(h_state.gap, v0, v0, 0.0, params.v_floor)]
    u_av_prev = u_h_prev = 0.0
    started = False

    for t in range(L):
        try:
            window = PredictorWindow.from_history(history, H)
            expected = np.asarray(predict(window, N), dtype=float)
            pv = preview(cycle, t, N)
            rep = av.decide(av_state, trust.T, expected, pv, hold=u_av_prev)
            E = explicability(rep.plan, expected, params.eps)
            P = performance(E)
            trust = trust_step(trust, P)
            hrep = hu.decide(h_state, expected, av_state.v_follower, hold=u_h_prev)
        except (SolverError, ValueError, RuntimeError) as exc:
            raise SimulationError(t, exc) from exc

        u_av = float(rep.plan[0])
        u_h = float(hrep.plan[0])
        for name, value in (
            ("t", t), ("v_pt", av_state.v_leader), ("v_av", av_state.v_follower),
            ("v_h", h_state.v_follower), ("gap_av", av_state.gap), ("gap_h", h_state.gap),
            ("u_av", u_av), ("u_h", u_h), ("E", E), ("P", P), ("T", trust.T),
            ("evals_av", rep.evaluations), ("evals_h", hrep.evaluations),
        ):
            rec[name][t] = value
        plan_av[t] = rep.plan
        plan_exp[t] = expected

        row = feature_row(h_state.gap, av_state.v_follower, h_state.v_follower, u_av, params.v_floor)
        if not started:
            history = [row]
            started = True
        else:
            history.append(row)
        av_next = step_pair(av_state, v_pt[min(t + 1, L - 1)], u_av, params)
        h_state = step_pair(h_state, av_next.v_follower, u_h, params)
        av_state = av_next
        u_av_prev, u_h_prev = u_av, u_h

    meta = {"cycle": cycle.name, "predictor": predictor, "alpha": float(alpha), "seed": seed}
    return RunLog(
        **{c: rec[c] for c in SCALAR_COLUMNS[:8]},
        plan_av=plan_av, plan_exp=plan_exp,
        E=rec["E"], P=rec["P"], T=rec["T"],
        evals_av=rec["evals_av"].astype(int), evals_h=rec["evals_h"].astype(int),
        T0=T0, meta=meta,
    )


def metrics(log: RunLog, params: Optional[SimParams] = None) -> RunMetrics:
    if len(log) == 0:
        raise ValueError("cannot compute metrics of an empty log")
    params = params or SimParams()
    err = log.plan_exp[:, 0] - log.u_av
    violations = {
        "av_gap_below_min": int(np.sum(log.gap_av < params.d_min)),
        "av_gap_above_max": int(np.sum(log.gap_av > params.d_max)),
        "human_gap_below_standstill": int(np.sum(log.gap_h < params.d_s)),
        "trust_below_min": int(np.sum(log.T < params.T_min)),
    }
    return RunMetrics(
        final_trust=float(log.T[-1]),
        avg_explicability=float(np.mean(log.E)),
        rmse_pred=float(math.sqrt(np.mean(err ** 2))),
        violations=violations,
    )


def improvement(base: RunMetrics, other: RunMetrics) -> dict:
    """Percent improvement of ``other`` over the trust-unaware ``base`` run.

    Trust improves upward; explicability score and RMSE improve downward.
    """
    out = {}
    for key, sign in (("final_trust", 1.0), ("avg_explicability", -1.0), ("rmse", -1.0)):
        b = getattr(base, "rmse_pred" if key == "rmse" else key)
        o = getattr(other, "rmse_pred" if key == "rmse" else key)
        if b == 0:
            raise ZeroDivisionError(f"baseline {key} is zero; improvement undefined")
        out[key] = 100.0 * sign * (o - b) / b
    return out


def replay_trust(log: RunLog, params: Optional[SimParams] = None) -> np.ndarray:
    """Recompute the trust trace from the logged performance levels."""
    params = params or SimParams()
    state = TrustState(log.T0, params.delta, params.p_thre)
    out = np.empty(len(log))
    for i, P in enumerate(log.P):
        state = trust_step(state, float(P))
        out[i] = state.T
    return out


def metrics_json(rows: dict) -> str:
    return json.dumps(rows, indent=2, sort_keys=True) + "\n"
