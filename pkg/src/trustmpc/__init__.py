"""Trust-aware model-predictive car following."""

from .control import HumanCost, SolveReport, av_decide, human_decide, solve_horizon
from .core import ContractError, PairState, SimParams, rollout, step_pair
from .cycles import DriveCycle, load_cycle, preview
from .predict import GruModel, PredictorWindow, TrainConfig, build_dataset, predict_ca, predict_gru, train_gru
from .sim import RunLog, RunMetrics, improvement, metrics, run
from .trust import TrustState, explicability, performance, trust_horizon, trust_step

__version__ = "0.1.0"
