"""Train the GRU plan estimator and compare it with constant acceleration.

The GRU learns the AV's next three accelerations from the last ten seconds
of what the human observes (gap, relative speed, headway, AV acceleration).
Training data comes from constant-acceleration runs over every alpha. A
better estimate of the AV plan means the AV needs to deviate less from what
the human expects, so both prediction RMSE and the explicability score drop.

    python3 demos/gru_predictor.py [--epochs 100] [--hidden 32]

Takes about two minutes on one core.
"""

import argparse

from trustmpc import GruModel, SimParams, TrainConfig, build_dataset, load_cycle, metrics, run, train_gru

parser = argparse.ArgumentParser()
parser.add_argument("--epochs", type=int, default=100)
parser.add_argument("--hidden", type=int, default=32)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

cycle = load_cycle("us06")
params = SimParams().with_cycle(cycle.speeds)
alphas = (0.0, 0.25, 0.5, 0.75, 1.0)

print("simulating training data ...")
logs = {a: run(cycle, predictor="ca", alpha=a) for a in alphas}
data = build_dataset(logs.values(), H=params.H, N=params.N)
print(f"{len(data.X_train)} training windows, {len(data.X_val)} validation")

model, history = train_gru(
    GruModel(hidden=args.hidden, N=params.N, seed=args.seed), data, TrainConfig(epochs=args.epochs, seed=args.seed)
)
best = min(history, key=lambda r: r[2])
print(f"stopped after {len(history)} epochs; best validation MSE {best[2]:.5f} at epoch {best[0]}")

ca = metrics(logs[1.0], params)
gru = metrics(run(cycle, predictor="gru", alpha=1.0, model=model), params)
print("\nalpha = 1     RMSE     avg E     final trust")
print(f"CA        {ca.rmse_pred:8.4f}  {ca.avg_explicability:.5f}  {ca.final_trust:8.3f}")
print(f"GRU       {gru.rmse_pred:8.4f}  {gru.avg_explicability:.5f}  {gru.final_trust:8.3f}")
