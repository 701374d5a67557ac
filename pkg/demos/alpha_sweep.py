"""Sweep the explicability weight alpha over the US06 cycle.

With alpha = 0 the AV only tracks its constant-time-headway gap. Raising
alpha makes it prefer plans the human can anticipate (here: constant
acceleration extrapolation), which lowers the explicability score and
raises the trust the human ends the trip with.

    python3 demos/alpha_sweep.py [--cycle us06] [--out demo_out]

Takes about a minute on one core.
"""

import argparse
import time
from pathlib import Path

from trustmpc import SimParams, improvement, load_cycle, metrics, run
from trustmpc.plot import line_chart

parser = argparse.ArgumentParser()
parser.add_argument("--cycle", default="us06")
parser.add_argument("--out", default="demo_out")
args = parser.parse_args()

cycle = load_cycle(args.cycle)
params = SimParams().with_cycle(cycle.speeds)
alphas = (0.0, 0.25, 0.5, 0.75, 1.0)

logs, rows = {}, {}
t0 = time.perf_counter()
for a in alphas:
    logs[a] = run(cycle, predictor="ca", alpha=a)
    rows[a] = metrics(logs[a], params)
print(f"{len(alphas)} runs of {len(cycle)} steps in {time.perf_counter() - t0:.1f}s\n")

print(" alpha  final trust  avg E      RMSE")
for a, m in rows.items():
    print(f" {a:5.2f}  {m.final_trust:11.3f}  {m.avg_explicability:.5f}  {m.rmse_pred:.4f}")

imp = improvement(rows[0.0], rows[1.0])
print(f"\nalpha 0 -> 1: trust {imp['final_trust']:+.2f}%, E {imp['avg_explicability']:+.2f}%, RMSE {imp['rmse']:+.2f}%")

# trust can grow by at most delta per step, so the final level is bounded
# by delta times the cycle length; the trust-unaware run is already close
print(f"trust ceiling for this cycle: {params.delta * len(cycle):.1f}")

worst = {a: max(m.violations.values()) for a, m in rows.items()}
print(f"safety violations per run: {worst}")

out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)
svg = line_chart(
    [(f"alpha = {a:g}", log.t.tolist(), log.T.tolist()) for a, log in logs.items()],
    title=f"Trust level, {cycle.name}", xlabel="time (s)", ylabel="trust T",
)
(out / f"trust_{cycle.name}.svg").write_text(svg)
print(f"wrote {out / f'trust_{cycle.name}.svg'}")
