"""How explicability drives trust, without any vehicles.

The human expects the AV to keep its current acceleration. We score a few
candidate AV plans against that expectation, then feed a sequence of scores
through the trust update to see how quickly trust is built and lost.

    python3 demos/trust_basics.py
"""

import numpy as np

from trustmpc import TrustState, explicability, performance, trust_horizon, trust_step

EPS = 6.0
expected = [0.5, 0.5, 0.5]

print("plan                   E        P      trust input")
for plan in ([0.5, 0.5, 0.5], [0.8, 0.6, 0.5], [1.5, 1.5, 1.5], [-3.0, -3.0, -3.0], [3.0, -3.0, 3.0]):
    E = explicability(plan, expected, EPS)
    P = performance(E)
    u = P if P >= 0.8 else -(1 - P)
    print(f"{str(plan):22s} {E:.5f}  {P:.4f}  {u:+.4f}")

# the cliff sits where P crosses 0.8
print(f"\nplans with E above atanh(0.2) = {np.arctanh(0.2):.4f} lower trust")

# 60 predictable steps, 10 surprising ones, then 30 predictable again
scores = [0.01] * 60 + [0.3] * 10 + [0.01] * 30
s = TrustState(0.0)
trace = []
for E in scores:
    s = trust_step(s, performance(E))
    trace.append(s.T)
print(f"trust after 60 calm steps: {trace[59]:.3f}")
print(f"after 10 surprises:        {trace[69]:.3f}")
print(f"after 30 more calm steps:  {trace[-1]:.3f}")

# the AV controller looks ahead with the closed form for a constant score
for E in (0.0, 0.2, 0.21, 1.0):
    print(f"3-step look-ahead from T=0 with E={E}: {trust_horizon(0.0, E, 3):+.4f}")
