"""Power allocation for one slot: equal split against the successive convex
approximation, for a handful of users picked from a desk-scale scenario.

Run with ``python3 demos/02_power_allocation.py``.
"""

import numpy as np

from beamsched.config import DESK
from beamsched.poweralloc import InfeasibleQoS, allocate_power
from beamsched.precoding import rate_mbps, sinr_vector
from beamsched.scheduler import Scenario, set_gains, sort_by_channel_gain, sus_schedule

sc = Scenario.build(DESK, seed=1)
cfg = sc.config
nu = np.full(5, 1.0)  # every user wants SINR >= 1 (1 bit/s/Hz)

# The five strongest users tend to crowd into the same beams, and no power
# split gets all of them to their target.
strongest = tuple(sorted(sort_by_channel_gain(sc.H)[:5]))
try:
    allocate_power(strongest, set_gains(sc, strongest), nu, cfg.max_power_w, cfg.bandwidth_mhz)
except InfeasibleQoS as exc:
    print(f"strongest users {strongest}: {exc}")

# A semi-orthogonal set is a far better candidate.
ids = tuple(sorted(sus_schedule(sc, range(cfg.num_users))[:5]))
g = set_gains(sc, ids)

equal = np.full(len(ids), cfg.max_power_w / len(ids))
r_equal = rate_mbps(sinr_vector(g.z, equal, g.noise), cfg.bandwidth_mhz)
alloc, st = allocate_power(ids, g, nu, cfg.max_power_w, cfg.bandwidth_mhz)
r_alloc = rate_mbps(sinr_vector(g.z, alloc.powers, g.noise), cfg.bandwidth_mhz)

print(f"users {ids}, budget {cfg.max_power_w:.2f} W")
print(f"{'user':>6} {'equal W':>9} {'equal Mbps':>11} {'SCA W':>9} {'SCA Mbps':>9}")
for k, pe, re_, pa, ra in zip(ids, equal, r_equal, alloc.powers, r_alloc):
    print(f"{k:>6} {pe:9.2f} {re_:11.1f} {pa:9.2f} {ra:9.1f}")
print(f"sum rate: equal {r_equal.sum():.1f} Mbps, SCA {r_alloc.sum():.1f} Mbps")

print(f"\nSCA ran {st.iteration} iterations, converged={st.converged}, KKT residual {st.kkt_residual:.1e}")
print("sum-rate trace:", " ".join(f"{r:.2f}" for r in st.sum_rate_trace))

# With semi-orthogonal users and RZF precoding the interference is already
# small, so the equal split sits close to the optimum and the gain is modest.
