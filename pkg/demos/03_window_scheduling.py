"""Schedule a whole window with every method and compare throughput and QoS.

Strict variants only schedule users whose per-slot target is met; relaxed
ones trade that guarantee for throughput. Run with
``python3 demos/03_window_scheduling.py [seeds]``.
"""

import sys

from beamsched.bench import run_benchmark
from beamsched.config import DESK
from beamsched.scheduler import METHODS

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 2)
print(f"desk scenario: {DESK.num_users} users, {DESK.num_beams} beams, {DESK.window_slots} slots")
print(f"{'method':>12} {'power':>6} {'sum Mbps':>9} {'satisf.':>8} {'QoS viol.':>9} {'time s':>7}")
for method in METHODS:
    powers = ("alloc",) if method.startswith("alg2") else ("fixed", "alloc") if method in ("sus", "random") else ("fixed",)
    for power in powers:
        reps = [run_benchmark(DESK, method, power, seed=s) for s in seeds]
        mean = lambda key: sum(r.summary[key] for r in reps) / len(reps)
        print(
            f"{method:>12} {power:>6} {mean('mean_sum_mbps'):9.1f} {mean('mean_satisfaction'):8.3f} "
            f"{mean('qos_violation_fraction'):9.3f} {mean('wall_clock_s'):7.2f}"
        )
