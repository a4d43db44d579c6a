"""Balancing-weight trajectories under dynamic weight averaging.

Three synthetic detection heads: a majority head whose loss falls fast
and two minority heads whose losses fall slowly. The slow heads' descent
rates stay closer to 1, so the temperature softmax pushes their weights
above 1 after warm-up.

Run:  python demos/dwa_weights_demo.py
"""
import numpy as np

from lidar_rebalance import DwaConfig, run_trajectory, total_loss
from lidar_rebalance.balance import SyntheticHeadSpec, synthetic_snapshots

NAMES = {0: "majority ", 1: "minority1", 2: "minority2"}

heads = {
    0: SyntheticHeadSpec(initial=4.0, decay=0.96, noise=0.05),
    1: SyntheticHeadSpec(initial=1.0, decay=0.995, noise=0.05),
    2: SyntheticHeadSpec(initial=0.5, decay=0.999, noise=0.05),
}
snaps = synthetic_snapshots(heads, iterations=600, n_pos=12, rng=np.random.default_rng(3))
trajectory = run_trajectory(snaps, DwaConfig(temperature=2.0, window=50))

print("weights per window (t = window index; first two are warm-up):")
for vec in trajectory:
    bars = "  ".join(f"{NAMES[c]} {vec.alpha[c]:.4f}" for c in sorted(vec.alpha))
    print(f"  t={vec.timestep:<2} {bars}")

final = trajectory.steps[-1]
print("\nweighted total loss on the last snapshot:",
      f"{total_loss(snaps[-1], final):.6f}")
print("sum of weights:", f"{sum(final.alpha.values()):.12f} (= head count)")
