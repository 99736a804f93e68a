# %% [markdown]
# # Calibrating the candidate configs
#
# The default window family (7 scales x 5 aspect ratios) is thinned by greedy
# NMS.  For a fixed stride the surviving count grows with the NMS threshold,
# though not strictly: greedy suppression can keep a few more boxes at a
# slightly lower threshold.  So bisection only gets close, and a scan over a
# 0.001 grid around that point lists every threshold that hits the target.
# The committed configs came from this search over a small stride grid.

# %%
import numpy as np

from viewrank import SlidingWindowConfig, generate_windows


def count(stride, threshold):
    return len(generate_windows(SlidingWindowConfig(stride=stride, nms_iou_threshold=threshold)))


def search_threshold(stride, target, lo=0.5, hi=1.0, steps=10, span=0.01):
    """Thresholds on a 0.001 grid near the bisection point that hit ``target``."""
    for _ in range(steps):
        mid = (lo + hi) / 2
        if count(stride, mid) < target:
            lo = mid
        else:
            hi = mid
    grid = np.round(np.arange(lo - span, hi + span, 0.001), 3)
    return [float(t) for t in grid if t <= 1.0 and count(stride, t) == target]


# %%
for target, stride in [(344, 0.041), (919, 0.0405), (1745, 0.0235)]:
    hits = search_threshold(stride, target)
    print(f"target {target}: stride {stride} -> thresholds {hits}")

# %% [markdown]
# Before NMS the stride alone fixes the pool size.

# %%
for stride in (0.0235, 0.0405, 0.041):
    print(stride, count(stride, 1.0))
