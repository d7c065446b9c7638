"""Walkthrough: turning five noisy annotator scores into one realism value.

Each image is scored 1..10 by five annotators. Consolidation first checks
whether anyone saw a clearly realistic body (max >= 8, keep the mean of the
top two); otherwise it drops scores outside half an interquartile range of
the median and averages what survives.
"""

import numpy as np

from bodymetric.dataset import (
    RealismRecord,
    consolidate_record,
    consolidate_scores,
)

cases = [
    ([9, 9, 9, 9, 9], "unanimous praise"),
    ([1, 2, 2, 3, 10], "one enthusiastic outlier, max >= 8 wins"),
    ([1, 2, 2, 3, 7], "the 7 falls outside the tolerance band"),
    ([2, 2, 2, 2, 2], "zero spread: the band is empty, fall back to the mean"),
    ([4, 5, 5, 6, 7], "an agreeable middle ground"),
]

print("annotations            -> consolidated")
for scores, why in cases:
    value = consolidate_scores(scores)
    print(f"{str(scores):<22} -> {value:>4}   # {why}")

# Full records add two wrinkles. Photographs of real people skip annotation
# and score a fixed 9.0. Annotators can also flag an image as invalid
# (no visible person, rendering garbage); three or more such flags mark the
# whole record invalid.
real = RealismRecord(id="photo-1", prompt="a climber", prompt_id="p0",
                     source="real")
flagged = RealismRecord(id="gen-1", prompt="a climber", prompt_id="p0",
                        source="generated",
                        annotations=[1, "invalid", "invalid", "invalid", 2])
print()
print("real photograph  ->", consolidate_record(real).consolidated)
print("3x invalid flags ->", consolidate_record(flagged).consolidated)

# Consolidated values drive pair construction: images under 3 are "low
# realism", over 7 "high realism", and only those extremes form training
# pairs. A quick histogram over random annotation tuples shows how much of
# the raw pool the extremes cover.
rng = np.random.default_rng(0)
values = np.array([consolidate_scores(list(rng.integers(1, 11, size=5)))
                   for _ in range(10_000)])
low, high = (values < 3).mean(), (values > 7).mean()
print()
print(f"random annotator tuples: {low:.1%} low, {high:.1%} high, "
      f"{1 - low - high:.1%} discarded as ambiguous")
