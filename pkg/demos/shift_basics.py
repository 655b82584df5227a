"""
Shifting channels instead of convolving them
=============================================

A shift layer moves each channel's spatial plane by one integer offset.
Channels are split into equal groups, one group per offset, and any
leftover channels stay put. There are no weights and no multiplies.
"""

import numpy as np

from shiftnet.shift import build_plan, shift_adjoint, shift_forward

# ten channels over the 4-connected neighbourhood (up, left, origin, right, down):
# two channels per offset, nothing left over
plan = build_plan(10, "4c")
for offset, start, stop in plan.segments():
    print(f"channels {start}-{stop - 1} -> {offset}")

# a single bright pixel in every channel of a 5x5 plane
x = np.zeros((1, 10, 5, 5))
x[:, :, 2, 2] = 1
y = shift_forward(x, plan)
print("channel 0 (moved up):")
print(y[0, 0])
print("channel 6 (moved right):")
print(y[0, 6])

# pixels pushed past the border are dropped and the hole is zero filled
edge = np.zeros((1, 10, 3, 3))
edge[:, :, 0, :] = 1
print("top row shifted up ->", shift_forward(edge, plan)[0, 0].sum(), "left")

# backprop through a shift is the same shift with every offset negated
rng = np.random.default_rng(0)
a, b = rng.standard_normal((2, 1, 10, 6, 6))
print("<Sa, b> =", np.sum(shift_forward(a, plan) * b))
print("<a, S'b> =", np.sum(a * shift_adjoint(b, plan)))

# eleven channels: 11 // 5 = 2 per offset, the last one stays at the origin
print(build_plan(11, "4c").assignment[-1])
