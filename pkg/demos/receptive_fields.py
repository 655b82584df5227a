"""
How far does one block see?
===========================

A 3x3 bottleneck sees a 3x3 square. A single shift in the middle of a
block reaches only the shift's own offsets. Shifting at all three stages
composes the offsets, so the reach grows to radius 3 for the price of none.
"""

from shiftnet.blocks import BlockSpec
from shiftnet.cost import minkowski, neighborhood_set, receptive_field, render_offsets

for kind, hood in [("bottleneck", "none"), ("single_shift", "4c"),
                   ("multi_shift", "4c"), ("multi_shift", "8c")]:
    rf = receptive_field(BlockSpec(kind, 256, 256, hood))
    print(f"{kind} {hood}: {len(rf)} offsets")
    print(render_offsets(rf, radius=3))
    print()

# the multi-shift field is a Minkowski sum: the cross plus itself twice
cross = neighborhood_set("4c")
print(minkowski(minkowski(cross, cross), cross) == receptive_field(BlockSpec("multi_shift", 256, 256, "4c")))

# dropping the origin does not shrink a multi-shift block: the inner skip brings it back
print(len(receptive_field(BlockSpec("multi_shift", 256, 256, "4c-no"))))
