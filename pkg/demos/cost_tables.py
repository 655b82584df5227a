"""
Parameters and multiply-accumulates of the builtin networks
===========================================================

Shifts are free, so every neighbourhood variant of a shift network costs
exactly the same. The published totals are printed next to the computed ones.
"""

from shiftnet.cost import count
from shiftnet.netspec import builtin_spec

published = {
    "resnet101": (44.6e6, 7.80e9),
    "shift101-4c": (25.6e6, 4.41e9),
    "multishift101-4c": (25.6e6, 4.41e9),
    "flattened35-4c": (40.8e6, 7.72e9),
}

print(f"{'network':<20}{'params':>14}{'published':>11}{'MACs':>16}{'published':>11}")
for name, (p_ref, f_ref) in published.items():
    r = count(builtin_spec(name))
    print(f"{name:<20}{r.total_params:>14,}{p_ref / 1e6:>10.1f}M{r.total_flops:>16,}{f_ref / 1e9:>10.2f}G")

# the neighbourhood never shows up in the cost
totals = {count(builtin_spec("shift101", h)).machine_lines()[1] for h in ["8c", "4c", "8c-no", "4c-no", "none"]}
print(totals)

# where the MACs go in a shift network: almost all of it is 1x1 convs
r = count(builtin_spec("shift101-4c"))
by_kind = {}
for layer in r.layers:
    by_kind[layer.kind] = by_kind.get(layer.kind, 0) + layer.flops
print({k: f"{v / r.total_flops:.1%}" for k, v in by_kind.items()})

# normalization and pooling can be counted too
print(count(builtin_spec("shift101-4c"), include_bn_flops=True, include_pool_flops=True).machine_lines())
