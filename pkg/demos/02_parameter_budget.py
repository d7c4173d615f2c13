"""Where the parameters go when layers become FP-layers.

Prints the total for every configuration string of the CIFAR bases, the
per-block closed form next to an enumeration of the built block, and the
ResNet-50 variant. Run with ``python demos/02_parameter_budget.py``.
"""
from itertools import product

from fpnet import FPBlock, FpBlockSpec, ModelSpec, count_fp_block_params, describe
from fpnet.models import RejectedConfigError, count_learnable

# One block: the closed form counts the two 1x1 convs and the filter pair.
spec = FpBlockSpec(d_in=32, d_out=64, q=2, k=3)
block = FPBlock(spec)
print(f"FP-block {spec.d_in}->{spec.d_out}, q={spec.q}, k={spec.k}")
print(f"  closed form            {count_fp_block_params(spec):>8,}")
print(f"  enumerated, no BN      {count_learnable(block, exclude_bn=True):>8,}")
print(f"  enumerated, with BN    {block.num_parameters():>8,}")

# Every config string per base. "111" is excluded for CIFAR bases.
for base in ("resnet20", "resnet32", "resnet44"):
    print(f"\n{base}")
    for bits in product("01", repeat=3):
        config = "".join(bits)
        try:
            total = describe(ModelSpec(base, config)).total_params
        except RejectedConfigError:
            print(f"  {config}  rejected")
            continue
        abl = describe(ModelSpec(base, config, ablation=True)).total_params
        rounded = f"({round(total / 1000)}K)"
        print(f"  {config}  {total:>9,}  {rounded:<7} single-filter ablation {abl:>9,}")

# The ablation keeps one of the two depthwise banks, so the gap is
# q * k^2 * d_out per block: 2 * 9 * 64 = 1152, three blocks in layer 3.
fp = describe(ModelSpec("resnet32", "001")).total_params
abl = describe(ModelSpec("resnet32", "001", ablation=True)).total_params
print(f"\nresnet32 001: filter pairs minus single filter = {fp - abl}")

# ImageNet bases are counted arithmetically only.
r50 = describe(ModelSpec("resnet50"))
fp50 = describe(ModelSpec("resnet50", "0101", q=1))
print(f"\nresnet50       {r50.total_params:>12,}")
print(f"resnet50 0101  {fp50.total_params:>12,}")
for name, n in fp50.per_layer_params:
    print(f"  {name:<8}{n:>12,}")
