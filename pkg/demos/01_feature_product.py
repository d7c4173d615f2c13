"""The feature product as a tiny quadratic filter.

Walks through one k x k patch: two linear filters, their product, the
equivalent second-order kernel, and why a straight edge is silenced while a
corner is not. Run with ``python demos/01_feature_product.py``.
"""
import numpy as np

from fpnet import expand_volterra, feature_product_patch
from fpnet.fp_block import FPBlock, FpBlockSpec
from fpnet.tensor import Tensor, default_dtype

np.set_printoptions(precision=3, suppress=True)

# Two oriented derivative filters.
sobel_x = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
sobel_y = sobel_x.T

patches = {
    "vertical edge": np.array([[0, 0, 1], [0, 0, 1], [0, 0, 1]], dtype=float),
    "horizontal edge": np.array([[0, 0, 0], [0, 0, 0], [1, 1, 1]], dtype=float),
    "corner": np.array([[0, 0, 0], [0, 1, 1], [0, 1, 1]], dtype=float),
    "flat": np.full((3, 3), 0.7),
}

print("response of each filter and of their product")
for name, p in patches.items():
    a = float((sobel_x * p).sum())
    b = float((sobel_y * p).sum())
    print(f"  {name:<16} f_a.x = {a:5.1f}   f_b.x = {b:5.1f}   product = {feature_product_patch(p, sobel_x, sobel_y):6.1f}")

# A 1D pattern drives at most one of the two filters, so the product is 0.
# Only the 2D corner survives: an end-stopped response.

# The same number as a quadratic form over pixel pairs.
kernel = expand_volterra(sobel_x, sobel_y)
x = patches["corner"].ravel()
print("\nkernel entries:", kernel.size, "from", 2 * 9, "filter weights")
print("x^T W x =", kernel.evaluate(x), " product =", feature_product_patch(x, sobel_x, sobel_y))
print("rank of (W + W^T)/2:", kernel.rank())

# Suppression is exact for any input orthogonal to one filter.
g = np.random.default_rng(0)
f_a, f_b = g.standard_normal((2, 9))
x = g.standard_normal(9)
x -= f_a * (f_a @ x) / (f_a @ f_a)  # project out f_a (orthogonal up to rounding)
print("\nrandom filters, x orthogonal to f_a: product =", f"{feature_product_patch(x, f_a, f_b):.1e}")

# Inside a block the product is computed per channel on the expanded map.
with default_dtype(np.float64):
    block = FPBlock(FpBlockSpec(1, 1, q=1, k=3))
    block.filter_a.weight.data = sobel_x.reshape(1, 1, 3, 3)
    block.filter_b.weight.data = sobel_y.reshape(1, 1, 3, 3)
    image = np.zeros((1, 1, 8, 8))
    image[0, 0, 3:, 3:] = 1.0  # one bright quadrant: a single corner at (3, 3)
    prod = block.feature_product(Tensor(image)).data[0, 0]
# Zero padding turns the image border into edges too, so the quadrant's
# meeting points with the border light up as corners as well.
print("\nfeature product map of a quadrant image (zero along straight edges):")
print(prod)
