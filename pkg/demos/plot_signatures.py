"""
Signatures of piecewise-linear paths
====================================

A path is summarized by its truncated signature, the collection of its
iterated integrals.  Straight segments have signature ``exp(increment)`` and
concatenation multiplies signatures.
"""

import numpy as np

from wiener_cubature import PiecewiseLinearPath, concatenate, dilate, rescale, signature, tensor_mul

####################################################################
# Two unit moves, first along e1 and then along e2.  The antisymmetric part
# of level two is the signed (Levy) area, here one half.

p = PiecewiseLinearPath([0, 1, 2], [[0, 0], [1, 0], [1, 1]])
sig = signature(p, 2)
print("level 1:", sig.levels[1])
print("level 2:\n", sig.level(2))
print("area:", 0.5 * (sig.coefficient((1, 2)) - sig.coefficient((2, 1))))

####################################################################
# A closed square loop ends where it starts, yet it remembers the area it
# enclosed.

loop = PiecewiseLinearPath([0, 1, 2, 3, 4], [[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]])
s = signature(loop, 2)
print("loop level 1:", s.levels[1])
print("loop area:", 0.5 * (s.coefficient((1, 2)) - s.coefficient((2, 1))))

####################################################################
# Chen's identity: the signature of a concatenation is the tensor product of
# the pieces' signatures.

rng = np.random.default_rng(0)
a = PiecewiseLinearPath([0, 0.5, 1], np.vstack([[0, 0], np.cumsum(rng.normal(size=(2, 2)), axis=0)]))
b = PiecewiseLinearPath([0, 1], np.vstack([[0, 0], rng.normal(size=(1, 2))]))
lhs = signature(concatenate([a, b]), 4)
rhs = tensor_mul(signature(a, 4), signature(b, 4))
print("Chen defect:", (lhs - rhs).max_abs())

####################################################################
# Brownian scaling: squeezing a path onto ``[0, dt]`` with amplitude
# ``sqrt(dt)`` acts on the signature as a dilation.

dt = 0.3
gap = signature(rescale(a, dt), 4) - dilate(signature(a, 4), np.sqrt(dt))
print("rescale vs dilation:", gap.max_abs())
