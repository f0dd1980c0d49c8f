"""
Matching Brownian moments with cubature formulas
================================================

A cubature formula of order ``m`` is a random path whose expected signature
agrees with that of Brownian motion up to graded degree ``m``.  The time
letter counts twice.  This script checks three formulas against the closed
form ``exp(e0 + 1/2 sum_i e_i e_i)``.
"""

from wiener_cubature import (
    check_moments,
    degree3_formula,
    expected_brownian_signature,
    ninomiya_victoir_formula,
    wong_zakai_formula,
)
from wiener_cubature.tensor_algebra import Alphabet

####################################################################
# The Brownian target.  With the time letter 0 present, ``E[S]`` has
# coefficient 1 on ``(0,)`` and 1/2 on every ``(i, i)``.

target = expected_brownian_signature(Alphabet(2, has_time_letter=True), 4)
for word in [(0,), (1, 1), (1, 2), (1, 1, 2, 2), (0, 1, 1)]:
    print(word, target.coefficient(word))

####################################################################
# Four straight lines ``t -> t (+-sqrt(2) e_i)`` in the plane reproduce all
# moments of degree three exactly but not those of degree four.

f = degree3_formula(2)
rep3 = check_moments(f, 3)
rep4 = check_moments(f, 4)
print("degree 3:", rep3.passed, "max diff", rep3.max_abs_diff)
print("degree 4:", rep4.passed, "failing words", [r.word for r in rep4.failures()][:5])

####################################################################
# The straight line through a Gaussian endpoint is order 3.  Its Levy area is
# zero, so degree-4 words such as ``(1, 2, 1, 2)`` cannot match.

wz = check_moments(wong_zakai_formula(2), 4, "mc", samples=200_000, seed=1)
print("WZ degree 3 part passes:", all(r.passed for r in wz.rows if len(r.word) + r.word.count(0) <= 3))
for r in wz.rows:
    if r.word in [(1, 2, 1, 2), (1, 1, 2, 2), (0, 1, 1)]:
        print("WZ", r.word, f"{r.cubature:.4f} vs {r.target:.4f} (stderr {r.stderr:.4f})")

####################################################################
# The Ninomiya-Victoir path moves one coordinate at a time in an order picked
# by a coin flip.  It matches every word up to graded degree 5.

nv = check_moments(ninomiya_victoir_formula(2), 5, "mc", samples=200_000, seed=2)
print("NV degree 5:", nv.passed, "over", len(nv.rows), "words")
