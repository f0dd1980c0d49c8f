"""
Weak convergence of cubature schemes
====================================

Solving the ODE driven by each cubature path and averaging approximates
``E[f(X_1)]`` for the Stratonovich SDE ``dX = V_0 dt + sum_i V_i o dB^i``.
The error decays like ``|D|^((m-1)/2)``: rate 1 for order 3 and rate 2 for
the order-5 Ninomiya-Victoir path.
"""

import itertools

import numpy as np
from scipy.linalg import expm

from wiener_cubature import (
    VectorFieldSystem,
    black_scholes_exact,
    black_scholes_expectation,
    convergence_study,
    degree3_formula,
    estimate_mc,
    integrate_along_path,
    mesh_family,
    ninomiya_victoir_formula,
    ninomiya_victoir_path,
    rescale,
    uniform_mesh,
    wong_zakai_formula,
    wong_zakai_path,
)
from wiener_cubature.estimator import call, smooth_bump

####################################################################
# Black-Scholes with one asset has a single diffusion field commuting with
# the drift.  The solution then depends on the driver only through its
# endpoint and total time, so Gaussian-driven schemes are exact in law at
# every mesh and only Monte Carlo noise remains.

bs = VectorFieldSystem.black_scholes(0.2)
exact = black_scholes_exact(100, 100, 0.2, 1)
for f in (wong_zakai_formula(1), ninomiya_victoir_formula(1)):
    est = estimate_mc(f, uniform_mesh(2), bs, call(100), [100.0], 200_000, seed=1)
    print(f"{f.name}, n=2: {est.value:.4f} +- {est.stderr:.4f} (exact {exact:.4f})")

####################################################################
# The two-line degree-3 formula has a discrete endpoint, so its error is a
# genuine discretization error.  The tree expansion removes sampling noise.

ref = black_scholes_expectation(lambda s: np.exp(-((s / 100 - 1) ** 2)), 100, 0.2)
rep = convergence_study(degree3_formula(1), mesh_family("uniform", [2, 4, 8, 16]), bs, smooth_bump(100), [100.0], 0, reference=ref, method="tree")
for row in rep.rows:
    print(f"deg3 n={row.n:3d} error {row.abs_error:.3e}")
print("fitted order", round(rep.fitted_order, 3))

####################################################################
# With non-commuting linear fields the rate of each Gaussian-driven scheme
# becomes visible.  For the identity payoff one step of the scheme acts as
# the matrix ``E[Phi]``, the flow averaged over the formula.  Gauss-Hermite
# quadrature replaces the normals, so there is no Monte Carlo error at all.

a0 = np.array([[0.1, 0.3], [-0.2, 0.0]])
a1 = 0.6 * np.array([[0.0, 1.0], [0.0, 0.0]])
a2 = 0.6 * np.array([[0.0, 0.0], [1.0, 0.5]])
vf = VectorFieldSystem.linear(a0, a1, a2)
x0 = np.array([1.0, 0.5])
target = expm(a0 + 0.5 * (a1 @ a1 + a2 @ a2)) @ x0

g, w = np.polynomial.hermite_e.hermegauss(12)
z = np.array(list(itertools.product(g, g)))
wz_w = np.prod(np.array(list(itertools.product(w / w.sum(), w / w.sum()))), axis=1)
paths = {
    "WZ": (wong_zakai_path(z), wz_w),
    "NV": (ninomiya_victoir_path(np.repeat([-1, 1], len(z)), np.tile(z, (2, 1))), np.tile(0.5 * wz_w, 2)),
}

ns = [2, 4, 8, 16, 32]
for name, (path, wts) in paths.items():
    errs = []
    for n in ns:
        flows = integrate_along_path(vf, rescale(path, 1 / n), np.eye(2)[:, None, :], substeps=64).terminal
        step = np.einsum("p,cpr->rc", wts, flows)
        errs.append(np.linalg.norm(np.linalg.matrix_power(step, n) @ x0 - target))
    order = np.polyfit(np.log(1 / np.array(ns)), np.log(errs), 1)[0]
    print(name, " ".join(f"{e:.2e}" for e in errs), "order", round(order, 3))
