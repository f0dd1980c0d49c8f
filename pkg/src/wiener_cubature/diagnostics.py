"""Empirical checks on the cubature random walk.

Each check returns a small report object; none of them asserts anything, the
caller decides what to do with a failed row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .cubature import CubatureFormula
from .meshes import Mesh, WalkSample, block_increments, walk_from_increments
from .paths import signature
from .tensor_algebra import ContractError, TensorSeries, dilate, homogeneous_norm, inverse, log_trunc, tensor_mul

KS_SIGNIFICANCE = 1e-3
BAND = 4.0
SLOPE_TOL = 0.3


def _seeds(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _chunks(samples: int, chunk: int) -> list[int]:
    n = -(-samples // chunk)
    return [min(chunk, samples - i * chunk) for i in range(n)]


# moment scaling along the walk ---------------------------------------------------


@dataclass
class ScalingRow:
    mesh: str
    k: int
    t: float
    ratio: float
    stderr: float


@dataclass
class ScalingReport:
    p: int
    rows: list[ScalingRow]
    slope: float
    max_ratio: float

    @property
    def bounded(self) -> bool:
        return abs(self.slope) <= SLOPE_TOL


def moment_scaling_check(
    formula: CubatureFormula,
    meshes: Sequence[Mesh],
    p: int = 1,
    samples: int = 10_000,
    seed: int = 0,
    chunk: int = 10_000,
) -> ScalingReport:
    """Estimate ``E|Xi_k|^{4p} / t_k^{2p}`` at every node of every mesh.

    The walk lives on the step-2 group over the spatial letters.  ``slope`` is
    the least-squares slope of ``log ratio`` against ``log t_k`` pooled over
    all meshes and nodes; a bounded ratio shows no systematic drift.
    """
    if p not in (1, 2):
        raise ContractError("p must be 1 or 2")
    rows: list[ScalingRow] = []
    rngs = _seeds(seed, len(meshes))
    for mesh, rng in zip(meshes, rngs):
        s1 = np.zeros(mesh.n)
        s2 = np.zeros(mesh.n)
        for size in _chunks(samples, chunk):
            xi = block_increments(formula, mesh, rng, size, m=2)
            walk = walk_from_increments(xi)
            norms = homogeneous_norm(walk)[..., 1:] ** (4 * p)
            s1 += norms.sum(axis=0)
            s2 += (norms**2).sum(axis=0)
        mean = s1 / samples
        sd = np.sqrt(np.maximum(s2 / samples - mean**2, 0.0))
        t = mesh.nodes[1:]
        scale = t ** (2 * p)
        for k in range(mesh.n):
            rows.append(ScalingRow(mesh.label, k + 1, float(t[k]), float(mean[k] / scale[k]), float(sd[k] / math.sqrt(samples) / scale[k])))
    t = np.array([r.t for r in rows])
    r = np.array([r.ratio for r in rows])
    slope = float(np.polyfit(np.log(t), np.log(r), 1)[0]) if np.unique(t).size > 1 else 0.0
    return ScalingReport(p, rows, slope, float(r.max()))


# marginal (Donsker / CLT) check ---------------------------------------------------


@dataclass
class KSRow:
    coordinate: int
    statistic: float
    pvalue: float

    @property
    def passed(self) -> bool:
        return self.pvalue >= KS_SIGNIFICANCE


@dataclass
class MarginalReport:
    mesh: str
    samples: int
    ks: list[KSRow]
    area_mean: float | None = None
    area_mean_stderr: float | None = None
    area_var: float | None = None
    area_var_stderr: float | None = None

    @property
    def area_applicable(self) -> bool:
        return self.area_mean is not None

    @property
    def ks_passed(self) -> bool:
        return all(r.passed for r in self.ks)

    @property
    def area_mean_passed(self) -> bool | None:
        if not self.area_applicable:
            return None
        return abs(self.area_mean) <= BAND * self.area_mean_stderr

    @property
    def area_var_passed(self) -> bool | None:
        if not self.area_applicable:
            return None
        return abs(self.area_var - 0.25) <= BAND * self.area_var_stderr


def endpoint_and_area(formula: CubatureFormula, mesh: Mesh, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Level-1 endpoint and area ``A^{1,2}`` of ``Xi_n`` for ``size`` independent walks."""
    xi = block_increments(formula, mesh, rng, size, m=2)
    cur = xi[(Ellipsis, 0)]
    for k in range(1, mesh.n):
        cur = tensor_mul(cur, xi[(Ellipsis, k)])
    x = cur.levels[1]
    if formula.d < 2:
        return x, None
    lv2 = cur.level(2)
    area = 0.5 * (lv2[..., 0, 1] - lv2[..., 1, 0])
    return x, area


def donsker_marginal_check(
    formula: CubatureFormula,
    mesh: Mesh,
    samples: int = 100_000,
    seed: int = 0,
    chunk: int = 20_000,
) -> MarginalReport:
    """KS test of each endpoint coordinate against N(0, 1); mean/variance of the Levy area."""
    xs, areas = [], []
    for size, rng in zip(_chunks(samples, chunk), _seeds(seed, len(_chunks(samples, chunk)))):
        x, a = endpoint_and_area(formula, mesh, rng, size)
        xs.append(x)
        if a is not None:
            areas.append(a)
    x = np.concatenate(xs)
    ks = []
    for i in range(formula.d):
        res = stats.kstest(x[:, i], "norm")
        ks.append(KSRow(i + 1, float(res.statistic), float(res.pvalue)))
    report = MarginalReport(mesh.label, samples, ks)
    if areas:
        a = np.concatenate(areas)
        n = a.size
        mu = a.mean()
        var = a.var(ddof=1)
        m4 = np.mean((a - mu) ** 4)
        report.area_mean = float(mu)
        report.area_mean_stderr = float(math.sqrt(var / n))
        report.area_var = float(var)
        report.area_var_stderr = float(math.sqrt(max(m4 - var**2, 0.0) / n))
    return report


# Lindeberg-type CLT conditions ----------------------------------------------------


@dataclass
class ConditionRow:
    mesh: str
    n: int
    mesh_size: float
    second_moment_sum: float
    area_drift: np.ndarray
    covariance: np.ndarray
    truncated: dict[float, float]


@dataclass
class ConditionReport:
    formula: str
    mode: str
    increment_second_moment: float
    level1_mean: np.ndarray
    rows: list[ConditionRow] = field(default_factory=list)


def _increment_support(formula: CubatureFormula, samples: int, seed: int) -> tuple[TensorSeries, np.ndarray, str]:
    if formula.kind == "discrete":
        return signature(formula.paths.spatial(), 2), formula.weights, "exact"
    rng = np.random.default_rng(seed)
    sig = signature(formula.sample(rng, (samples,)).spatial(), 2)
    return sig, np.full(samples, 1.0 / samples), "mc"


def _wsum(w: np.ndarray, v: np.ndarray) -> float:
    return math.fsum(w * v)


def clt_condition_report(
    formula: CubatureFormula,
    meshes: Sequence[Mesh],
    eps: Sequence[float] = (0.5, 1.0),
    samples: int = 100_000,
    seed: int = 0,
) -> ConditionReport:
    """Numerical values of the conditions behind the walk's central limit theorem.

    For every mesh: ``sum_k E|xi_k|^2``, the area drift ``sum_k E[x^{ij}(xi_k)]``,
    the covariance ``sum_k E[x^i x^j (xi_k)]`` and the truncated second moment
    ``sum_k E[|xi_k|^2; |xi_k| >= eps]``.  Discrete formulas are evaluated
    exactly over their support, generative ones on a fixed Monte Carlo sample.
    """
    xi, w, mode = _increment_support(formula, samples, seed)
    d = formula.d
    base = homogeneous_norm(xi) ** 2
    level1_mean = np.array([_wsum(w, xi.levels[1][:, i]) for i in range(d)])
    report = ConditionReport(formula.name, mode, _wsum(w, base), level1_mean)
    for mesh in meshes:
        second = []
        area = np.zeros((d, d))
        cov = np.zeros((d, d))
        trunc = {e: [] for e in eps}
        area_terms = [[[] for _ in range(d)] for _ in range(d)]
        cov_terms = [[[] for _ in range(d)] for _ in range(d)]
        for dt in mesh.steps:
            g = dilate(xi, math.sqrt(dt))
            nrm2 = homogeneous_norm(g) ** 2
            second.append(_wsum(w, nrm2))
            lg = log_trunc(g)
            x = lg.levels[1]
            a = lg.level(2)
            for i in range(d):
                for j in range(d):
                    cov_terms[i][j].append(_wsum(w, x[:, i] * x[:, j]))
                    if i < j:
                        area_terms[i][j].append(_wsum(w, a[:, i, j]))
            for e in eps:
                trunc[e].append(_wsum(w, np.where(np.sqrt(nrm2) >= e, nrm2, 0.0)))
        for i in range(d):
            for j in range(d):
                cov[i, j] = math.fsum(cov_terms[i][j])
                if i < j:
                    area[i, j] = math.fsum(area_terms[i][j])
        report.rows.append(
            ConditionRow(
                mesh.label,
                mesh.n,
                mesh.size,
                math.fsum(second),
                area,
                cov,
                {e: math.fsum(v) for e, v in trunc.items()},
            )
        )
    return report


# Hoelder-type tightness statistic ---------------------------------------------------


def holder_statistic(walk: WalkSample, alpha: float):
    """``max d(Xi_s, Xi_t) / |t - s|^alpha`` over dyadic-spaced node pairs.

    Pairs are ``(i, i + 2^j)`` for every scale ``2^j <= n`` plus ``(0, n)``.
    """
    if not 0 < alpha < 1:
        raise ContractError("alpha must lie in (0, 1)")
    sig = walk.nodes_sig
    t = walk.mesh.nodes
    n = walk.mesh.n
    steps = sorted({2**j for j in range(int(math.log2(n)) + 1)} | {n})
    best = None
    for step in steps:
        a = sig[(Ellipsis, slice(0, n + 1 - step))]
        b = sig[(Ellipsis, slice(step, n + 1))]
        dist = homogeneous_norm(tensor_mul(inverse(a), b))
        val = np.max(dist / (t[step:] - t[: n + 1 - step]) ** alpha, axis=-1)
        best = val if best is None else np.maximum(best, val)
    return float(best) if np.ndim(best) == 0 else best
