"""Weak-approximation estimates of ``E[f(X)]`` along cubature paths.

Two estimators are offered: Monte Carlo over independently drawn cubature
paths, and for discrete formulas the exhaustive expansion of the cubature
tree (``k**n`` branches, no recombination).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cubature import CubatureFormula
from .meshes import Mesh, build_cubature_path, kusuoka_mesh, uniform_mesh
from .paths import PiecewiseLinearPath
from .sde import SolutionPath, VectorFieldSystem, integrate_along_path
from .tensor_algebra import ContractError

MC_CHUNK = 50_000
TREE_BUDGET = 10**7
DIVERGENCE_LIMIT = 1e-3
RESOLVE_BAND = 4.0
# errors below this fraction of the reference are integrator bias, not signal
RESOLVE_FLOOR = 1e-9


class BudgetError(ContractError):
    """The cubature tree would exceed the branch budget."""


# payoffs -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Payoff:
    """A functional of the solution path, vectorized over batch axes.

    ``kind`` is one of ``terminal``, ``asian``, ``lookback``, ``barrier`` or
    ``custom``.  Path-dependent kinds look only at the recorded sample times,
    so a barrier is monitored discretely (at the mesh nodes when used with
    the estimators below).
    """

    kind: str
    coordinate: int = 0
    strike: float | None = None
    level: float | None = None
    func: Callable | None = None
    config: dict = field(default_factory=dict)

    def __call__(self, sol: SolutionPath) -> np.ndarray:
        return path_payoff_eval(self, sol)


def terminal(func: Callable[[np.ndarray], np.ndarray], config: dict | None = None) -> Payoff:
    """``f(X_1)``; ``func`` maps states ``(..., N)`` to values ``(...)``."""
    return Payoff("terminal", func=func, config=config or {"kind": "terminal"})


def call(strike: float, coordinate: int = 0) -> Payoff:
    return terminal(
        lambda x: np.maximum(x[..., coordinate] - strike, 0.0),
        {"kind": "call", "strike": strike, "coordinate": coordinate},
    )


def smooth_bump(scale: float = 100.0, coordinate: int = 0) -> Payoff:
    """``exp(-(x_i / scale - 1)^2)``, a smooth bounded test payoff."""
    return terminal(
        lambda x: np.exp(-((x[..., coordinate] / scale - 1.0) ** 2)),
        {"kind": "bump", "scale": scale, "coordinate": coordinate},
    )


def asian(strike: float, coordinate: int = 0) -> Payoff:
    """Call on the arithmetic average of ``x_i`` over the sample times after 0."""
    return Payoff("asian", coordinate, strike, config={"kind": "asian", "strike": strike, "coordinate": coordinate})


def lookback(strike: float | None = None, coordinate: int = 0) -> Payoff:
    """Running maximum of ``x_i``, or a call on it when ``strike`` is given."""
    return Payoff("lookback", coordinate, strike, config={"kind": "lookback", "strike": strike, "coordinate": coordinate})


def barrier(level: float, strike: float, coordinate: int = 0) -> Payoff:
    """Up-and-out call: zero once ``x_i >= level`` at a sample time."""
    return Payoff(
        "barrier", coordinate, strike, level, config={"kind": "barrier", "level": level, "strike": strike, "coordinate": coordinate}
    )


def custom(func: Callable[[SolutionPath], np.ndarray]) -> Payoff:
    return Payoff("custom", func=func, config={"kind": "custom"})


_PAYOFF_KEYS = {
    "call": ({"strike"}, {"coordinate"}),
    "bump": (set(), {"scale", "coordinate"}),
    "asian": ({"strike"}, {"coordinate"}),
    "lookback": (set(), {"strike", "coordinate"}),
    "barrier": ({"level", "strike"}, {"coordinate"}),
}


def payoff_from_config(cfg: dict) -> Payoff:
    kind = cfg.get("kind")
    if kind not in _PAYOFF_KEYS:
        raise ContractError(f"unknown payoff kind {kind!r}; expected one of {sorted(_PAYOFF_KEYS)}")
    required, optional = _PAYOFF_KEYS[kind]
    missing = required - set(cfg)
    unknown = set(cfg) - required - optional - {"kind"}
    if missing or unknown:
        raise ContractError(f"payoff {kind!r}: missing {sorted(missing)}, unknown {sorted(unknown)}")
    args = {k: v for k, v in cfg.items() if k != "kind"}
    return {"call": call, "bump": smooth_bump, "asian": asian, "lookback": lookback, "barrier": barrier}[kind](**args)


def path_payoff_eval(payoff: Payoff, path: SolutionPath) -> np.ndarray | float:
    """Evaluate ``payoff`` on a solution path (scalar for an unbatched path)."""
    x = path.states
    if x.shape[-2] < 1:
        raise ContractError("empty solution path")
    i = payoff.coordinate
    if payoff.kind == "terminal":
        val = payoff.func(x[..., -1, :])
    elif payoff.kind == "custom":
        val = payoff.func(path)
    elif payoff.kind == "asian":
        xs = x[..., 1:, i] if x.shape[-2] > 1 else x[..., :, i]
        val = np.maximum(xs.mean(axis=-1) - payoff.strike, 0.0)
    elif payoff.kind == "lookback":
        val = x[..., :, i].max(axis=-1)
        if payoff.strike is not None:
            val = np.maximum(val - payoff.strike, 0.0)
    elif payoff.kind == "barrier":
        alive = x[..., :, i].max(axis=-1) < payoff.level
        val = np.where(alive, np.maximum(x[..., -1, i] - payoff.strike, 0.0), 0.0)
    else:
        raise ContractError(f"unknown payoff kind {payoff.kind!r}")
    val = np.asarray(val, dtype=float)
    return float(val) if val.ndim == 0 else val


# Monte Carlo ---------------------------------------------------------------------


@dataclass
class MCEstimate:
    value: float
    stderr: float
    samples: int
    diverged: int = 0

    @property
    def unreliable(self) -> bool:
        """More than 0.1% of the paths blew up."""
        return self.diverged > DIVERGENCE_LIMIT * (self.samples + self.diverged)


def _check_inputs(formula: CubatureFormula, vf: VectorFieldSystem, x0) -> np.ndarray:
    if formula.d != vf.d:
        raise ContractError(f"formula has d = {formula.d} but the system has {vf.d} diffusion fields")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (vf.dim,):
        raise ContractError(f"x0 must have length {vf.dim}")
    return x0


def _seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def _mc_chunk(formula, mesh, vf, payoff, x0, size, seq, substeps):
    rng = np.random.default_rng(seq)
    driver = build_cubature_path(formula, mesh, rng, (size,))
    sol = integrate_along_path(vf, driver, x0, substeps, mesh.nodes, on_divergence="mask")
    vals = np.asarray(path_payoff_eval(payoff, sol), dtype=float).reshape(size)
    ok = ~sol.diverged & np.isfinite(vals)
    vals = vals[ok]
    if vals.size == 0:
        return 0, 0.0, 0.0, size
    mean = vals.mean()
    return vals.size, float(mean), float(((vals - mean) ** 2).sum()), size - vals.size


def estimate_mc(
    formula: CubatureFormula,
    mesh: Mesh,
    vf: VectorFieldSystem,
    payoff: Payoff,
    x0,
    samples: int,
    seed=0,
    workers: int = 1,
    chunk: int = MC_CHUNK,
    substeps: int | None = None,
) -> MCEstimate:
    """Monte Carlo mean and standard error of ``payoff`` over cubature paths.

    Samples are drawn in fixed chunks, each with its own child of
    ``SeedSequence(seed)``, and reduced in chunk order; the result therefore
    does not depend on ``workers``.  Divergent paths are dropped and counted.
    """
    if samples < 1:
        raise ContractError("samples must be >= 1")
    x0 = _check_inputs(formula, vf, x0)
    sizes = [min(chunk, samples - k) for k in range(0, samples, chunk)]
    seqs = _seed_sequence(seed).spawn(len(sizes))
    jobs = [(formula, mesh, vf, payoff, x0, s, q, substeps) for s, q in zip(sizes, seqs)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda a: _mc_chunk(*a), jobs))
    else:
        parts = [_mc_chunk(*a) for a in jobs]
    # Chan's pairwise update, in chunk order
    n, mean, m2, bad = 0, 0.0, 0.0, 0
    for nb, mb, m2b, db in parts:
        bad += db
        if nb == 0:
            continue
        tot = n + nb
        delta = mb - mean
        mean += delta * nb / tot
        m2 += m2b + delta * delta * n * nb / tot
        n = tot
    if n == 0:
        return MCEstimate(float("nan"), float("nan"), 0, bad)
    stderr = math.sqrt(m2 / (n - 1) / n) if n > 1 else 0.0
    return MCEstimate(mean, stderr, n, bad)


# exhaustive tree -----------------------------------------------------------------


def _tree_level(formula, vf, states, dt, substeps):
    """Advance every state along every (rescaled) cubature path of one step."""
    paths = formula.paths
    driver = PiecewiseLinearPath(
        paths.breakpoints * dt,
        paths.nodes * math.sqrt(dt),
        None if paths.time_nodes is None else paths.time_nodes * dt,
    )
    sol = integrate_along_path(vf, driver, states[:, None, :], substeps, sample_times=[0.0, driver.length])
    return sol.terminal.reshape(-1, vf.dim)


def _subtree(formula, mesh, vf, x0, first, substeps):
    w = formula.weights
    states = _tree_level(formula, vf, x0[None, :], mesh.steps[0], substeps)[first : first + 1]
    weights = w[first : first + 1].copy()
    for dt in mesh.steps[1:]:
        states = _tree_level(formula, vf, states, dt, substeps)
        weights = (weights[:, None] * w[None, :]).reshape(-1)
    return weights, states


def estimate_tree(
    formula: CubatureFormula,
    mesh: Mesh,
    vf: VectorFieldSystem,
    payoff: Payoff,
    x0,
    workers: int = 1,
    budget: int = TREE_BUDGET,
    substeps: int | None = None,
) -> float:
    """``sum over branch words of (product of weights) * f(endpoint)``.

    Exact expectation for a discrete formula, up to ODE integration error.
    Top-level branches are expanded independently and summed with ``fsum``,
    so the result does not depend on enumeration order or ``workers``.
    """
    if formula.kind != "discrete":
        raise ContractError("the cubature tree needs a discrete formula")
    if payoff.kind != "terminal":
        raise ContractError("the cubature tree supports terminal payoffs only")
    x0 = _check_inputs(formula, vf, x0)
    k = formula.n_paths
    need = k**mesh.n
    if need > budget:
        raise BudgetError(f"tree needs {k}^{mesh.n} = {need} branches, budget is {budget}")
    args = [(formula, mesh, vf, x0, b, substeps) for b in range(k)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda a: _subtree(*a), args))
    else:
        parts = [_subtree(*a) for a in args]
    terms = []
    for weights, states in parts:
        terms.extend((weights * np.asarray(payoff.func(states), dtype=float)).tolist())
    return math.fsum(terms)


# convergence studies -------------------------------------------------------------


def mesh_family(kind: str, ns: Sequence[int], gamma: float | None = None) -> list[Mesh]:
    """Uniform or Kusuoka meshes for each ``n`` in ``ns``."""
    if kind == "uniform":
        return [uniform_mesh(n) for n in ns]
    if kind == "kusuoka":
        if gamma is None:
            raise ContractError("Kusuoka meshes need gamma")
        return [kusuoka_mesh(n, gamma) for n in ns]
    raise ContractError(f"unknown mesh family {kind!r}")


@dataclass
class ConvergenceRow:
    n: int
    mesh_size: float
    estimate: float
    stderr: float
    reference: float
    reference_stderr: float
    abs_error: float
    resolvable: bool


@dataclass
class ConvergenceReport:
    rows: list[ConvergenceRow]
    fitted_order: float | None

    @property
    def flagged(self) -> bool:
        """No rate could be fitted (fewer than three resolvable rows)."""
        return self.fitted_order is None

    @property
    def n_resolvable(self) -> int:
        return sum(r.resolvable for r in self.rows)

    def to_csv_rows(self) -> list[list]:
        out = [["n", "mesh_size", "estimate", "stderr", "reference", "abs_error", "resolvable"]]
        for r in self.rows:
            out.append([r.n, repr(r.mesh_size), repr(r.estimate), repr(r.stderr), repr(r.reference), repr(r.abs_error), str(r.resolvable).lower()])
        out.append(["fitted_order", "" if self.fitted_order is None else repr(self.fitted_order)])
        return out


def fit_order(rows: Sequence[ConvergenceRow]) -> float | None:
    """Least-squares slope of ``log abs_error`` on ``log mesh_size`` over resolvable rows."""
    use = [r for r in rows if r.resolvable]
    if len(use) < 3:
        return None
    h = np.log([r.mesh_size for r in use])
    e = np.log([r.abs_error for r in use])
    if np.ptp(h) == 0:
        return None
    return float(np.polyfit(h, e, 1)[0])


def convergence_study(
    formula: CubatureFormula,
    meshes: Sequence[Mesh],
    vf: VectorFieldSystem,
    payoff: Payoff,
    x0,
    samples: int,
    seed=0,
    reference: float | tuple[float, float] = 0.0,
    method: str = "mc",
    workers: int = 1,
    substeps: int | None = None,
) -> ConvergenceReport:
    """Errors against ``reference`` on each mesh and the fitted weak order.

    ``reference`` is a number or ``(value, stderr)`` for a Monte Carlo oracle.
    A row is resolvable when its error exceeds four joint standard errors and
    a relative floor of ``1e-9`` (below which integrator bias dominates).
    ``method="tree"`` uses :func:`estimate_tree` (zero sampling error).
    """
    ref, ref_se = (reference, 0.0) if np.isscalar(reference) else (float(reference[0]), float(reference[1]))
    seqs = _seed_sequence(seed).spawn(len(meshes))
    rows = []
    for mesh, seq in zip(meshes, seqs):
        if method == "tree":
            est, se = estimate_tree(formula, mesh, vf, payoff, x0, workers, substeps=substeps), 0.0
        elif method == "mc":
            r = estimate_mc(formula, mesh, vf, payoff, x0, samples, seq, workers, substeps=substeps)
            est, se = r.value, r.stderr
        else:
            raise ContractError("method must be 'mc' or 'tree'")
        err = abs(est - ref)
        joint = math.hypot(se, ref_se)
        ok = bool(err > RESOLVE_BAND * joint and err > RESOLVE_FLOOR * max(abs(ref), 1.0))
        rows.append(ConvergenceRow(mesh.n, mesh.size, est, se, ref, ref_se, err, ok))
    rows.sort(key=lambda r: r.n)
    return ConvergenceReport(rows, fit_order(rows))
