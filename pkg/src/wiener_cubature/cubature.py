"""Cubature formulas on Wiener space and the moment-matching check."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .paths import PiecewiseLinearPath, signature
from .tensor_algebra import (
    Alphabet,
    ContractError,
    TensorSeries,
    expected_brownian_signature,
)

WEIGHT_TOL = 1e-14
DEFAULT_CHUNK = 50_000

Sampler = Callable[[np.random.Generator, tuple], PiecewiseLinearPath]


class UnsupportedModeError(ContractError):
    pass


@dataclass(frozen=True)
class CubatureFormula:
    """A path-valued random variable with a declared order.

    ``kind`` is ``"discrete"`` (finitely many weighted paths, stacked on common
    breakpoints) or ``"generative"`` (a sampler drawing batches of paths).
    ``time_component`` is ``"none"``, ``"identity"`` (``h(s) = s``) or
    ``"custom"``; when it is not ``"none"`` every path carries a time component
    and moments are taken over the time-augmented alphabet.
    """

    name: str
    order: int
    d: int
    kind: str
    time_component: str = "none"
    weights: np.ndarray | None = None
    paths: PiecewiseLinearPath | None = None
    sampler: Sampler | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("discrete", "generative"):
            raise ContractError(f"unknown formula kind {self.kind!r}")
        if self.time_component not in ("none", "identity", "custom"):
            raise ContractError(f"unknown time component {self.time_component!r}")
        if self.kind == "discrete":
            w = np.asarray(self.weights, dtype=float)
            if self.paths is None or w.ndim != 1 or self.paths.batch_shape != w.shape:
                raise ContractError("discrete formula needs one stacked path per weight")
            if np.any(w <= 0) or abs(math.fsum(w) - 1.0) > WEIGHT_TOL:
                raise ContractError("discrete weights must be positive and sum to 1")
            if abs(self.paths.length - 1.0) > 1e-12:
                raise ContractError("cubature paths live on [0, 1]")
            if self.paths.d != self.d or self.paths.has_time != (self.time_component != "none"):
                raise ContractError("path dimension/time component do not match the formula")
        elif self.sampler is None:
            raise ContractError("generative formula needs a sampler")

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(self.d, self.time_component != "none")

    @property
    def n_paths(self) -> int:
        if self.kind != "discrete":
            raise ContractError("only discrete formulas have a finite support")
        return self.weights.size

    def sample(self, rng: np.random.Generator, size=()) -> PiecewiseLinearPath:
        """Draw independent paths; ``size`` is the batch shape."""
        size = (size,) if isinstance(size, int) else tuple(size)
        if self.kind == "discrete":
            idx = rng.choice(self.n_paths, size=size, p=self.weights)
            nodes = self.paths.nodes[idx]
            tn = None
            if self.paths.time_nodes is not None:
                tn = np.broadcast_to(self.paths.time_nodes, self.paths.batch_shape + (self.paths.breakpoints.size,))[idx]
            return PiecewiseLinearPath(self.paths.breakpoints, nodes, tn)
        return self.sampler(rng, size)

    def to_dict(self) -> dict:
        if self.kind != "discrete":
            raise ContractError("only discrete formulas serialize")
        return {
            "d": self.d,
            "m": self.order,
            "paths": [{"weight": float(w), "path": self.paths[j].to_dict()} for j, w in enumerate(self.weights)],
        }


def discrete_formula(
    weighted_paths: Sequence[tuple[float, PiecewiseLinearPath]],
    order: int,
    name: str = "discrete",
) -> CubatureFormula:
    """Build a discrete formula; paths are refined onto their common breakpoints."""
    if not weighted_paths:
        raise ContractError("a discrete formula needs at least one path")
    weights = np.array([w for w, _ in weighted_paths], dtype=float)
    paths = [p for _, p in weighted_paths]
    d = {p.d for p in paths}
    has_time = {p.has_time for p in paths}
    if len(d) != 1 or len(has_time) != 1:
        raise ContractError("all paths of a formula share dimension and time component")
    bp = paths[0].breakpoints
    for p in paths[1:]:
        bp = np.union1d(bp, p.breakpoints)
    refined = [p.refine(bp) for p in paths]
    bp = refined[0].breakpoints
    if any(r.breakpoints.shape != bp.shape for r in refined):
        raise ContractError("paths could not be aligned on common breakpoints")
    nodes = np.stack([r.nodes for r in refined])
    tn = None
    time_component = "none"
    if has_time.pop():
        tn = np.stack([r.time_nodes for r in refined])
        time_component = "identity" if np.allclose(tn, bp, rtol=0, atol=1e-15) else "custom"
    stacked = PiecewiseLinearPath(bp, nodes, tn)
    return CubatureFormula(name, order, d.pop(), "discrete", time_component, weights, stacked)


def load_formula(path: str) -> CubatureFormula:
    """Read the discrete-formula JSON file ``{d, m, paths: [{weight, path}]}``."""
    with open(path) as fh:
        data = json.load(fh)
    unknown = set(data) - {"d", "m", "paths", "name"}
    if unknown:
        raise ContractError(f"unknown keys in formula file: {sorted(unknown)}")
    items = [(float(e["weight"]), PiecewiseLinearPath.from_dict(e["path"])) for e in data["paths"]]
    f = discrete_formula(items, int(data["m"]), name=data.get("name", path))
    if f.d != int(data["d"]):
        raise ContractError("declared d does not match the paths")
    return f


def degree3_formula(d: int, time_component: str = "identity") -> CubatureFormula:
    """``2d`` straight lines ``t -> t (+-sqrt(d) e_i)``, each with weight ``1/(2d)``."""
    if d < 1:
        raise ContractError("d must be >= 1")
    items = []
    for i in range(d):
        for sign in (1.0, -1.0):
            v = np.zeros(d)
            v[i] = sign * math.sqrt(d)
            h = 1.0 if time_component == "identity" else None
            items.append((1.0 / (2 * d), PiecewiseLinearPath.linear(v, time_increment=h)))
    f = discrete_formula(items, order=3, name=f"deg3(d={d})")
    return f


def wong_zakai_path(z, with_time: bool = True) -> PiecewiseLinearPath:
    """The line ``t -> t z``; ``z`` may carry batch axes before the last one."""
    z = np.asarray(z, dtype=float)
    nodes = np.stack([np.zeros_like(z), z], axis=-2)
    tn = np.array([0.0, 1.0]) if with_time else None
    return PiecewiseLinearPath(np.array([0.0, 1.0]), nodes, tn)


def wong_zakai_formula(d: int, time_component: str = "identity") -> CubatureFormula:
    """Straight line ``t -> t z`` with ``z`` standard normal; order 3."""
    if d < 1:
        raise ContractError("d must be >= 1")
    with_time = time_component == "identity"

    def sampler(rng: np.random.Generator, size: tuple) -> PiecewiseLinearPath:
        return wong_zakai_path(rng.standard_normal(size + (d,)), with_time)

    return CubatureFormula(f"wz(d={d})", 3, d, "generative", "identity" if with_time else "none", sampler=sampler)


def ninomiya_victoir_breakpoints(d: int) -> np.ndarray:
    eps = 1.0 / (d + 1)
    return np.concatenate([[0.0], eps / 2 + eps * np.arange(d + 1), [1.0]])


def ninomiya_victoir_time_nodes(d: int) -> np.ndarray:
    """``h`` rises with slope ``1/eps`` on the first and last half-interval."""
    return np.concatenate([[0.0], np.full(d + 1, 0.5), [1.0]])


def ninomiya_victoir_path(coin, z) -> PiecewiseLinearPath:
    """Path for given coins (``-1`` or ``+1``) and normals ``z`` of shape ``coin.shape + (d,)``."""
    z = np.asarray(z, dtype=float)
    coin = np.asarray(coin)
    d = z.shape[-1]
    size = z.shape[:-1]
    if coin.shape != size or not np.all(np.isin(coin, (-1, 1))):
        raise ContractError("coins must be -1 or +1 with the batch shape of z")
    inc = np.zeros(size + (d + 2, d))
    forward = coin == -1
    for i in range(d):
        # inner piece j (1-based) activates coordinate j (coin -1) or d+1-j (coin +1)
        inc[..., 1 + i, i] = np.where(forward, z[..., i], 0.0)
        inc[..., d - i, i] += np.where(forward, 0.0, z[..., i])
    nodes = np.concatenate([np.zeros(size + (1, d)), np.cumsum(inc, axis=-2)], axis=-2)
    return PiecewiseLinearPath(ninomiya_victoir_breakpoints(d), nodes, ninomiya_victoir_time_nodes(d))


def ninomiya_victoir_formula(d: int) -> CubatureFormula:
    """Order-5 formula: one active coordinate per subinterval, direction flipped by a coin.

    ``[0, 1]`` is split into ``d + 2`` pieces of lengths ``eps/2, eps, ..., eps,
    eps/2`` with ``eps = 1/(d+1)``.  The time component moves on the two outer
    pieces; coordinate ``i`` moves by ``Z^i`` on the ``i``-th inner piece when
    the coin is ``-1`` and on the ``(d+1-i)``-th when it is ``+1``.
    """
    if d < 1:
        raise ContractError("d must be >= 1")

    def sampler(rng: np.random.Generator, size: tuple) -> PiecewiseLinearPath:
        coin = rng.choice(np.array([-1, 1]), size=size)
        return ninomiya_victoir_path(coin, rng.standard_normal(size + (d,)))

    return CubatureFormula(f"nv(d={d})", 5, d, "generative", "custom", sampler=sampler)


def builtin_formula(spec: str, d: int) -> CubatureFormula:
    """Resolve ``builtin:deg3|wz|nv`` or a path to a discrete-formula file."""
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        table = {"deg3": degree3_formula, "wz": wong_zakai_formula, "nv": ninomiya_victoir_formula}
        if name not in table:
            raise ContractError(f"unknown builtin formula {name!r}")
        return table[name](d)
    return load_formula(spec)


# moment matching ----------------------------------------------------------------


@dataclass
class MomentRow:
    word: tuple[int, ...]
    cubature: float
    target: float
    stderr: float
    passed: bool

    @property
    def diff(self) -> float:
        return self.cubature - self.target


@dataclass
class MomentReport:
    formula: str
    m: int
    mode: str
    rows: list[MomentRow]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def max_abs_diff(self) -> float:
        return max(abs(r.diff) for r in self.rows)

    def failures(self) -> list[MomentRow]:
        return [r for r in self.rows if not r.passed]

    def to_csv_rows(self) -> list[list]:
        out = [["word", "cubature", "target", "diff", "stderr", "pass"]]
        for r in self.rows:
            w = "".join(str(a) for a in r.word) or "()"
            out.append([w, repr(r.cubature), repr(r.target), repr(r.diff), repr(r.stderr), int(r.passed)])
        return out


def discrete_expected_signature(formula: CubatureFormula, m: int) -> TensorSeries:
    """``sum_j lambda_j S_m(omega_j)`` with compensated summation over paths."""
    if formula.kind != "discrete":
        raise UnsupportedModeError("exact expectation needs a discrete formula")
    sigs = signature(formula.paths, m)
    w = formula.weights
    levels = []
    for lv in sigs.levels:
        col = [math.fsum(w * lv[:, i]) for i in range(lv.shape[-1])]
        levels.append(np.array(col))
    return TensorSeries(sigs.alphabet, m, levels)


def sample_signatures(formula: CubatureFormula, m: int, rng: np.random.Generator, size: int) -> TensorSeries:
    return signature(formula.sample(rng, (size,)), m)


def mc_signature_moments(
    formula: CubatureFormula, m: int, samples: int, seed: int, chunk: int = DEFAULT_CHUNK
) -> tuple[TensorSeries, TensorSeries]:
    """Sample mean and standard error of ``S_m(W)`` from seeded chunks."""
    n_chunks = -(-samples // chunk)
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    sums = sqs = None
    for c, ss in enumerate(seqs):
        size = min(chunk, samples - c * chunk)
        sig = sample_signatures(formula, m, np.random.default_rng(ss), size)
        s = [lv.sum(axis=0) for lv in sig.levels]
        q = [(lv**2).sum(axis=0) for lv in sig.levels]
        sums = s if sums is None else [a + b for a, b in zip(sums, s)]
        sqs = q if sqs is None else [a + b for a, b in zip(sqs, q)]
    mean = [s / samples for s in sums]
    var = [np.maximum(q / samples - mu**2, 0.0) * samples / max(samples - 1, 1) for q, mu in zip(sqs, mean)]
    se = [np.sqrt(v / samples) for v in var]
    alphabet = formula.alphabet
    return TensorSeries(alphabet, m, mean), TensorSeries(alphabet, m, se)


def check_moments(
    formula: CubatureFormula,
    m: int,
    mode: str = "exact",
    samples: int = 1_000_000,
    seed: int = 0,
    tol: float = 1e-13,
) -> MomentReport:
    """Compare ``E[S_m(W)]`` with the expected Brownian signature word by word.

    In ``"exact"`` mode a word passes when ``|diff| <= tol``; in ``"mc"`` mode
    when ``|diff| <= max(tol, 4 * stderr)``.
    """
    if mode == "exact":
        if formula.kind != "discrete":
            raise UnsupportedModeError("exact moment check needs a discrete formula")
        est = discrete_expected_signature(formula, m)
        se = TensorSeries.zeros(formula.alphabet, m)
    elif mode == "mc":
        est, se = mc_signature_moments(formula, m, samples, seed)
    else:
        raise UnsupportedModeError(f"unknown mode {mode!r}")
    target = expected_brownian_signature(formula.alphabet, m)
    rows = []
    for word in target.words():
        c, t, s = est.coefficient(word), target.coefficient(word), se.coefficient(word)
        band = tol if mode == "exact" else max(tol, 4.0 * s)
        rows.append(MomentRow(word, c, t, s, abs(c - t) <= band))
    return MomentReport(formula.name, m, mode, rows)
