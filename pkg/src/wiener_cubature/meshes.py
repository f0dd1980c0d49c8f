"""Meshes of [0, 1], concatenated cubature paths and the group-valued random walk."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cubature import CubatureFormula
from .paths import PiecewiseLinearPath, signature
from .tensor_algebra import ContractError, TensorSeries, chen_step, dilate, tensor_mul


@dataclass(frozen=True, eq=False)
class Mesh:
    """Partition ``0 = t_0 < t_1 < ... < t_n = 1``."""

    nodes: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ContractError("a mesh needs at least the nodes 0 and 1")
        if t[0] != 0.0 or t[-1] != 1.0:
            raise ContractError("mesh must start at 0 and end at 1")
        if np.any(np.diff(t) <= 0):
            raise ContractError("mesh nodes must be strictly increasing")
        object.__setattr__(self, "nodes", t)

    @property
    def n(self) -> int:
        return self.nodes.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def size(self) -> float:
        """Mesh size ``|D| = max_k dt_k``."""
        return float(self.steps.max())

    def __repr__(self):
        return f"Mesh({self.label or self.n})"


def uniform_mesh(n: int) -> Mesh:
    if n < 1:
        raise ContractError("n must be >= 1")
    t = np.arange(n + 1) / n
    return Mesh(t, f"uniform:{n}")


def kusuoka_mesh(n: int, gamma: float) -> Mesh:
    """Nodes ``(k/n)**gamma``, refined near 0 for ``gamma > 1``."""
    if n < 1:
        raise ContractError("n must be >= 1")
    if gamma < 1:
        raise ContractError(f"Kusuoka meshes need gamma >= 1, got {gamma}")
    t = (np.arange(n + 1) / n) ** gamma
    t[-1] = 1.0
    return Mesh(t, f"kusuoka:{n}:{gamma:g}")


def parse_mesh(spec: str) -> Mesh:
    """``uniform:n`` or ``kusuoka:n:gamma``."""
    parts = spec.split(":")
    try:
        if parts[0] == "uniform" and len(parts) == 2:
            return uniform_mesh(int(parts[1]))
        if parts[0] == "kusuoka" and len(parts) == 3:
            return kusuoka_mesh(int(parts[1]), float(parts[2]))
    except ValueError as exc:
        raise ContractError(f"bad mesh spec {spec!r}: {exc}") from None
    raise ContractError(f"bad mesh spec {spec!r}; expected uniform:n or kusuoka:n:gamma")


def build_cubature_path(formula: CubatureFormula, mesh: Mesh, rng: np.random.Generator, size=()) -> PiecewiseLinearPath:
    """Concatenate ``n`` independent draws, the ``k``-th rescaled to ``[t_{k-1}, t_k]``.

    ``size`` is the batch shape of independent concatenated paths.  Spatial
    parts scale by ``sqrt(dt_k)``, the time component by ``dt_k``, so that the
    time component hits ``t_k`` exactly at every node.
    """
    size = (size,) if isinstance(size, int) else tuple(size)
    draws = formula.sample(rng, size + (mesh.n,))
    dt = mesh.steps
    s = draws.breakpoints
    ell = s.size - 1
    bp = (mesh.nodes[:-1, None] + dt[:, None] * s[None, 1:]).ravel()
    bp = np.concatenate([[0.0], bp])
    # the last breakpoint of each block is the mesh node itself
    bp[ell::ell] = mesh.nodes[1:]
    blocks = draws.nodes[..., 1:, :] * np.sqrt(dt)[:, None, None]
    offsets = np.cumsum(draws.nodes[..., -1, :] * np.sqrt(dt)[:, None], axis=-2)
    offsets = np.concatenate([np.zeros_like(offsets[..., :1, :]), offsets[..., :-1, :]], axis=-2)
    nodes = (blocks + offsets[..., None, :]).reshape(size + (mesh.n * ell, formula.d))
    nodes = np.concatenate([np.zeros(size + (1, formula.d)), nodes], axis=-2)
    tn = None
    if draws.time_nodes is not None:
        h = np.broadcast_to(draws.time_nodes, size + (mesh.n, ell + 1))
        tb = mesh.nodes[:-1, None] + dt[:, None] * h[..., 1:]
        tn = np.concatenate([np.zeros(size + (1,)), tb.reshape(size + (mesh.n * ell,))], axis=-1)
        tn[..., ell::ell] = mesh.nodes[1:]
        if not size:
            tn = tn.reshape(-1)
        elif np.all(tn == tn.reshape(-1, tn.shape[-1])[0]):
            tn = tn.reshape(-1, tn.shape[-1])[0].copy()
    return PiecewiseLinearPath(bp, nodes, tn)


@dataclass
class WalkSample:
    """Signatures of a concatenated cubature path at the mesh nodes.

    ``nodes_sig`` has batch shape ``path.batch_shape + (n + 1,)``.
    """

    mesh: Mesh
    nodes_sig: TensorSeries
    path: PiecewiseLinearPath | None = None

    def at(self, k: int) -> TensorSeries:
        return self.nodes_sig[(Ellipsis, k)] if self.nodes_sig.batch_shape else self.nodes_sig


def _node_positions(path: PiecewiseLinearPath, mesh: Mesh) -> np.ndarray:
    pos = np.searchsorted(path.breakpoints, mesh.nodes - 1e-12)
    pos = np.clip(pos, 0, path.breakpoints.size - 1)
    if np.any(np.abs(path.breakpoints[pos] - mesh.nodes) > 1e-12):
        raise ContractError("path breakpoints do not include every mesh node")
    return pos


def walk_nodes(path: PiecewiseLinearPath, mesh: Mesh, m: int) -> WalkSample:
    """Signatures ``S_m(W^D)_{0, t_k}`` at every node, by incremental Chen products."""
    pos = _node_positions(path, mesh)
    inc = path.increments()
    batch = path.batch_shape
    sig = TensorSeries.unit(path.alphabet, m, batch)
    out = [sig]
    j = 0
    for k in range(1, mesh.n + 1):
        while j < pos[k]:
            sig = chen_step(sig, inc[..., j, :])
            j += 1
        out.append(sig)
    levels = [np.stack([s.levels[i] for s in out], axis=-2) for i in range(m + 1)]
    return WalkSample(mesh, TensorSeries(path.alphabet, m, levels), path)


def walk_from_increments(xi: TensorSeries) -> TensorSeries:
    """Running products ``Xi_k = xi_1 ... xi_k`` along the last batch axis (``Xi_0 = 1``)."""
    n = xi.batch_shape[-1]
    outer_batch = xi.batch_shape[:-1]
    cur = TensorSeries.unit(xi.alphabet, xi.m, outer_batch)
    out = [cur]
    for k in range(n):
        cur = tensor_mul(cur, xi[(Ellipsis, k)])
        out.append(cur)
    levels = [np.stack([s.levels[i] for s in out], axis=-2) for i in range(xi.m + 1)]
    return TensorSeries(xi.alphabet, xi.m, levels)


def block_increments(formula: CubatureFormula, mesh: Mesh, rng: np.random.Generator, size, m: int, spatial: bool = True) -> TensorSeries:
    """Walk increments ``xi_k = delta_{sqrt(dt_k)} S_m(W_(k))`` with batch ``size + (n,)``."""
    size = (size,) if isinstance(size, int) else tuple(size)
    draws = formula.sample(rng, size + (mesh.n,))
    if spatial:
        draws = draws.spatial()
    sig = signature(draws, m)
    return dilate(sig, np.sqrt(mesh.steps))
