"""Piecewise-linear paths with an optional Lipschitz time component.

A path stores its breakpoints and node values; slopes are derived on demand.
Node arrays may carry leading batch axes (shared breakpoints), which is how
Monte Carlo samples of cubature paths are represented.
"""
from __future__ import annotations

import json
from typing import Sequence

import numpy as np

from .tensor_algebra import Alphabet, ContractError, TensorSeries, batch_index, chen_step, segment_exp

DEDUP_RTOL = 1e-15


class PiecewiseLinearPath:
    """Piecewise-linear path ``[0, T] -> R^d`` started at the origin.

    Parameters
    ----------
    breakpoints : array of shape ``(l+1,)``
        Strictly increasing, starting at 0.
    nodes : array of shape ``batch + (l+1, d)``
        Values at the breakpoints; the first row must be zero.
    time_nodes : array of shape ``batch + (l+1,)`` or ``(l+1,)``, optional
        Values of the time component ``h`` at the breakpoints, ``h(0) = 0``.
    """

    def __init__(self, breakpoints, nodes, time_nodes=None):
        bp = np.asarray(breakpoints, dtype=float)
        nodes = np.asarray(nodes, dtype=float)
        if bp.ndim != 1 or bp.size < 1:
            raise ContractError("breakpoints must be a non-empty 1-d array")
        if bp[0] != 0.0:
            raise ContractError("breakpoints must start at 0")
        if np.any(np.diff(bp) <= 0):
            raise ContractError("breakpoints must be strictly increasing")
        if nodes.ndim < 2 or nodes.shape[-2] != bp.size:
            raise ContractError(f"nodes need shape (..., {bp.size}, d), got {nodes.shape}")
        if np.any(nodes[..., 0, :] != 0.0):
            raise ContractError("paths must start at the origin")
        if time_nodes is not None:
            time_nodes = np.asarray(time_nodes, dtype=float)
            if time_nodes.shape[-1] != bp.size:
                raise ContractError("time component needs one value per breakpoint")
            if np.any(time_nodes[..., 0] != 0.0):
                raise ContractError("time component must satisfy h(0) = 0")
        self.breakpoints = bp
        self.nodes = nodes
        self.time_nodes = time_nodes

    # basic properties -------------------------------------------------------------

    @property
    def d(self) -> int:
        return self.nodes.shape[-1]

    @property
    def length(self) -> float:
        """Length ``T`` of the parameter interval."""
        return float(self.breakpoints[-1])

    @property
    def n_segments(self) -> int:
        return self.breakpoints.size - 1

    @property
    def batch_shape(self) -> tuple[int, ...]:
        shape = self.nodes.shape[:-2]
        if self.time_nodes is not None:
            shape = np.broadcast_shapes(shape, self.time_nodes.shape[:-1])
        return shape

    @property
    def has_time(self) -> bool:
        return self.time_nodes is not None

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(self.d, self.has_time)

    @property
    def endpoint(self) -> np.ndarray:
        return self.nodes[..., -1, :]

    def durations(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def slopes(self) -> np.ndarray:
        return np.diff(self.nodes, axis=-2) / self.durations()[:, None]

    def time_slopes(self) -> np.ndarray | None:
        if self.time_nodes is None:
            return None
        return np.diff(self.time_nodes, axis=-1) / self.durations()

    def increments(self) -> np.ndarray:
        """Segment increments ``batch + (l, L)``, time column first when present."""
        dx = np.diff(self.nodes, axis=-2)
        if self.time_nodes is None:
            return dx
        dh = np.diff(self.time_nodes, axis=-1)
        dh = np.broadcast_to(dh, dx.shape[:-1])
        return np.concatenate([dh[..., None], dx], axis=-1)

    def time_lipschitz(self) -> float:
        """Maximal slope magnitude of the time component (0 when absent)."""
        s = self.time_slopes()
        return 0.0 if s is None else float(np.max(np.abs(s)))

    def __getitem__(self, idx) -> "PiecewiseLinearPath":
        if not self.batch_shape:
            raise TypeError("cannot index an unbatched path")
        idx = batch_index(idx, len(self.batch_shape))
        nodes = np.broadcast_to(self.nodes, self.batch_shape + self.nodes.shape[-2:])[idx]
        tn = None
        if self.time_nodes is not None:
            tn = np.broadcast_to(self.time_nodes, self.batch_shape + self.time_nodes.shape[-1:])[idx]
        return PiecewiseLinearPath(self.breakpoints, nodes, tn)

    def spatial(self) -> "PiecewiseLinearPath":
        """The same path with its time component dropped."""
        return PiecewiseLinearPath(self.breakpoints, self.nodes)

    def with_identity_time(self) -> "PiecewiseLinearPath":
        return PiecewiseLinearPath(self.breakpoints, self.nodes, self.breakpoints.copy())

    # evaluation -------------------------------------------------------------------

    def value_at(self, t) -> np.ndarray:
        """Spatial value at times ``t`` (shape ``batch + t.shape + (d,)``)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        nodes = np.moveaxis(self.nodes, -2, 0)
        out = _interp_batched(self.breakpoints, nodes, t)
        return np.moveaxis(out, 0, -2)

    def time_at(self, t) -> np.ndarray:
        if self.time_nodes is None:
            raise ContractError("path has no time component")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tn = np.moveaxis(self.time_nodes[..., None], -2, 0)
        return np.moveaxis(_interp_batched(self.breakpoints, tn, t), 0, -2)[..., 0]

    def refine(self, extra) -> "PiecewiseLinearPath":
        """Insert extra breakpoints inside ``[0, T]``; the path itself is unchanged."""
        extra = np.asarray(extra, dtype=float)
        extra = extra[(extra > 0) & (extra < self.length)]
        bp = _dedup(np.union1d(self.breakpoints, extra), self.length)
        nodes = self.value_at(bp)
        nodes[..., 0, :] = 0.0
        tn = None
        if self.time_nodes is not None:
            tn = self.time_at(bp)
            tn[..., 0] = 0.0
        return PiecewiseLinearPath(bp, nodes, tn)

    # serialization ----------------------------------------------------------------

    def to_dict(self) -> dict:
        if self.batch_shape:
            raise ContractError("only unbatched paths serialize")
        out = {"d": self.d, "breakpoints": self.breakpoints.tolist(), "nodes": self.nodes.tolist()}
        if self.time_nodes is not None:
            out["h_breakpoints"] = self.breakpoints.tolist()
            out["h_nodes"] = self.time_nodes.tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "PiecewiseLinearPath":
        bp = np.asarray(data["breakpoints"], dtype=float)
        nodes = np.asarray(data["nodes"], dtype=float).reshape(bp.size, int(data["d"]))
        if "h_nodes" not in data:
            return cls(bp, nodes)
        hbp = np.asarray(data.get("h_breakpoints", bp), dtype=float)
        hn = np.asarray(data["h_nodes"], dtype=float)
        if hbp.shape == bp.shape and np.array_equal(hbp, bp):
            return cls(bp, nodes, hn)
        if not np.isclose(hbp[-1], bp[-1]):
            raise ContractError("time component must live on the same interval as the path")
        merged = _dedup(np.union1d(bp, hbp), bp[-1])
        spatial = cls(bp, nodes).value_at(merged)
        h = np.interp(merged, hbp, hn)
        spatial[0] = 0.0
        h[0] = 0.0
        return cls(merged, spatial, h)

    @classmethod
    def from_json(cls, text: str) -> "PiecewiseLinearPath":
        return cls.from_dict(json.loads(text))

    @classmethod
    def linear(cls, increment, length: float = 1.0, time_increment: float | None = None):
        """Single straight segment from the origin."""
        inc = np.asarray(increment, dtype=float)
        nodes = np.stack([np.zeros_like(inc), inc], axis=-2)
        tn = None if time_increment is None else np.array([0.0, time_increment])
        return cls(np.array([0.0, length]), nodes, tn)

    def __repr__(self):
        b = f", batch={self.batch_shape}" if self.batch_shape else ""
        return f"PiecewiseLinearPath(d={self.d}, segments={self.n_segments}, T={self.length:g}, time={self.has_time}{b})"


def _interp_batched(xp: np.ndarray, fp: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Linear interpolation of ``fp`` (first axis aligned with ``xp``) at points ``x``."""
    idx = np.clip(np.searchsorted(xp, x, side="right") - 1, 0, xp.size - 2)
    x0, x1 = xp[idx], xp[idx + 1]
    w = np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
    w = w.reshape(w.shape + (1,) * (fp.ndim - 1))
    return fp[idx] * (1 - w) + fp[idx + 1] * w


def _dedup(bp: np.ndarray, length: float) -> np.ndarray:
    tol = DEDUP_RTOL * length
    keep = np.concatenate([[True], np.diff(bp) > tol])
    out = bp[keep]
    out[-1] = bp[-1]
    return out


def signature(path: PiecewiseLinearPath, m: int) -> TensorSeries:
    """Step-``m`` signature over the whole parameter interval.

    Each segment contributes ``exp`` of its increment (time letter included when
    the path carries a time component); the segment factors are multiplied in
    order.  Batched paths give batched signatures.
    """
    alphabet = path.alphabet
    inc = path.increments()
    if inc.shape[-2] == 0:
        return TensorSeries.unit(alphabet, m, path.batch_shape)
    sig = segment_exp(alphabet, m, inc[..., 0, :])
    for j in range(1, inc.shape[-2]):
        sig = chen_step(sig, inc[..., j, :])
    return sig


def rescale(path: PiecewiseLinearPath, dt: float) -> PiecewiseLinearPath:
    """Map a path on ``[0, 1]`` to ``[0, dt]`` via ``s -> sqrt(dt) W(s/dt)``.

    The time component is rescaled as ``s -> dt h(s/dt)``.
    """
    if not dt > 0:
        raise ContractError(f"rescale needs dt > 0, got {dt}")
    if abs(path.length - 1.0) > 1e-12:
        raise ContractError("rescale expects a path on [0, 1]")
    tn = None if path.time_nodes is None else path.time_nodes * dt
    return PiecewiseLinearPath(path.breakpoints * dt, path.nodes * np.sqrt(dt), tn)


def concatenate(parts: Sequence[PiecewiseLinearPath]) -> PiecewiseLinearPath:
    """Join paths end to start; the result lives on ``[0, sum T_k]``."""
    if not parts:
        return PiecewiseLinearPath(np.array([0.0]), np.zeros((1, 1)))
    has_time = {p.has_time for p in parts}
    if len(has_time) != 1:
        raise ContractError("cannot concatenate paths with and without time component")
    d = {p.d for p in parts}
    if len(d) != 1:
        raise ContractError("cannot concatenate paths of different dimension")
    batch = np.broadcast_shapes(*(p.batch_shape for p in parts))
    bps, nodes, tns = [np.zeros(1)], [np.zeros(batch + (1, parts[0].d))], []
    if parts[0].has_time:
        tns.append(np.zeros(batch + (1,)))
    t_off = 0.0
    x_off = np.zeros(batch + (1, parts[0].d))
    h_off = np.zeros(batch + (1,))
    for p in parts:
        bps.append(p.breakpoints[1:] + t_off)
        pn = np.broadcast_to(p.nodes, batch + p.nodes.shape[-2:])
        nodes.append(pn[..., 1:, :] + x_off)
        x_off = x_off + pn[..., -1:, :]
        if p.has_time:
            ph = np.broadcast_to(p.time_nodes, batch + p.time_nodes.shape[-1:])
            tns.append(ph[..., 1:] + h_off)
            h_off = h_off + ph[..., -1:]
        t_off += p.length
    bp = np.concatenate(bps)
    nd = np.concatenate(nodes, axis=-2)
    tn = np.concatenate(tns, axis=-1) if tns else None
    keep = np.concatenate([[True], np.diff(bp) > DEDUP_RTOL * max(t_off, 1e-300)])
    if not keep.all():
        # a dropped breakpoint folds its tiny segment into the next one
        bp, nd = bp[keep], nd[..., keep, :]
        tn = None if tn is None else tn[..., keep]
    return PiecewiseLinearPath(bp, nd, tn)


def reverse(path: PiecewiseLinearPath) -> PiecewiseLinearPath:
    """Traverse the path backwards, re-based at the origin."""
    bp = path.length - path.breakpoints[::-1]
    nodes = path.nodes[..., ::-1, :] - path.nodes[..., -1:, :]
    tn = None
    if path.time_nodes is not None:
        tn = path.time_nodes[..., ::-1] - path.time_nodes[..., -1:]
    return PiecewiseLinearPath(bp, nodes, tn)


def _overlaps(path: PiecewiseLinearPath, s: float | None, t: float | None) -> np.ndarray:
    s = 0.0 if s is None else float(s)
    t = path.length if t is None else float(t)
    if s > t:
        raise ContractError(f"interval needs s <= t, got [{s}, {t}]")
    if s < -1e-12 or t > path.length * (1 + 1e-12):
        raise ContractError("interval outside the path's domain")
    lo = np.maximum(path.breakpoints[:-1], s)
    hi = np.minimum(path.breakpoints[1:], t)
    return np.maximum(hi - lo, 0.0)


def cameron_martin_norm(path: PiecewiseLinearPath, s: float | None = None, t: float | None = None):
    """``sqrt(int_s^t |W'(u)|^2 du)`` of the spatial part."""
    ov = _overlaps(path, s, t)
    speed2 = np.sum(path.slopes() ** 2, axis=-1)
    out = np.sqrt(np.sum(speed2 * ov, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def one_variation(path: PiecewiseLinearPath, s: float | None = None, t: float | None = None):
    """Total variation ``int_s^t |W'(u)| du`` of the spatial part."""
    ov = _overlaps(path, s, t)
    speed = np.linalg.norm(path.slopes(), axis=-1)
    out = np.sum(speed * ov, axis=-1)
    return float(out) if np.ndim(out) == 0 else out
