"""Truncated tensor algebra over a (possibly time-augmented) alphabet.

Coefficients are stored densely, one flat array per word length, in
lexicographic word order.  Letter ``0`` (when present) is the time letter and
carries grading weight 2; every other letter has weight 1.  Words whose graded
degree exceeds the level cap are kept at zero.

All arrays may carry leading batch axes, so a :class:`TensorSeries` can hold a
whole Monte Carlo sample of signatures at once.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

MAX_LEVEL = 6
MAX_LETTERS = 7


class ContractError(ValueError):
    """Raised when an operation is called outside its domain."""


@dataclass(frozen=True)
class Alphabet:
    """Spatial letters ``1..d`` plus an optional time letter ``0``."""

    d: int
    has_time_letter: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ContractError(f"alphabet needs d >= 1, got {self.d}")

    @property
    def size(self) -> int:
        return self.d + int(self.has_time_letter)

    @property
    def letters(self) -> tuple[int, ...]:
        first = 0 if self.has_time_letter else 1
        return tuple(range(first, self.d + 1))

    def weight(self, letter: int) -> int:
        return 2 if letter == 0 else 1

    def column(self, letter: int) -> int:
        """Position of ``letter`` in the flattened coefficient order."""
        if letter not in self.letters:
            raise ContractError(f"letter {letter} not in alphabet {self.letters}")
        return letter if self.has_time_letter else letter - 1

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.weight(a) for a in self.letters])


@lru_cache(maxsize=None)
def _degree_table(alphabet: Alphabet, length: int) -> np.ndarray:
    """Graded degree of every word of a given length, flattened."""
    if length == 0:
        return np.zeros(1, dtype=int)
    w = alphabet.weights
    deg = w
    for _ in range(length - 1):
        deg = (deg[:, None] + w[None, :]).ravel()
    return deg


@lru_cache(maxsize=None)
def _masks(alphabet: Alphabet, m: int) -> tuple[np.ndarray, ...]:
    return tuple(_degree_table(alphabet, k) <= m for k in range(m + 1))


class TensorSeries:
    """Element (or batch of elements) of the graded truncated tensor algebra.

    Parameters
    ----------
    alphabet : Alphabet
    m : int
        Level cap on the graded degree.
    levels : sequence of arrays
        ``levels[k]`` has shape ``batch + (L**k,)`` where ``L`` is the
        alphabet size.  Entries of words above the cap are zeroed.
    """

    def __init__(self, alphabet: Alphabet, m: int, levels: Sequence[np.ndarray]):
        if not 1 <= m <= MAX_LEVEL:
            raise ContractError(f"level cap must be in 1..{MAX_LEVEL}, got {m}")
        if alphabet.size > MAX_LETTERS:
            raise ContractError(f"at most {MAX_LETTERS} letters supported")
        if len(levels) != m + 1:
            raise ContractError(f"expected {m + 1} levels, got {len(levels)}")
        masks = _masks(alphabet, m)
        L = alphabet.size
        out = []
        batch = np.broadcast_shapes(*(np.shape(lv)[:-1] for lv in levels))
        for k, lv in enumerate(levels):
            lv = np.asarray(lv, dtype=float)
            if lv.shape[-1] != L**k:
                raise ContractError(f"level {k} needs {L**k} coefficients, got {lv.shape[-1]}")
            if lv.shape[:-1] != batch:
                lv = np.broadcast_to(lv, batch + (L**k,))
            if not masks[k].all():
                lv = np.where(masks[k], lv, 0.0)
            out.append(lv)
        self.alphabet = alphabet
        self.m = m
        self.levels = tuple(out)

    # construction -----------------------------------------------------------------

    @classmethod
    def zeros(cls, alphabet: Alphabet, m: int, batch: tuple[int, ...] = ()) -> "TensorSeries":
        L = alphabet.size
        return cls(alphabet, m, [np.zeros(batch + (L**k,)) for k in range(m + 1)])

    @classmethod
    def unit(cls, alphabet: Alphabet, m: int, batch: tuple[int, ...] = ()) -> "TensorSeries":
        L = alphabet.size
        levels = [np.zeros(batch + (L**k,)) for k in range(m + 1)]
        levels[0][...] = 1.0
        return cls(alphabet, m, levels)

    @classmethod
    def from_words(cls, alphabet: Alphabet, m: int, coefficients: dict) -> "TensorSeries":
        """Build from ``{word_tuple: value}``; letters use alphabet labels."""
        L = alphabet.size
        levels = [np.zeros(L**k) for k in range(m + 1)]
        for word, value in coefficients.items():
            word = tuple(word)
            if len(word) > m:
                raise ContractError(f"word {word} longer than level cap {m}")
            levels[len(word)][_word_index(alphabet, word)] += value
        return cls(alphabet, m, levels)

    @classmethod
    def letter(cls, alphabet: Alphabet, m: int, letter: int, value: float = 1.0) -> "TensorSeries":
        return cls.from_words(alphabet, m, {(letter,): value})

    @classmethod
    def from_increment(cls, alphabet: Alphabet, m: int, increment) -> "TensorSeries":
        """Level-1 element with coefficients ``increment`` (columns in letter order)."""
        inc = np.asarray(increment, dtype=float)
        batch = inc.shape[:-1]
        z = cls.zeros(alphabet, m, batch)
        levels = list(z.levels)
        levels[1] = inc
        return cls(alphabet, m, levels)

    # inspection -------------------------------------------------------------------

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.levels[0].shape[:-1]

    @property
    def scalar(self) -> np.ndarray | float:
        s = self.levels[0][..., 0]
        return float(s) if s.ndim == 0 else s

    def level(self, k: int) -> np.ndarray:
        """Level ``k`` reshaped to ``batch + (L,)*k``."""
        L = self.alphabet.size
        return self.levels[k].reshape(self.batch_shape + (L,) * k)

    def coefficient(self, word: Iterable[int]):
        word = tuple(word)
        c = self.levels[len(word)][..., _word_index(self.alphabet, word)]
        return float(c) if c.ndim == 0 else c

    def words(self) -> list[tuple[int, ...]]:
        """All words of graded degree <= m, ordered by length then lexicographically."""
        out = []
        letters = self.alphabet.letters
        masks = _masks(self.alphabet, self.m)
        for k in range(self.m + 1):
            for idx in np.flatnonzero(masks[k]):
                out.append(_index_word(letters, k, int(idx)))
        return out

    def degree_components(self) -> dict[int, np.ndarray]:
        """Coefficients grouped by graded degree: ``{deg: batch + (n_words,)}``."""
        groups: dict[int, list[np.ndarray]] = {}
        for k in range(1, self.m + 1):
            deg = _degree_table(self.alphabet, k)
            for g in np.unique(deg):
                if g > self.m:
                    continue
                groups.setdefault(int(g), []).append(self.levels[k][..., deg == g])
        return {g: np.concatenate(parts, axis=-1) for g, parts in sorted(groups.items())}

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(lv))) for lv in self.levels)

    def is_finite(self) -> bool:
        return all(np.isfinite(lv).all() for lv in self.levels)

    # batch handling ---------------------------------------------------------------

    def __getitem__(self, idx) -> "TensorSeries":
        if not self.batch_shape:
            raise TypeError("cannot index an unbatched TensorSeries")
        idx = batch_index(idx, len(self.batch_shape)) + (slice(None),)
        return TensorSeries(self.alphabet, self.m, [lv[idx] for lv in self.levels])

    def mean(self, axis=0) -> "TensorSeries":
        return TensorSeries(self.alphabet, self.m, [lv.mean(axis=axis) for lv in self.levels])

    # arithmetic -------------------------------------------------------------------

    def _check_compatible(self, other: "TensorSeries"):
        if not isinstance(other, TensorSeries):
            raise ContractError(f"expected TensorSeries, got {type(other).__name__}")
        if other.alphabet != self.alphabet or other.m != self.m:
            raise ContractError(
                f"incompatible series: {self.alphabet}/m={self.m} vs {other.alphabet}/m={other.m}"
            )

    def __add__(self, other):
        self._check_compatible(other)
        return TensorSeries(self.alphabet, self.m, [a + b for a, b in zip(self.levels, other.levels)])

    def __sub__(self, other):
        self._check_compatible(other)
        return TensorSeries(self.alphabet, self.m, [a - b for a, b in zip(self.levels, other.levels)])

    def __neg__(self):
        return TensorSeries(self.alphabet, self.m, [-a for a in self.levels])

    def __mul__(self, scalar):
        if isinstance(scalar, TensorSeries):
            return NotImplemented
        s = np.asarray(scalar, dtype=float)[..., None]
        return TensorSeries(self.alphabet, self.m, [a * s for a in self.levels])

    __rmul__ = __mul__

    def __matmul__(self, other):
        return tensor_mul(self, other)

    def __repr__(self):
        b = f", batch={self.batch_shape}" if self.batch_shape else ""
        return f"TensorSeries(d={self.alphabet.d}, time={self.alphabet.has_time_letter}, m={self.m}{b})"

    # serialization ----------------------------------------------------------------

    def to_dict(self) -> dict:
        if self.batch_shape:
            raise ContractError("only unbatched series serialize")
        return {
            "d": self.alphabet.d,
            "has_time_letter": self.alphabet.has_time_letter,
            "m": self.m,
            "levels": [lv.tolist() for lv in self.levels],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "TensorSeries":
        alphabet = Alphabet(int(data["d"]), bool(data.get("has_time_letter", False)))
        return cls(alphabet, int(data["m"]), [np.asarray(lv, dtype=float) for lv in data["levels"]])

    @classmethod
    def from_json(cls, text: str) -> "TensorSeries":
        return cls.from_dict(json.loads(text))


def batch_index(idx, n_batch: int) -> tuple:
    """Rewrite a batch index so it never touches trailing data axes."""
    if not isinstance(idx, tuple):
        idx = (idx,)
    if any(i is Ellipsis for i in idx):
        pos = next(j for j, i in enumerate(idx) if i is Ellipsis)
        fill = n_batch - (len(idx) - 1)
        idx = idx[:pos] + (slice(None),) * fill + idx[pos + 1 :]
    return idx + (slice(None),) * (n_batch - len(idx))


def _word_index(alphabet: Alphabet, word: tuple[int, ...]) -> int:
    L = alphabet.size
    idx = 0
    for letter in word:
        idx = idx * L + alphabet.column(letter)
    return idx


def _index_word(letters: tuple[int, ...], length: int, idx: int) -> tuple[int, ...]:
    L = len(letters)
    out = []
    for _ in range(length):
        idx, r = divmod(idx, L)
        out.append(letters[r])
    return tuple(reversed(out))


# core operations ----------------------------------------------------------------


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    return (a[..., :, None] * b[..., None, :]).reshape(shape + (a.shape[-1] * b.shape[-1],))


def _mul_levels(a: Sequence[np.ndarray], b: Sequence[np.ndarray], m: int, masks) -> list[np.ndarray]:
    out = []
    for k in range(m + 1):
        acc = None
        for i in range(k + 1):
            # level 0 multiplies as a scalar
            if i == 0:
                term = a[0] * b[k]
            elif i == k:
                term = a[k] * b[0]
            else:
                term = _outer(a[i], b[k - i])
            acc = term if acc is None else acc + term
        if not masks[k].all():
            acc = np.where(masks[k], acc, 0.0)
        out.append(acc)
    return out


def tensor_mul(a: TensorSeries, b: TensorSeries) -> TensorSeries:
    """Truncated tensor product; batch axes broadcast."""
    a._check_compatible(b)
    masks = _masks(a.alphabet, a.m)
    return TensorSeries(a.alphabet, a.m, _mul_levels(a.levels, b.levels, a.m, masks))


def _series_in(x: TensorSeries, coeffs: Sequence[float]) -> TensorSeries:
    """``sum_k coeffs[k] x^k`` by Horner's rule; ``x`` must have zero constant term."""
    masks = _masks(x.alphabet, x.m)
    n = len(coeffs) - 1
    L = x.alphabet.size
    batch = x.batch_shape
    acc = [np.zeros(batch + (L**k,)) for k in range(x.m + 1)]
    acc[0] = np.full(batch + (1,), coeffs[n])
    for j in range(n - 1, -1, -1):
        acc = _mul_levels(acc, x.levels, x.m, masks)
        acc[0] = acc[0] + coeffs[j]
    return TensorSeries(x.alphabet, x.m, acc)


def _require_zero_constant(x: TensorSeries, what: str):
    if np.any(x.levels[0] != 0.0):
        raise ContractError(f"{what} needs a zero empty-word coefficient")


def exp_trunc(x: TensorSeries) -> TensorSeries:
    """Truncated exponential ``1 + x + x^2/2! + ...``."""
    _require_zero_constant(x, "exp_trunc")
    # zero constant term means x^k vanishes for k > m
    return _series_in(x, [1.0 / math.factorial(k) for k in range(x.m + 1)])


def log_trunc(g: TensorSeries) -> TensorSeries:
    """Truncated logarithm of an element with unit constant term."""
    if np.any(np.abs(g.levels[0] - 1.0) > 1e-12):
        raise ContractError("log_trunc needs an empty-word coefficient of 1")
    y = g - TensorSeries.unit(g.alphabet, g.m)
    y = TensorSeries(g.alphabet, g.m, [np.zeros_like(y.levels[0])] + list(y.levels[1:]))
    coeffs = [0.0] + [(-1.0) ** (k + 1) / k for k in range(1, g.m + 1)]
    return _series_in(y, coeffs)


def inverse(g: TensorSeries) -> TensorSeries:
    """Inverse of an element with unit constant term, ``sum_k (-y)^k``."""
    if np.any(np.abs(g.levels[0] - 1.0) > 1e-12):
        raise ContractError("inverse needs an empty-word coefficient of 1")
    y = TensorSeries(g.alphabet, g.m, [np.zeros_like(g.levels[0])] + list(g.levels[1:]))
    return _series_in(y, [(-1.0) ** k for k in range(g.m + 1)])


def dilate(a: TensorSeries, lam) -> TensorSeries:
    """Multiply the coefficient of every word by ``lam**deg(word)``.

    ``lam`` may be an array broadcasting against the batch shape.
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ContractError("dilation factor must be >= 0")
    out = []
    for k, lv in enumerate(a.levels):
        deg = _degree_table(a.alphabet, k)
        out.append(lv * lam[..., None] ** deg)
    return TensorSeries(a.alphabet, a.m, out)


def homogeneous_norm(g: TensorSeries):
    """``max_k |component of graded degree k|^(1/k)`` with Euclidean norms per degree."""
    comps = g.degree_components()
    vals = [np.linalg.norm(c, axis=-1) ** (1.0 / k) for k, c in comps.items()]
    out = np.max(np.stack(vals, axis=0), axis=0)
    return float(out) if out.ndim == 0 else out


def cc_distance(g: TensorSeries, h: TensorSeries):
    """Left-invariant distance ``|g^{-1} h|`` using the homogeneous norm."""
    return homogeneous_norm(inverse(g) @ h)


def _dynkin_level(c: np.ndarray, k: int) -> np.ndarray:
    """Left-normed bracketing map on a level-``k`` array of shape ``(L,)*k + batch``."""
    if k == 1:
        return c
    t = _dynkin_level(c, k - 1)
    return t - np.moveaxis(t, k - 1, 0)


def lie_projection(x: TensorSeries) -> TensorSeries:
    """Project each level onto Lie polynomials via the Dynkin map divided by length."""
    L = x.alphabet.size
    batch = x.batch_shape
    out = [np.zeros_like(x.levels[0])]
    for k in range(1, x.m + 1):
        c = np.moveaxis(x.level(k), tuple(range(len(batch))), tuple(range(k, k + len(batch))))
        p = _dynkin_level(c, k) / k
        p = np.moveaxis(p, tuple(range(k, k + len(batch))), tuple(range(len(batch))))
        out.append(p.reshape(batch + (L**k,)))
    return TensorSeries(x.alphabet, x.m, out)


def group_membership_defect(a: TensorSeries):
    """Distance of ``a`` from the group ``exp(Lie)``.

    At level cap 2 (pure spatial alphabet) this is the Frobenius norm of
    ``sym(level2) - x (x) x / 2``; otherwise the norm of ``log(a)`` minus its
    Lie projection.
    """
    if np.any(np.abs(a.levels[0] - 1.0) > 1e-12):
        raise ContractError("group_membership_defect needs an empty-word coefficient of 1")
    if a.m == 2 and not a.alphabet.has_time_letter:
        x = a.levels[1]
        lv2 = a.level(2)
        sym = 0.5 * (lv2 + np.swapaxes(lv2, -1, -2))
        diff = sym - 0.5 * x[..., :, None] * x[..., None, :]
        out = np.sqrt(np.sum(diff**2, axis=(-1, -2)))
    else:
        ell = log_trunc(a)
        r = ell - lie_projection(ell)
        out = np.sqrt(sum(np.sum(lv**2, axis=-1) for lv in r.levels))
    return float(out) if np.ndim(out) == 0 else out


def chen_step(sig: TensorSeries, increment) -> TensorSeries:
    """``sig (x) exp(increment)`` for a level-1 increment, by Horner's rule per level.

    Disallowed words are only masked on output: they never feed into allowed
    words because graded degree is additive.
    """
    v = np.asarray(increment, dtype=float)
    a = sig.levels
    out = [a[0]]
    for k in range(1, sig.m + 1):
        acc = a[0]
        for i in range(1, k + 1):
            acc = a[i] + _outer(acc, v) * (1.0 / (k - i + 1))
        out.append(acc)
    return TensorSeries(sig.alphabet, sig.m, out)


def segment_exp(alphabet: Alphabet, m: int, increment) -> TensorSeries:
    """Signature of a straight segment: ``exp`` of a level-1 element, built level by level."""
    v = np.asarray(increment, dtype=float)
    masks = _masks(alphabet, m)
    batch = v.shape[:-1]
    levels = [np.ones(batch + (1,))]
    cur = levels[0]
    for k in range(1, m + 1):
        cur = _outer(cur, v) / k
        if not masks[k].all():
            cur = np.where(masks[k], cur, 0.0)
        levels.append(cur)
    return TensorSeries(alphabet, m, levels)


def expected_brownian_signature(alphabet: Alphabet, m: int) -> TensorSeries:
    """``exp(e0 + 1/2 sum_i e_i (x) e_i)``: expected Stratonovich signature on [0, 1]."""
    L = alphabet.size
    levels = [np.zeros(L**k) for k in range(m + 1)]
    if alphabet.has_time_letter:
        levels[1][alphabet.column(0)] = 1.0
    if m >= 2:
        for i in range(1, alphabet.d + 1):
            c = alphabet.column(i)
            levels[2][c * L + c] = 0.5
    return exp_trunc(TensorSeries(alphabet, m, levels))
