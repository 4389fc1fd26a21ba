"""Dense tensor values at a point, with variance bookkeeping.

Dimensions here are tiny (at most six per slot), so storage is a plain dense
numpy array. Each slot carries a variance (``"up"`` or ``"down"``) and, for
components taken in an adapted frame, an optional block label (``"h"`` or
``"v"``) that :func:`change_frame` uses to pick the rotation for that slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

UP = "up"
DOWN = "down"


class TensorError(ValueError):
    pass


@dataclass(frozen=True)
class TensorValue:
    components: np.ndarray
    variance: tuple[str, ...]
    blocks: tuple[str | None, ...] | None = None
    dims: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "variance", tuple(self.variance))
        if comps.ndim != len(self.variance):
            raise TensorError(
                f"{comps.ndim} component axes but {len(self.variance)} variance labels"
            )
        for v in self.variance:
            if v not in (UP, DOWN):
                raise TensorError(f"bad variance label {v!r}")
        if self.blocks is not None:
            object.__setattr__(self, "blocks", tuple(self.blocks))
            if len(self.blocks) != comps.ndim:
                raise TensorError("one block label per slot required")
        object.__setattr__(self, "dims", tuple(comps.shape))

    @property
    def rank(self) -> int:
        return len(self.variance)

    @property
    def flat(self) -> np.ndarray:
        """Components in row-major multi-index order."""
        return self.components.reshape(-1)

    def __add__(self, other: "TensorValue") -> "TensorValue":
        if other.variance != self.variance or other.dims != self.dims:
            raise TensorError("cannot add tensors of different type")
        return TensorValue(self.components + other.components, self.variance, self.blocks)

    def __mul__(self, s: float) -> "TensorValue":
        return TensorValue(self.components * float(s), self.variance, self.blocks)

    __rmul__ = __mul__


def scalar(value: float) -> TensorValue:
    return TensorValue(np.asarray(float(value)), ())


def outer(a: TensorValue, b: TensorValue) -> TensorValue:
    blocks = None
    if a.blocks is not None or b.blocks is not None:
        blocks = (a.blocks or (None,) * a.rank) + (b.blocks or (None,) * b.rank)
    return TensorValue(np.multiply.outer(a.components, b.components), a.variance + b.variance, blocks)


def contract(t: TensorValue, slot_a: int, slot_b: int) -> TensorValue:
    """Trace over one upper and one lower slot."""
    if slot_a == slot_b:
        raise TensorError("cannot contract a slot with itself")
    va, vb = t.variance[slot_a], t.variance[slot_b]
    if va == vb:
        raise TensorError(f"contraction pairs two {va} slots; raise or lower one first")
    if t.dims[slot_a] != t.dims[slot_b]:
        raise TensorError(f"dimension mismatch {t.dims[slot_a]} vs {t.dims[slot_b]}")
    comps = np.trace(t.components, axis1=slot_a, axis2=slot_b)
    keep = [i for i in range(t.rank) if i not in (slot_a, slot_b)]
    blocks = None if t.blocks is None else tuple(t.blocks[i] for i in keep)
    return TensorValue(comps, tuple(t.variance[i] for i in keep), blocks)


def _check_metric(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise TensorError("metric must be a square matrix")
    if not np.allclose(g, g.T, rtol=0, atol=1e-12 * max(1.0, np.abs(g).max())):
        raise TensorError("metric is not symmetric")
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise TensorError("metric is not positive definite") from None
    return g


def _apply(t: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    """Contract ``mat[new, old]`` against ``t`` along ``axis``."""
    moved = np.moveaxis(t, axis, 0)
    out = np.tensordot(mat, moved, axes=([1], [0]))
    return np.moveaxis(out, 0, axis)


def lower(t: TensorValue, slot: int, g) -> TensorValue:
    if t.variance[slot] != UP:
        raise TensorError("slot is already lower")
    g = np.asarray(g, dtype=float)
    var = list(t.variance)
    var[slot] = DOWN
    return TensorValue(_apply(t.components, g, slot), var, t.blocks)


def raise_index(t: TensorValue, slot: int, g) -> TensorValue:
    if t.variance[slot] != DOWN:
        raise TensorError("slot is already upper")
    ginv = np.linalg.inv(np.asarray(g, dtype=float))
    var = list(t.variance)
    var[slot] = UP
    return TensorValue(_apply(t.components, ginv, slot), var, t.blocks)


def norm_sq(t: TensorValue, g=None) -> float:
    """Full self-contraction, every index paired through ``g`` or its inverse.

    ``g=None`` means the components are taken in an orthonormal frame.
    """
    comps = t.components
    if g is None:
        return float(np.sum(comps * comps))
    g = _check_metric(g)
    ginv = np.linalg.inv(g)
    other = comps
    for slot, v in enumerate(t.variance):
        if t.dims[slot] != g.shape[0]:
            raise TensorError("metric dimension does not match tensor slot")
        other = _apply(other, g if v == UP else ginv, slot)
    return float(np.sum(comps * other))


def norm_sq_array(comps: np.ndarray, variance: Sequence[str], g: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    """Batched :func:`norm_sq` over a leading point axis (no checks)."""
    other = comps
    for slot, v in enumerate(variance):
        m = g if v == UP else ginv
        moved = np.moveaxis(other, slot + 1, 1)
        moved = np.einsum("pab,pb...->pa...", m, moved)
        other = np.moveaxis(moved, 1, slot + 1)
    return np.sum((comps * other).reshape(comps.shape[0], -1), axis=1)


def is_orthogonal(q: np.ndarray, tol: float = 1e-10) -> bool:
    q = np.asarray(q, dtype=float)
    return q.ndim == 2 and q.shape[0] == q.shape[1] and np.abs(q.T @ q - np.eye(len(q))).max() <= tol


def change_frame(t: TensorValue, rotation: tuple[np.ndarray, np.ndarray]) -> TensorValue:
    """Re-express frame components after rotating the adapted frame.

    ``rotation = (Oh, Ov)`` acts on horizontal and vertical frame vectors as
    ``X'_i = sum_j X_j Oh[j, i]``; every slot labelled ``"h"`` or ``"v"`` is
    transformed accordingly. For orthogonal matrices the rule is the same for
    upper and lower slots.
    """
    oh, ov = (np.asarray(r, dtype=float) for r in rotation)
    for name, q in (("horizontal", oh), ("vertical", ov)):
        if q.size and not is_orthogonal(q):
            raise TensorError(f"{name} block is not orthogonal to 1e-10")
    if t.blocks is None:
        raise TensorError("tensor has no block labels; frame change is undefined")
    comps = t.components
    for slot, b in enumerate(t.blocks):
        if b is None:
            continue
        q = oh if b == "h" else ov
        if q.shape[0] != t.dims[slot]:
            raise TensorError(f"rotation block size {q.shape[0]} does not match slot dim {t.dims[slot]}")
        comps = _apply(comps, q.T, slot)
    return TensorValue(comps, t.variance, t.blocks)


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed element of O(n)."""
    if n == 0:
        return np.zeros((0, 0))
    z = rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    return q * np.sign(np.diag(r))
