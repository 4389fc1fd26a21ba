"""Hot inner loops, with numba and pure-numpy implementations.

The numba path is used when numba imports and ``ONEILL_NO_NUMBA`` is unset
(or ``0``). Both paths must agree to rounding; ``tests/test_kernels.py`` and
``benchmarks/bench_kernels.py`` exercise them side by side.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

_DISABLED = os.environ.get("ONEILL_NO_NUMBA", "0") not in ("", "0", "false", "False")
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLED


# ---------------------------------------------------------------------------
# numpy reference implementations


def scatter_np(X, dst, size):
    """out[r, dst[t]] += X[r, t] for a 2-D ``X``."""
    out = np.zeros((X.shape[0], size))
    np.add.at(out, (slice(None), dst), X)
    return out



def nullspace_np(D, tol):
    """Nullspace bases of a batch of ``(n, N)`` Jacobians.

    Gaussian elimination with column pivoting by largest absolute entry, ties
    broken by the lowest column index. Returns ``(P, N, N-n)`` basis vectors
    and the numerical rank per matrix.
    """
    P, n, N = D.shape
    out = np.zeros((P, N, N - n))
    ranks = np.zeros(P, dtype=np.int64)
    for p in range(P):
        basis, r = _nullspace_one_np(D[p], tol)
        ranks[p] = r
        k = min(basis.shape[1], N - n)
        out[p, :, :k] = basis[:, :k]
    return out, ranks


def _nullspace_one_np(A, tol):
    A = A.astype(float).copy()
    n, N = A.shape
    pivots = []
    row = 0
    used = np.zeros(N, dtype=bool)
    for _ in range(n):
        if row >= n:
            break
        sub = np.abs(A[row:, :])
        sub[:, used] = -1.0
        flat = int(np.argmax(sub.max(axis=0)))
        col = flat
        r = row + int(np.argmax(sub[:, col]))
        if sub[r - row, col] <= tol:
            break
        A[[row, r]] = A[[r, row]]
        A[row] /= A[row, col]
        for i in range(n):
            if i != row:
                A[i] -= A[i, col] * A[row]
        pivots.append(col)
        used[col] = True
        row += 1
    free = [c for c in range(N) if not used[c]]
    basis = np.zeros((N, len(free)))
    for k, f in enumerate(free):
        basis[f, k] = 1.0
        for i, c in enumerate(pivots):
            basis[c, k] = -A[i, f]
    return basis, len(pivots)


def gram_schmidt_np(V, G, tol):
    """g-orthonormalize the columns of each ``V[p]`` (shape ``(N, k)``).

    Columns whose residual g-norm falls below ``tol`` are skipped. Returns the
    orthonormal vectors packed to the left and the count kept per point.
    """
    P, N, k = V.shape
    out = np.zeros((P, N, k))
    kept = np.zeros(P, dtype=np.int64)
    for p in range(P):
        g = G[p]
        c = 0
        for j in range(k):
            v = V[p, :, j].copy()
            for i in range(c):
                e = out[p, :, i]
                v -= (e @ g @ v) * e
            # second pass for stability
            for i in range(c):
                e = out[p, :, i]
                v -= (e @ g @ v) * e
            nrm2 = v @ g @ v
            if nrm2 <= tol * tol:
                continue
            out[p, :, c] = v / np.sqrt(nrm2)
            c += 1
        kept[p] = c
    return out, kept


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def scatter_nb(X, dst, size):
        R, T = X.shape
        out = np.zeros((R, size))
        for r in range(R):
            for t in range(T):
                out[r, dst[t]] += X[r, t]
        return out

    @numba.njit(cache=True)
    def nullspace_nb(D, tol):
        P, n, N = D.shape
        out = np.zeros((P, N, N - n))
        ranks = np.zeros(P, dtype=np.int64)
        for p in range(P):
            A = D[p].copy()
            used = np.zeros(N, dtype=np.bool_)
            pivots = np.zeros(n, dtype=np.int64)
            row = 0
            for _ in range(n):
                best = -1.0
                col = -1
                r = -1
                for c in range(N):
                    if used[c]:
                        continue
                    for i in range(row, n):
                        v = abs(A[i, c])
                        if v > best:
                            best = v
                            col = c
                            r = i
                if best <= tol:
                    break
                for c in range(N):
                    tmp = A[row, c]
                    A[row, c] = A[r, c]
                    A[r, c] = tmp
                piv = A[row, col]
                for c in range(N):
                    A[row, c] /= piv
                for i in range(n):
                    if i != row:
                        f = A[i, col]
                        for c in range(N):
                            A[i, c] -= f * A[row, c]
                pivots[row] = col
                used[col] = True
                row += 1
            ranks[p] = row
            k = 0
            for f in range(N):
                if used[f]:
                    continue
                if k >= N - n:
                    break
                out[p, f, k] = 1.0
                for i in range(row):
                    out[p, pivots[i], k] = -A[i, f]
                k += 1
        return out, ranks

    @numba.njit(cache=True)
    def gram_schmidt_nb(V, G, tol):
        P, N, k = V.shape
        out = np.zeros((P, N, k))
        kept = np.zeros(P, dtype=np.int64)
        v = np.zeros(N)
        gv = np.zeros(N)
        for p in range(P):
            c = 0
            for j in range(k):
                for a in range(N):
                    v[a] = V[p, a, j]
                for _pass in range(2):
                    for i in range(c):
                        for a in range(N):
                            s = 0.0
                            for b in range(N):
                                s += G[p, a, b] * v[b]
                            gv[a] = s
                        proj = 0.0
                        for a in range(N):
                            proj += out[p, a, i] * gv[a]
                        for a in range(N):
                            v[a] -= proj * out[p, a, i]
                nrm2 = 0.0
                for a in range(N):
                    for b in range(N):
                        nrm2 += v[a] * G[p, a, b] * v[b]
                if nrm2 <= tol * tol:
                    continue
                inv = 1.0 / np.sqrt(nrm2)
                for a in range(N):
                    out[p, a, c] = v[a] * inv
                c += 1
            kept[p] = c
        return out, kept


def _pick(name):
    if USE_NUMBA:
        return globals()[name + "_nb"]
    return globals()[name + "_np"]


def scatter(X, dst, size):
    return _pick("scatter")(np.ascontiguousarray(X), dst, size)


def nullspace(D, tol=1e-12):
    return _pick("nullspace")(np.ascontiguousarray(D, dtype=float), tol)


def gram_schmidt(V, G, tol=1e-8):
    return _pick("gram_schmidt")(
        np.ascontiguousarray(V, dtype=float), np.ascontiguousarray(G, dtype=float), tol
    )


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
