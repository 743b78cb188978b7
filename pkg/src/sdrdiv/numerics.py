"""Small dense linear algebra and reproducible Gaussian streams.

Everything here works on plain ``numpy`` arrays.  The eigensolver and the
Cholesky factorization are written out explicitly (cyclic Jacobi and the
column-oriented algorithm) because the matrices involved are tiny and the
structured failure reports are needed by callers.  Hot, batched paths in
:mod:`sdrdiv.sdp` use LAPACK through ``numpy.linalg`` instead.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * math.pi
_U53 = 1.0 / (1 << 53)


class NumericalFailure(RuntimeError):
    """An iterative routine did not converge or a factorization broke down."""


class IndefiniteMatrix(ValueError):
    """Raised by :func:`cholesky` when a pivot is not positive.

    ``pivot`` is the 1-based index of the failing pivot (the LAPACK
    ``info`` convention) and ``value`` the offending pivot value.
    """

    def __init__(self, pivot: int, value: float):
        super().__init__(f"matrix is not positive definite (pivot {pivot}: {value:.3e})")
        self.pivot = pivot
        self.value = value


def as_symmetric(A) -> np.ndarray:
    """Return a float copy of ``A`` with exactly equal mirrored entries."""
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return 0.5 * (A + A.T)


def sym_eig(A, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, U)`` with ``w`` ascending and ``A = U diag(w) U^T``.
    Sweeps stop once the off-diagonal Frobenius norm falls below
    ``tol * ||A||_F``.
    """
    a = as_symmetric(A)
    n = a.shape[0]
    U = np.eye(n)
    scale = np.linalg.norm(a)
    if n == 1 or scale == 0.0:
        return np.diag(a).copy(), U

    threshold = tol * scale
    for _ in range(max_sweeps):
        off = _off_norm(a)
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(1.0, theta))
                c = 1.0 / math.hypot(1.0, t)
                s = t * c
                # rotate rows/cols p and q of a, and columns of U
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                up = U[:, p].copy()
                uq = U[:, q].copy()
                U[:, p] = c * up - s * uq
                U[:, q] = s * up + c * uq
    else:
        off = _off_norm(a)
        if off > threshold:
            raise NumericalFailure(f"Jacobi did not converge in {max_sweeps} sweeps (off={off:.3e})")

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], U[:, order]


def _off_norm(a):
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def cholesky(A, jitter: float = 0.0) -> np.ndarray:
    """Lower-triangular ``L`` with ``L L^T = A + jitter*I``.

    Raises :class:`IndefiniteMatrix` at the first pivot that is not strictly
    positive.
    """
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    a = as_symmetric(A) + jitter * np.eye(len(A))
    n = a.shape[0]
    L = np.zeros_like(a)
    for k in range(n):
        d = a[k, k] - L[k, :k] @ L[k, :k]
        if not d > 0.0:
            raise IndefiniteMatrix(k + 1, float(d))
        L[k, k] = math.sqrt(d)
        L[k + 1:, k] = (a[k + 1:, k] - L[k + 1:, :k] @ L[k, :k]) / L[k, k]
    return L


def is_psd(A, rel_tol: float = 1e-9) -> bool:
    """True when the smallest eigenvalue of ``A`` is above ``-rel_tol*||A||_F``.

    Implemented as a Cholesky attempt on ``A + rel_tol*||A||_F*I``.
    """
    a = as_symmetric(A)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return True
    try:
        cholesky(a, jitter=rel_tol * scale)
    except IndefiniteMatrix:
        return False
    return True


def solve_spd(A, b) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A``."""
    L = cholesky(A)
    z = _forward(L, np.asarray(b, dtype=float))
    return _forward(L.T[::-1, ::-1], z[::-1])[::-1]


def _forward(L, b):
    x = np.zeros_like(b)
    for i in range(len(b)):
        x[i] = (b[i] - L[i, :i] @ x[:i]) / L[i, i]
    return x


# -- random streams ---------------------------------------------------------

def mix64(*values: int) -> int:
    """Hash a tuple of integers to 64 bits (splitmix64 finalizer chain)."""
    h = 0x9E3779B97F4A7C15
    for v in values:
        h = (h ^ (int(v) & _MASK64)) & _MASK64
        h = (h + 0x9E3779B97F4A7C15) & _MASK64
        h ^= h >> 30
        h = (h * 0xBF58476D1CE4E5B9) & _MASK64
        h ^= h >> 27
        h = (h * 0x94D049BB133111EB) & _MASK64
        h ^= h >> 31
    return h


def words_to_uniform(words: np.ndarray) -> np.ndarray:
    """Map 64-bit words to doubles in ``[0, 1)`` using the top 53 bits."""
    return (words >> np.uint64(11)).astype(np.float64) * _U53


def words_to_normal(words: np.ndarray) -> np.ndarray:
    """Box-Muller transform of word pairs along the last axis.

    The last axis must have even length; each consecutive pair of words
    yields two independent standard normal deviates.
    """
    u = words_to_uniform(words)
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = _TWO_PI * u2
    out = np.empty(u.shape, dtype=np.float64)
    out[..., 0::2] = r * np.cos(theta)
    out[..., 1::2] = r * np.sin(theta)
    return out


def words_to_sign(words: np.ndarray) -> np.ndarray:
    """+1/-1 from the top bit of each word."""
    return np.where(words >> np.uint64(63), 1.0, -1.0)


def normal_words(count: int) -> int:
    """Words consumed by ``count`` normal deviates (pairs are never split)."""
    return 2 * ((count + 1) // 2)


class RngStream:
    """Counter-based random stream identified by ``(seed, stream_id)``.

    Backed by the Philox4x64 generator keyed with the two 64-bit values, so
    distinct stream ids give independent sequences and any position in a
    stream can be reached directly.  ``position`` counts 64-bit words drawn
    so far.  A stream must not be shared between threads.
    """

    def __init__(self, seed: int, stream_id: int = 0, position: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._gen = None
        self._seek(position)

    def _seek(self, position: int):
        block, skip = divmod(int(position), 4)
        self._gen = np.random.Philox(key=[self.seed, self.stream_id], counter=[block, 0, 0, 0])
        if skip:
            self._gen.random_raw(skip)
        self.position = int(position)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, position={self.position})"

    def at(self, position: int) -> "RngStream":
        """A fresh stream with the same identity, positioned at ``position``."""
        return RngStream(self.seed, self.stream_id, position)

    def spawn(self, *index: int) -> "RngStream":
        """A child stream whose id is derived from this id and ``index``."""
        return RngStream(self.seed, mix64(self.stream_id, *index))

    def words(self, count: int) -> np.ndarray:
        count = int(count)
        if count <= 0:
            return np.empty(0, dtype=np.uint64)
        out = self._gen.random_raw(count)
        self.position += count
        return np.asarray(out, dtype=np.uint64)

    def uniform(self, count: int) -> np.ndarray:
        return words_to_uniform(self.words(count))

    def normal(self, count: int) -> np.ndarray:
        count = int(count)
        if count <= 0:
            return np.empty(0)
        return words_to_normal(self.words(normal_words(count)))[:count]

    def signs(self, count: int) -> np.ndarray:
        return words_to_sign(self.words(count))


def gaussian(stream: RngStream, count: int) -> np.ndarray:
    """``count`` i.i.d. standard normal deviates drawn from ``stream``."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    return stream.normal(count)
