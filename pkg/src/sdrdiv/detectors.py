"""ML, ZF, MMSE and SDR receivers for ``y = H s + v`` with ``s`` in ``{+-1}^m``.

Per-instance functions (``ml_detect`` etc.) take one ``H`` and ``y`` and
return a :class:`Detection`.  :func:`detect_batch` runs any detector over a
stack of instances and is what the Monte Carlo engine uses.

The sign function maps zero to ``-1`` everywhere.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import sdp
from .numerics import IndefiniteMatrix, RngStream, cholesky

ML_MAX_M = 24
_ML_CHUNK = 1 << 15

FAMILIES = ("ml", "zf", "mmse", "sdr-sign", "sdr-eig", "sdr-rand")


class SingularChannel(ValueError):
    """``H^T H`` is (numerically) singular, so zero forcing is undefined."""


@dataclass(frozen=True)
class DetectorKind:
    """A receiver.  ``samples`` is the randomization count of ``sdr-rand``.

    ``samples=None`` for ``sdr-rand`` means the default ``10*m``.
    """

    family: str
    samples: int | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown detector {self.family!r}; choose from {', '.join(FAMILIES)}")
        if self.samples is not None and (self.family != "sdr-rand" or self.samples < 1):
            raise ValueError("samples applies to sdr-rand only and must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "DetectorKind":
        """``"ml"``, ``"sdr-sign"``, ``"sdr-rand"`` or ``"sdr-rand:40"``."""
        name, _, k = text.strip().lower().partition(":")
        return cls(name, int(k) if k else None)

    @property
    def is_sdr(self) -> bool:
        return self.family.startswith("sdr")

    def sample_count(self, m: int) -> int:
        return self.samples if self.samples is not None else 10 * m

    def __str__(self):
        return self.family if self.samples is None else f"{self.family}:{self.samples}"


ML = DetectorKind("ml")
ZF = DetectorKind("zf")
MMSE = DetectorKind("mmse")
SDR_SIGN = DetectorKind("sdr-sign")
SDR_EIG = DetectorKind("sdr-eig")


@dataclass
class Detection:
    s_hat: np.ndarray
    metadata: dict = field(default_factory=dict)


def sgn(x):
    """``+1`` for positive entries, ``-1`` otherwise (zero included)."""
    return np.where(np.asarray(x) > 0, 1.0, -1.0)


def _check(H, y):
    H = np.asarray(H, dtype=float)
    y = np.asarray(y, dtype=float)
    if H.ndim != 2 or y.shape != (H.shape[0],):
        raise ValueError(f"incompatible shapes H{H.shape} and y{y.shape}")
    return H, y


# -- ML ----------------------------------------------------------------------

def candidates(m: int) -> np.ndarray:
    """All of ``{+-1}^m`` in lexicographic order with ``-1 < +1``."""
    return np.array(list(itertools.product((-1.0, 1.0), repeat=m)))


def ml_detect(H, y) -> Detection:
    """Exhaustive search for ``argmin ||y - H s||^2``; ties go to the
    lexicographically smallest candidate."""
    H, y = _check(H, y)
    m = H.shape[1]
    if m > ML_MAX_M:
        raise ValueError(f"exhaustive ML search is capped at m = {ML_MAX_M} (got {m})")
    best, best_cost = None, np.inf
    total = 1 << m
    for start in range(0, total, _ML_CHUNK):
        idx = np.arange(start, min(total, start + _ML_CHUNK))
        bits = (idx[:, None] >> np.arange(m - 1, -1, -1)) & 1
        S = 2.0 * bits - 1.0
        cost = np.sum((y - S @ H.T) ** 2, axis=1)
        j = int(np.argmin(cost))
        if cost[j] < best_cost:
            best, best_cost = S[j], cost[j]
    return Detection(best.copy(), {"objective": float(best_cost)})


def ml_batch(H, y) -> np.ndarray:
    """Batched exhaustive ML (small ``m``)."""
    S = candidates(H.shape[-1])
    pred = np.einsum("bij,cj->bci", H, S)
    cost = np.sum((y[:, None, :] - pred) ** 2, axis=2)
    return S[np.argmin(cost, axis=1)]


# -- linear receivers ----------------------------------------------------------

def _zf_estimate(H, y, cond_limit=1e12):
    G = H.T @ H
    if H.shape[0] < H.shape[1] or np.linalg.cond(G) > cond_limit:
        raise SingularChannel("H^T H is numerically singular")
    return np.linalg.solve(G, H.T @ y)


def zf_detect(H, y) -> Detection:
    """Sign of the unconstrained least-squares estimate."""
    H, y = _check(H, y)
    return Detection(sgn(_zf_estimate(H, y)))


def mmse_detect(H, y, rho: float) -> Detection:
    """Sign of ``(H^T H + I/rho)^{-1} H^T y`` (unit-energy symbols, noise variance ``1/rho``)."""
    H, y = _check(H, y)
    if not rho > 0:
        raise ValueError("rho must be positive")
    G = H.T @ H + np.eye(H.shape[1]) / rho
    return Detection(sgn(np.linalg.solve(G, H.T @ y)))


def zf_batch(H, y) -> tuple[np.ndarray, np.ndarray]:
    """Batched ZF; the second array flags singular instances (decided ``-1``)."""
    B, n, m = H.shape
    G = np.swapaxes(H, 1, 2) @ H
    bad = np.ones(B, dtype=bool) if n < m else np.linalg.cond(G) > 1e12
    G[bad] = np.eye(m)
    x = np.linalg.solve(G, np.einsum("bji,bj->bi", H, y)[..., None])[..., 0]
    s = sgn(x)
    s[bad] = -1.0
    return s, bad


def mmse_batch(H, y, rho) -> np.ndarray:
    m = H.shape[2]
    G = np.swapaxes(H, 1, 2) @ H + np.eye(m) / rho
    return sgn(np.linalg.solve(G, np.einsum("bji,bj->bi", H, y)[..., None])[..., 0])


# -- SDR -----------------------------------------------------------------------

def round_sign(X) -> np.ndarray:
    """Signs of the last column (without its last entry); batched."""
    return sgn(X[..., :-1, -1])


def round_eig(X) -> np.ndarray:
    """Signs of the dominant eigenvector, referenced to its last entry."""
    u = sdp.dominant_eigvec(X)
    return sgn(u[:-1]) * sgn(u[-1])


def round_random(X, H, y, samples: int, stream: RngStream) -> np.ndarray:
    """Best of ``samples`` Gaussian draws ``x ~ N(0, X)`` and the sign rounding.

    Each draw gives the candidate ``sgn(x[:m]) * sgn(x[m])``; the candidate
    with the smallest ``||y - H s||^2`` wins, the sign-rounded candidate
    being kept unless a draw is strictly better.
    """
    X = np.asarray(X, dtype=float)
    k = X.shape[0]
    try:
        F = cholesky(X, jitter=1e-10)
    except IndefiniteMatrix:
        w, U = np.linalg.eigh(X)
        F = U * np.sqrt(np.clip(w, 0, None))
    xs = stream.normal(samples * k).reshape(samples, k) @ F.T
    cands = sgn(xs[:, :-1]) * sgn(xs[:, -1:])
    best = round_sign(X)
    best_cost = np.sum((y - H @ best) ** 2)
    cost = np.sum((y[None, :] - cands @ H.T) ** 2, axis=1)
    j = int(np.argmin(cost))
    if cost[j] < best_cost:
        best = cands[j]
    return best


def _round(kind: DetectorKind, X, H, y, stream):
    if kind.family == "sdr-sign":
        return round_sign(X)
    if kind.family == "sdr-eig":
        return round_eig(X)
    if stream is None:
        raise ValueError("sdr-rand needs a random stream")
    return round_random(X, H, y, kind.sample_count(H.shape[1]), stream)


def sdr_detect(H, y, rounding: DetectorKind | str = SDR_SIGN, stream: RngStream | None = None,
               tol: float = sdp.DEFAULT_TOL, max_iter: int = sdp.DEFAULT_MAX_ITER) -> Detection:
    """Solve the semidefinite relaxation and round its optimizer.

    If the solver fails, the best iterate is sign-rounded and the metadata
    carries ``fallback=True``.
    """
    H, y = _check(H, y)
    kind = DetectorKind.parse(rounding) if isinstance(rounding, str) else rounding
    if not kind.is_sdr:
        raise ValueError(f"{kind} is not an SDR rounding")
    sol = sdp.solve(sdp.UnitDiagSdp(sdp.build_lift(H, y)), tol=tol, max_iter=max_iter)
    meta = {
        "objective": sol.objective, "gap": sol.gap, "status": sol.status,
        "rank": sdp.numerical_rank(sol.X), "fallback": False,
    }
    if sol.status == sdp.NUMERICAL_FAILURE:
        meta["fallback"] = True
        return Detection(round_sign(sol.X), meta)
    return Detection(_round(kind, sol.X, H, y, stream), meta)


@dataclass
class SdrBatch:
    """SDR optimizers for a stack of instances.

    ``X`` holds the optimizer of each instance; ``certified`` marks the
    instances settled by the rank-one dual certificate (no interior-point
    run needed) and ``failed`` those where the solver did not converge.
    """

    X: np.ndarray
    certified: np.ndarray
    failed: np.ndarray
    status: np.ndarray


def sdr_batch(H, y, tol: float = sdp.DEFAULT_TOL, max_iter: int = sdp.DEFAULT_MAX_ITER,
              hint: np.ndarray | None = None) -> SdrBatch:
    """Solve the relaxation for every instance in a stack.

    ``hint`` is a candidate ``s`` per instance (the ML decision by default
    for small ``m``).  Where the rank-one certificate proves ``[s;1][s;1]^T``
    to be the unique optimizer the interior-point solve is skipped, which
    gives the same optimizer the solver would converge to.
    """
    B, n, m = H.shape
    L = sdp.build_lift(H, y)
    if hint is None:
        hint = ml_batch(H, y) if m <= 12 else zf_batch(H, y)[0]
    x = np.concatenate([hint, np.ones((B, 1))], axis=1)
    certified, _ = sdp.certify_rank_one(L, x)
    X = np.einsum("bi,bj->bij", x, x)
    status = np.full(B, sdp.CONVERGED, dtype=object)
    failed = np.zeros(B, dtype=bool)
    todo = np.flatnonzero(~certified)
    if todo.size:
        sol = sdp.solve_batch(L[todo], tol=tol, max_iter=max_iter)
        X[todo] = sol.X
        status[todo] = sol.status
        failed[todo] = sol.status != sdp.CONVERGED
    return SdrBatch(X=X, certified=certified, failed=failed, status=status)


def detect_batch(kind: DetectorKind, H, y, rho: float, sdr: SdrBatch | None = None,
                 streams=None) -> np.ndarray:
    """Decisions of ``kind`` for a stack of instances.

    ``sdr`` lets several SDR roundings share one set of optimizers.
    ``streams(i)`` must return the random stream for instance ``i`` when
    ``kind`` is ``sdr-rand``; it is only called for instances whose
    optimizer is not certified rank one (there every draw rounds to the
    same decision as the sign rounding).
    """
    if kind.family == "ml":
        return ml_batch(H, y)
    if kind.family == "zf":
        return zf_batch(H, y)[0]
    if kind.family == "mmse":
        return mmse_batch(H, y, rho)
    if sdr is None:
        sdr = sdr_batch(H, y)
    out = round_sign(sdr.X)
    if kind.family == "sdr-sign":
        return out
    # rank-one optimizers round identically under every strategy; failed
    # solves fall back to the sign rounding of the best iterate
    for i in np.flatnonzero(~sdr.certified & ~sdr.failed):
        if kind.family == "sdr-eig":
            out[i] = round_eig(sdr.X[i])
        else:
            out[i] = round_random(sdr.X[i], H[i], y[i], kind.sample_count(H.shape[2]), streams(i))
    return out
