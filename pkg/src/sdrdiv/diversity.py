"""Diversity analysis: the separation statistic tau, its rank-one surrogate,
the sufficiency certificate, the feasible-set test, the exponent zeta and
tail-slope estimation.

With ``Q = H^T H`` and ``M = [I, -e]`` the statistic is

    tau = min { <M^T Q M, X> : diag(X) = e, X >= 0, tr(M X M^T) = 1 },

the smallest noiseless objective on the hyperplane separating ``X_e = ee^T``
from the far side of the feasible set.  Equivalently ``tau = min tr(Q Y)``
over trace-one ``Y`` with ``Y >= dd^T/4`` (``d = diag Y``); that form is only
used for cross-checks.

Tail probabilities follow the convention ``p ~ scale^(-slope)``: for
``P(tau <= eps)`` the scale is ``1/eps``, for error rates it is ``rho``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sdp
from .model import ChannelConfig, _channel_from_normals
from .numerics import NumericalFailure, RngStream, sym_eig, words_to_normal

RANK_ONE_MAX_M = 16
MIN_HITS = 10
_CHUNK = 4096


class InsufficientData(ValueError):
    """Too few usable points for a slope fit.

    ``report`` carries the partial :class:`ExponentReport` when one exists.
    """

    def __init__(self, message: str, report: "ExponentReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass
class TauResult:
    """``tau`` with the optimal ``X`` and ``Y = M X M^T``.

    From :func:`compute_tau_batch` every field is stacked along a leading
    batch axis.
    """

    tau: float | np.ndarray
    X: np.ndarray
    Y: np.ndarray
    status: str | np.ndarray


@dataclass(frozen=True)
class TailPoint:
    scale: float
    threshold: float
    hits: int
    trials: int

    @property
    def probability(self) -> float:
        return self.hits / self.trials if self.trials else float("nan")


@dataclass
class ExponentReport:
    points: list[TailPoint]
    slope: float
    stderr: float
    failures: int = 0

    def __post_init__(self):
        scales = [p.scale for p in self.points]
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValueError("scales must be strictly increasing")


@dataclass(frozen=True)
class DiversityExponents:
    n: int
    m: int
    zeta: float
    theorem2_d: float
    nontrivial: bool
    mmse_zf_diversity: float


# -- tau ---------------------------------------------------------------------

def hyperplane_matrix(m: int) -> np.ndarray:
    """``M = [I_m, -e]``."""
    return np.hstack([np.eye(m), -np.ones((m, 1))])


def tau_problem(H) -> sdp.UnitDiagSdp:
    """The unit-diagonal SDP whose optimal value is ``tau``."""
    H = np.asarray(H, dtype=float)
    M = hyperplane_matrix(H.shape[1])
    return sdp.UnitDiagSdp(M.T @ (H.T @ H) @ M, A=M.T @ M, b=1.0)


def compute_tau_batch(H, tol: float = sdp.DEFAULT_TOL, max_iter: int = sdp.DEFAULT_MAX_ITER) -> TauResult:
    """``tau`` for a stack of channels ``H`` of shape ``(B, n, m)``.

    Solver statuses are returned per channel rather than raised.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 3:
        raise ValueError(f"expected a (B, n, m) stack, got {H.shape}")
    B, _, m = H.shape
    Q = np.swapaxes(H, 1, 2) @ H
    if m == 1:
        # the slice is the single point X = [[1, 1/2], [1/2, 1]], Y = 1
        X = np.broadcast_to(np.array([[1.0, 0.5], [0.5, 1.0]]), (B, 2, 2)).copy()
        return TauResult(Q[:, 0, 0].copy(), X, np.ones((B, 1, 1)),
                         np.full(B, sdp.CONVERGED, dtype=object))
    M = hyperplane_matrix(m)
    L0 = np.einsum("ai,bac,cj->bij", M, Q, M, optimize=True)
    sol = sdp.solve_batch(L0, A=M.T @ M, b=1.0, tol=tol, max_iter=max_iter)
    Y = np.einsum("ia,bac,jc->bij", M, sol.X, M, optimize=True)
    return TauResult(sol.objective, sol.X, Y, sol.status)


def compute_tau(H, tol: float = sdp.DEFAULT_TOL, max_iter: int = sdp.DEFAULT_MAX_ITER) -> TauResult:
    """``tau`` for one channel.  Raises :class:`NumericalFailure` if the
    solver breaks down; an iteration cap is reported in ``status``."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or not np.all(np.isfinite(H)):
        raise ValueError("H must be a finite matrix")
    r = compute_tau_batch(H[None], tol=tol, max_iter=max_iter)
    if r.status[0] == sdp.NUMERICAL_FAILURE:
        raise NumericalFailure("tau SDP: numerical failure")
    return TauResult(float(r.tau[0]), r.X[0], r.Y[0], r.status[0])


def enumerate_rank_one(m: int) -> list[np.ndarray]:
    """The ``2^m - 1`` matrices ``(s - e)(s - e)^T / ||s - e||^2``, ``s != e``.

    Ordered like :func:`sdrdiv.detectors.candidates`.
    """
    if not 2 <= m <= RANK_ONE_MAX_M:
        raise ValueError(f"m must lie in [2, {RANK_ONE_MAX_M}] (got {m})")
    out, seen = [], set()
    for code in range(1 << m):
        s = np.array([1.0 if (code >> (m - 1 - i)) & 1 else -1.0 for i in range(m)])
        u = s - 1.0
        if not u.any():
            continue
        Y = np.outer(u, u) / (u @ u)
        key = Y.tobytes()
        if key not in seen:
            seen.add(key)
            out.append(Y)
    return out


def tau_rank_one(H) -> float:
    """``min tr(Q Y)`` over the rank-one points, i.e. the smallest
    ``||H 1_S||^2 / |S|`` over nonempty index sets ``S``."""
    H = np.asarray(H, dtype=float)
    m = H.shape[-1]
    if not 2 <= m <= RANK_ONE_MAX_M:
        raise ValueError(f"m must lie in [2, {RANK_ONE_MAX_M}] (got {m})")
    return float(tau_rank_one_batch(H[None])[0])


def tau_rank_one_batch(H) -> np.ndarray:
    m = H.shape[-1]
    codes = np.arange(1, 1 << m)
    ind = ((codes[:, None] >> np.arange(m)) & 1).astype(float)
    proj = np.einsum("bij,cj->bci", H, ind)
    return np.min(np.sum(proj ** 2, axis=2) / ind.sum(axis=1), axis=1)


def lemma1_certificate(H, v, tau: float | None = None) -> tuple[bool, float, float]:
    """``(tau > 4||v||^2, tau, ||v||^2)``.

    A true certificate guarantees that the sign-rounded relaxation decides
    ``e`` from ``y = H e + v``.  ``tau`` may be passed in if already known.
    """
    H = np.asarray(H, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape != (H.shape[0],):
        raise ValueError(f"incompatible shapes H{H.shape} and v{v.shape}")
    if tau is None:
        tau = compute_tau(H).tau
    energy = float(v @ v)
    return bool(tau > 4.0 * energy), float(tau), energy


def lemma5_feasible(Y, tol: float = 1e-9) -> bool:
    """Membership test for the trace-one slice: ``tr Y = 1`` and
    ``Y - dd^T/4 >= -tol I`` with ``d = diag Y``."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
        raise ValueError("Y must be square")
    if abs(np.trace(Y) - 1.0) > tol:
        return False
    d = np.diag(Y)
    w, _ = sym_eig(Y - 0.25 * np.outer(d, d))
    return bool(w[0] >= -tol)


# -- exponents -----------------------------------------------------------------

def zeta_exponent(n: int, m: int) -> DiversityExponents:
    """Tail exponent of ``tau`` and the derived diversity bounds.

    ``zeta`` is evaluated as the infimum of the linear form over the ordered
    box ``1 >= c_2 >= ... >= c_m >= 0`` (at one of its vertices);
    ``theorem2_d`` is the closed form ``(m - r(r+3)/2)/2``, ``r = m - n``,
    which reduces to ``n/2`` when ``n >= m``.  The two must agree.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be at least 1")
    coef = [(n - m + k - 2) / 2.0 for k in range(2, m + 1)]
    zeta = n / 2.0 + min(sum(coef[:j]) for j in range(len(coef) + 1))
    r = max(m - n, 0)
    d = n / 2.0 if r == 0 else 0.5 * (m - r * (r + 3) / 2.0)
    return DiversityExponents(
        n=n, m=m, zeta=zeta, theorem2_d=d,
        nontrivial=m > r * (r + 3) / 2.0,
        mmse_zf_diversity=(n - m + 1) / 2.0,
    )


def fit_slope(points) -> tuple[float, float]:
    """Least-squares slope of ``-ln p`` against ``ln scale``.

    ``points`` is a sequence of ``(scale, probability)``; zero probabilities
    are dropped.  ``stderr`` is the usual OLS standard error (zero when only
    two points remain).
    """
    pts = [(float(s), float(p)) for s, p in points if p > 0]
    if len(pts) < 2:
        raise InsufficientData("need at least two points with positive probability")
    x = np.log([s for s, _ in pts])
    if np.any(x <= -np.inf) or np.ptp(x) == 0:
        raise InsufficientData("scales must be positive and not all equal")
    z = np.log([p for _, p in pts])
    xc = x - x.mean()
    sxx = xc @ xc
    b = (xc @ (z - z.mean())) / sxx
    if len(pts) == 2:
        return float(-b), 0.0
    resid = z - z.mean() - b * xc
    return float(-b), float(np.sqrt((resid @ resid) / (len(pts) - 2) / sxx))


def _report(points: list[TailPoint], failures: int = 0) -> ExponentReport:
    usable = [(p.scale, p.probability) for p in points if p.hits >= MIN_HITS]
    report = ExponentReport(points, float("nan"), float("nan"), failures)
    if len(usable) < 2:
        raise InsufficientData(f"fewer than two points with at least {MIN_HITS} hits", report)
    report.slope, report.stderr = fit_slope(usable)
    return report


def estimate_tau_tail(cfg: ChannelConfig, epsilons, trials: int, stream: RngStream,
                      tol: float = sdp.DEFAULT_TOL) -> ExponentReport:
    """Empirical ``P(tau <= eps)`` over fresh channels, with its slope in ``1/eps``.

    Trial ``t`` reads its channel from the ``channel_words`` words starting
    ``t * channel_words`` past the stream's current position, so results do
    not depend on chunking.  Channels whose solve fails are excluded from
    the trial count and reported in ``failures``.
    """
    eps = np.asarray(epsilons, dtype=float)
    if eps.ndim != 1 or eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ValueError("epsilons must be positive and strictly decreasing")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    hits = np.zeros(eps.size, dtype=np.int64)
    valid = failures = 0
    cw = cfg.channel_words
    for start in range(0, trials, _CHUNK):
        b = min(_CHUNK, trials - start)
        H = _channel_from_normals(cfg, words_to_normal(stream.words(b * cw).reshape(b, cw)))
        r = compute_tau_batch(H, tol=tol)
        ok = r.status == sdp.CONVERGED
        failures += int(b - ok.sum())
        valid += int(ok.sum())
        hits += np.sum(r.tau[ok, None] <= eps[None, :], axis=0)
    points = [TailPoint(float(1.0 / e), float(e), int(h), valid) for e, h in zip(eps, hits)]
    return _report(points, failures)


def chi2_tail_check(d: int, c: float, rhos, trials: int, stream: RngStream) -> ExponentReport:
    """Empirical ``P(||h||^2 <= rho^-c)`` for ``h ~ N(0, I_d)``.

    The fitted slope in ``rho`` should approach ``d * max(c, 0) / 2``.
    """
    rhos = np.asarray(rhos, dtype=float)
    if d < 1:
        raise ValueError("d must be at least 1")
    if rhos.ndim != 1 or rhos.size == 0 or np.any(rhos <= 0) or np.any(np.diff(rhos) <= 0):
        raise ValueError("rhos must be positive and strictly increasing")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    thresholds = rhos ** (-float(c))
    hits = np.zeros(rhos.size, dtype=np.int64)
    chunk = max(1, (1 << 20) // d)
    for start in range(0, trials, chunk):
        b = min(chunk, trials - start)
        energy = np.sum(stream.normal(b * d).reshape(b, d) ** 2, axis=1)
        hits += np.sum(energy[:, None] <= thresholds[None, :], axis=0)
    points = [TailPoint(float(r), float(t), int(h), int(trials)) for r, t, h in zip(rhos, thresholds, hits)]
    return _report(points)

