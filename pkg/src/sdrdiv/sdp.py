"""Interior-point solver for unit-diagonal SDPs.

Solves::

    min  <L, X>   s.t.  diag(X) = e,  [<A, X> = b],  X >= 0

and its dual::

    max  e^T y + b w   s.t.  Z = L - Diag(y) - w A >= 0

with an infeasible primal-dual path-following method: HKM search
direction (the one of Helmberg, Rendl, Vanderbei and Wolkowicz for max-cut),
Mehrotra predictor-corrector, fraction-to-boundary factor 0.98.  The solver
is vectorized over a leading batch axis so that Monte Carlo loops can hand it
thousands of small problems at once; :func:`solve` is the single-problem
front end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_symmetric, sym_eig

CONVERGED = "converged"
ITERATION_CAP = "iteration-cap"
NUMERICAL_FAILURE = "numerical-failure"

STEP_FACTOR = 0.98
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
FEAS_TOL = 1e-10


@dataclass
class UnitDiagSdp:
    """``min <L,X>`` over unit-diagonal PSD ``X``, optionally with ``<A,X> = b``."""

    L: np.ndarray
    A: np.ndarray | None = None
    b: float | None = None

    def __post_init__(self):
        self.L = as_symmetric(self.L)
        if (self.A is None) != (self.b is None):
            raise ValueError("A and b must be given together")
        if self.A is not None:
            self.A = as_symmetric(self.A)
            if self.A.shape != self.L.shape:
                raise ValueError("A and L must have the same shape")
            self.b = float(self.b)

    @property
    def dim(self) -> int:
        return self.L.shape[0]


@dataclass
class SdpSolution:
    X: np.ndarray
    y: np.ndarray
    w: float | None
    Z: np.ndarray
    gap: float
    iterations: int
    status: str
    objective: float
    dual_objective: float

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


@dataclass
class BatchSolution:
    """Stacked solver output; index with ``[i]`` to get an :class:`SdpSolution`."""

    X: np.ndarray
    y: np.ndarray
    w: np.ndarray | None
    Z: np.ndarray
    gap: np.ndarray
    iterations: np.ndarray
    status: np.ndarray
    objective: np.ndarray
    dual_objective: np.ndarray

    def __len__(self):
        return len(self.X)

    def __getitem__(self, i) -> SdpSolution:
        return SdpSolution(
            X=self.X[i], y=self.y[i], w=None if self.w is None else float(self.w[i]),
            Z=self.Z[i], gap=float(self.gap[i]), iterations=int(self.iterations[i]),
            status=str(self.status[i]), objective=float(self.objective[i]),
            dual_objective=float(self.dual_objective[i]),
        )

    @property
    def converged(self) -> np.ndarray:
        return self.status == CONVERGED


def build_lift(H, y) -> np.ndarray:
    """``L = [[H^T H, -H^T y], [-y^T H, y^T y]]``; batched over leading axes."""
    H = np.asarray(H, dtype=float)
    y = np.asarray(y, dtype=float)
    if H.shape[:-2] != y.shape[:-1] or H.shape[-2] != y.shape[-1]:
        raise ValueError(f"incompatible shapes H{H.shape} and y{y.shape}")
    G = np.concatenate([H, -y[..., :, None]], axis=-1)
    L = np.swapaxes(G, -1, -2) @ G
    return 0.5 * (L + np.swapaxes(L, -1, -2))


def _sym(S):
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def _diag_embed(v):
    k = v.shape[-1]
    out = np.zeros(v.shape + (k,))
    idx = np.arange(k)
    out[..., idx, idx] = v
    return out


def _inner(P, Q):
    return np.einsum("...ij,...ij->...", P, Q)


def _max_step(lam, V, D):
    """Largest ``a`` with ``V diag(lam) V^T + a D`` PSD (``inf`` if unbounded)."""
    r = V / np.sqrt(lam)[..., None, :]
    W = np.swapaxes(r, -1, -2) @ D @ r
    lmin = np.linalg.eigvalsh(_sym(W))[..., 0]
    with np.errstate(divide="ignore"):
        return np.where(lmin < 0, -1.0 / np.minimum(lmin, -1e-300), np.inf)


def _backtrack(S, D, alpha, tries: int = 40):
    """Shrink ``alpha`` until ``S + alpha D`` is numerically positive definite.

    The step-length eigenvalue problem loses accuracy when ``S`` is nearly
    singular, so the new iterate is checked directly.
    """
    alpha = alpha.copy()
    todo = np.arange(len(S))
    for _ in range(tries):
        lam = np.linalg.eigvalsh(_sym(S[todo] + alpha[todo, None, None] * D[todo]))[:, 0]
        fail = ~(lam > 0)
        if not fail.any():
            break
        todo = todo[fail]
        alpha[todo] *= 0.5
    return alpha


def _solve_schur(M, rhs):
    """Batched ``M x = rhs``; rows that cannot be solved come back as NaN."""
    try:
        return np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.full(rhs.shape, np.nan)
        for i in range(len(M)):
            try:
                out[i] = np.linalg.solve(M[i], rhs[i])
            except np.linalg.LinAlgError:
                pass
        return out


def solve_batch(L, A=None, b=None, tol: float = DEFAULT_TOL,
                max_iter: int = DEFAULT_MAX_ITER) -> BatchSolution:
    """Solve a stack of unit-diagonal SDPs ``L[i]`` (shape ``(B, k, k)``).

    ``A`` may be one ``(k, k)`` matrix shared by the whole batch or a stack;
    ``b`` a scalar or a length-``B`` vector.
    """
    # rows whose Newton system breaks down carry NaNs until they are retired
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        return _solve_batch(L, A, b, tol, max_iter)


def _solve_batch(L, A, b, tol, max_iter):
    L = _sym(np.array(L, dtype=float))
    if L.ndim != 3 or L.shape[1] != L.shape[2]:
        raise ValueError(f"expected a (B, k, k) stack, got {L.shape}")
    if not np.all(np.isfinite(L)):
        raise ValueError("L has non-finite entries")
    if tol <= 0:
        raise ValueError("tol must be positive")
    B, k, _ = L.shape
    extra = A is not None
    if extra:
        A = _sym(np.broadcast_to(np.asarray(A, dtype=float), (B, k, k)).copy())
        b = np.broadcast_to(np.asarray(b, dtype=float), (B,)).copy()

    # work on L / ||L||_F; everything dual is rescaled on the way out
    scale = np.linalg.norm(L, axis=(1, 2))
    scale[scale == 0] = 1.0
    C = L / scale[:, None, None]

    X = np.broadcast_to(np.eye(k), (B, k, k)).copy()
    y = np.diagonal(C, axis1=1, axis2=2) - np.abs(C).sum(axis=2) - 1.0
    w = np.zeros(B)
    Z = C - _diag_embed(y)

    status = np.full(B, ITERATION_CAP, dtype=object)
    iterations = np.zeros(B, dtype=int)
    gap = np.full(B, np.inf)
    active = np.arange(B)

    for it in range(max_iter + 1):
        if active.size == 0:
            break
        Xa, Za, ya, Ca = X[active], Z[active], y[active], C[active]
        lx, Vx = np.linalg.eigh(Xa)
        lz, Vz = np.linalg.eigh(Za)
        ok = (lx[:, 0] > 0) & (lz[:, 0] > 0) & np.isfinite(lx).all(1) & np.isfinite(lz).all(1)

        Zinv = (Vz / lz[:, None, :]) @ np.swapaxes(Vz, 1, 2)
        rp = 1.0 - np.diagonal(Xa, axis1=1, axis2=2)
        Rd = Ca - _diag_embed(ya) - Za
        if extra:
            Aa, wa = A[active], w[active]
            rw = b[active] - _inner(Aa, Xa)
            Rd = Rd - wa[:, None, None] * Aa
        g = _inner(Xa, Za)
        gap[active] = g * scale[active]
        pobj = _inner(Ca, Xa)

        done = (g <= tol * (1.0 / scale[active] + np.abs(pobj))) \
            & (np.abs(rp).max(1) <= FEAS_TOL) & (np.abs(Rd).max((1, 2)) <= FEAS_TOL)
        if extra:
            done &= np.abs(rw) <= FEAS_TOL
        done &= ok
        iterations[active] = it
        status[active[done]] = CONVERGED
        status[active[~ok]] = NUMERICAL_FAILURE
        if it == max_iter:
            break
        keep = ok & ~done
        if not keep.any():
            active = active[keep]
            continue
        sel = keep
        active = active[sel]
        Xa, Za, ya, Ca, Zinv, rp, Rd = Xa[sel], Za[sel], ya[sel], Ca[sel], Zinv[sel], rp[sel], Rd[sel]
        lx, Vx, lz, Vz, g = lx[sel], Vx[sel], lz[sel], Vz[sel], g[sel]
        if extra:
            Aa, wa, rw = Aa[sel], wa[sel], rw[sel]
        mu = g / k

        # Schur complement of the HKM system
        M = Xa * Zinv
        XRZ = Xa @ Rd @ Zinv
        if extra:
            P = Xa @ Aa @ Zinv
            u = np.diagonal(P, axis1=1, axis2=2)
            mww = _inner(Aa, P)
            M = np.concatenate([
                np.concatenate([M, u[:, :, None]], axis=2),
                np.concatenate([u[:, None, :], mww[:, None, None]], axis=2),
            ], axis=1)

        def direction(G):
            T = G - XRZ
            rhs = rp - np.diagonal(T, axis1=1, axis2=2)
            if extra:
                rhs = np.concatenate([rhs, (rw - _inner(Aa, T))[:, None]], axis=1)
            d = _solve_schur(M, rhs)
            dZ = Rd - _diag_embed(d[:, :k])
            if extra:
                dZ = dZ - d[:, k][:, None, None] * Aa
            dX = _sym(G - Xa @ dZ @ Zinv)
            return dX, d, dZ

        # predictor
        dX, d, dZ = direction(-Xa)
        bad = ~np.isfinite(d).all(1)
        dX[bad] = 0.0
        dZ[bad] = 0.0
        ap = np.minimum(1.0, _max_step(lx, Vx, dX))
        ad = np.minimum(1.0, _max_step(lz, Vz, dZ))
        mu_aff = _inner(Xa + ap[:, None, None] * dX, Za + ad[:, None, None] * dZ) / k
        # short predictor steps mean poor centrality: center harder
        step_pred = np.minimum(ap, ad)
        expon = np.where(step_pred < 1 / np.sqrt(3), 1.0, np.maximum(1.0, 3 * step_pred ** 2))
        sigma = np.clip((np.maximum(mu_aff, 0.0) / mu) ** expon, 0.0, 1.0)
        gamma = np.minimum(STEP_FACTOR, 0.9 + 0.09 * step_pred)

        # corrector
        G = (sigma * mu)[:, None, None] * Zinv - Xa - dX @ dZ @ Zinv
        G[bad] = 0.0
        dX, d, dZ = direction(G)
        bad |= ~np.isfinite(d).all(1) | ~np.isfinite(dX).all((1, 2))
        d[bad] = 0.0
        dX[bad] = 0.0
        dZ[bad] = 0.0
        ap = np.minimum(1.0, gamma * _max_step(lx, Vx, dX))
        ad = np.minimum(1.0, gamma * _max_step(lz, Vz, dZ))

        ap = _backtrack(Xa, dX, ap)
        ad = _backtrack(Za, dZ, ad)
        X[active] = _sym(Xa + ap[:, None, None] * dX)
        Z[active] = _sym(Za + ad[:, None, None] * dZ)
        y[active] = ya + ad[:, None] * d[:, :k]
        if extra:
            w[active] = wa + ad * d[:, k]
        if bad.any():
            status[active[bad]] = NUMERICAL_FAILURE
            iterations[active[bad]] = it + 1
            active = active[~bad]

    objective = _inner(L, X)
    dual = y.sum(1) * scale
    if extra:
        dual = dual + b * w * scale
    return BatchSolution(
        X=X, y=y * scale[:, None], w=w * scale if extra else None, Z=Z * scale[:, None, None],
        gap=gap, iterations=iterations, status=status, objective=objective, dual_objective=dual,
    )


def solve(problem: UnitDiagSdp, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> SdpSolution:
    """Solve one :class:`UnitDiagSdp`."""
    A = None if problem.A is None else problem.A
    return solve_batch(problem.L[None], A, problem.b, tol=tol, max_iter=max_iter)[0]


def certify_rank_one(L, x, rel_tol: float = 1e-8):
    """Dual certificate that ``x x^T`` is the unique optimum of the SDR.

    For ``x`` with entries ``+-1`` the only dual slack complementary to
    ``x x^T`` is ``Z = L - Diag((L x) * x)``.  If ``Z`` is PSD with a
    one-dimensional null space, ``x x^T`` is optimal and no other optimum
    exists.  Batched over leading axes; returns ``(certified, Z)``.
    Nearly degenerate cases (second eigenvalue of ``Z`` below
    ``rel_tol * (1 + ||L||)``) are reported as not certified.
    """
    L = np.asarray(L, dtype=float)
    x = np.asarray(x, dtype=float)
    yv = np.einsum("...ij,...j->...i", L, x) * x
    Z = L - _diag_embed(yv)
    lam = np.linalg.eigvalsh(_sym(Z))
    size = 1.0 + np.linalg.norm(L, axis=(-2, -1))
    certified = (lam[..., 0] >= -1e-3 * rel_tol * size) & (lam[..., 1] >= rel_tol * size)
    return certified, Z


def dominant_eigvec(X) -> np.ndarray:
    """Unit eigenvector of the largest eigenvalue, last entry made nonnegative.

    If the last entry is zero, the first nonzero entry is made positive.
    """
    _, U = sym_eig(X)
    u = U[:, -1].copy()
    u /= np.linalg.norm(u)
    ref = u[-1]
    if abs(ref) <= 1e-14:
        nz = np.flatnonzero(np.abs(u) > 1e-14)
        ref = u[nz[0]] if nz.size else 1.0
    return -u if ref < 0 else u


def numerical_rank(X, rel_tol: float = 1e-6) -> int:
    """Number of eigenvalues above ``rel_tol`` times the largest one."""
    w, _ = sym_eig(X)
    top = w[-1]
    if top <= 0:
        return 0
    return int(np.sum(w > rel_tol * top))
