"""Shared linear algebra: spectral radius, radius rescaling, ridge readout
solves that stay robust at lambda = 0, and straight-line fitting.

The spectral radius uses power iteration with a two-vector refinement for
complex-dominant pairs; small or non-converging problems fall back to a
self-contained shifted-QR dense eigensolve so that tests can check the
iterative path against an independent oracle.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import (
    DegenerateAbscissaError,
    DimensionMismatchError,
    NoConvergenceError,
    ZeroRadiusInputError,
)

_DENSE_DIM_LIMIT = 64
_DEFAULT_START_SEED = 0x5EED


def _to_dense(a) -> np.ndarray:
    if sp.issparse(a):
        return np.asarray(a.todense(), dtype=float)
    return np.asarray(a, dtype=float)


def _hessenberg(a: np.ndarray) -> np.ndarray:
    """Householder reduction to upper Hessenberg form, in complex arithmetic."""
    h = np.array(a, dtype=complex)
    n = h.shape[0]
    for j in range(n - 2):
        x = h[j + 1 :, j].copy()
        if not np.any(np.abs(x[1:]) > 0):
            continue
        norm_x = np.linalg.norm(x)
        phase = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        v = x.copy()
        v[0] += phase * norm_x
        vn = np.linalg.norm(v)
        if vn == 0:
            continue
        v /= vn
        h[j + 1 :, :] -= 2.0 * np.outer(v, v.conj() @ h[j + 1 :, :])
        h[:, j + 1 :] -= 2.0 * np.outer(h[:, j + 1 :] @ v, v.conj())
    return h


def _dense_eig_magnitudes(a: np.ndarray, max_sweeps_per_dim: int = 200) -> np.ndarray:
    """Eigenvalue magnitudes via shifted QR iteration on the Hessenberg form."""
    n0 = a.shape[0]
    if n0 == 1:
        return np.abs(np.asarray(a, dtype=float)).reshape(1)
    h = _hessenberg(a)
    tiny = np.finfo(float).tiny
    eps = np.finfo(float).eps
    mags = []
    n = n0
    stagnant = 0
    budget = max_sweeps_per_dim * n0
    while n > 0 and budget > 0:
        for i in range(1, n):
            if abs(h[i, i - 1]) <= eps * (abs(h[i - 1, i - 1]) + abs(h[i, i])) + tiny:
                h[i, i - 1] = 0.0
        if n == 1 or h[n - 1, n - 2] == 0.0:
            mags.append(abs(h[n - 1, n - 1]))
            n -= 1
            stagnant = 0
            continue
        lo = n - 1
        while lo > 0 and h[lo, lo - 1] != 0.0:
            lo -= 1
        block = h[lo:n, lo:n]
        m = block.shape[0]
        if stagnant > 0 and stagnant % 12 == 0:
            # exceptional shift to break symmetric stalls
            mu = abs(h[n - 1, n - 2]) + 0.75 * abs(h[n - 2, n - 3]) if n - 2 > lo else abs(h[n - 1, n - 2]) * 1.5
        else:
            tr = block[-2, -2] + block[-1, -1]
            det = block[-2, -2] * block[-1, -1] - block[-2, -1] * block[-1, -2]
            disc = np.sqrt(tr * tr / 4.0 - det)
            mu1, mu2 = tr / 2.0 + disc, tr / 2.0 - disc
            mu = mu1 if abs(mu1 - block[-1, -1]) <= abs(mu2 - block[-1, -1]) else mu2
        q, r = np.linalg.qr(block - mu * np.eye(m))
        h[lo:n, lo:n] = r @ q + mu * np.eye(m)
        stagnant += 1
        budget -= 1
    if n > 0:
        raise NoConvergenceError("dense QR iteration did not converge")
    return np.array(mags)


def _power_iteration_radius(a, rng: np.random.Generator, rel_tol: float, max_iter: int):
    """Largest eigenvalue magnitude by power iteration; None on no convergence.

    Rayleigh-quotient magnitudes stall when the two leading eigenvalues tie in
    magnitude (complex pair or a +/- real pair), so while the iterate has not
    collapsed onto a single direction we fit the quadratic
    A^2 x + p A x + q x ~ 0 over the last three iterates and take the larger
    root magnitude; that recovers the radius for real pairs and complex pairs
    alike.
    """
    n = a.shape[0]
    x = rng.standard_normal(n)
    nx = np.linalg.norm(x)
    if nx == 0:
        x = np.ones(n)
        nx = np.sqrt(float(n))
    x /= nx
    est_prev = None
    stable = 0
    for _ in range(max_iter):
        y = a @ x
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            return 0.0  # start vector reached the null space; radius 0 for our use
        if not np.isfinite(ny):
            return None
        yn = y / ny
        ray = abs(float(x @ y))
        est = ray
        cos = abs(float(x @ yn))
        if cos < 1.0 - 1e-9:
            z = a @ yn
            m = np.stack([yn, x], axis=1)
            coef, _, rank, _ = np.linalg.lstsq(m, -z, rcond=None)
            if rank == 2:
                fit_err = np.linalg.norm(m @ coef + z)
                nz = np.linalg.norm(z)
                if nz > 0 and fit_err <= 1e-8 * nz:
                    pp = float(coef[0])
                    qq = float(coef[1]) * ny  # undo the normalization of A x
                    disc = np.sqrt(complex(pp * pp - 4.0 * qq))
                    est = float(max(abs((-pp + disc) / 2.0), abs((-pp - disc) / 2.0)))
        if est_prev is not None:
            tol = rel_tol * max(est, np.finfo(float).tiny)
            stable = stable + 1 if abs(est - est_prev) < tol else 0
            if stable >= 3:
                return est
        est_prev = est
        x = yn
    return None


def spectral_radius(a, rng: np.random.Generator | None = None, rel_tol: float = 1e-10, max_iter: int = 100000) -> float:
    """Largest eigenvalue magnitude of a square (sparse or dense) matrix.

    Dimensions up to 64 go straight to the dense QR eigensolve; larger
    matrices run power iteration from a seeded start vector and fall back to
    the dense path on non-convergence.
    """
    dim = a.shape[0]
    if a.shape[1] != dim or dim < 1:
        raise DimensionMismatchError("spectral_radius needs a square matrix of dim >= 1")
    if dim <= _DENSE_DIM_LIMIT:
        return float(np.max(_dense_eig_magnitudes(_to_dense(a))))
    if rng is None:
        rng = np.random.default_rng(_DEFAULT_START_SEED)
    est = _power_iteration_radius(a, rng, rel_tol, max_iter)
    if est is not None:
        return float(est)
    return float(np.max(_dense_eig_magnitudes(_to_dense(a))))


def rescale_to_radius(a, target: float, rng: np.random.Generator | None = None):
    """Scale a matrix so its spectral radius equals `target` (0 gives zeros)."""
    if target < 0:
        raise ValueError("target radius must be nonnegative")
    if target == 0.0:
        return a * 0.0
    radius = spectral_radius(a, rng)
    if radius == 0.0:
        raise ZeroRadiusInputError("cannot rescale a matrix of spectral radius zero to a nonzero radius")
    return a * (target / radius)


def _thin_svd_pieces(states: np.ndarray):
    """Economy SVD of `states` via QR of the long side then a small SVD.

    Returns (u, s, zv_projector) where zv_projector(Z) yields Z @ V without
    materializing the long singular-vector factor.
    """
    n, t = states.shape
    if t >= n:
        q, r = np.linalg.qr(states.T)  # states = r.T @ q.T
        u, s, wt = np.linalg.svd(r.T)  # r.T = u s wt ; V = q @ wt.T

        def project(z):
            return (z @ q) @ wt.T

    else:
        q, r = np.linalg.qr(states)  # states = q @ r
        uu, s, vt = np.linalg.svd(r)
        u = q @ uu

        def project(z):
            return z @ vt.T

    return u, s, project


def ridge_solve_multi(states, targets, lambdas, rcond: float = 1e-14):
    """Readout weights minimizing ||W S - Z||^2 + lambda*Tr(W W^T), one W per lambda.

    Solved through a singular value decomposition of the state matrix so the
    deliberately ill-conditioned lambda -> 0 regime stays usable: at
    lambda = 0 singular values below rcond times the largest are dropped,
    giving the minimum-norm least-squares solution.  The factorization is
    shared across all requested lambda values.
    """
    states = np.asarray(states, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if states.ndim != 2 or targets.ndim != 2 or states.shape[1] != targets.shape[1]:
        raise DimensionMismatchError(
            f"states {states.shape} and targets {targets.shape} must share their column count"
        )
    if states.shape[1] < 1:
        raise DimensionMismatchError("at least one sample column is required")
    u, s, project = _thin_svd_pieces(states)
    zv = project(targets)  # D x k
    smax = s[0] if s.size else 0.0
    out = []
    for lam in lambdas:
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        if lam == 0.0:
            keep = s > rcond * smax
            f = np.zeros_like(s)
            f[keep] = 1.0 / s[keep]
        else:
            f = s / (s * s + lam)
        out.append((zv * f) @ u.T)
    return out


def ridge_solve(states, targets, lam: float, rcond: float = 1e-14) -> np.ndarray:
    return ridge_solve_multi(states, targets, [lam], rcond=rcond)[0]


def linear_fit(xs, ys) -> tuple[float, float]:
    """Ordinary least-squares line through (xs, ys); returns (slope, intercept)."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size != y.size:
        raise DimensionMismatchError("xs and ys must have equal length")
    if x.size < 2:
        raise ValueError("need at least two points")
    if np.ptp(x) == 0:
        raise DegenerateAbscissaError("x values are all equal")
    xm = x.mean()
    ym = y.mean()
    dx = x - xm
    slope = float((dx @ (y - ym)) / (dx @ dx))
    return slope, float(ym - slope * xm)
