#! /usr/bin/env python
"""Matrix-free Krylov solvers (restarted GMRES, BiCG) and a power iteration
probe for the dominant eigenvalue magnitude.

Solvers never raise on non-convergence; they return the last iterate with a
KrylovReport whose final_residual is recomputed from b - Ax at exit.
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg as scla
from scipy.sparse import linalg as spla

logger = logging.getLogger(__name__)

# Below this right-hand side norm the stopping test becomes absolute
ABS_FLOOR = 1e-300

# Minimum relative residual reduction per GMRES restart cycle
STAGNATION_TOL = 1e-14

# Relative size of BiCG recurrence denominators treated as zero
BREAKDOWN_TOL = 1e-30


class LinearMap:
    """Linear operator known only through its action on vectors of length dimension"""

    def __init__(self, apply, dimension):
        self._apply = apply
        self.dimension = int(dimension)

    def __call__(self, x):
        return np.asarray(self._apply(x), dtype=float).reshape(self.dimension)

    def apply(self, x):
        return self(x)

    @classmethod
    def from_operator(cls, operator):
        """Wrap a dense array, sparse matrix or scipy LinearOperator"""
        op = spla.aslinearoperator(operator)
        if op.shape[0] != op.shape[1]:
            raise ValueError('operator must be square, got shape ' + str(op.shape))
        return cls(op.matvec, op.shape[0])

    @classmethod
    def transpose_of(cls, operator):
        """Adjoint of a dense array, sparse matrix or scipy LinearOperator"""
        op = spla.aslinearoperator(operator)
        return cls(op.rmatvec, op.shape[1])

    @classmethod
    def identity(cls, dimension):
        return cls(lambda x: np.array(x, dtype=float), dimension)


class SolveMap(LinearMap):
    """LinearMap whose action is an inner solve returning (x, KrylovReport).

    solves and failures count applications and the inner solves that missed
    their tolerance.
    """

    def __init__(self, solve, dimension):
        super().__init__(self._applySolve, dimension)
        self._solve = solve
        self.solves = 0
        self.failures = 0

    def _applySolve(self, x):
        y, report = self._solve(x)
        self.solves += 1
        if not report.converged:
            self.failures += 1
        return y


@dataclass
class KrylovReport:
    """Outcome of a Krylov solve.

    iterations counts restart cycles for GMRES and steps for BiCG;
    inner_iterations counts operator applications in the Krylov recurrence.
    """
    converged: bool
    iterations: int
    inner_iterations: int
    final_residual: float
    breakdown: str = None
    residual_history: list = field(default_factory=list)


class PowerEstimate(NamedTuple):
    radius: float
    iterations: int
    converged: bool


def _scale(b):
    bnorm = float(np.linalg.norm(b))
    return bnorm if bnorm >= ABS_FLOOR else 1.0


def _trueResidual(lmap, b, x, scale):
    return float(np.linalg.norm(b - lmap(x))) / scale


def gmres_restarted(lmap, rhs, m=10, tol=1e-6, max_outer=100, x0=None):
    """GMRES(m): Arnoldi with modified Gram-Schmidt, Givens rotations,
    restart every m steps.

    Stops when ||b - Ax|| / ||b|| <= tol. A restart cycle that reduces the
    residual by less than STAGNATION_TOL (relative) ends the solve as not
    converged.
    """
    if m < 1:
        raise ValueError('restart length must be >= 1, got ' + str(m))
    b = np.asarray(rhs, dtype=float).ravel()
    if not np.all(np.isfinite(b)):
        raise ValueError('right-hand side contains non-finite values')
    dim = lmap.dimension
    x = np.zeros(dim) if x0 is None else np.array(x0, dtype=float).ravel()
    scale = _scale(b)

    r = b - lmap(x)
    beta = float(np.linalg.norm(r))
    history = [beta / scale]
    outer = 0
    inner_total = 0
    breakdown = None

    if beta / scale <= tol:
        return x, KrylovReport(True, 0, 0, beta / scale, None, history)

    steps = min(m, dim)
    while outer < max_outer:
        outer += 1
        basis = np.zeros((steps + 1, dim))
        hess = np.zeros((steps + 1, steps))
        cs = np.zeros(steps)
        sn = np.zeros(steps)
        gvec = np.zeros(steps + 1)
        gvec[0] = beta
        basis[0] = r / beta
        used = 0
        arnoldi_breakdown = False

        for j in range(steps):
            w = lmap(basis[j])
            for i in range(j + 1):
                hess[i, j] = np.dot(basis[i], w)
                w = w - hess[i, j] * basis[i]
            hnext = float(np.linalg.norm(w))
            hess[j + 1, j] = hnext
            # Rotations from earlier columns
            for i in range(j):
                top = cs[i] * hess[i, j] + sn[i] * hess[i + 1, j]
                hess[i + 1, j] = -sn[i] * hess[i, j] + cs[i] * hess[i + 1, j]
                hess[i, j] = top
            denom = np.hypot(hess[j, j], hess[j + 1, j])
            if denom == 0.0:
                arnoldi_breakdown = True
                break
            cs[j] = hess[j, j] / denom
            sn[j] = hess[j + 1, j] / denom
            hess[j, j] = denom
            hess[j + 1, j] = 0.0
            gvec[j + 1] = -sn[j] * gvec[j]
            gvec[j] = cs[j] * gvec[j]
            used = j + 1
            inner_total += 1
            history.append(abs(gvec[j + 1]) / scale)
            if abs(gvec[j + 1]) / scale <= tol:
                break
            if hnext <= np.finfo(float).eps * denom:
                # Invariant subspace reached
                arnoldi_breakdown = True
                break
            basis[j + 1] = w / hnext

        if used > 0:
            y = scla.solve_triangular(hess[:used, :used], gvec[:used])
            x = x + basis[:used].T @ y

        r = b - lmap(x)
        new_beta = float(np.linalg.norm(r))
        if new_beta / scale <= tol:
            break
        if arnoldi_breakdown:
            breakdown = 'Arnoldi breakdown above tolerance'
            break
        if beta - new_beta < STAGNATION_TOL * beta:
            breakdown = 'stagnation over a restart cycle'
            break
        beta = new_beta

    final = _trueResidual(lmap, b, x, scale)
    converged = final <= tol
    if not converged and breakdown is None:
        breakdown = 'maximum number of restarts reached'
    if not converged:
        logger.debug('GMRES(' + str(m) + ') stopped: ' + breakdown)
    return x, KrylovReport(converged, outer, inner_total, final,
                           None if converged else breakdown, history)


def bicg(lmap, transpose_map, rhs, tol=1e-6, max_iter=1000, x0=None):
    """Classical unpreconditioned biconjugate gradient iteration.

    Near-zero rho or p~.Ap in the recurrence ends the solve with a breakdown
    reason in the report.
    """
    b = np.asarray(rhs, dtype=float).ravel()
    if not np.all(np.isfinite(b)):
        raise ValueError('right-hand side contains non-finite values')
    dim = lmap.dimension
    x = np.zeros(dim) if x0 is None else np.array(x0, dtype=float).ravel()
    scale = _scale(b)

    r = b - lmap(x)
    rt = r.copy()
    rnorm = float(np.linalg.norm(r))
    history = [rnorm / scale]
    if rnorm / scale <= tol:
        return x, KrylovReport(True, 0, 0, rnorm / scale, None, history)

    p = r.copy()
    pt = rt.copy()
    rho = float(np.dot(rt, r))
    breakdown = None
    k = 0
    while k < max_iter:
        if abs(rho) <= BREAKDOWN_TOL * np.linalg.norm(r) * np.linalg.norm(rt):
            breakdown = 'rho breakdown'
            break
        q = lmap(p)
        qt = transpose_map(pt)
        denom = float(np.dot(pt, q))
        if abs(denom) <= BREAKDOWN_TOL * np.linalg.norm(pt) * np.linalg.norm(q):
            breakdown = 'alpha breakdown'
            break
        alpha = rho / denom
        x = x + alpha * p
        r = r - alpha * q
        rt = rt - alpha * qt
        k += 1
        rnorm = float(np.linalg.norm(r))
        history.append(rnorm / scale)
        if rnorm / scale <= tol:
            # Recurrence residuals drift; confirm with the true residual
            r = b - lmap(x)
            if np.linalg.norm(r) / scale <= tol:
                break
        rho_new = float(np.dot(rt, r))
        beta = rho_new / rho
        rho = rho_new
        p = r + beta * p
        pt = rt + beta * pt

    final = _trueResidual(lmap, b, x, scale)
    converged = final <= tol
    if not converged and breakdown is None:
        breakdown = 'maximum number of iterations reached'
    if not converged:
        logger.debug('BiCG stopped: ' + breakdown)
    return x, KrylovReport(converged, k, k, final, None if converged else breakdown, history)


def power_iteration(lmap, tol=1e-6, max_iter=100, seed=0):
    """Estimate the dominant eigenvalue magnitude by b_{k+1} = A b_k / ||A b_k||.

    b_0 has pseudo-random components in [0, 1]. Stops once successive
    estimates ||A b_k|| differ by at most tol; otherwise returns the last
    estimate with converged=False.
    """
    rng = np.random.default_rng(seed)
    vec = rng.random(lmap.dimension)
    vec = vec / np.linalg.norm(vec)
    previous = None
    estimate = 0.0
    for k in range(1, max_iter + 1):
        w = lmap(vec)
        estimate = float(np.linalg.norm(w))
        if estimate == 0.0:
            logger.warning('power iteration: operator vanishes on the iterate')
            return PowerEstimate(0.0, k, False)
        vec = w / estimate
        if previous is not None and abs(estimate - previous) <= tol:
            return PowerEstimate(estimate, k, True)
        previous = estimate
    return PowerEstimate(estimate, max_iter, False)
