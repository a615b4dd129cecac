#! /usr/bin/env python
"""Second order finite difference inner solver.

The linearised operator is assembled as a periodic 9-point sparse matrix.
Constants span its kernel, so the zero-mean constraint row is added to
every equation (A~ = A + 1 1^T, applied matrix-free) and the system is
solved by unpreconditioned BiCG.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import grid as gr
from .krylov import LinearMap, SolveMap, bicg

logger = logging.getLogger(__name__)

PROBE_TOL = 1e-10


@dataclass(frozen=True)
class SparseSystem:
    """Assembled system A x = rhs of dimension P = n^2"""
    grid: gr.PeriodicGrid
    matrix: sparse.csr_matrix
    rhs: np.ndarray = None

    @property
    def dimension(self):
        return self.grid.size

    def triplets(self):
        """(row, col, value) arrays in coordinate format"""
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def matvec(self, x):
        return self.matrix @ x

    def rmatvec(self, y):
        return self.matrix.T @ y


@dataclass(frozen=True)
class RankFixedSystem:
    """A~ x = rhs with A~ = A + 1 1^T, the constraint sum(x) = 0 folded into every row"""
    base: SparseSystem

    @property
    def dimension(self):
        return self.base.dimension

    @property
    def rhs(self):
        return self.base.rhs

    def matvec(self, x):
        return self.base.matvec(x) + np.sum(x)

    def rmatvec(self, y):
        return self.base.rmatvec(y) + np.sum(y)

    def linear_map(self):
        return LinearMap(self.matvec, self.dimension)

    def transpose_map(self):
        return LinearMap(self.rmatvec, self.dimension)

    def to_dense(self):
        """Explicit A~; dense, only meant for small systems"""
        return self.base.matrix.toarray() + 1.0


def _stencilWeights(coeffs, h):
    """(di, dj, weight field) for every neighbour of the 9-point stencil"""
    a11 = coeffs.a11.values
    a12 = coeffs.a12.values
    a22 = coeffs.a22.values
    b1 = coeffs.b1.values
    b2 = coeffs.b2.values
    h2 = h * h
    # Mixed term 2 a12 d12 with d12 from composed centered differences
    corner = a12 / (2.0 * h2)
    return [
        (0, 0, -2.0 * (a11 + a22) / h2),
        (1, 0, a11 / h2 + b1 / (2.0 * h)),
        (-1, 0, a11 / h2 - b1 / (2.0 * h)),
        (0, 1, a22 / h2 + b2 / (2.0 * h)),
        (0, -1, a22 / h2 - b2 / (2.0 * h)),
        (1, 1, corner),
        (-1, -1, corner),
        (1, -1, -corner),
        (-1, 1, -corner),
    ]


def assemble(coeffs, grid=None, rhs=None):
    """Sparse periodic second order discretisation of the linearised operator"""
    if grid is None:
        grid = coeffs.grid
    elif grid != coeffs.grid:
        raise gr.GridError('coefficients live on ' + repr(coeffs.grid) + ', not ' + repr(grid))
    n = grid.n
    if n < gr.MIN_POINTS[2]:
        raise gr.GridError('grid n=' + str(n) + ' too small for the second order stencil')
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing='ij')
    row = (ii * n + jj).ravel()
    rows, cols, vals = [], [], []
    for di, dj, weight in _stencilWeights(coeffs, grid.h):
        col = (((ii + di) % n) * n + (jj + dj) % n).ravel()
        rows.append(row)
        cols.append(col)
        vals.append(weight.ravel())
    # Duplicate entries are summed
    matrix = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(grid.size, grid.size)).tocsr()
    b = None
    if rhs is not None:
        gr.check_same_grid(coeffs.a11, rhs)
        b = rhs.ravel()
    return SparseSystem(grid=grid, matrix=matrix, rhs=b)


def fix_rank(system):
    """Fold the zero-mean constraint row into every equation"""
    return RankFixedSystem(system)


def solve_linearized_fd(coeffs, rhs, cfg):
    """Solve the second order system for theta with BiCG; theta has exact zero mean.

    cfg supplies inner_tol and inner_max (BiCG iteration limit).
    """
    avg = gr.mean(rhs)
    if abs(avg) > 1e-10:
        raise ValueError('right-hand side must have zero mean, got ' + repr(avg))
    fixed = fix_rank(assemble(coeffs, rhs=rhs))
    x, report = bicg(fixed.linear_map(), fixed.transpose_map(), fixed.rhs,
                     tol=cfg.inner_tol, max_iter=cfg.inner_max)
    theta = gr.ScalarField(coeffs.grid, x - x.mean())
    logger.debug('BiCG: ' + str(report.iterations) + ' iterations, relative residual '
                 + '{:.3e}'.format(report.final_residual))
    return theta, report


def inverse_operator(coeffs, cfg=None, tol=PROBE_TOL):
    """SolveMap v -> x with A~ x = v - mean(v), for stability probes; counts failed BiCG solves"""
    fixed = fix_rank(assemble(coeffs))
    lmap = fixed.linear_map()
    tmap = fixed.transpose_map()
    max_iter = 1000 if cfg is None else cfg.inner_max

    def solve(vec):
        x, report = bicg(lmap, tmap, vec - vec.mean(), tol=tol,
                         max_iter=max(max_iter, 10 * fixed.dimension))
        return x - x.mean(), report

    return SolveMap(solve, fixed.dimension)
