#! /usr/bin/env python
"""Spectral inner solver for the linearised Monge-Ampere equation.

The variable coefficient operator L is preconditioned by its constant
coefficient average Lbar, which is inverted exactly by a Fourier multiplier.
GMRES(m) solves L Lbar^-1 sigma = rhs on the mean-zero subspace and theta is
recovered as Lbar^-1 sigma by one more inverse transform.

Transforms are unnormalised forward, 1/n^2 inverse (scipy.fft defaults).
First derivative multipliers vanish on the Nyquist row and column so real
fields stay real.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import fft as spfft

from . import grid as gr
from .krylov import LinearMap, SolveMap, gmres_restarted

logger = logging.getLogger(__name__)

# Tolerance of the inner solves inside the inverse-operator probe
PROBE_TOL = 1e-10


@dataclass(frozen=True)
class AveragedOperator:
    """Domain averages of the coefficient fields"""
    a11: float
    a12: float
    a22: float
    b1: float
    b2: float

    def is_elliptic(self):
        return self.a11 > 0.0 and self.a11 * self.a22 - self.a12 ** 2 > 0.0


@dataclass(frozen=True)
class Multipliers:
    """Fourier multipliers of the five derivatives on one grid"""
    d1: np.ndarray
    d2: np.ndarray
    d11: np.ndarray
    d12: np.ndarray
    d22: np.ndarray

    @classmethod
    def on(cls, grid):
        k1, k2 = grid.wavenumbers()
        k1o = k1.copy()
        k2o = k2.copy()
        if grid.n % 2 == 0:
            k1o[k1 == -grid.n // 2] = 0.0
            k2o[k2 == -grid.n // 2] = 0.0
        d1 = 2j * np.pi * k1o
        d2 = 2j * np.pi * k2o
        return cls(d1=d1, d2=d2,
                   d11=(2j * np.pi * k1) ** 2,
                   d12=d1 * d2,
                   d22=(2j * np.pi * k2) ** 2)


@dataclass(frozen=True)
class FourierSymbol:
    """rho_bar(k) = 1 / (symbol of Lbar at k), zero where that vanishes"""
    grid: gr.PeriodicGrid
    rho_bar: np.ndarray
    multipliers: Multipliers
    operator: AveragedOperator


def _requirePowerOfTwo(grid):
    n = grid.n
    if n < 2 or n & (n - 1):
        raise gr.GridError('FFT backend needs a power of two grid size, got n=' + str(n))


def average_coefficients(coeffs):
    """Simpson averages of the coefficient fields"""
    return AveragedOperator(a11=gr.simpson_average(coeffs.a11),
                            a12=gr.simpson_average(coeffs.a12),
                            a22=gr.simpson_average(coeffs.a22),
                            b1=gr.simpson_average(coeffs.b1),
                            b2=gr.simpson_average(coeffs.b2))


def build_symbol(op, grid):
    """Fourier symbol of the inverse of the averaged operator"""
    mult = Multipliers.on(grid)
    denom = (op.a11 * mult.d11 + 2.0 * op.a12 * mult.d12 + op.a22 * mult.d22
             + op.b1 * mult.d1 + op.b2 * mult.d2)
    rho = np.zeros_like(denom)
    nonzero = np.abs(denom) > 0.0
    rho[nonzero] = 1.0 / denom[nonzero]
    # Gauge: the constant mode is never recovered
    rho[0, 0] = 0.0
    return FourierSymbol(grid=grid, rho_bar=rho, multipliers=mult, operator=op)


def _realIfft(spectrum):
    return np.real(spfft.ifft2(spectrum))


def solve_constant(symbol, sigma):
    """Lbar^-1 sigma by direct symbol division; the result has zero mean"""
    return gr.ScalarField(sigma.grid, _realIfft(symbol.rho_bar * spfft.fft2(sigma.values)))


def _applyPreconditionedValues(coeffs, symbol, values):
    mult = symbol.multipliers
    base = symbol.rho_bar * spfft.fft2(values)
    # Five inverse transforms; the cross term is shared by both mixed slots
    alpha11 = _realIfft(mult.d11 * base)
    alpha12 = _realIfft(mult.d12 * base)
    alpha22 = _realIfft(mult.d22 * base)
    beta1 = _realIfft(mult.d1 * base)
    beta2 = _realIfft(mult.d2 * base)
    return (coeffs.a11.values * alpha11 + 2.0 * coeffs.a12.values * alpha12
            + coeffs.a22.values * alpha22 + coeffs.b1.values * beta1
            + coeffs.b2.values * beta2)


def apply_preconditioned(coeffs, symbol, sigma):
    """L Lbar^-1 sigma, expanded as sum a_ij alpha_ij + sum b_i beta_i"""
    gr.check_same_grid(coeffs.a11, sigma)
    return gr.ScalarField(sigma.grid, _applyPreconditionedValues(coeffs, symbol, sigma.values))


def _checkRhs(rhs):
    avg = gr.mean(rhs)
    if abs(avg) > 1e-10:
        raise ValueError('right-hand side must have zero mean, got ' + repr(avg))


def _projectedMap(coeffs, symbol):
    n = coeffs.grid.n

    def apply(vec):
        values = vec.reshape(n, n)
        values = values - values.mean()
        out = _applyPreconditionedValues(coeffs, symbol, values)
        return (out - out.mean()).ravel()

    return LinearMap(apply, n * n)


def _maxRestarts(cfg):
    return max(1, -(-cfg.inner_max // cfg.gmres_restart))


def solve_linearized_fft(coeffs, rhs, cfg):
    """Solve L theta = rhs for zero-mean theta.

    cfg supplies inner_tol, inner_max (bound on GMRES steps) and
    gmres_restart. Returns theta and the GMRES report.
    """
    grid = coeffs.grid
    gr.check_same_grid(coeffs.a11, rhs)
    _requirePowerOfTwo(grid)
    _checkRhs(rhs)

    op = average_coefficients(coeffs)
    if not op.is_elliptic():
        logger.warning('averaged operator is not elliptic: ' + repr(op))
    symbol = build_symbol(op, grid)
    lmap = _projectedMap(coeffs, symbol)
    b = rhs.ravel()
    b = b - b.mean()

    sigma, report = gmres_restarted(lmap, b, m=cfg.gmres_restart, tol=cfg.inner_tol,
                                    max_outer=_maxRestarts(cfg))
    theta = solve_constant(symbol, gr.ScalarField(grid, sigma))
    theta = theta - gr.mean(theta)
    logger.debug('GMRES: ' + str(report.inner_iterations) + ' steps, relative residual '
                 + '{:.3e}'.format(report.final_residual))
    return theta, report


def inverse_operator(coeffs, cfg=None, tol=PROBE_TOL):
    """SolveMap v -> theta with L theta = v - mean(v), for stability probes.

    The map counts GMRES solves that stopped short of tol.
    """
    grid = coeffs.grid
    _requirePowerOfTwo(grid)
    symbol = build_symbol(average_coefficients(coeffs), grid)
    lmap = _projectedMap(coeffs, symbol)
    restart = 10 if cfg is None else cfg.gmres_restart
    inner_max = 1000 if cfg is None else cfg.inner_max

    def solve(vec):
        b = vec - vec.mean()
        sigma, report = gmres_restarted(lmap, b, m=restart, tol=tol,
                                        max_outer=max(1, -(-inner_max // restart)))
        theta = _realIfft(symbol.rho_bar * spfft.fft2(sigma.reshape(grid.n, grid.n)))
        return (theta - theta.mean()).ravel(), report

    return SolveMap(solve, grid.size)
