"""Tests for the spectrally preconditioned GMRES backend"""

import logging

import numpy as np
import pytest
from scipy import fft as spfft

from mongelab import fftsolver as fs
from mongelab import grid as gr
from mongelab import mongeampere as ma
from mongelab import synthetic
from mongelab.krylov import power_iteration


def test_averages_of_coefficients(generic):
    grid = gr.PeriodicGrid(16)
    op = fs.average_coefficients(generic(grid))
    assert op.a11 == pytest.approx(1.0, abs=1e-12)
    assert op.a12 == pytest.approx(0.0, abs=1e-12)
    assert op.a22 == pytest.approx(1.2, abs=1e-12)
    assert op.b1 == pytest.approx(0.0, abs=1e-12)
    assert op.b2 == pytest.approx(0.0, abs=1e-12)
    assert op.is_elliptic()
    assert not fs.AveragedOperator(1.0, 2.0, 1.0, 0.0, 0.0).is_elliptic()


def test_laplacian_symbol():
    grid = gr.PeriodicGrid(8)
    symbol = fs.build_symbol(fs.AveragedOperator(1.0, 0.0, 1.0, 0.0, 0.0), grid)
    assert symbol.rho_bar[0, 0] == 0.0
    assert symbol.rho_bar[1, 0] == pytest.approx(-1.0 / (4 * np.pi ** 2))
    assert symbol.rho_bar[1, 1] == pytest.approx(-1.0 / (8 * np.pi ** 2))
    assert symbol.rho_bar[4, 0] == pytest.approx(-1.0 / (64 * np.pi ** 2))


def test_symbol_with_first_order_terms():
    grid = gr.PeriodicGrid(8)
    symbol = fs.build_symbol(fs.AveragedOperator(1.0, 0.0, 1.0, 1.0, 0.0), grid)
    assert symbol.rho_bar[1, 0] == pytest.approx(1.0 / (-4 * np.pi ** 2 + 2j * np.pi))
    # First derivative multipliers vanish at Nyquist
    assert symbol.rho_bar[4, 0] == pytest.approx(-1.0 / (64 * np.pi ** 2))


def test_symbol_is_conjugate_symmetric():
    grid = gr.PeriodicGrid(16)
    op = fs.AveragedOperator(1.0, 0.2, 1.3, 0.4, -0.7)
    rho = fs.build_symbol(op, grid).rho_bar
    mirrored = np.roll(np.flip(rho, axis=(0, 1)), 1, axis=(0, 1))
    assert np.allclose(rho, np.conj(mirrored), atol=1e-15)


def test_nyquist_first_derivative_multipliers_vanish():
    mult = fs.Multipliers.on(gr.PeriodicGrid(8))
    assert np.all(mult.d1[4, :] == 0.0)
    assert np.all(mult.d2[:, 4] == 0.0)
    assert np.all(mult.d12[4, :] == 0.0)
    assert mult.d11[4, 0] == pytest.approx(-64 * np.pi ** 2)


def test_preconditioned_operator_is_identity_for_constant_coefficients(rng, smooth_field):
    grid = gr.PeriodicGrid(16)
    coeffs = ma.LinearizedCoefficients.constant(grid, a11=1.3, a12=0.2, a22=0.9, b1=0.5, b2=-1.0)
    symbol = fs.build_symbol(fs.average_coefficients(coeffs), grid)
    sigma = smooth_field(grid, rng, modes=3)
    out = fs.apply_preconditioned(coeffs, symbol, sigma)
    assert np.max(np.abs(out.values - sigma.values)) <= 1e-10


def test_solve_constant_on_eigenfunction():
    grid = gr.PeriodicGrid(16)
    symbol = fs.build_symbol(fs.AveragedOperator(1.0, 0.0, 1.0, 0.0, 0.0), grid)
    sigma = grid.from_function(lambda x1, x2: np.sin(2 * np.pi * x1))
    theta = fs.solve_constant(symbol, sigma)
    assert np.allclose(theta.values, -sigma.values / (4 * np.pi ** 2), atol=1e-14)


def test_preconditioned_operator_composes_spectral_derivatives(rng, smooth_field, generic):
    grid = gr.PeriodicGrid(16)
    coeffs = generic(grid)
    symbol = fs.build_symbol(fs.average_coefficients(coeffs), grid)
    sigma = smooth_field(grid, rng, modes=3)
    direct = ma.apply_linearized(coeffs, fs.solve_constant(symbol, sigma), 'spectral')
    assert np.max(np.abs(fs.apply_preconditioned(coeffs, symbol, sigma).values
                         - direct.values)) <= 1e-10


def test_solve_laplacian():
    grid = gr.PeriodicGrid(32)
    rhs = grid.from_function(lambda x1, x2: np.sin(2 * np.pi * x1) * np.cos(2 * np.pi * x2))
    cfg = ma.NewtonConfig(inner_tol=1e-12)
    theta, report = fs.solve_linearized_fft(ma.LinearizedCoefficients.constant(grid), rhs, cfg)
    assert report.converged
    assert report.inner_iterations <= 2
    assert np.allclose(theta.values, -rhs.values / (8 * np.pi ** 2), atol=1e-12)


def test_solve_generic_coefficients(rng, smooth_field, generic):
    grid = gr.PeriodicGrid(32)
    coeffs = generic(grid)
    rhs = smooth_field(grid, rng, modes=3)
    cfg = ma.NewtonConfig(inner_tol=1e-10)
    theta, report = fs.solve_linearized_fft(coeffs, rhs, cfg)
    assert report.converged
    assert report.inner_iterations <= cfg.inner_max
    assert abs(gr.mean(theta)) <= 1e-12
    assert theta.values.dtype == np.float64
    applied = ma.apply_linearized(coeffs, theta, 'spectral')
    projected = applied - gr.mean(applied)
    assert gr.max_norm(projected - rhs) <= 1e-7 * gr.max_norm(rhs)


def test_solve_at_linearization_point(linearized_coefficients, rng, smooth_field):
    coeffs = linearized_coefficients(32)
    rhs = smooth_field(coeffs.grid, rng, modes=2)
    theta, report = fs.solve_linearized_fft(coeffs, rhs, ma.NewtonConfig(inner_tol=1e-8))
    assert report.converged
    applied = ma.apply_linearized(coeffs, theta, 'spectral')
    assert gr.max_norm(applied - gr.mean(applied) - rhs) <= 1e-5 * gr.max_norm(rhs)


def test_non_power_of_two_is_rejected():
    grid = gr.PeriodicGrid(12)
    with pytest.raises(gr.GridError):
        fs.solve_linearized_fft(ma.LinearizedCoefficients.constant(grid), grid.zeros(),
                                ma.NewtonConfig())
    with pytest.raises(gr.GridError):
        fs.inverse_operator(ma.LinearizedCoefficients.constant(grid))


def test_nonzero_mean_rhs_is_rejected():
    grid = gr.PeriodicGrid(16)
    with pytest.raises(ValueError):
        fs.solve_linearized_fft(ma.LinearizedCoefficients.constant(grid), grid.constant(0.1),
                                ma.NewtonConfig())


def test_non_elliptic_average_is_logged(caplog):
    grid = gr.PeriodicGrid(8)
    coeffs = ma.LinearizedCoefficients.constant(grid, a11=-1.0, a22=1.0)
    rhs = grid.from_function(lambda x1, x2: np.sin(2 * np.pi * x1))
    with caplog.at_level(logging.WARNING, logger='mongelab.fftsolver'):
        fs.solve_linearized_fft(coeffs, rhs, ma.NewtonConfig(inner_max=20))
    assert 'not elliptic' in caplog.text


def test_inverse_laplacian_spectral_radius():
    grid = gr.PeriodicGrid(16)
    inverse = fs.inverse_operator(ma.LinearizedCoefficients.constant(grid))
    estimate = power_iteration(inverse, tol=1e-12, max_iter=200, seed=0)
    assert estimate.converged
    assert estimate.radius == pytest.approx(1.0 / (4 * np.pi ** 2), rel=1e-6)


def test_inverse_operator_counts_failed_inner_solves(generic):
    grid = gr.PeriodicGrid(16)
    coeffs = generic(grid)
    settled = fs.inverse_operator(coeffs)
    power_iteration(settled, tol=1e-8, max_iter=50, seed=0)
    assert settled.solves > 0 and settled.failures == 0

    starved = fs.inverse_operator(coeffs, ma.NewtonConfig(inner_max=1, gmres_restart=1))
    power_iteration(starved, tol=1e-8, max_iter=50, seed=0)
    assert starved.failures == starved.solves > 0


def test_inverse_transforms_of_real_data_are_real(rng, generic):
    grid = gr.PeriodicGrid(16)
    symbol = fs.build_symbol(fs.average_coefficients(generic(grid)), grid)
    base = symbol.rho_bar * spfft.fft2(rng.normal(size=(16, 16)))
    mult = symbol.multipliers
    for d in (mult.d1, mult.d2, mult.d11, mult.d12, mult.d22):
        assert np.abs(spfft.ifft2(d * base).imag).max() <= 1e-12


def test_gmres_steps_do_not_grow_with_the_grid():
    counts = []
    for n in (16, 32, 64):
        problem = synthetic.build_problem(n)
        _, report = ma.run_newton(problem.pair, ma.NewtonConfig(tol=1e-8, max_iter=40,
                                                                inner_tol=1e-4))
        assert report.converged
        counts.append(report.mean_inner_iterations())
    assert all(4.0 <= c <= 12.0 for c in counts)
    assert max(counts) < 2.0 * min(counts)
