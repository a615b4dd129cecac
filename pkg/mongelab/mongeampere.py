#! /usr/bin/env python
"""Monge-Ampere forward operator, its linearisation, mass renormalisation and
the damped Newton driver.

The unknown is the periodic potential perturbation u, with the transport map
x -> x + grad u(x). Each Newton step solves the linearised equation

    L_n theta = (f - f~_n) / tau

for a zero-mean theta with one of the inner solvers (fftsolver, fdsolver).
"""

import time
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import grid as gr

logger = logging.getLogger(__name__)

BACKENDS = ('fft', 'fd')

# Gauge tolerance for the zero-mean potential
GAUGE_TOL = 1e-10

# Residuals below this are treated as converged to roundoff when measuring rates
RATIO_FLOOR = 1e-13


class DensityError(ValueError):
    """Invalid source/target density pair"""


class NewtonConfigError(ValueError):
    """Invalid solver parameters"""


class NewtonStepError(RuntimeError):
    """A Newton step could not be completed"""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class GridDensity:
    """Grid-sampled target density, composed with the map by interpolation"""

    def __init__(self, values, mode='nearest'):
        if mode not in gr.SAMPLE_MODES:
            raise NewtonConfigError('unknown sample mode ' + repr(mode))
        self.field = values
        self.mode = mode
        self._grad = None

    def value(self, x1, x2):
        return gr.sample_points(self.field, x1, x2, self.mode)

    def gradient(self, x1, x2):
        if self._grad is None:
            # Fourth order nodal gradient, sampled like the values
            self._grad = gr.gradient(self.field, 4)
        return (gr.sample_points(self._grad.c1, x1, x2, self.mode),
                gr.sample_points(self._grad.c2, x1, x2, self.mode))


class AnalyticDensity:
    """Target density known in closed form.

    value(x1, x2) and gradient(x1, x2) -> (g1, g2) must accept arrays and be
    1-periodic, so compositions with the map need no interpolation.
    """

    def __init__(self, value, gradient):
        self._value = value
        self._gradient = gradient

    def value(self, x1, x2):
        return np.asarray(self._value(x1, x2), dtype=float)

    def gradient(self, x1, x2):
        g1, g2 = self._gradient(x1, x2)
        return np.asarray(g1, dtype=float), np.asarray(g2, dtype=float)

    def on_grid(self, grid):
        """Nodal values as a ScalarField"""
        x1, x2 = grid.coordinates()
        return gr.ScalarField(grid, np.broadcast_to(self.value(x1, x2), (grid.n, grid.n)))


def as_density(g, mode='nearest'):
    """Turn a ScalarField into a GridDensity; density objects pass through"""
    if isinstance(g, gr.ScalarField):
        return GridDensity(g, mode)
    return g


class DensityPair:
    """Source density f and target density g on one grid.

    Both must be positive (at least `floor`) with grid mean 1. An optional
    `target` density object replaces grid sampling of g in compositions.
    """

    def __init__(self, f, g, floor=1e-12, target=None):
        gr.check_same_grid(f, g)
        for name, dens in (('f', f), ('g', g)):
            low = float(np.min(dens.values))
            if low < floor or low <= 0.0:
                raise DensityError('density ' + name + ' has minimum ' + repr(low)
                                   + ' below floor ' + repr(floor))
            avg = gr.mean(dens)
            if abs(avg - 1.0) > 1e-12:
                raise DensityError('density ' + name + ' has mean ' + repr(avg) + ', expected 1')
        self.f = f
        self.g = g
        self.floor = floor
        self.target = target

    @classmethod
    def normalized(cls, f, g, floor=1e-12, target=None):
        """Rescale f and g to grid mean 1, then validate"""
        return cls(f / gr.mean(f), g / gr.mean(g), floor=floor, target=target)

    @property
    def grid(self):
        return self.f.grid

    def target_density(self, mode):
        """Density object used to compose g with the transport map"""
        if self.target is not None:
            return self.target
        return GridDensity(self.g, mode)


@dataclass(frozen=True)
class NewtonConfig:
    """Damped Newton parameters.

    tol applies to ||f - f~_n||_l2; inner_* drive the linear solver of the
    chosen backend. derivative_order is the stencil order of the nonlinear
    right-hand side; the fd backend always discretises theta at second order.
    """
    tau: float = 1.0
    tol: float = 1e-9
    max_iter: int = 20
    backend: str = 'fft'
    inner_tol: float = 1e-4
    inner_max: int = 1000
    gmres_restart: int = 10
    sample_mode: str = 'nearest'
    derivative_order: int = 4
    simplified: bool = False
    keep_history: bool = False

    def __post_init__(self):
        if not self.tau >= 1.0:
            raise NewtonConfigError('tau must be >= 1, got ' + repr(self.tau))
        if not self.tol > 0.0 or not self.inner_tol > 0.0:
            raise NewtonConfigError('tolerances must be positive')
        if self.max_iter < 1 or self.inner_max < 1 or self.gmres_restart < 1:
            raise NewtonConfigError('iteration limits and restart length must be positive')
        if self.backend not in BACKENDS:
            raise NewtonConfigError('unknown backend ' + repr(self.backend)
                                    + ' (expected "fft" or "fd")')
        if self.sample_mode not in gr.SAMPLE_MODES:
            raise NewtonConfigError('unknown sample mode ' + repr(self.sample_mode))
        if self.derivative_order != 4:
            raise NewtonConfigError('the nonlinear right-hand side uses fourth order stencils')


@dataclass(frozen=True)
class LinearizedCoefficients:
    """Coefficient fields of L theta = sum a_ij d_ij theta + sum b_i d_i theta"""
    a11: gr.ScalarField
    a12: gr.ScalarField
    a22: gr.ScalarField
    b1: gr.ScalarField
    b2: gr.ScalarField

    def __post_init__(self):
        gr.check_same_grid(self.a11, self.a12, self.a22, self.b1, self.b2)

    @property
    def grid(self):
        return self.a11.grid

    @classmethod
    def constant(cls, grid, a11=1.0, a12=0.0, a22=1.0, b1=0.0, b2=0.0):
        """Constant coefficients; the defaults give the Laplacian"""
        return cls(grid.constant(a11), grid.constant(a12), grid.constant(a22),
                   grid.constant(b1), grid.constant(b2))


@dataclass(frozen=True)
class IterationRecord:
    """Diagnostics for one Newton step, taken at the iterate u_n"""
    iteration: int
    residual: float
    inner_iterations: int
    inner_converged: bool
    wall_time: float
    min_eigenvalue: float
    u_error: float = None
    diagnostics: tuple = ()
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NewtonState:
    """Current iterate and accumulated history.

    f_n is the pushforward density evaluated at the iterate the last step
    started from (g for the initial state).
    """
    u: gr.ScalarField
    f_n: gr.ScalarField
    iter: int = 0
    residual_history: tuple = ()
    records: tuple = ()
    frames: tuple = ()
    iterates: tuple = ()

    @classmethod
    def initial(cls, pair):
        """Constant initial guess u_0 = 0, for which f_0 = g"""
        return cls(u=pair.grid.zeros(), f_n=pair.g)


@dataclass
class SolveReport:
    """Outcome of run_newton"""
    records: list
    converged: bool
    iterations: int
    final_residual: float
    total_time: float
    failure: str = None
    final_state: NewtonState = None

    def residuals(self):
        return [rec.residual for rec in self.records]

    def u_errors(self):
        return [rec.u_error for rec in self.records if rec.u_error is not None]

    def inner_iterations(self):
        return [rec.inner_iterations for rec in self.records]

    def mean_inner_iterations(self):
        counts = self.inner_iterations()
        return float(np.mean(counts)) if counts else 0.0

    def convergence_ratio(self):
        return late_stage_ratio(self.residuals() + [self.final_residual])

    def diagnostics(self):
        return [msg for rec in self.records for msg in rec.diagnostics]


def late_stage_ratio(residuals, count=3, floor=RATIO_FLOOR):
    """Geometric mean of the last `count` successive residual ratios above floor"""
    usable = [r for r in residuals if r is not None and np.isfinite(r) and r > floor]
    ratios = [b / a for a, b in zip(usable[:-1], usable[1:])]
    if not ratios:
        return None
    tail = np.array(ratios[-count:])
    return float(np.exp(np.mean(np.log(tail))))


def _mapDerivatives(u, order):
    """First and second derivatives of u and det(I + D^2 u)"""
    u1 = gr.diff_first(u, 1, order).values
    u2 = gr.diff_first(u, 2, order).values
    u11, u12, u22 = (d.values for d in gr.hessian(u, order))
    det = (1.0 + u11) * (1.0 + u22) - u12 ** 2
    return u1, u2, u11, u12, u22, det


def evaluate_forward(u, g, mode='nearest', order=4):
    """Pushforward density f_n = g(x + grad u) det(I + D^2 u)"""
    grid = u.grid
    target = as_density(g, mode)
    x1, x2 = grid.coordinates()
    u1, u2, _, _, _, det = _mapDerivatives(u, order)
    values = target.value(x1 + u1, x2 + u2) * det
    if not np.all(np.isfinite(values)):
        raise NewtonStepError('non-finite values in forward evaluation')
    return gr.ScalarField(grid, values)


def build_linearization(u, g, mode='nearest', order=4, simplified=False):
    """Coefficients of the derivative of the Monge-Ampere operator at u.

    a = g(x + grad u) Adj(I + D^2 u), b = det(I + D^2 u) grad g(x + grad u).
    With simplified=True the first order terms are dropped.
    """
    grid = u.grid
    target = as_density(g, mode)
    x1, x2 = grid.coordinates()
    u1, u2, u11, u12, u22, det = _mapDerivatives(u, order)
    y1 = x1 + u1
    y2 = x2 + u2
    gt = target.value(y1, y2)
    if simplified:
        b1 = b2 = np.zeros_like(gt)
    else:
        g1, g2 = target.gradient(y1, y2)
        b1 = det * g1
        b2 = det * g2
    try:
        return LinearizedCoefficients(
            a11=gr.ScalarField(grid, gt * (1.0 + u22)),
            a12=gr.ScalarField(grid, -gt * u12),
            a22=gr.ScalarField(grid, gt * (1.0 + u11)),
            b1=gr.ScalarField(grid, b1),
            b2=gr.ScalarField(grid, b2))
    except gr.GridError as exc:
        raise NewtonStepError('invalid linearisation: ' + str(exc))


def apply_linearized(coeffs, theta, order=4):
    """Matrix-free L theta with the given stencil order"""
    gr.check_same_grid(coeffs.a11, theta)
    t1 = gr.diff_first(theta, 1, order).values
    t2 = gr.diff_first(theta, 2, order).values
    t11, t12, t22 = (d.values for d in gr.hessian(theta, order))
    out = (coeffs.a11.values * t11 + 2.0 * coeffs.a12.values * t12 + coeffs.a22.values * t22
           + coeffs.b1.values * t1 + coeffs.b2.values * t2)
    return gr.ScalarField(theta.grid, out)


def normalize_density(f_n):
    """Translate f_n so that its grid mean is exactly 1"""
    return f_n - gr.mean(f_n) + 1.0


def check_convexity(u, order=4):
    """Check that I + D^2 u is positive definite at every node.

    Returns (positive definite everywhere, minimum eigenvalue over the grid).
    """
    u11, u12, u22 = (d.values for d in gr.hessian(u, order))
    m11 = 1.0 + u11
    m22 = 1.0 + u22
    trace = m11 + m22
    det = m11 * m22 - u12 ** 2
    lam_min = 0.5 * trace - np.sqrt(0.25 * (m11 - m22) ** 2 + u12 ** 2)
    return bool(np.all(trace > 0.0) and np.all(det > 0.0)), float(np.min(lam_min))


def get_linear_solver(backend):
    """Return solve(coeffs, rhs, cfg) -> (theta, KrylovReport) for a backend"""
    if backend == 'fft':
        from .fftsolver import solve_linearized_fft
        return solve_linearized_fft
    if backend == 'fd':
        from .fdsolver import solve_linearized_fd
        return solve_linearized_fd
    raise NewtonConfigError('unknown backend ' + repr(backend))


def newton_step(state, pair, cfg, solver, u_exact=None, on_linearization=None):
    """One damped Newton step: evaluate, renormalise, solve, update and re-gauge.

    on_linearization(iteration, coeffs) may return a dict that is stored in
    the iteration record (used for stability probes).
    """
    start = time.perf_counter()
    target = pair.target_density(cfg.sample_mode)
    f_n = evaluate_forward(state.u, target, cfg.sample_mode, cfg.derivative_order)
    f_tilde = normalize_density(f_n)
    misfit = pair.f - f_tilde
    residual = gr.l2_norm(misfit)

    coeffs = build_linearization(state.u, target, cfg.sample_mode,
                                 cfg.derivative_order, cfg.simplified)
    rhs = misfit / cfg.tau
    # Exact solvability: the right-hand side must integrate to zero
    rhs = rhs - gr.mean(rhs)
    try:
        theta, inner = solver(coeffs, rhs, cfg)
    except gr.GridError as exc:
        raise NewtonStepError('inner solve failed at Newton iteration ' + str(state.iter)
                              + ': ' + str(exc))
    if not inner.converged:
        raise NewtonStepError('inner solver did not converge at Newton iteration '
                              + str(state.iter) + ' (relative residual '
                              + '{:.3e}'.format(inner.final_residual) + ')', inner)

    theta = theta - gr.mean(theta)
    u_next = state.u + theta
    u_next = u_next - gr.mean(u_next)

    convex, lam_min = check_convexity(u_next, cfg.derivative_order)
    diagnostics = []
    if not convex:
        diagnostics.append('I + D^2u lost positive definiteness at iteration '
                           + str(state.iter + 1) + ' (min eigenvalue '
                           + '{:.3e}'.format(lam_min) + '); consider a larger tau')
    if state.residual_history and residual > state.residual_history[-1]:
        diagnostics.append('residual increased at iteration ' + str(state.iter)
                           + '; consider a larger tau')
    for msg in diagnostics:
        logger.warning(msg)

    extra = {}
    if on_linearization is not None:
        extra = on_linearization(state.iter, coeffs) or {}

    u_error = None
    if u_exact is not None:
        u_error = gr.l2_norm(state.u - u_exact)

    elapsed = time.perf_counter() - start
    record = IterationRecord(iteration=state.iter,
                             residual=residual,
                             inner_iterations=inner.inner_iterations,
                             inner_converged=inner.converged,
                             wall_time=elapsed,
                             min_eigenvalue=lam_min,
                             u_error=u_error,
                             diagnostics=tuple(diagnostics),
                             extra=extra)
    logger.info(''.join(['Newton iteration ', str(state.iter),
                         ': residual ', '{:.6e}'.format(residual),
                         ', inner iterations ', str(inner.inner_iterations),
                         ', time ', '{:.3f}'.format(elapsed), ' s']))

    frames = state.frames
    iterates = state.iterates
    if cfg.keep_history:
        frames = frames + (f_tilde,)
        iterates = iterates + (state.u,)

    return NewtonState(u=u_next,
                       f_n=f_n,
                       iter=state.iter + 1,
                       residual_history=state.residual_history + (residual,),
                       records=state.records + (record,),
                       frames=frames,
                       iterates=iterates)


def _residualOf(u, pair, cfg):
    target = pair.target_density(cfg.sample_mode)
    f_n = evaluate_forward(u, target, cfg.sample_mode, cfg.derivative_order)
    f_tilde = normalize_density(f_n)
    return gr.l2_norm(pair.f - f_tilde), f_tilde


def run_newton(pair, cfg=None, u_exact=None, on_linearization=None):
    """Damped Newton iteration from u_0 = 0.

    Stops once ||f - f~_n||_l2 <= cfg.tol or after cfg.max_iter steps. Returns
    the final zero-mean potential and a SolveReport; without convergence the
    iterate with the smallest residual is returned.
    """
    if cfg is None:
        cfg = NewtonConfig()
    solver = get_linear_solver(cfg.backend)
    state = NewtonState.initial(pair)
    start = time.perf_counter()
    best_u, best_res = state.u, np.inf
    converged = False
    failure = None

    logger.info(''.join(['Starting damped Newton: n=', str(pair.grid.n),
                         ', backend=', cfg.backend, ', tau=', str(cfg.tau),
                         ', tol=', str(cfg.tol)]))
    for _ in range(cfg.max_iter):
        try:
            new_state = newton_step(state, pair, cfg, solver, u_exact, on_linearization)
        except NewtonStepError as exc:
            logger.error(str(exc))
            failure = str(exc)
            break
        res = new_state.residual_history[-1]
        if res < best_res:
            best_u, best_res = state.u, res
        state = new_state
        if res <= cfg.tol:
            converged = True
            break

    try:
        final_res, f_tilde = _residualOf(state.u, pair, cfg)
    except NewtonStepError:
        # Evaluation at the last iterate is what failed
        final_res, f_tilde = np.inf, None
    if final_res <= best_res:
        best_u, best_res = state.u, final_res
    if cfg.keep_history and f_tilde is not None:
        state = replace(state, frames=state.frames + (f_tilde,),
                        iterates=state.iterates + (state.u,))
    if not converged and final_res <= cfg.tol and failure is None:
        converged = True

    total = time.perf_counter() - start
    report = SolveReport(records=list(state.records),
                         converged=converged,
                         iterations=state.iter,
                         final_residual=best_res,
                         total_time=total,
                         failure=failure,
                         final_state=state)
    if converged:
        logger.info(''.join(['Converged after ', str(state.iter), ' iterations, residual ',
                             '{:.6e}'.format(best_res)]))
    else:
        logger.warning(''.join(['No convergence after ', str(state.iter),
                                ' iterations, best residual ', '{:.6e}'.format(best_res)]))
    return best_u, report
