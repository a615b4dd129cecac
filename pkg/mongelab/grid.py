#! /usr/bin/env python
"""Periodic grid geometry, grid-sampled fields, finite difference stencils,
reductions and interpolation on the unit square [0,1)^2.

Axis 1 of the unit square (x1) runs along the first array index, axis 2 (x2)
along the second, so node (i, j) sits at (i/n, j/n).
"""

import numpy as np
from scipy import fft as spfft

STENCIL_ORDERS = (2, 4, 'spectral')
SAMPLE_MODES = ('nearest', 'bilinear')

# Minimum points per axis for each stencil
MIN_POINTS = {2: 3, 4: 5, 'spectral': 2}


class GridError(ValueError):
    """Invalid grid, field or stencil/grid pairing"""


class PeriodicGrid:
    """Uniform n x n discretisation of [0,1)^2 with wrap-around indexing"""

    __slots__ = ('n',)

    def __init__(self, n):
        if int(n) != n or n < 1:
            raise GridError('grid size must be a positive integer, got ' + str(n))
        object.__setattr__(self, 'n', int(n))

    def __setattr__(self, name, value):
        raise AttributeError('PeriodicGrid is immutable')

    def __eq__(self, other):
        return isinstance(other, PeriodicGrid) and other.n == self.n

    def __hash__(self):
        return hash(('PeriodicGrid', self.n))

    def __repr__(self):
        return 'PeriodicGrid(n=' + str(self.n) + ')'

    @property
    def h(self):
        """Space step"""
        return 1.0 / self.n

    @property
    def size(self):
        """Number of nodes (P = n^2)"""
        return self.n * self.n

    def coordinates(self):
        """Return (x1, x2) node coordinate arrays, both n x n"""
        # i / n rather than i * h so that h * n = 1 holds exactly
        axis = np.arange(self.n) / self.n
        return np.meshgrid(axis, axis, indexing='ij')

    def wavenumbers(self):
        """Return (k1, k2) integer wavenumber arrays in FFT layout"""
        k = spfft.fftfreq(self.n, d=1.0 / self.n)
        return np.meshgrid(k, k, indexing='ij')

    def field(self, values):
        """Wrap an array (n x n or length n^2) as a ScalarField on this grid"""
        return ScalarField(self, values)

    def zeros(self):
        """Zero field"""
        return ScalarField(self, np.zeros((self.n, self.n)))

    def constant(self, value):
        """Constant field"""
        return ScalarField(self, np.full((self.n, self.n), float(value)))

    def from_function(self, func):
        """Evaluate func(x1, x2) at the nodes"""
        x1, x2 = self.coordinates()
        return ScalarField(self, np.broadcast_to(func(x1, x2), (self.n, self.n)))


class ScalarField:
    """Real function sampled at the nodes of a PeriodicGrid.

    Fields are value snapshots: the stored array is read-only and every
    operation returns a new field.
    """

    __slots__ = ('grid', 'values')

    def __init__(self, grid, values):
        arr = np.array(values, dtype=float)
        if arr.ndim == 1 and arr.size == grid.size:
            arr = arr.reshape(grid.n, grid.n)
        if arr.shape != (grid.n, grid.n):
            raise GridError('field shape ' + str(arr.shape) + ' does not match ' + repr(grid))
        if not np.all(np.isfinite(arr)):
            raise GridError('field contains non-finite values')
        arr.setflags(write=False)
        object.__setattr__(self, 'grid', grid)
        object.__setattr__(self, 'values', arr)

    def __setattr__(self, name, value):
        raise AttributeError('ScalarField is immutable')

    def __repr__(self):
        return 'ScalarField(n=' + str(self.grid.n) + ')'

    def ravel(self):
        """Row-major copy of the values as a length n^2 vector"""
        return self.values.ravel().copy()

    def _otherValues(self, other):
        if isinstance(other, ScalarField):
            check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._otherValues(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._otherValues(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._otherValues(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._otherValues(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._otherValues(other))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


class VectorField:
    """Pair of ScalarFields (x1 and x2 components) on a common grid"""

    __slots__ = ('c1', 'c2')

    def __init__(self, c1, c2):
        check_same_grid(c1, c2)
        object.__setattr__(self, 'c1', c1)
        object.__setattr__(self, 'c2', c2)

    def __setattr__(self, name, value):
        raise AttributeError('VectorField is immutable')

    @property
    def grid(self):
        return self.c1.grid

    def norm_squared(self):
        """Pointwise |v|^2"""
        return ScalarField(self.grid, self.c1.values ** 2 + self.c2.values ** 2)


def check_same_grid(*fields):
    """Raise GridError unless all fields live on the same grid"""
    grid = fields[0].grid
    for fld in fields[1:]:
        if fld.grid != grid:
            raise GridError('fields live on different grids: ' + repr(grid) + ', ' + repr(fld.grid))


def _checkOrder(grid, order):
    if order not in STENCIL_ORDERS:
        raise GridError('unsupported stencil order ' + repr(order))
    if grid.n < MIN_POINTS[order]:
        raise GridError('grid n=' + str(grid.n) + ' too small for stencil order ' + str(order))


def _arrayAxis(axis):
    if axis not in (1, 2):
        raise GridError('axis must be 1 or 2, got ' + repr(axis))
    return axis - 1


def _shift(v, offset, ax):
    """Return w with w[i] = v[i + offset] along ax, indices wrapped"""
    return np.roll(v, -offset, axis=ax)


def _spectralMultiplier(grid, ax, power):
    """(2 pi i k)^power along one axis, Nyquist zeroed for odd powers"""
    k1, k2 = grid.wavenumbers()
    k = (k1, k2)[ax]
    mult = (2j * np.pi * k) ** power
    if power % 2 == 1 and grid.n % 2 == 0:
        mult = np.where(k == -grid.n // 2, 0.0, mult)
    return mult


def _spectralApply(values, mult):
    return np.real(spfft.ifft2(mult * spfft.fft2(values)))


def diff_first(field, axis, order=4):
    """Centered periodic first derivative along axis 1 or 2"""
    grid = field.grid
    _checkOrder(grid, order)
    ax = _arrayAxis(axis)
    v = field.values
    h = grid.h
    if order == 2:
        out = (_shift(v, 1, ax) - _shift(v, -1, ax)) / (2.0 * h)
    elif order == 4:
        out = (-_shift(v, 2, ax) + 8.0 * _shift(v, 1, ax)
               - 8.0 * _shift(v, -1, ax) + _shift(v, -2, ax)) / (12.0 * h)
    else:
        out = _spectralApply(v, _spectralMultiplier(grid, ax, 1))
    return ScalarField(grid, out)


def diff_second(field, axis, order=4):
    """Centered periodic second derivative.

    axis is 1 or 2 for a pure derivative, (1, 2) for the mixed one. The mixed
    derivative composes two first derivative stencils of the same order.
    """
    grid = field.grid
    _checkOrder(grid, order)
    if axis in ((1, 2), (2, 1), 'mixed'):
        return diff_first(diff_first(field, 1, order), 2, order)
    ax = _arrayAxis(axis)
    v = field.values
    h2 = grid.h ** 2
    if order == 2:
        out = (_shift(v, 1, ax) - 2.0 * v + _shift(v, -1, ax)) / h2
    elif order == 4:
        out = (-_shift(v, 2, ax) + 16.0 * _shift(v, 1, ax) - 30.0 * v
               + 16.0 * _shift(v, -1, ax) - _shift(v, -2, ax)) / (12.0 * h2)
    else:
        out = _spectralApply(v, _spectralMultiplier(grid, ax, 2))
    return ScalarField(grid, out)


def gradient(field, order=4):
    """Gradient as a VectorField"""
    return VectorField(diff_first(field, 1, order), diff_first(field, 2, order))


def hessian(field, order=4):
    """Return (u11, u12, u22)"""
    return (diff_second(field, 1, order),
            diff_second(field, (1, 2), order),
            diff_second(field, 2, order))


def laplacian(field, order=4):
    """Sum of the pure second derivatives"""
    return diff_second(field, 1, order) + diff_second(field, 2, order)


def mean(field):
    """Arithmetic mean of the n^2 nodal values"""
    return float(np.mean(field.values))


def l2_norm(field):
    """Discrete L2 norm on the unit square, sqrt(h^2 sum v^2)"""
    return float(np.sqrt(np.sum(field.values ** 2)) * field.grid.h)


def max_norm(field):
    return float(np.max(np.abs(field.values)))


def simpson_weights(n):
    """Composite Simpson weights for a periodic interval of n (even) points"""
    if n % 2 != 0:
        raise GridError('Simpson integration needs an even grid size, got n=' + str(n))
    # Wrapped endpoint folds onto node 0: weights h/3 * (2, 4, 2, 4, ...)
    w = np.where(np.arange(n) % 2 == 0, 2.0, 4.0)
    return w / (3.0 * n)


def simpson_average(field):
    """Tensor product composite Simpson approximation of the integral over the unit square"""
    w = simpson_weights(field.grid.n)
    return float(w @ field.values @ w)


def wrap_unit(x):
    """Wrap coordinates into [0, 1)"""
    y = np.mod(x, 1.0)
    # mod can return 1.0 for tiny negative inputs
    return np.where(y >= 1.0, 0.0, y)


def sample_points(field, x1, x2, mode='nearest'):
    """Vectorised sample at arbitrary points, wrapped by periodicity"""
    if mode not in SAMPLE_MODES:
        raise GridError('unknown sample mode ' + repr(mode))
    n = field.grid.n
    v = field.values
    s1 = wrap_unit(np.asarray(x1, dtype=float)) * n
    s2 = wrap_unit(np.asarray(x2, dtype=float)) * n
    if mode == 'nearest':
        # ceil(s - 1/2) rounds halves down, i.e. ties go to the lower index
        i = np.ceil(s1 - 0.5).astype(int) % n
        j = np.ceil(s2 - 0.5).astype(int) % n
        return v[i, j]
    i0 = np.floor(s1).astype(int)
    j0 = np.floor(s2).astype(int)
    t1 = s1 - i0
    t2 = s2 - j0
    i0 %= n
    j0 %= n
    i1 = (i0 + 1) % n
    j1 = (j0 + 1) % n
    return ((1.0 - t1) * (1.0 - t2) * v[i0, j0] + t1 * (1.0 - t2) * v[i1, j0]
            + (1.0 - t1) * t2 * v[i0, j1] + t1 * t2 * v[i1, j1])


def sample(field, point, mode='nearest'):
    """Value of field at a single point of R^2"""
    return float(sample_points(field, point[0], point[1], mode))
