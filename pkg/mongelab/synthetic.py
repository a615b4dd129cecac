#! /usr/bin/env python
"""Trigonometric benchmark family with a known optimal potential.

    u(x) = (1/k) cos(2 pi gamma x1) sin(2 pi gamma x2)
    g(y) = 1 + alpha cos(2 pi rho y1) cos(2 pi rho y2)
    f(x) = g(x + grad u(x)) det(I + D^2 u(x))

f is evaluated in closed form and rescaled to grid mean 1.
"""

from dataclasses import dataclass

import numpy as np

from . import grid as gr
from .mongeampere import AnalyticDensity, DensityPair


class SyntheticError(ValueError):
    """Invalid benchmark constants"""


@dataclass(frozen=True)
class TrigFamily:
    k: float = 80.0
    gamma: int = 1
    alpha: float = 0.5
    rho: int = 1
    zero_potential: bool = False

    def __post_init__(self):
        if not self.k > 0.0:
            raise SyntheticError('k must be positive, got ' + repr(self.k))
        for name in ('gamma', 'rho'):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise SyntheticError(name + ' must be a positive integer, got ' + repr(value))
        if not abs(self.alpha) < 1.0:
            raise SyntheticError('|alpha| must be below 1 for a positive target, got '
                                 + repr(self.alpha))

    @property
    def amplitude(self):
        return 0.0 if self.zero_potential else 1.0 / self.k

    def potential(self, x1, x2):
        w = 2.0 * np.pi * self.gamma
        return self.amplitude * np.cos(w * x1) * np.sin(w * x2)

    def potential_derivatives(self, x1, x2):
        """Return (u1, u2, u11, u12, u22)"""
        w = 2.0 * np.pi * self.gamma
        a = self.amplitude
        c1, s1 = np.cos(w * x1), np.sin(w * x1)
        c2, s2 = np.cos(w * x2), np.sin(w * x2)
        u11 = -a * w * w * c1 * s2
        return (-a * w * s1 * s2,
                a * w * c1 * c2,
                u11,
                -a * w * w * s1 * c2,
                u11)

    def target_value(self, y1, y2):
        v = 2.0 * np.pi * self.rho
        return 1.0 + self.alpha * np.cos(v * y1) * np.cos(v * y2)

    def target_gradient(self, y1, y2):
        v = 2.0 * np.pi * self.rho
        return (-self.alpha * v * np.sin(v * y1) * np.cos(v * y2),
                -self.alpha * v * np.cos(v * y1) * np.sin(v * y2))

    def target(self):
        return AnalyticDensity(self.target_value, self.target_gradient)

    def source_value(self, x1, x2):
        """Unnormalised f in closed form"""
        u1, u2, u11, u12, u22 = self.potential_derivatives(x1, x2)
        det = (1.0 + u11) * (1.0 + u22) - u12 ** 2
        return self.target_value(x1 + u1, x2 + u2) * det

    def min_eigenvalue(self):
        """Lower bound of the eigenvalues of I + D^2 u over the domain"""
        return 1.0 - (2.0 * np.pi * self.gamma) ** 2 * self.amplitude


@dataclass(frozen=True)
class SyntheticProblem:
    family: TrigFamily
    pair: DensityPair
    u_exact: gr.ScalarField

    @property
    def grid(self):
        return self.pair.grid


def build_problem(n, family=None, floor=1e-12):
    """Density pair and zero-mean exact potential on an n x n grid"""
    if family is None:
        family = TrigFamily()
    grid = gr.PeriodicGrid(n)
    f = grid.from_function(family.source_value)
    target = family.target()
    g = target.on_grid(grid)
    pair = DensityPair.normalized(f, g, floor=floor, target=target)
    u_exact = grid.from_function(family.potential)
    u_exact = u_exact - gr.mean(u_exact)
    return SyntheticProblem(family=family, pair=pair, u_exact=u_exact)


def source_minimum(family, n=256):
    """Minimum of the unnormalised source density on an n x n grid"""
    x1, x2 = gr.PeriodicGrid(n).coordinates()
    return float(np.min(family.source_value(x1, x2)))
