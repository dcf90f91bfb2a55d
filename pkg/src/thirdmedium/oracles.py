"""Brute-force and closed-form references for testing.

Nothing here shares derivative code with the element or material modules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FdScheme:
    """Central differences with relative step ``h * (1 + |x_i|)``."""

    h: float = 1e-6

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("finite-difference step must be positive")

    def steps(self, x: np.ndarray) -> np.ndarray:
        return self.h * (1.0 + np.abs(x))


def fd_gradient(fun, x, scheme: FdScheme | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar function (same shape as ``x``)."""
    scheme = scheme or FdScheme(1e-6)
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    hs = scheme.steps(flat)
    g = np.empty_like(flat)
    for i, h in enumerate(hs):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (float(fun(xp.reshape(x.shape))) - float(fun(xm.reshape(x.shape)))) / (2.0 * h)
    return g.reshape(x.shape)


def fd_jacobian(fun, x, scheme: FdScheme | None = None) -> np.ndarray:
    """Central-difference Jacobian (m, n) of a vector function of a flat n-vector."""
    scheme = scheme or FdScheme(1e-7)
    x = np.asarray(x, dtype=float).ravel()
    hs = scheme.steps(x)
    cols = []
    for i, h in enumerate(hs):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.ravel(fun(xp)) - np.ravel(fun(xm))) / (2.0 * h))
    return np.column_stack(cols)


@dataclass(frozen=True)
class SeriesProfile:
    """Piecewise-linear steady temperature through stacked layers."""

    heights: np.ndarray  # layer boundaries, bottom to top
    temperatures: np.ndarray  # temperature at each boundary
    flux: float
    layer_flux: np.ndarray

    def __call__(self, z) -> np.ndarray:
        return np.interp(z, self.heights, self.temperatures)


def series_resistance_profile(layers, T_bottom: float, T_top: float) -> SeriesProfile:
    """1D conduction through ``layers`` = [(thickness, conductivity), ...] bottom to top.

    The flux is q = (T_top - T_bottom) / sum(t_i / k_i), upward positive
    when T_top < T_bottom.
    """
    layers = [(float(t), float(k)) for t, k in layers]
    if not layers:
        raise ValueError("at least one layer is required")
    for t, k in layers:
        if not t > 0:
            raise ValueError("layer thickness must be positive")
        if not k > 0:
            raise ValueError("layer conductivity must be positive")
    resist = np.array([t / k for t, k in layers])
    q = (T_top - T_bottom) / resist.sum()
    temps = T_bottom + q * np.concatenate([[0.0], np.cumsum(resist)])
    temps[-1] = T_top
    heights = np.concatenate([[0.0], np.cumsum([t for t, _ in layers])])
    layer_flux = np.array([k * (temps[i + 1] - temps[i]) / t for i, (t, k) in enumerate(layers)])
    return SeriesProfile(heights=heights, temperatures=temps, flux=float(q), layer_flux=layer_flux)
