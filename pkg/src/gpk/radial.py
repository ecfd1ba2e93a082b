"""Radial Fourier transforms of spherically symmetric profiles.

Used to tabulate the transform of the interaction product V*f once on a fine
momentum grid (the pseudo-spectral convolution then samples it at p/N), and
to reduce Hilbert-Schmidt norms of difference kernels to radial quadratures.

Conventions: hat(g)(p) = int g(|x|) e^{-i p.x} dx over R^dim, so
  dim 1:  2 int g(r) cos(p r) dr
  dim 2:  2 pi int g(r) J0(p r) r dr
  dim 3:  4 pi int g(r) j0(p r) r^2 dr
The l = 1 (vector) transform of g(|x|) x/|x| is -i phat times `radial_hat`
with `ell=1`, using sin, J1 and j1 respectively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline
from scipy.special import j0 as besselJ0, j1 as besselJ1

from .errors import DomainError


def _angular_kernel(z: np.ndarray, dim: int, ell: int) -> np.ndarray:
    if dim == 1:
        return np.cos(z) if ell == 0 else np.sin(z)
    if dim == 2:
        return besselJ0(z) if ell == 0 else besselJ1(z)
    if dim == 3:
        if ell == 0:
            return np.sinc(z / math.pi)  # j0
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(z > 1e-8, np.sin(z) / z**2 - np.cos(z) / z, z / 3.0)
        return out  # j1
    raise DomainError(f"unsupported dimension {dim}")


def _measure(r: np.ndarray, dim: int) -> np.ndarray:
    if dim == 1:
        return np.ones_like(r)
    if dim == 2:
        return r
    return r**2


_PREFACTOR = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}


def radial_hat(
    r: np.ndarray,
    g: np.ndarray,
    p: np.ndarray,
    dim: int,
    ell: int = 0,
    piece_edges: tuple[int, ...] = (),
) -> np.ndarray:
    """Transform of the sampled radial profile g at the momenta p.

    `piece_edges` lists interior sample indices where g jumps; the quadrature
    is done piecewise so discontinuities do not degrade Simpson's rule.
    """
    r = np.asarray(r, dtype=float)
    g = np.asarray(g, dtype=float)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    meas = _measure(r, dim)
    edges = [0, *sorted(piece_edges), r.size - 1]

    out = np.zeros(p.size)
    z = np.outer(p, r)
    kern = _angular_kernel(z, dim, ell)
    integrand = kern * (g * meas)[None, :]
    for lo, hi in zip(edges[:-1], edges[1:]):
        out += simpson(integrand[:, lo : hi + 1], x=r[lo : hi + 1], axis=1)
    return _PREFACTOR[dim] * out


@dataclass(frozen=True)
class RadialTransformTable:
    """Cubic-spline table of a radial transform on [0, p_max]."""

    p: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "_spline", CubicSpline(self.p, self.values))

    def __call__(self, p):
        p = np.abs(np.asarray(p, dtype=float))
        if np.any(p > self.p[-1] * (1 + 1e-12)):
            raise DomainError(
                f"momentum {p.max():.3g} outside the tabulated range "
                f"[0, {self.p[-1]:.3g}]"
            )
        return self._spline(np.clip(p, 0.0, self.p[-1]))

    @property
    def at_zero(self) -> float:
        return float(self.values[0])


def tabulate_transform(
    r: np.ndarray,
    g: np.ndarray,
    dim: int,
    p_max: float,
    n_p: int = 512,
    piece_edges: tuple[int, ...] = (),
) -> RadialTransformTable:
    p = np.linspace(0.0, p_max, n_p)
    vals = radial_hat(r, g, p, dim, ell=0, piece_edges=piece_edges)
    return RadialTransformTable(p=p, values=vals, dim=dim)


def tabulate_interaction_transform(sol, dim: int, p_max: float, n_p: int = 512):
    """Transform table of the pair product V(r) f(r) from a solved profile.

    At p = 0 and dim = 3 the value is the full volume integral of V f, i.e.
    8 pi a0 by the integral definition of the scattering length.  Pieces
    between potential breakpoints are transformed separately with one-sided
    edge samples, so jumps cost no quadrature order.
    """
    V = sol.potential
    r = sol.r_grid
    h = r[1] - r[0]
    edges = [0]
    for b in V.breakpoints:
        j = int(round(b / h))
        if 0 < j < r.size - 1:
            edges.append(j)
    edges.append(r.size - 1)

    p = np.linspace(0.0, p_max, n_p)
    vals = np.zeros(n_p)
    eps = 1e-9 * h
    for lo, hi in zip(edges[:-1], edges[1:]):
        rr = r[lo : hi + 1]
        vv = V(rr) * sol.f[lo : hi + 1]
        vv[0] = float(V(np.array([rr[0] + eps]))[0]) * sol.f[lo]
        vv[-1] = float(V(np.array([rr[-1] - eps]))[0]) * sol.f[hi]
        vals += radial_hat(rr, vv, p, dim)
    return RadialTransformTable(p=p, values=vals, dim=dim)
