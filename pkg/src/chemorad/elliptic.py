"""Radial grid and the elliptic solve for the chemical concentration ``v``.

The grid is cell centred: ``N`` cells of width ``h = R / N`` with faces at
``k h``.  Fields are plain float arrays of length ``N`` holding cell
averages.  The origin face carries weight ``0**(n-1) = 0``, so the
coordinate singularity never enters an assembled coefficient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, DomainError
from .model import InitialProfile, ProblemParams


@dataclass(frozen=True)
class RadialGrid:
    N: int
    R: float
    n: int
    h: float = field(init=False)
    faces: np.ndarray = field(init=False, repr=False)
    centers: np.ndarray = field(init=False, repr=False)
    vol: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if int(self.N) != self.N or self.N < 16:
            raise ConfigError(f"N must be an integer >= 16, got {self.N!r}", "N", "N >= 16")
        if not self.R > 0.0:
            raise ConfigError("R must be > 0", "R", "R > 0")
        N, n = int(self.N), int(self.n)
        h = self.R / N
        faces = h * np.arange(N + 1, dtype=float)
        faces[-1] = self.R
        fn = faces**n
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "centers", h * (np.arange(N) + 0.5))
        object.__setattr__(self, "vol", (fn[1:] - fn[:-1]) / n)
        object.__setattr__(self, "weights", faces ** (n - 1))
        for arr in (self.faces, self.centers, self.vol, self.weights):
            arr.setflags(write=False)

    @classmethod
    def for_problem(cls, N: int, params: ProblemParams) -> "RadialGrid":
        return cls(N, params.R, params.n)

    def cell_averages(self, profile: InitialProfile) -> np.ndarray:
        """Exact cell averages of ``profile`` (up to quadrature rounding)."""
        U = profile.mass_within(self.faces, self.n)
        return np.diff(U) / self.vol

    def total(self, u: np.ndarray) -> float:
        """``sum vol_i u_i``: the radial mass of a field."""
        return float(np.sum(self.vol * u))


def _check_field(u: np.ndarray, grid: RadialGrid, name: str = "u") -> np.ndarray:
    u = np.ascontiguousarray(u, dtype=float)
    if u.shape != (grid.N,):
        raise DomainError(f"{name} must have shape ({grid.N},), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise DomainError(f"{name} has non-finite entries")
    return u


def solve_v(u: np.ndarray, params: ProblemParams, grid: RadialGrid) -> np.ndarray:
    """Chemical concentration for a given density.

    Solves the discrete balance
    ``w_{i+1}(v_{i+1}-v_i)/h - w_i(v_i-v_{i-1})/h = vol_i u_i v_i``
    with zero flux at the origin and ``(v_ghost + v_{N-1})/2 = M`` outside.
    For ``u >= 0`` the matrix is an M-matrix, so ``0 < v <= M``.
    """
    u = _check_field(u, grid)
    if np.any(u < 0.0):
        raise DomainError("solve_v requires u >= 0")
    return _kernels.elliptic_solve(u, float(params.M), grid.vol, grid.weights, grid.h)


def face_gradient(v: np.ndarray, grid: RadialGrid, M: float) -> np.ndarray:
    """``v_s`` at all ``N + 1`` faces (origin face 0, outer face one-sided to ``M``)."""
    v = np.asarray(v, dtype=float)
    g = np.empty(grid.N + 1)
    g[0] = 0.0
    g[1:-1] = np.diff(v) / grid.h
    g[-1] = (M - v[-1]) / (0.5 * grid.h)
    return g


def v_at_origin(v: np.ndarray, grid: RadialGrid | None = None) -> float:
    """Even quadratic extrapolation ``(9 v_0 - v_1) / 8``; exact for ``a + b s^2``."""
    return float((9.0 * v[0] - v[1]) / 8.0)


def flux_identity_residual(u: np.ndarray, v: np.ndarray, grid: RadialGrid, M: float) -> np.ndarray:
    """``v_s(s_k) - s_k^{1-n} sum_{j<k} vol_j u_j v_j`` at each face.

    Zero up to rounding whenever ``v = solve_v(u)``: the discrete equations
    telescope.  The origin face entry is 0 by convention.
    """
    g = face_gradient(v, grid, M)
    source = np.concatenate(([0.0], np.cumsum(grid.vol * u * v)))
    res = np.zeros(grid.N + 1)
    res[1:] = g[1:] - source[1:] / grid.weights[1:]
    return res
