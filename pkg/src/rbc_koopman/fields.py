"""Grids, scalar fields, derivative operators and dense eigensolvers.

Fields are stored row-major as ``(ny, nx)`` arrays: the first index runs
across the walls (y), the second along the periodic direction (x).  The
x-direction is treated pseudo-spectrally, the y-direction with second-order
finite differences on a uniform grid that includes both wall points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import GridTooSmall, NoConvergence, NotSymmetric

EIG_RESIDUAL_TOL = 1e-8
SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    nx: int = 96
    ny: int = 64
    lx: float = 2 * math.pi
    y_min: float = -1.0
    y_max: float = 1.0

    def __post_init__(self):
        if self.nx <= 0 or self.ny <= 0:
            raise ValueError(f"grid dimensions must be positive, got {self.nx}x{self.ny}")
        if self.nx % 2:
            raise ValueError(f"nx must be even, got {self.nx}")
        if not self.y_max > self.y_min:
            raise ValueError("y_max must exceed y_min")
        if self.lx <= 0:
            raise ValueError("lx must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @cached_property
    def y(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny)

    @cached_property
    def kx(self) -> np.ndarray:
        """Wavenumbers of the real FFT along x (length nx//2 + 1)."""
        return 2 * math.pi / self.lx * np.arange(self.nx // 2 + 1)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(X, Y)`` coordinate arrays of shape ``(ny, nx)``."""
        return np.meshgrid(self.x, self.y)


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        X, Y = grid.mesh()
        return cls(grid, np.broadcast_to(fn(X, Y), grid.shape))

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    def mean(self) -> float:
        return float(self.values.mean())


@dataclass(frozen=True, eq=False)
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


# array-level operators; the solver calls these directly on raw arrays


def spectral_dx(values: np.ndarray, lx: float, order: int = 1) -> np.ndarray:
    nx = values.shape[-1]
    k = 2 * math.pi / lx * np.arange(nx // 2 + 1)
    mult = (1j * k) ** order
    if order % 2:
        # the Nyquist mode has no odd-derivative partner in a real signal
        mult[-1] = 0.0
    return np.fft.irfft(np.fft.rfft(values, axis=-1) * mult, n=nx, axis=-1)


def fd_dy(values: np.ndarray, dy: float) -> np.ndarray:
    if values.shape[0] < 3:
        raise GridTooSmall(f"ddy needs ny >= 3, got {values.shape[0]}")
    return np.gradient(values, dy, axis=0, edge_order=2)


def fd_d2y(values: np.ndarray, dy: float) -> np.ndarray:
    """Three-point second derivative; second-order one-sided stencils at the walls."""
    if values.shape[0] < 4:
        raise GridTooSmall(f"second y-derivative needs ny >= 4, got {values.shape[0]}")
    out = np.empty_like(values, dtype=np.float64)
    out[1:-1] = values[2:] - 2 * values[1:-1] + values[:-2]
    out[0] = 2 * values[0] - 5 * values[1] + 4 * values[2] - values[3]
    out[-1] = 2 * values[-1] - 5 * values[-2] + 4 * values[-3] - values[-4]
    return out / dy**2


def ddx(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, spectral_dx(f.values, f.grid.lx))


def ddy(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, fd_dy(f.values, f.grid.dy))


def d2dx2(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, spectral_dx(f.values, f.grid.lx, order=2))


def d2dy2(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, fd_d2y(f.values, f.grid.dy))


def laplacian(f: ScalarField) -> ScalarField:
    g = f.grid
    return ScalarField(g, spectral_dx(f.values, g.lx, order=2) + fd_d2y(f.values, g.dy))


def _check_residuals(m: np.ndarray, vals: np.ndarray, vecs: np.ndarray) -> None:
    scale = np.linalg.norm(m)
    for k in range(vals.size):
        v = vecs[:, k]
        res = np.linalg.norm(m @ v - vals[k] * v)
        if res > EIG_RESIDUAL_TOL * max(scale, np.finfo(float).tiny) * np.linalg.norm(v):
            raise NoConvergence(f"eigenpair {k} residual {res:.3e} exceeds tolerance")


def eig_general(matrix) -> EigenResult:
    """All eigenpairs of a real square matrix, sorted by descending modulus.

    Ties in modulus (conjugate pairs) are broken by descending imaginary part
    so the ordering is reproducible.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NoConvergence("matrix contains non-finite entries")
    try:
        vals, vecs = scipy.linalg.eig(m)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NoConvergence(str(exc)) from exc
    order = np.lexsort((-vals.imag, -np.round(np.abs(vals), 12)))
    vals, vecs = vals[order], vecs[:, order]
    _check_residuals(m, vals, vecs)
    return EigenResult(vals.astype(np.complex128), vecs.astype(np.complex128))


def eig_symmetric(matrix) -> EigenResult:
    """Eigenpairs of a real symmetric matrix, eigenvalues descending."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    norm = np.linalg.norm(m)
    if np.linalg.norm(m - m.T) > SYMMETRY_TOL * norm:
        raise NotSymmetric("matrix is not symmetric within tolerance")
    try:
        vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    vals, vecs = vals[::-1].copy(), vecs[:, ::-1].copy()
    _check_residuals(m, vals, vecs)
    return EigenResult(vals, vecs)
