"""Kernel dynamic mode decomposition.

Gram matrices of snapshot pairs are built with a kernel standing in for the
inner product of (possibly infinite) observable vectors, which keeps the
cost at O(m^2 N) for m snapshots of dimension N.  From the Gram
factorization G = Q S^2 Q^T the finite Koopman matrix is
``K = (S^+ Q^T) A (Q S^+)``; its eigenvectors give eigenfunctions at any
state through kernel evaluations, and modes follow from a least-squares fit
of the snapshots against the eigenfunction values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import LengthMismatch, RankZero
from .fields import eig_general, eig_symmetric

DEFAULT_TRUNC_TOL = 1e-10
PSD_TOL = 1e-9


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"
    sigma: float = 2.0
    degree: int = 1
    scale: float | None = None  # gaussian distance normalizer; None = median heuristic at fit time

    def __post_init__(self):
        if self.kind not in ("gaussian", "polynomial"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.scale is not None and self.scale <= 0:
            raise ValueError("scale must be positive")

    def matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Kernel matrix between the columns of ``a`` (N x p) and ``b`` (N x q)."""
        if a.shape[0] != b.shape[0]:
            raise LengthMismatch(f"state lengths differ: {a.shape[0]} vs {b.shape[0]}")
        if self.kind == "polynomial":
            return (1.0 + a.T @ b) ** self.degree
        scale = 1.0 if self.scale is None else self.scale
        d2 = cdist(a.T, b.T, "sqeuclidean")
        return np.exp(-d2 / (self.sigma**2 * scale**2))


def kernel_eval(spec: KernelSpec, a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise LengthMismatch(f"state lengths differ: {a.size} vs {b.size}")
    return float(spec.matrix(a[:, None], b[:, None])[0, 0])


def median_scale(x_matrix: np.ndarray) -> float:
    """Median pairwise Euclidean distance between columns; 1.0 if all coincide."""
    if x_matrix.shape[1] < 2:
        return 1.0
    d = float(np.median(pdist(x_matrix.T)))
    return d if d > 0 else 1.0


@dataclass(frozen=True)
class SnapshotPair:
    x_matrix: np.ndarray
    y_matrix: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_matrix, dtype=np.float64)
        y = np.asarray(self.y_matrix, dtype=np.float64)
        if x.ndim != 2 or x.shape != y.shape:
            raise LengthMismatch(f"x and y matrices must share a 2D shape, got {x.shape} and {y.shape}")
        object.__setattr__(self, "x_matrix", x)
        object.__setattr__(self, "y_matrix", y)

    @classmethod
    def from_sequence(cls, snapshots) -> "SnapshotPair":
        """Pairs from consecutive states; ``snapshots`` is (m, ...) with time first."""
        s = np.asarray(snapshots, dtype=np.float64)
        flat = s.reshape(s.shape[0], -1).T
        return cls(flat[:, :-1], flat[:, 1:])


@dataclass(frozen=True, eq=False)
class KdmdModel:
    eigenvalues: np.ndarray
    eigfun_coeffs: np.ndarray
    modes: np.ndarray
    basis: np.ndarray
    kernel: KernelSpec
    rank: int
    train_eigfuns: np.ndarray
    fit_residual: float

    def frequencies(self, dt: float = 1.0) -> np.ndarray:
        """Continuous-time exponents ln(lambda)/dt."""
        return np.log(self.eigenvalues.astype(np.complex128)) / dt

    def eigenfunctions(self, states: np.ndarray) -> np.ndarray:
        """Eigenfunction values at the columns of ``states``, shape (p, rank)."""
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        if states.shape[0] != self.basis.shape[0]:
            raise LengthMismatch(f"state length {states.shape[0]} != basis length {self.basis.shape[0]}")
        return self.kernel.matrix(states, self.basis) @ self.eigfun_coeffs

    def amplitudes(self, entry) -> np.ndarray:
        """Initial mode amplitudes for an entry state."""
        return self.eigenfunctions(np.asarray(entry, dtype=np.float64).ravel())[0]


def fit(pairs: SnapshotPair, spec: KernelSpec = KernelSpec(), trunc_tol: float = DEFAULT_TRUNC_TOL) -> KdmdModel:
    """Fit a truncated kernel DMD model.

    ``trunc_tol`` is relative to the largest Gram eigenvalue (squared
    singular value of the implicit feature matrix).
    """
    x, y = pairs.x_matrix, pairs.y_matrix
    if x.shape[1] < 2:
        raise ValueError("need at least two snapshot pairs")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("snapshot data must be finite")
    if spec.kind == "gaussian" and spec.scale is None:
        spec = KernelSpec(kind="gaussian", sigma=spec.sigma, degree=spec.degree, scale=median_scale(x))

    gram = spec.matrix(x, x)
    # A[i, j] = f(y_i, x_j)
    cross = spec.matrix(y, x)

    eg = eig_symmetric(gram)
    s2 = eg.eigenvalues.real
    if s2[0] <= 0 or s2.min() < -PSD_TOL * s2[0]:
        raise ValueError("Gram matrix is not positive semidefinite")
    keep = s2 > trunc_tol * s2[0]
    r = int(np.count_nonzero(keep))
    if r == 0:
        raise RankZero("all Gram eigenvalues fall below the truncation tolerance")
    q = eg.eigenvectors[:, keep].real
    s = np.sqrt(s2[keep])
    s_inv = 1.0 / s

    k_hat = (s_inv[:, None] * q.T) @ cross @ (q * s_inv[None, :])
    ek = eig_general(k_hat)
    v_hat = ek.eigenvectors

    phi = (q * s[None, :]) @ v_hat
    coeffs = (q * s_inv[None, :]) @ v_hat
    # modes: X ~ Xi Phi^T in the least-squares sense
    xi_t, *_ = np.linalg.lstsq(phi, x.T.astype(np.complex128), rcond=None)
    modes = xi_t.T
    resid = np.linalg.norm(x - (modes @ phi.T).real) / max(np.linalg.norm(x), np.finfo(float).tiny)
    return KdmdModel(
        eigenvalues=ek.eigenvalues,
        eigfun_coeffs=coeffs,
        modes=modes,
        basis=x.copy(),
        kernel=spec,
        rank=r,
        train_eigfuns=phi,
        fit_residual=float(resid),
    )


def predict_complex(model: KdmdModel, entry, horizon: int, start: int = 1) -> np.ndarray:
    """Complex predictions for steps ``start .. horizon``, shape (n_steps, N)."""
    b = model.amplitudes(entry)
    n = np.arange(start, horizon + 1)
    powers = model.eigenvalues[None, :] ** n[:, None]
    return (powers * b[None, :]) @ model.modes.T


def predict(model: KdmdModel, entry, horizon: int) -> list[np.ndarray]:
    """Real parts of sum_k lambda_k^n xi_k phi_k(entry) for n = 1..horizon."""
    entry = np.asarray(entry, dtype=np.float64)
    shape = entry.shape
    if entry.size != model.basis.shape[0]:
        raise LengthMismatch(f"entry length {entry.size} != basis length {model.basis.shape[0]}")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if horizon == 0:
        return []
    out = predict_complex(model, entry.ravel(), horizon).real
    return [row.reshape(shape) for row in out]


def exact_dmd_eigenvalues(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Eigenvalues of the least-squares operator A = Y X^+, nonzero ones only, descending modulus."""
    a = y @ np.linalg.pinv(x)
    vals = np.linalg.eigvals(a)
    vals = vals[np.abs(vals) > 1e-10 * max(1.0, np.abs(vals).max())]
    return vals[np.argsort(-np.abs(vals), kind="stable")]


def imaginary_residue(model: KdmdModel, entry, horizon: int) -> float:
    """Largest relative imaginary part over a complex prediction, before the real projection."""
    z = predict_complex(model, np.asarray(entry, dtype=np.float64).ravel(), horizon, start=0)
    return float(np.abs(z.imag).max() / max(np.abs(z.real).max(), math.ulp(1.0)))
