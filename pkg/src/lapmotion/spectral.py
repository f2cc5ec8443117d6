"""Truncated eigenbasis of a graph Laplacian and the spectral smoother.

With ``L = U diag(lam) U.T`` the smoother is

    R(eta) = U diag(1 / (1 + eta * lam)) U.T

which, with the full basis, equals ``inv(I + eta * L)``: the minimizer of
``||s - m||^2 + eta * tr(s.T L s)``. Keeping only the ``k_e`` smallest
eigenpairs makes applying it cost ``O(n * k_e * c)``; the n x n operator is
never formed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .core import LapMotionError
from .graph import LaplacianMatrix

__all__ = [
    "ConvergenceError",
    "SpectralBasis",
    "DENSE_CUTOFF",
    "eigendecompose",
    "apply_smoother",
    "smoother_grad_eta",
    "smoother_grad_signal",
    "filter_gains",
    "filter_gains_deta",
    "save_basis",
    "load_basis",
]

# Problems up to this size use a dense symmetric solver.
DENSE_CUTOFF = 512
# rows per block when applying a filter; 512 x 128 doubles stay cache resident
ROW_BLOCK = 512


class ConvergenceError(LapMotionError, RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(f"{message} (achieved residual {residual:.3e})")


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """The ``k_e`` algebraically smallest eigenpairs of a Laplacian.

    Eigenvalues are ascending; each eigenvector's largest-magnitude entry
    is positive (first such entry on ties).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kind: str = "plain"

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=np.float64)
        # row-major so row blocks in _apply_filter are contiguous
        u = np.array(self.eigenvectors, dtype=np.float64, order="C")
        if u.ndim != 2 or lam.shape != (u.shape[1],):
            raise ValueError(f"eigenvalues {lam.shape} do not match "
                             f"eigenvectors {u.shape}")
        lam.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenvectors", u)

    @property
    def n(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def k_e(self) -> int:
        return self.eigenvectors.shape[1]

    def truncated(self, k_e: int) -> "SpectralBasis":
        return SpectralBasis(self.eigenvalues[:k_e], self.eigenvectors[:, :k_e], self.kind)

    def orthonormality_error(self) -> float:
        u = self.eigenvectors
        return float(np.abs(u.T @ u - np.eye(self.k_e)).max())

    def residual(self, lap) -> float:
        """Max-entry residual of ``L U - U diag(lam)``."""
        mat = lap.matrix if isinstance(lap, LaplacianMatrix) else lap
        u = self.eigenvectors
        return float(np.abs(mat @ u - u * self.eigenvalues).max())


def _fix_signs(u: np.ndarray) -> np.ndarray:
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivot, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def _dense_eigs(mat: np.ndarray, k_e: int):
    n = mat.shape[0]
    if k_e == n:
        return np.linalg.eigh(mat)
    return sla.eigh(mat, subset_by_index=[0, k_e - 1])


def eigendecompose(lap: LaplacianMatrix, k_e: int, method: str = "auto",
                   tol: float = 1e-7) -> SpectralBasis:
    """Compute the ``k_e`` smallest eigenpairs of a Laplacian.

    Parameters
    ----------
    lap : LaplacianMatrix
    k_e : int
        Number of eigenpairs, ``1 <= k_e <= n``.
    method : {"auto", "dense", "iterative"}
        ``auto`` picks dense for ``n <= DENSE_CUTOFF``. The iterative path
        runs shift-invert Lanczos (ARPACK) about a small negative shift, so
        the factorized matrix ``L + |shift| I`` is positive definite even
        though ``L`` itself is singular.
    tol : float
        Maximum accepted entry of ``L U - U diag(lam)`` for the iterative
        path.

    Raises
    ------
    ConvergenceError
        The iterative solver did not converge, or its eigenpairs fail the
        residual check.
    """
    n = lap.n
    if not 1 <= k_e <= n:
        raise ValueError(f"k_e must lie in [1, n={n}], got {k_e}")
    if method not in ("auto", "dense", "iterative"):
        raise ValueError(f"unknown method {method!r}")
    mat = lap.matrix
    use_dense = method == "dense" or (method == "auto" and n <= DENSE_CUTOFF)
    # ARPACK needs k_e < n - 1 for symmetric problems.
    if k_e >= n - 1:
        use_dense = True

    if use_dense:
        lam, u = _dense_eigs(mat.toarray(), k_e)
    else:
        scale = max(float(np.abs(mat.diagonal()).max()), np.finfo(float).tiny)
        shift = -1e-6 * scale
        try:
            lam, u = eigsh(sp.csc_matrix(mat), k=k_e, sigma=shift, which="LM")
        except ArpackNoConvergence as exc:
            lam, u = exc.eigenvalues, exc.eigenvectors
            res = (float(np.abs(mat @ u - u * lam).max()) if len(lam)
                   else float("nan"))
            raise ConvergenceError(
                f"ARPACK converged {len(lam)} of {k_e} eigenpairs", res) from None
        order = np.argsort(lam, kind="stable")
        lam, u = lam[order], u[:, order]
        res = float(np.abs(mat @ u - u * lam).max())
        if not res <= tol:
            raise ConvergenceError("iterative eigenpairs failed the residual check", res)
    return SpectralBasis(lam, _fix_signs(u), lap.kind)


def _check_eta(eta: float) -> float:
    eta = float(eta)
    if not (eta >= 0 and np.isfinite(eta)):
        raise ValueError(f"eta must be a finite non-negative number, got {eta}")
    return eta


def filter_gains(lam: np.ndarray, eta: float) -> np.ndarray:
    """Per-eigenvalue smoother gains ``1 / (1 + eta * lam)``."""
    return 1.0 / (1.0 + eta * lam)


def filter_gains_deta(lam: np.ndarray, eta: float) -> np.ndarray:
    """Derivative of the gains with respect to eta."""
    return -lam / (1.0 + eta * lam) ** 2


def _apply_filter(u: np.ndarray, gains: np.ndarray, signal: np.ndarray) -> np.ndarray:
    """``u @ diag(gains) @ u.T @ signal``, streaming ``u`` in row blocks."""
    vector = signal.ndim == 1
    sig = signal[:, None] if vector else signal
    n = u.shape[0]
    if n <= ROW_BLOCK:
        out = u @ (gains[:, None] * (u.T @ sig))
    else:
        coeff = np.zeros((u.shape[1], sig.shape[1]))
        for start in range(0, n, ROW_BLOCK):
            stop = start + ROW_BLOCK
            coeff += u[start:stop].T @ sig[start:stop]
        coeff *= gains[:, None]
        out = np.empty((n, sig.shape[1]))
        for start in range(0, n, ROW_BLOCK):
            stop = start + ROW_BLOCK
            out[start:stop] = u[start:stop] @ coeff
    return out[:, 0] if vector else out


def _check_signal(basis: SpectralBasis, signal, name: str = "signal") -> np.ndarray:
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[0] != basis.n:
        raise ValueError(f"{name} has {signal.shape[0]} rows, basis has {basis.n}")
    return signal


def apply_smoother(basis: SpectralBasis, eta: float, signal) -> np.ndarray:
    """Smoothed signal ``R(eta) @ signal`` for an (n,) or (n, c) signal."""
    eta = _check_eta(eta)
    signal = _check_signal(basis, signal)
    return _apply_filter(basis.eigenvectors, filter_gains(basis.eigenvalues, eta), signal)


def smoother_grad_eta(basis: SpectralBasis, eta: float, signal, upstream) -> float:
    """dLoss/deta given ``upstream = dLoss/d(R(eta) @ signal)``."""
    eta = _check_eta(eta)
    signal = _check_signal(basis, signal)
    upstream = _check_signal(basis, upstream, "upstream")
    dsignal = _apply_filter(basis.eigenvectors,
                            filter_gains_deta(basis.eigenvalues, eta), signal)
    return float(np.sum(upstream * dsignal))


def smoother_grad_signal(basis: SpectralBasis, eta: float, upstream) -> np.ndarray:
    """dLoss/dsignal. R(eta) is symmetric, so this is ``R(eta) @ upstream``."""
    return apply_smoother(basis, eta, upstream)


def save_basis(basis: SpectralBasis, path, graph_hash: str) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, eigenvalues=basis.eigenvalues, eigenvectors=basis.eigenvectors,
                 kind=np.array(basis.kind), graph_hash=np.array(graph_hash))


def load_basis(path, graph_hash: Optional[str] = None) -> Optional[SpectralBasis]:
    """Load a cached basis; ``None`` if missing or built for another graph."""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path, allow_pickle=False) as data:
        if graph_hash is not None and str(data["graph_hash"]) != graph_hash:
            return None
        return SpectralBasis(data["eigenvalues"], data["eigenvectors"], str(data["kind"]))
