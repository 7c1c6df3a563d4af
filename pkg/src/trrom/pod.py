"""L2 proper orthogonal decomposition by the method of snapshots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Grid, VectorField
from .fom import SnapshotSet

RANK_TOL = 1e-12


class RankError(ValueError):
    pass


def build_gramian(snaps: SnapshotSet) -> np.ndarray:
    """``K_ij = (u_i, u_j) / (M+1)`` with the discrete L2 inner product."""
    if len(snaps) < 1:
        raise ValueError("need at least one snapshot")
    X = snaps.matrix()
    w = snaps.grid.ops.weights
    K = (X * w) @ X.T / X.shape[0]
    return 0.5 * (K + K.T)


@dataclass(frozen=True, eq=False)
class PodBasis:
    """Orthonormal POD modes with their eigenvalues.

    ``modes`` is an ``(n_stored, n_dof)`` array of flattened fields.  By default
    every mode above the SVD noise floor is stored, so the truncation tails
    cover the whole Gramian spectrum; only the first :attr:`R` modes (the
    eigenvalues above ``RANK_TOL * lambda_1``) are admissible for ROMs.
    """

    lift: VectorField
    modes: np.ndarray
    eigenvalues: np.ndarray
    grad_norms: np.ndarray

    @property
    def grid(self) -> Grid:
        return self.lift.grid

    @property
    def n_stored(self) -> int:
        return self.modes.shape[0]

    @property
    def R(self) -> int:
        return min(self.n_stored, numerical_rank(self.eigenvalues))

    def mode(self, j: int) -> VectorField:
        """Mode ``j`` with 1-based indexing; ``j = 0`` is the lift."""
        if j == 0:
            return self.lift
        return VectorField.from_flat(self.modes[j - 1], self.grid)

    def stiffness(self, r: int | None = None) -> np.ndarray:
        """POD stiffness ``S_ij = (grad phi_j, grad phi_i)`` for the first r modes."""
        r = self.R if r is None else r
        ops = self.grid.ops
        G = (ops.grad @ self.modes[:r].T).T
        S = (G * ops.grad_weights) @ G.T
        return 0.5 * (S + S.T)

    def reconstruct(self, coeffs: np.ndarray) -> VectorField:
        coeffs = np.asarray(coeffs, dtype=np.float64)
        return VectorField.from_flat(coeffs @ self.modes[: coeffs.shape[0]], self.grid)


def numerical_rank(eigenvalues: np.ndarray, tol: float = RANK_TOL) -> int:
    if eigenvalues.size == 0 or eigenvalues[0] <= 0:
        return 0
    return int(np.count_nonzero(eigenvalues > tol * eigenvalues[0]))


def compute_pod(snaps: SnapshotSet, R: int | None = None) -> PodBasis:
    """POD basis of the snapshot set.

    The Gramian is diagonalised through the SVD of the weighted snapshot
    matrix, ``K = Y^T Y / (M+1)`` with ``Y = W^(1/2) X^T``: the eigenpairs are
    those of K, but small eigenvalues keep their relative accuracy and the modes
    stay orthonormal to rounding.

    With ``R=None`` all modes above the SVD noise floor are kept and ``R`` is
    the numerical rank; an explicit ``R`` stores exactly R modes.
    """
    X = snaps.matrix()
    m1 = X.shape[0]
    grid = snaps.grid
    sw = np.sqrt(grid.ops.weights)
    Y = (X * sw).T
    U, sig, _ = np.linalg.svd(Y, full_matrices=False)
    spectrum = sig**2 / m1
    rank = numerical_rank(spectrum)
    if R is None:
        floor = max(Y.shape) * np.finfo(float).eps * (sig[0] if sig.size else 0.0)
        n_keep = max(rank, int(np.count_nonzero(sig > floor)))
    elif 0 <= R <= rank:
        n_keep = R
    else:
        raise RankError(
            f"requested rank {R} exceeds numerical rank {rank} "
            f"(eigenvalues above {RANK_TOL:g} * lambda_1)"
        )
    modes = (U[:, :n_keep] / sw[:, None]).T.copy()
    # sign convention: largest-magnitude entry of each mode is positive
    for j in range(n_keep):
        k = np.argmax(np.abs(modes[j]))
        if modes[j, k] < 0:
            modes[j] = -modes[j]
    ops = grid.ops
    G = ops.grad @ modes.T
    grad_norms = (G * G * ops.grad_weights[:, None]).sum(axis=0)
    return PodBasis(snaps.lift, modes, spectrum[:n_keep].copy(), grad_norms)


@dataclass(frozen=True)
class TailSums:
    l2: np.ndarray  # Lambda_L2(r) for r = 0..R
    h10: np.ndarray  # Lambda_H10(r) for r = 0..R
    s_norm: np.ndarray  # ||S_r||_2 for r = 1..R, stored at position r-1

    def s_norm_at(self, r: int) -> float:
        return float(self.s_norm[r - 1]) if r > 0 else 0.0


def tails(basis: PodBasis) -> TailSums:
    """Truncation tails ``sum_{j>r} lambda_j`` and ``sum_{j>r} |grad phi_j|^2 lambda_j``.

    The sums run over every stored mode, not just the admissible ones.
    """
    lam = basis.eigenvalues
    R = basis.R
    l2 = np.concatenate([np.cumsum(lam[::-1])[::-1], [0.0]])[: R + 1]
    hw = basis.grad_norms * lam
    h10 = np.concatenate([np.cumsum(hw[::-1])[::-1], [0.0]])[: R + 1]
    S = basis.stiffness(R)
    s_norm = np.array([np.linalg.eigvalsh(S[:r, :r])[-1] for r in range(1, R + 1)])
    return TailSums(l2, h10, s_norm)


def project(u: VectorField, basis: PodBasis, r: int) -> np.ndarray:
    """Coefficients ``a_j = (u, phi_j)`` of the L2 projection onto the first r modes."""
    if r > basis.R:
        raise RankError(f"r={r} exceeds basis rank {basis.R}")
    if u.grid != basis.grid:
        raise ValueError("field and basis live on different grids")
    return basis.modes[:r] @ (basis.grid.ops.weights * u.flat())


def project_snapshots(snaps: SnapshotSet, basis: PodBasis, r: int) -> np.ndarray:
    """Projection coefficients of every snapshot, shape ``(M+1, r)``."""
    if r > basis.R:
        raise RankError(f"r={r} exceeds basis rank {basis.R}")
    return (snaps.matrix() * basis.grid.ops.weights) @ basis.modes[:r].T
