"""Reduced Galerkin operators and the ROM differential filter."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .fields import convection_tensor
from .pod import PodBasis, RankError

SKEW = "skew"
STANDARD = "standard"
CONVECTION_FORMS = (SKEW, STANDARD)


class FilterError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class RomOperators:
    """Reduced operators over the augmented index set ``0..r`` (index 0 is the lift).

    Attributes
    ----------
    M : (r, r) mass matrix of the retained modes.
    A : (r+1, r+1) stiffness matrix including the lift row and column.
    B : (r, r+1, r+1) convection tensor, ``B[i-1, j, k]`` couples test mode i
        with advecting mode j and advected mode k.
    f : (r,) forcing vector.
    """

    M: np.ndarray
    A: np.ndarray
    B: np.ndarray
    f: np.ndarray
    nu: float
    form: str = SKEW

    @property
    def r(self) -> int:
        return self.M.shape[0]

    def convection(self, a: np.ndarray) -> np.ndarray:
        """``sum_jk B[i,j,k] ah_j ah_k`` with ``ah = (1, a)``."""
        ah = np.concatenate([[1.0], a])
        return (self.B @ ah) @ ah

    def convection_matrix(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split ``N(a)`` into ``C(a) @ a + c0(a)`` for Picard linearisation."""
        ah = np.concatenate([[1.0], a])
        Cfull = np.einsum("ijk,j->ik", self.B, ah)
        return Cfull[:, 1:], Cfull[:, 0]

    def convection_jacobian(self, a: np.ndarray) -> np.ndarray:
        ah = np.concatenate([[1.0], a])
        J = np.einsum("ijk,j->ik", self.B, ah) + np.einsum("ijk,k->ij", self.B, ah)
        return J[:, 1:]

    def lift_diffusion(self) -> np.ndarray:
        return self.nu * self.A[1:, 0]


def assemble_operators(basis: PodBasis, r: int, nu: float, form: str = SKEW,
                       forcing: np.ndarray | None = None) -> RomOperators:
    """Galerkin-project mass, stiffness and convection onto the first r modes."""
    if not 0 <= r <= basis.R:
        raise RankError(f"r={r} outside admissible range 0..{basis.R}")
    if form not in CONVECTION_FORMS:
        raise ValueError(f"unknown convection form {form!r}")
    grid = basis.grid
    ops = grid.ops
    phi = np.vstack([basis.lift.flat()[None, :], basis.modes[:r]])
    M = (phi[1:] * ops.weights) @ phi[1:].T
    G = (ops.grad @ phi.T).T
    A = (G * ops.grad_weights) @ G.T
    T = convection_tensor(grid, phi, phi, phi)  # T[i,j,k] = b(phi_j, phi_k, phi_i)
    if form == SKEW:
        T = 0.5 * (T - T.transpose(2, 1, 0))
    B = np.ascontiguousarray(T[1:])
    f = np.zeros(r) if forcing is None else np.asarray(forcing, dtype=float).copy()
    if f.shape != (r,):
        raise ValueError(f"forcing must have shape ({r},)")
    return RomOperators(0.5 * (M + M.T), 0.5 * (A + A.T), B, f, float(nu), form)


@dataclass(frozen=True, eq=False)
class FilterOp:
    delta: float
    F: np.ndarray
    I_minus_F: np.ndarray


def build_filter(ops: RomOperators, delta: float) -> FilterOp:
    """Differential filter ``F = (M + delta^2 A)^{-1} M`` on the retained modes (no lift)."""
    if delta < 0:
        raise ValueError("filter radius must be non-negative")
    r = ops.r
    if delta == 0.0:
        F = np.eye(r)
        return FilterOp(0.0, F, np.zeros((r, r)))
    K = ops.M + delta**2 * ops.A[1:, 1:]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            lu = sla.lu_factor(K, check_finite=True)
    except (ValueError, np.linalg.LinAlgError, sla.LinAlgWarning) as exc:
        raise FilterError(f"filter system singular at delta={delta:g}") from exc
    if r and np.min(np.abs(np.diag(lu[0]))) <= np.finfo(float).eps * np.abs(K).max():
        raise FilterError(f"filter system singular at delta={delta:g}")
    F = sla.lu_solve(lu, ops.M)
    return FilterOp(float(delta), F, np.eye(r) - F)


def star_norm(a: np.ndarray, filt: FilterOp) -> float:
    """``sqrt(a^T (I - F) a)``; tiny negative radicands from rounding are clamped."""
    a = np.asarray(a, dtype=float)
    if a.shape != (filt.F.shape[0],):
        raise ValueError("coefficient length does not match filter size")
    q = float(a @ filt.I_minus_F @ a)
    if q < -1e-12 * max(float(a @ a), np.finfo(float).tiny):
        raise FilterError(f"I - F is not positive semidefinite (a^T(I-F)a = {q:g})")
    return float(np.sqrt(max(q, 0.0)))
