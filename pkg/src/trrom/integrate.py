"""Time stepping for the Galerkin and time-relaxation ROMs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .operators import SKEW, FilterOp, RomOperators, star_norm

IMPLICIT_BE = "implicit_be"
SEMI_IMPLICIT = "semi_implicit"
SCHEMES = (IMPLICIT_BE, SEMI_IMPLICIT)
DIVERGENCE_FACTOR = 1e6

# BDF3 weights on (a^{n+1}, a^n, a^{n-1}, a^{n-2}) and EXT3 weights on (N^n, N^{n-1}, N^{n-2})
_BDF3 = (11.0 / 6.0, -3.0, 1.5, -1.0 / 3.0)
_EXT3 = (3.0, -3.0, 1.0)


class RomError(ArithmeticError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class NonConvergenceError(RomError):
    def __init__(self, message: str, residual: float, step: int | None = None):
        super().__init__(message, step)
        self.residual = residual


class DivergenceError(RomError):
    pass


@dataclass(frozen=True)
class TrRomParams:
    r: int
    nu: float
    dt: float
    chi: float = 0.0
    delta: float = 0.0
    scheme: str = IMPLICIT_BE
    form: str = SKEW
    tol: float = 1e-10
    max_iter: int = 50
    n_steps: int = 0
    t0: float = 0.0
    newton: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.tol > 0:
            raise ValueError("nonlinear tolerance must be positive")
        if self.chi < 0 or self.delta < 0:
            raise ValueError("chi and delta must be non-negative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.n_steps < 0 or self.max_iter < 1 or self.r < 0:
            raise ValueError("r, n_steps and max_iter must be non-negative (max_iter >= 1)")


@dataclass(frozen=True, eq=False)
class Trajectory:
    coeffs: np.ndarray  # (n_steps+1, r)
    times: np.ndarray
    energy: np.ndarray  # ||u_r^n||^2 = a^T M a
    star_sq: np.ndarray  # star_norm(a^n)^2
    iterations: np.ndarray  # nonlinear iterations per row (0 for row 0)
    diverged: bool = False


@dataclass(frozen=True, eq=False)
class StabilityReport:
    energy: np.ndarray
    diffusion_sum: np.ndarray  # nu dt sum_{k<=n} ||grad u^k||^2
    relaxation_sum: np.ndarray  # 2 chi dt sum_{k<=n} star^2
    bound: float
    step_ok: np.ndarray
    step_slack: np.ndarray  # relative slack of each per-step inequality
    accumulated_ok: np.ndarray

    @property
    def ok(self) -> bool:
        return bool(self.step_ok.all() and self.accumulated_ok.all())


def _check_dims(ops: RomOperators, filt: FilterOp, params: TrRomParams):
    if ops.r != params.r or filt.F.shape[0] != params.r:
        raise ValueError(f"dimension mismatch: params r={params.r}, operators r={ops.r}, "
                         f"filter r={filt.F.shape[0]}")


def _relaxation(ops: RomOperators, filt: FilterOp, chi: float) -> np.ndarray:
    return chi * (ops.M @ filt.I_minus_F)


def linear_operator(ops: RomOperators, filt: FilterOp, params: TrRomParams,
                    mass_coeff: float = 1.0) -> np.ndarray:
    """``c M / dt + nu A + chi M (I - F)`` restricted to the retained modes."""
    return (mass_coeff / params.dt) * ops.M + ops.nu * ops.A[1:, 1:] + _relaxation(ops, filt, params.chi)


def _solve_nonlinear(L: np.ndarray, rhs: np.ndarray, guess: np.ndarray, ops: RomOperators,
                     params: TrRomParams) -> tuple[np.ndarray, int]:
    """Solve ``L a + N(a) = rhs`` (lift diffusion already moved into rhs)."""
    if params.r == 0:
        return np.zeros(0), 0
    scale = max(1.0, float(np.linalg.norm(rhs)))
    thresh = params.tol * scale

    def residual(a):
        return L @ a + ops.convection(a) - rhs

    # always iterate at least once: a guess inside the tolerance would otherwise
    # freeze the trajectory short of a slowly approached steady state
    a = guess.copy()
    res = float(np.linalg.norm(residual(a)))
    omega = 1.0
    for it in range(1, params.max_iter + 1):
        if params.newton:
            J = L + ops.convection_jacobian(a)
            cand = a - np.linalg.solve(J, residual(a))
        else:
            C, c0 = ops.convection_matrix(a)
            cand = np.linalg.solve(L + C, rhs - c0)
        new = a + omega * (cand - a)
        new_res = float(np.linalg.norm(residual(new)))
        if not np.isfinite(new_res):
            raise DivergenceError("non-finite nonlinear iterate")
        if new_res > res and omega == 1.0:
            omega = 0.5
            new = a + omega * (cand - a)
            new_res = float(np.linalg.norm(residual(new)))
        a, res = new, new_res
        if res <= thresh:
            return a, it
    raise NonConvergenceError(
        f"nonlinear solve did not converge in {params.max_iter} iterations "
        f"(residual {res:.3e}, tolerance {thresh:.3e})", residual=res)


def step_implicit_be(a_n: np.ndarray, params: TrRomParams, ops: RomOperators,
                     filt: FilterOp, dt: float | None = None) -> tuple[np.ndarray, int]:
    """One backward-Euler step of the TR-ROM; returns ``(a_{n+1}, iterations)``."""
    _check_dims(ops, filt, params)
    h = params.dt if dt is None else dt
    L = ops.M / h + ops.nu * ops.A[1:, 1:] + _relaxation(ops, filt, params.chi)
    rhs = ops.M @ a_n / h + ops.f - ops.lift_diffusion()
    return _solve_nonlinear(L, rhs, np.asarray(a_n, dtype=float), ops, params)


def _be_extrapolated(a_n, params, ops, filt):
    """Richardson-combined BE step, third-order locally; used only to start BDF3."""
    full, i1 = step_implicit_be(a_n, params, ops, filt)
    half, i2 = step_implicit_be(a_n, params, ops, filt, dt=params.dt / 2)
    half, i3 = step_implicit_be(half, params, ops, filt, dt=params.dt / 2)
    return 2.0 * half - full, i1 + i2 + i3


class SemiImplicitStepper:
    """BDF3 for the linear terms, EXT3 for convection, with one LU of the system matrix."""

    def __init__(self, params: TrRomParams, ops: RomOperators, filt: FilterOp):
        _check_dims(ops, filt, params)
        self.params, self.ops = params, ops
        self.lu = sla.lu_factor(linear_operator(ops, filt, params, _BDF3[0])) if params.r else None
        self.const = ops.f - ops.lift_diffusion()

    def step(self, history: np.ndarray, conv_history: np.ndarray | None = None) -> np.ndarray:
        """Advance from ``history = [a^{n-2}, a^{n-1}, a^n]`` (oldest first)."""
        history = np.asarray(history, dtype=float)
        if history.shape[0] < 3:
            raise ValueError("BDF3 needs three prior coefficient rows")
        if self.params.r == 0:
            return np.zeros(0)
        a2, a1, a0 = history[-3], history[-2], history[-1]
        if conv_history is None:
            conv_history = np.array([self.ops.convection(x) for x in (a2, a1, a0)])
        n2, n1, n0 = conv_history[-3], conv_history[-2], conv_history[-1]
        dt = self.params.dt
        rhs = (self.const - (_EXT3[0] * n0 + _EXT3[1] * n1 + _EXT3[2] * n2)
               - self.ops.M @ (_BDF3[1] * a0 + _BDF3[2] * a1 + _BDF3[3] * a2) / dt)
        return sla.lu_solve(self.lu, rhs)


def step_semi_implicit(history: np.ndarray, params: TrRomParams, ops: RomOperators,
                       filt: FilterOp) -> np.ndarray:
    return SemiImplicitStepper(params, ops, filt).step(history)


def run_rom(initial: np.ndarray, params: TrRomParams, ops: RomOperators,
            filt: FilterOp) -> Trajectory:
    """Integrate ``params.n_steps`` steps from ``initial``.

    A run whose coefficient norm exceeds ``DIVERGENCE_FACTOR`` times the initial
    scale (at least 1) is stopped; the trajectory is truncated and flagged.
    """
    _check_dims(ops, filt, params)
    a0 = np.asarray(initial, dtype=float)
    if a0.shape != (params.r,):
        raise ValueError(f"initial coefficients must have shape ({params.r},)")
    n = params.n_steps
    coeffs = np.zeros((n + 1, params.r))
    iters = np.zeros(n + 1, dtype=np.int64)
    coeffs[0] = a0
    limit = DIVERGENCE_FACTOR * max(1.0, float(np.linalg.norm(a0)))
    semi = SemiImplicitStepper(params, ops, filt) if params.scheme == SEMI_IMPLICIT else None
    conv = np.zeros((n + 1, params.r)) if semi else None
    if semi is not None:
        conv[0] = ops.convection(a0)
    last = n
    diverged = False
    for k in range(n):
        try:
            if semi is None:
                coeffs[k + 1], iters[k + 1] = step_implicit_be(coeffs[k], params, ops, filt)
            elif k < 2:
                coeffs[k + 1], iters[k + 1] = _be_extrapolated(coeffs[k], params, ops, filt)
            else:
                coeffs[k + 1] = semi.step(coeffs[k - 2:k + 1], conv[k - 2:k + 1])
                iters[k + 1] = 1
        except DivergenceError:
            diverged, last = True, k
            break
        except RomError as exc:
            exc.step = k + 1
            exc.args = (f"step {k + 1}: {exc.args[0]}",)
            raise
        nrm = float(np.linalg.norm(coeffs[k + 1]))
        if not np.isfinite(nrm) or nrm > limit:
            diverged, last = True, k
            break
        if semi is not None:
            conv[k + 1] = ops.convection(coeffs[k + 1])
    coeffs = coeffs[: last + 1]
    iters = iters[: last + 1]
    times = params.t0 + np.arange(last + 1) * params.dt
    energy = np.einsum("ni,ij,nj->n", coeffs, ops.M, coeffs)
    star_sq = np.array([star_norm(c, filt) ** 2 for c in coeffs])
    return Trajectory(coeffs, times, energy, star_sq, iters, diverged)


def stability_check(traj: Trajectory, params: TrRomParams, ops: RomOperators,
                    u0_norm_sq: float, f_dual_bound: float = 0.0,
                    rtol: float = 1e-12) -> StabilityReport:
    """Check the discrete energy inequality step by step and in accumulated form.

    ``u0_norm_sq`` is ``||u^0||^2``; ``f_dual_bound`` bounds ``||f||_{-1}^2`` per step
    so that ``C = ||u^0||^2 + (dt/nu) * n_steps * f_dual_bound``.
    """
    if params.scheme != IMPLICIT_BE or params.form != SKEW:
        raise ValueError("stability check requires scheme=implicit_be and the skew convection form")
    if u0_norm_sq < 0 or f_dual_bound < 0:
        raise ValueError("norms must be non-negative")
    a = traj.coeffs
    dt, nu, chi = params.dt, ops.nu, params.chi
    A = ops.A[1:, 1:]
    grad_sq = np.einsum("ni,ij,nj->n", a, A, a)
    energy = traj.energy
    diff_terms = nu * dt * grad_sq
    relax_terms = 2.0 * chi * dt * traj.star_sq
    diff_terms[0] = relax_terms[0] = 0.0
    forcing = (dt / nu) * f_dual_bound
    lhs = np.diff(energy) + diff_terms[1:] + relax_terms[1:]
    scale = np.maximum(np.maximum(energy[1:], energy[:-1]), np.finfo(float).tiny)
    slack = (forcing - lhs) / scale
    step_ok = slack >= -rtol
    diffusion_sum = np.cumsum(diff_terms)
    relaxation_sum = np.cumsum(relax_terms)
    bound = float(u0_norm_sq + forcing * (len(a) - 1))
    accumulated = energy + diffusion_sum + relaxation_sum
    n_idx = np.arange(len(a))
    acc_ok = accumulated <= u0_norm_sq + forcing * n_idx + rtol * max(bound, np.finfo(float).tiny)
    return StabilityReport(energy, diffusion_sum, relaxation_sum, bound, step_ok, slack, acc_ok)
