"""Full-order incompressible Navier-Stokes on a MAC grid.

Explicit Adams-Bashforth 2 for convection and diffusion (conservative central
differences), followed by a Chorin pressure projection.  The pressure
Poisson problem is solved by FFT on periodic grids and by a sparse direct
factorization of the Neumann Laplacian on the cavity.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import CAVITY, PERIODIC, Grid, VectorField, divergence, l2_inner

log = logging.getLogger(__name__)

TAYLOR_GREEN = "taylor_green"
LID_CAVITY = "lid_cavity"

CFL_LIMIT = 0.5


class FomError(RuntimeError):
    """Numerical failure inside the full-order solver."""


class CflError(FomError):
    pass


class PoissonError(FomError):
    pass


@dataclass(frozen=True)
class FomConfig:
    case: str = TAYLOR_GREEN
    nx: int = 32
    ny: int = 32
    nu: float = 0.01
    dt: float = 1e-3
    t_start: float = 0.0
    t_end: float = 1.0
    dt_sample: float = 0.1
    regularized_lid: bool = True
    poisson_tol: float = 1e-10
    # Taylor-Green only: amplitude of a smooth divergence-free perturbation
    # added to the initial vortex (0 gives the exact single-mode solution).
    perturbation: float = 0.0
    perturbation_modes: int = 3
    seed: int = 0
    div_tol: float = 1e-8

    def __post_init__(self):
        if self.case not in (TAYLOR_GREEN, LID_CAVITY):
            raise ValueError(f"unknown case {self.case!r}")
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (0 <= self.t_start <= self.t_end):
            raise ValueError("need 0 <= t_start <= t_end")
        if self.dt_sample <= 0:
            raise ValueError("dt_sample must be positive")
        ratio = self.dt_sample / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError("dt_sample must be an integer multiple of dt")
        for name in ("t_start", "t_end"):
            steps = getattr(self, name) / self.dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ValueError(f"{name} must be an integer multiple of dt")
        window = (self.t_end - self.t_start) / self.dt_sample
        if abs(window - round(window)) > 1e-9 * max(1.0, window):
            raise ValueError("sampling window must hold a whole number of intervals")
        if self.poisson_tol <= 0:
            raise ValueError("poisson_tol must be positive")
        adv, diff = self.cfl_estimate(velocity_scale=self.velocity_scale())
        if adv > CFL_LIMIT or diff > CFL_LIMIT:
            raise ValueError(
                f"CFL estimate too large at this resolution (advective {adv:.3g}, "
                f"diffusive {diff:.3g}, limit {CFL_LIMIT})"
            )

    def grid(self) -> Grid:
        if self.case == TAYLOR_GREEN:
            return Grid(self.nx, self.ny, 2 * math.pi, 2 * math.pi, PERIODIC)
        return Grid(self.nx, self.ny, 1.0, 1.0, CAVITY)

    def velocity_scale(self) -> float:
        if self.case == TAYLOR_GREEN:
            return 1.0 + self.perturbation
        return 1.0

    def cfl_estimate(self, velocity_scale: float) -> tuple[float, float]:
        g = self.grid()
        adv = self.dt * velocity_scale * (1.0 / g.hx + 1.0 / g.hy)
        diff = 2.0 * self.nu * self.dt * (1.0 / g.hx**2 + 1.0 / g.hy**2)
        return adv, diff

    @property
    def n_samples(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt_sample)) + 1

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Lift-subtracted snapshots ``u(t_k) - lift`` at the sample times."""

    fields: tuple[VectorField, ...]
    lift: VectorField
    times: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.fields) < 1:
            raise ValueError("snapshot set is empty")
        if len(self.fields) != len(self.times):
            raise ValueError("one sample time per snapshot required")
        g = self.lift.grid
        if any(f.grid != g for f in self.fields):
            raise ValueError("all snapshots must share the lift's grid")
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))

    @property
    def grid(self) -> Grid:
        return self.lift.grid

    def __len__(self) -> int:
        return len(self.fields)

    def matrix(self) -> np.ndarray:
        """Snapshots as rows of a ``(M+1, n_dof)`` array."""
        return np.stack([f.flat() for f in self.fields])

    def raw_fields(self) -> list[VectorField]:
        return [f + self.lift for f in self.fields]


def kinetic_energy(f: VectorField) -> float:
    return 0.5 * l2_inner(f, f)


def taylor_green_exact(t: float, nu: float, grid: Grid) -> VectorField:
    if not grid.periodic or not (
        math.isclose(grid.lx, 2 * math.pi) and math.isclose(grid.ly, 2 * math.pi)
    ):
        raise ValueError("Taylor-Green solution needs a periodic [0, 2pi]^2 grid")
    decay = math.exp(-2.0 * nu * t)
    return VectorField.from_functions(
        grid,
        lambda x, y: decay * np.sin(x) * np.cos(y),
        lambda x, y: -decay * np.cos(x) * np.sin(y),
    )


def lid_profile(x: np.ndarray, regularized: bool = True) -> np.ndarray:
    if regularized:
        return 16.0 * x**2 * (1.0 - x) ** 2
    return np.ones_like(x)


def _streamfunction_field(grid: Grid, psi: np.ndarray) -> VectorField:
    """Discretely divergence-free field from corner streamfunction values."""
    u = (np.roll(psi, -1, axis=0) - psi) / grid.hy
    v = -(np.roll(psi, -1, axis=1) - psi) / grid.hx
    return VectorField(u, v, grid)


def taylor_green_perturbation(grid: Grid, amplitude: float, modes: int, seed: int) -> VectorField:
    """Smooth random periodic perturbation with zero discrete divergence."""
    rng = np.random.default_rng(seed)
    x = np.arange(grid.nx) * grid.hx
    y = np.arange(grid.ny) * grid.hy
    X, Y = np.meshgrid(x, y)
    psi = np.zeros_like(X)
    for kx in range(modes + 1):
        for ky in range(modes + 1):
            if kx == ky == 0 or (kx == 1 and ky == 1):
                continue
            c = rng.standard_normal(4) / (kx * kx + ky * ky)
            psi += (c[0] * np.cos(kx * X) * np.cos(ky * Y) + c[1] * np.sin(kx * X) * np.cos(ky * Y)
                    + c[2] * np.cos(kx * X) * np.sin(ky * Y) + c[3] * np.sin(kx * X) * np.sin(ky * Y))
    f = _streamfunction_field(grid, psi)
    scale = math.sqrt(l2_inner(f, f) / (grid.lx * grid.ly))
    return f * (amplitude / scale)


class _PeriodicSolver:
    def __init__(self, grid: Grid, nu: float, dt: float):
        self.g, self.nu, self.dt = grid, nu, dt
        kx = 2 * np.pi * np.fft.fftfreq(grid.nx)
        ky = 2 * np.pi * np.fft.fftfreq(grid.ny)
        lam = ((2 * np.cos(kx)[None, :] - 2) / grid.hx**2
               + (2 * np.cos(ky)[:, None] - 2) / grid.hy**2)
        lam[0, 0] = 1.0
        self.inv_lap = 1.0 / lam
        self.inv_lap[0, 0] = 0.0

    def rhs(self, u, v):
        hx, hy = self.g.hx, self.g.hy
        uc = 0.5 * (u + np.roll(u, -1, axis=1))
        vc = 0.5 * (v + np.roll(v, -1, axis=0))
        uvc = 0.5 * (u + np.roll(u, 1, axis=0)) * 0.5 * (v + np.roll(v, 1, axis=1))
        conv_u = (uc**2 - np.roll(uc**2, 1, axis=1)) / hx + (np.roll(uvc, -1, axis=0) - uvc) / hy
        conv_v = (vc**2 - np.roll(vc**2, 1, axis=0)) / hy + (np.roll(uvc, -1, axis=1) - uvc) / hx
        return -conv_u + self.nu * self._lap(u), -conv_v + self.nu * self._lap(v)

    def _lap(self, f):
        hx, hy = self.g.hx, self.g.hy
        return ((np.roll(f, -1, axis=1) - 2 * f + np.roll(f, 1, axis=1)) / hx**2
                + (np.roll(f, -1, axis=0) - 2 * f + np.roll(f, 1, axis=0)) / hy**2)

    def project(self, u, v, tol):
        g = self.g
        div = (np.roll(u, -1, axis=1) - u) / g.hx + (np.roll(v, -1, axis=0) - v) / g.hy
        p = np.real(np.fft.ifft2(np.fft.fft2(div) * self.inv_lap))
        u = u - (p - np.roll(p, 1, axis=1)) / g.hx
        v = v - (p - np.roll(p, 1, axis=0)) / g.hy
        return u, v


class _CavitySolver:
    def __init__(self, grid: Grid, nu: float, dt: float, lid: np.ndarray):
        self.g, self.nu, self.dt, self.lid = grid, nu, dt, lid
        self.lap_p = self._neumann_laplacian()
        self.lu = spla.splu(self.lap_p.tocsc())

    def _neumann_laplacian(self) -> sp.csr_matrix:
        g = self.g

        def second_diff(n, h):
            main = np.full(n, -2.0)
            main[0] = main[-1] = -1.0
            return sp.diags([np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1]) / h**2

        lap = (sp.kron(sp.identity(g.ny), second_diff(g.nx, g.hx))
               + sp.kron(second_diff(g.ny, g.hy), sp.identity(g.nx))).tolil()
        # pin one cell; the dropped equation follows from global flux balance
        lap[0, :] = 0.0
        lap[0, 0] = 1.0
        return lap.tocsr()

    def _ghosts(self, u, v):
        ug = np.vstack([-u[:1], u, 2.0 * self.lid[None, :] - u[-1:]])
        vg = np.hstack([-v[:, :1], v, -v[:, -1:]])
        return ug, vg

    def rhs(self, u, v):
        g = self.g
        hx, hy = g.hx, g.hy
        ug, vg = self._ghosts(u, v)
        uvc = 0.5 * (ug[:-1] + ug[1:]) * 0.5 * (vg[:, :-1] + vg[:, 1:])  # (ny+1, nx+1)
        uc = 0.5 * (u[:, :-1] + u[:, 1:])
        vc = 0.5 * (v[:-1] + v[1:])

        ru = np.zeros_like(u)
        conv_u = (uc[:, 1:] ** 2 - uc[:, :-1] ** 2) / hx + (uvc[1:, 1:-1] - uvc[:-1, 1:-1]) / hy
        lap_u = ((ug[1:-1, 2:] - 2 * ug[1:-1, 1:-1] + ug[1:-1, :-2]) / hx**2
                 + (ug[2:, 1:-1] - 2 * ug[1:-1, 1:-1] + ug[:-2, 1:-1]) / hy**2)
        ru[:, 1:-1] = -conv_u + self.nu * lap_u

        rv = np.zeros_like(v)
        conv_v = (vc[1:] ** 2 - vc[:-1] ** 2) / hy + (uvc[1:-1, 1:] - uvc[1:-1, :-1]) / hx
        lap_v = ((vg[1:-1, 2:] - 2 * vg[1:-1, 1:-1] + vg[1:-1, :-2]) / hx**2
                 + (vg[2:, 1:-1] - 2 * vg[1:-1, 1:-1] + vg[:-2, 1:-1]) / hy**2)
        rv[1:-1, :] = -conv_v + self.nu * lap_v
        return ru, rv

    def project(self, u, v, tol):
        g = self.g
        div = (u[:, 1:] - u[:, :-1]) / g.hx + (v[1:] - v[:-1]) / g.hy
        b = div.ravel().copy()
        b[0] = 0.0
        p = self.lu.solve(b)
        res = np.linalg.norm(self.lap_p @ p - b)
        scale = max(np.linalg.norm(b), np.finfo(float).tiny)
        if res > tol * scale:
            raise PoissonError(f"pressure Poisson residual {res / scale:.3e} exceeds {tol:.1e}")
        p = p.reshape(g.ny, g.nx)
        u = u.copy()
        v = v.copy()
        u[:, 1:-1] -= (p[:, 1:] - p[:, :-1]) / g.hx
        v[1:-1, :] -= (p[1:, :] - p[:-1, :]) / g.hy
        return u, v


def initial_field(cfg: FomConfig) -> VectorField:
    g = cfg.grid()
    if cfg.case == TAYLOR_GREEN:
        f = taylor_green_exact(0.0, cfg.nu, g)
        if cfg.perturbation > 0:
            f = f + taylor_green_perturbation(g, cfg.perturbation, cfg.perturbation_modes, cfg.seed)
        return f
    return VectorField.zeros(g)


def run_fom(cfg: FomConfig) -> SnapshotSet:
    """Integrate from t=0 to ``t_end`` and collect snapshots on ``[t_start, t_end]``."""
    g = cfg.grid()
    if cfg.case == TAYLOR_GREEN:
        solver = _PeriodicSolver(g, cfg.nu, cfg.dt)
    else:
        x_lid = np.arange(g.nx + 1) * g.hx / g.lx
        solver = _CavitySolver(g, cfg.nu, cfg.dt, lid_profile(x_lid, cfg.regularized_lid))

    f0 = initial_field(cfg)
    u, v = f0.u.copy(), f0.v.copy()
    n_total = int(round(cfg.t_end / cfg.dt))
    n_first = int(round(cfg.t_start / cfg.dt))
    stride = int(round(cfg.dt_sample / cfg.dt))

    raw: list[VectorField] = []
    times: list[float] = []

    def sample(step):
        f = VectorField(u, v, g)
        dmax = float(np.max(np.abs(divergence(f))))
        if dmax > cfg.div_tol:
            raise FomError(f"snapshot at step {step} has max |div| {dmax:.3e} > {cfg.div_tol:.1e}")
        raw.append(f)
        times.append(step * cfg.dt)

    if n_first == 0:
        sample(0)
    prev = None
    for step in range(1, n_total + 1):
        cur = solver.rhs(u, v)
        if prev is None:
            us, vs = u + cfg.dt * cur[0], v + cfg.dt * cur[1]
        else:
            us = u + cfg.dt * (1.5 * cur[0] - 0.5 * prev[0])
            vs = v + cfg.dt * (1.5 * cur[1] - 0.5 * prev[1])
        prev = cur
        u, v = solver.project(us, vs, cfg.poisson_tol)
        umax, vmax = float(np.max(np.abs(u))), float(np.max(np.abs(v)))
        if not (np.isfinite(umax) and np.isfinite(vmax)):
            raise CflError(f"non-finite velocity at step {step}")
        cfl = cfg.dt * (umax / g.hx + vmax / g.hy)
        if cfl > CFL_LIMIT:
            raise CflError(f"CFL {cfl:.3f} exceeds {CFL_LIMIT} at step {step} (t={step * cfg.dt:.4g})")
        if step >= n_first and (step - n_first) % stride == 0:
            sample(step)

    lift = raw[0] if cfg.case == LID_CAVITY else VectorField.zeros(g)
    fluct = tuple(f - lift for f in raw)
    meta = {"config": asdict(cfg), "config_sha256": cfg.digest()}
    log.info("FOM %s: %d snapshots on %dx%d", cfg.case, len(fluct), g.nx, g.ny)
    return SnapshotSet(fluct, lift, np.array(times), meta)
