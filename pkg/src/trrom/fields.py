"""Discrete 2D vector fields on MAC (staggered) grids.

Layout, arrays indexed ``[j, i]`` (y first):

* periodic: ``u`` has shape ``(ny, nx)`` at ``(i*hx, (j+1/2)*hy)``,
  ``v`` has shape ``(ny, nx)`` at ``((i+1/2)*hx, j*hy)``.
* cavity: ``u`` has shape ``(ny, nx+1)`` and ``v`` shape ``(ny+1, nx)``;
  the wall-normal faces are stored (they are always zero for admissible fields).

All inner products use positive trapezoid-consistent node weights, and all
differential operators are sparse matrices acting on the flattened field
``[u.ravel(), v.ravel()]``.  Operators are built once per grid and cached.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

PERIODIC = "periodic"
CAVITY = "cavity"
BC_CODES = {PERIODIC: 0, CAVITY: 1}


class GridMismatchError(ValueError):
    """Raised when fields living on different grids are combined."""


class GridOperators(NamedTuple):
    weights: np.ndarray  # flat node weights, length n_dof
    grad: sp.csr_matrix  # flat field -> [du/dx, du/dy, dv/dx, dv/dy]
    grad_weights: np.ndarray
    # advecting velocity interpolated to u-nodes and v-nodes
    ax_u: sp.csr_matrix
    ay_u: sp.csr_matrix
    ax_v: sp.csr_matrix
    ay_v: sp.csr_matrix
    div: sp.csr_matrix  # flat field -> cell-centered divergence


def _diff_1d(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    """Centered first derivative; one-sided second order at open ends."""
    if periodic:
        d = sp.diags([-1.0, 1.0], [-1, 1], shape=(n, n), format="lil")
        d[0, n - 1] = -1.0
        d[n - 1, 0] = 1.0
    else:
        if n < 3:
            raise ValueError("need at least 3 nodes for one-sided differences")
        d = sp.diags([-1.0, 1.0], [-1, 1], shape=(n, n), format="lil")
        d[0, 0:3] = [-3.0, 4.0, -1.0]
        d[n - 1, n - 3:n] = [1.0, -4.0, 3.0]
    return (d.tocsr() / (2.0 * h)).tocsr()


def _avg_1d(n_out: int, n_in: int, offsets: tuple[int, int], periodic: bool) -> sp.csr_matrix:
    """Two-point average picking input nodes ``k + offsets`` for output node k.

    Out-of-range inputs are dropped, i.e. treated as zero (no-slip wall values).
    """
    rows, cols = [], []
    for k in range(n_out):
        for off in offsets:
            c = k + off
            if periodic:
                c %= n_in
            elif c < 0 or c >= n_in:
                continue
            rows.append(k)
            cols.append(c)
    data = np.full(len(rows), 0.5)
    return sp.csr_matrix((data, (rows, cols)), shape=(n_out, n_in))


def _trapezoid(n: int, h: float, endpoints: bool) -> np.ndarray:
    w = np.full(n, h)
    if endpoints:
        w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True, eq=True)
class Grid:
    nx: int
    ny: int
    lx: float
    ly: float
    bc: str = PERIODIC

    def __post_init__(self):
        if self.bc not in BC_CODES:
            raise ValueError(f"unknown bc {self.bc!r}")
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs nx, ny >= 4")
        if not (self.lx > 0 and self.ly > 0 and np.isfinite(self.lx) and np.isfinite(self.ly)):
            raise ValueError("domain extents must be positive and finite")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def periodic(self) -> bool:
        return self.bc == PERIODIC

    @property
    def u_shape(self) -> tuple[int, int]:
        return (self.ny, self.nx) if self.periodic else (self.ny, self.nx + 1)

    @property
    def v_shape(self) -> tuple[int, int]:
        return (self.ny, self.nx) if self.periodic else (self.ny + 1, self.nx)

    @property
    def n_u(self) -> int:
        return self.u_shape[0] * self.u_shape[1]

    @property
    def n_dof(self) -> int:
        return self.n_u + self.v_shape[0] * self.v_shape[1]

    def u_coords(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nxu = self.u_shape
        x = np.arange(nxu) * self.hx
        y = (np.arange(ny) + 0.5) * self.hy
        return np.meshgrid(x, y)

    def v_coords(self) -> tuple[np.ndarray, np.ndarray]:
        nyv, nx = self.v_shape
        x = (np.arange(nx) + 0.5) * self.hx
        y = np.arange(nyv) * self.hy
        return np.meshgrid(x, y)

    def cell_coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y)

    @cached_property
    def ops(self) -> GridOperators:
        return _build_operators(self)


def _build_operators(g: Grid) -> GridOperators:
    per = g.periodic
    (nyu, nxu), (nyv, nxv) = g.u_shape, g.v_shape
    wu = np.outer(_trapezoid(nyu, g.hy, False), _trapezoid(nxu, g.hx, not per))
    wv = np.outer(_trapezoid(nyv, g.hy, not per), _trapezoid(nxv, g.hx, False))
    weights = np.concatenate([wu.ravel(), wv.ravel()])

    # u: x-nodes include walls (open axis), y-nodes are cell centres (open axis)
    dxu = sp.kron(sp.identity(nyu), _diff_1d(nxu, g.hx, per))
    dyu = sp.kron(_diff_1d(nyu, g.hy, per), sp.identity(nxu))
    dxv = sp.kron(sp.identity(nyv), _diff_1d(nxv, g.hx, per))
    dyv = sp.kron(_diff_1d(nyv, g.hy, per), sp.identity(nxv))
    zu = sp.csr_matrix((g.n_u, nyv * nxv))
    zv = sp.csr_matrix((nyv * nxv, g.n_u))
    grad = sp.bmat(
        [[dxu, zu], [dyu, zu], [zv, dxv], [zv, dyv]], format="csr"
    )
    grad_weights = np.concatenate([wu.ravel(), wu.ravel(), wv.ravel(), wv.ravel()])

    # v -> u-nodes: x offsets {-1, 0}, y offsets {0, +1}
    v2u = sp.kron(_avg_1d(nyu, nyv, (0, 1), per), _avg_1d(nxu, nxv, (-1, 0), per))
    # u -> v-nodes: x offsets {0, +1}, y offsets {-1, 0}
    u2v = sp.kron(_avg_1d(nyv, nyu, (-1, 0), per), _avg_1d(nxv, nxu, (0, 1), per))
    n_v = nyv * nxv
    ax_u = sp.hstack([sp.identity(g.n_u), sp.csr_matrix((g.n_u, n_v))], format="csr")
    ay_u = sp.hstack([sp.csr_matrix((g.n_u, g.n_u)), v2u], format="csr")
    ax_v = sp.hstack([u2v, sp.csr_matrix((n_v, n_v))], format="csr")
    ay_v = sp.hstack([sp.csr_matrix((n_v, g.n_u)), sp.identity(n_v)], format="csr")

    div = _divergence_matrix(g)
    return GridOperators(weights, grad, grad_weights, ax_u, ay_u, ax_v, ay_v, div)


def _forward_1d(n_cells: int, n_nodes: int, h: float, periodic: bool) -> sp.csr_matrix:
    """Face-to-cell difference: (f[k+1] - f[k]) / h."""
    if periodic:
        d = sp.diags([-1.0, 1.0], [0, 1], shape=(n_cells, n_nodes), format="lil")
        d[n_cells - 1, 0] = 1.0
    else:
        d = sp.diags([-1.0, 1.0], [0, 1], shape=(n_cells, n_nodes), format="lil")
    return (d.tocsr() / h).tocsr()


def _divergence_matrix(g: Grid) -> sp.csr_matrix:
    (nyu, nxu), (nyv, nxv) = g.u_shape, g.v_shape
    per = g.periodic
    du = sp.kron(sp.identity(g.ny), _forward_1d(g.nx, nxu, g.hx, per))
    dv = sp.kron(_forward_1d(g.ny, nyv, g.hy, per), sp.identity(g.nx))
    return sp.hstack([du, dv], format="csr")


@dataclass(frozen=True, eq=False)
class VectorField:
    """A velocity-like field on a MAC grid. Treat as immutable."""

    u: np.ndarray
    v: np.ndarray
    grid: Grid = field(repr=False)

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.shape != self.grid.u_shape or v.shape != self.grid.v_shape:
            raise ValueError(
                f"component shapes {u.shape}/{v.shape} do not match grid staggering "
                f"{self.grid.u_shape}/{self.grid.v_shape}"
            )
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("field entries must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(np.zeros(grid.u_shape), np.zeros(grid.v_shape), grid)

    @classmethod
    def from_flat(cls, flat: np.ndarray, grid: Grid) -> "VectorField":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (grid.n_dof,):
            raise ValueError(f"expected flat vector of length {grid.n_dof}")
        return cls(flat[: grid.n_u].reshape(grid.u_shape), flat[grid.n_u:].reshape(grid.v_shape), grid)

    @classmethod
    def from_functions(cls, grid: Grid, fu, fv) -> "VectorField":
        """Sample ``fu(x, y)`` at u-nodes and ``fv(x, y)`` at v-nodes."""
        xu, yu = grid.u_coords()
        xv, yv = grid.v_coords()
        u = np.broadcast_to(fu(xu, yu), grid.u_shape)
        v = np.broadcast_to(fv(xv, yv), grid.v_shape)
        return cls(u, v, grid)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.v.ravel()])

    def __add__(self, other: "VectorField") -> "VectorField":
        _check_same_grid(self, other)
        return VectorField(self.u + other.u, self.v + other.v, self.grid)

    def __sub__(self, other: "VectorField") -> "VectorField":
        _check_same_grid(self, other)
        return VectorField(self.u - other.u, self.v - other.v, self.grid)

    def __mul__(self, c: float) -> "VectorField":
        return VectorField(c * self.u, c * self.v, self.grid)

    __rmul__ = __mul__


def _check_same_grid(*fields: VectorField) -> Grid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError(f"fields live on different grids: {g} vs {f.grid}")
    return g


def l2_inner(a: VectorField, b: VectorField) -> float:
    """Discrete L2 inner product ``sum w (a_u b_u + a_v b_v)``."""
    g = _check_same_grid(a, b)
    return float(np.dot(g.ops.weights, a.flat() * b.flat()))


def gradient(a: VectorField) -> np.ndarray:
    """Stacked ``[du/dx, du/dy, dv/dx, dv/dy]`` at the component nodes (flat)."""
    return a.grid.ops.grad @ a.flat()


def h10_inner(a: VectorField, b: VectorField) -> float:
    """Discrete H^1_0 inner product ``(grad a, grad b)``."""
    g = _check_same_grid(a, b)
    ops = g.ops
    return float(np.dot(ops.grad_weights, (ops.grad @ a.flat()) * (ops.grad @ b.flat())))


def divergence(a: VectorField) -> np.ndarray:
    """Cell-centred MAC divergence, shape ``(ny, nx)``."""
    g = a.grid
    return (g.ops.div @ a.flat()).reshape(g.ny, g.nx)


def _advect_flat(ops: GridOperators, n_u: int, a: np.ndarray, grad_v: np.ndarray) -> np.ndarray:
    """Node values of ``a . grad v`` (flat, same layout as a field)."""
    n = a.shape[0]
    n_v = n - n_u
    gx_u, gy_u = grad_v[:n_u], grad_v[n_u:2 * n_u]
    gx_v, gy_v = grad_v[2 * n_u:2 * n_u + n_v], grad_v[2 * n_u + n_v:]
    out_u = (ops.ax_u @ a) * gx_u + (ops.ay_u @ a) * gy_u
    out_v = (ops.ax_v @ a) * gx_v + (ops.ay_v @ a) * gy_v
    return np.concatenate([out_u, out_v])


def trilinear_b(a: VectorField, v: VectorField, w: VectorField) -> float:
    """Convective form ``b(a, v, w) = (a . grad v, w)``."""
    g = _check_same_grid(a, v, w)
    ops = g.ops
    conv = _advect_flat(ops, g.n_u, a.flat(), ops.grad @ v.flat())
    return float(np.dot(ops.weights, conv * w.flat()))


def trilinear_b_star(a: VectorField, v: VectorField, w: VectorField) -> float:
    """Skew-symmetric form ``(b(a, v, w) - b(a, w, v)) / 2``."""
    return 0.5 * (trilinear_b(a, v, w) - trilinear_b(a, w, v))


def convection_tensor(grid: Grid, a_modes: np.ndarray, v_modes: np.ndarray,
                      w_modes: np.ndarray) -> np.ndarray:
    """Batched ``T[i, j, k] = b(a_j, v_k, w_i)`` for flat mode stacks.

    Each argument has shape ``(n_modes, n_dof)``.  Equivalent to calling
    :func:`trilinear_b` entry by entry, but with one sparse pass per mode.
    """
    ops = grid.ops
    n_u = grid.n_u
    ax = np.vstack([ops.ax_u @ a_modes.T, ops.ax_v @ a_modes.T]).T  # (J, n)
    ay = np.vstack([ops.ay_u @ a_modes.T, ops.ay_v @ a_modes.T]).T
    grads = (ops.grad @ v_modes.T).T  # (K, 4-block)
    n_v = grid.n_dof - n_u
    gx = np.hstack([grads[:, :n_u], grads[:, 2 * n_u:2 * n_u + n_v]])  # (K, n)
    gy = np.hstack([grads[:, n_u:2 * n_u], grads[:, 2 * n_u + n_v:]])
    ww = w_modes * ops.weights  # (I, n)
    out = np.empty((w_modes.shape[0], a_modes.shape[0], v_modes.shape[0]))
    for j in range(a_modes.shape[0]):
        conv = gx * ax[j] + gy * ay[j]  # (K, n)
        out[:, j, :] = ww @ conv.T
    return out
