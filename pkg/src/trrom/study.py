"""Error metrics, parameter-scaling formulas and the (r, delta, chi) sweep harness."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .fom import SnapshotSet
from .integrate import IMPLICIT_BE, RomError, TrRomParams, run_rom
from .operators import SKEW, assemble_operators, build_filter
from .pod import PodBasis, TailSums, project_snapshots, tails

STATUS_OK = "ok"
METRICS = ("eps_l2", "eps_h10", "eps_avg_h10")


class StudyError(ValueError):
    pass


# ----------------------------------------------------------------------------
# error metrics


def _aligned_rows(traj, snaps: SnapshotSet, atol: float = 1e-9) -> np.ndarray:
    """Trajectory row index of each snapshot time."""
    times = np.asarray(traj.times)
    if len(times) == 0:
        raise StudyError("empty trajectory")
    dt = times[1] - times[0] if len(times) > 1 else 1.0
    idx = np.rint((np.asarray(snaps.times) - times[0]) / dt).astype(np.int64)
    if idx.min() < 0 or idx.max() >= len(times):
        raise StudyError("snapshot times fall outside the trajectory")
    if np.max(np.abs(times[idx] - snaps.times)) > atol * max(1.0, float(np.abs(times).max())):
        raise StudyError("trajectory and snapshot time grids are misaligned")
    return idx


def _coefficient_errors(traj, snaps, basis, R_ref):
    if R_ref > basis.R:
        raise StudyError(f"reference rank {R_ref} exceeds basis rank {basis.R}")
    r = traj.coeffs.shape[1]
    if r > R_ref:
        raise StudyError(f"ROM dimension {r} exceeds reference rank {R_ref}")
    rows = _aligned_rows(traj, snaps)
    ref = project_snapshots(snaps, basis, R_ref)
    rom = np.zeros_like(ref)
    rom[:, :r] = traj.coeffs[rows]
    return ref - rom


def error_l2(traj, snaps: SnapshotSet, basis: PodBasis, R_ref: int) -> float:
    """Mean squared L2 distance between the ROM and the rank-``R_ref`` projected snapshots."""
    d = _coefficient_errors(traj, snaps, basis, R_ref)
    return float(np.mean(np.sum(d * d, axis=1)))


def error_h10(traj, snaps: SnapshotSet, basis: PodBasis, R_ref: int) -> float:
    d = _coefficient_errors(traj, snaps, basis, R_ref)
    S = basis.stiffness(R_ref)
    return float(np.mean(np.einsum("ni,ij,nj->n", d, S, d)))


def error_avg_h10(traj, snaps: SnapshotSet, basis: PodBasis, R_ref: int) -> float:
    """H1_0 error of the time-averaged field."""
    d = _coefficient_errors(traj, snaps, basis, R_ref).mean(axis=0)
    return float(d @ basis.stiffness(R_ref) @ d)


# ----------------------------------------------------------------------------
# error-bound terms and chi formulas


@dataclass(frozen=True)
class ChiInputs:
    nu: float
    dt: float
    N: float
    k: float
    s: float
    delta: float
    lam_l2: float
    lam_h10: float
    s_norm: float
    c_sr: float = 1.0

    def __post_init__(self):
        for name in ("delta", "lam_l2", "lam_h10", "s_norm", "c_sr", "k", "s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("nu", "dt", "N"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def term_magnitudes(inp: ChiInputs, chi: float) -> dict[str, float]:
    N, k, s = inp.N, inp.k, inp.s
    return {
        "N^-2s-2": N ** (-2 * s - 2),
        "dt^2": inp.dt**2,
        "chi^2 delta^4": chi**2 * inp.delta**4,
        "chi^2 N^-2k-2": chi**2 * N ** (-2 * k - 2),
        "chi^2 Lambda_L2": chi**2 * inp.lam_l2,
        "sqrt(Lambda_L2 Lambda_H10)": math.sqrt(inp.lam_l2 * inp.lam_h10),
        "N^-2k": N ** (-2 * k),
        "||S_r|| N^-2k-2": inp.s_norm * N ** (-2 * k - 2),
        "Lambda_H10": inp.lam_h10,
    }


def term_A(inp: ChiInputs, printed_exponent: bool = False) -> float:
    """Collected higher-order terms of the error bound.

    ``printed_exponent=True`` reproduces the misprinted ``N^(k-1)`` factor in the
    ``sqrt(Lambda_H10)`` term; the default uses ``N^(-k-1)``.
    """
    N, k, dt = inp.N, inp.k, inp.dt
    sS = math.sqrt(inp.s_norm)
    s1 = math.sqrt(1.0 + inp.s_norm)
    nk1 = N ** (-k - 1)
    h_factor = N ** (k - 1) if printed_exponent else nk1
    sl2, sh10 = math.sqrt(inp.lam_l2), math.sqrt(inp.lam_h10)
    return (N ** (-2 * k - 1) + dt**3 * N ** (-k) + sS * nk1 * dt**3 + s1 * nk1 * dt**3
            + s1 * dt**6 + N ** (-k) * sl2 + sS * N ** (-2 * k - 2)
            + (h_factor + dt**3) * sh10 + sS * nk1 * sl2 + s1 * dt**3 * sl2)


def _L_H(inp: ChiInputs) -> tuple[float, float]:
    N, k, dt = inp.N, inp.k, inp.dt
    L = N ** (-2 * k - 2) + dt**6 + inp.lam_l2
    H = N ** (-2 * k) + inp.s_norm * N ** (-2 * k - 2) + (1 + inp.s_norm) * dt**6 + inp.lam_h10
    return L, H


def _F_coefficients(inp: ChiInputs) -> tuple[float, float]:
    """``(P, Q)`` with ``F(chi) = P / chi + Q * chi``."""
    L, H = _L_H(inp)
    nu = inp.nu
    P = (inp.dt**2 + inp.N ** (-2 * inp.s - 2) + term_A(inp)
         + math.sqrt(inp.lam_l2 * inp.lam_h10)) / nu + (nu + inp.c_sr / nu) * H
    Q = (inp.delta**4 + L + inp.delta**2 * H) / nu
    return P, Q


def F_chi(inp: ChiInputs, chi: float) -> float:
    if chi <= 0:
        raise ValueError("chi must be positive")
    P, Q = _F_coefficients(inp)
    return P / chi + Q * chi


def _safe_sqrt_ratio(num: float, den: float) -> float:
    if not den > 0:
        raise ZeroDivisionError("chi formula denominator is zero")
    return math.sqrt(num / den)


def chi_theory_full(inp: ChiInputs) -> float:
    return _safe_sqrt_ratio(*_F_coefficients(inp))


def chi_theory_simplified(inp: ChiInputs) -> float:
    l2, h10, d = inp.lam_l2, inp.lam_h10, inp.delta
    return _safe_sqrt_ratio(math.sqrt(l2 * h10) + inp.c_sr * h10, l2 + d**2 * h10 + d**4)


def chi_theory_r(inp: ChiInputs) -> float:
    l2, h10, d = inp.lam_l2, inp.lam_h10, inp.delta
    return _safe_sqrt_ratio(h10, l2 + d**2 * h10 + d**4)


def chi_inputs_from_tails(t: TailSums, r: int, delta: float, *, nu: float, dt: float,
                          N: float, k: float = 1.0, s: float = 0.0,
                          c_sr: float = 1.0) -> ChiInputs:
    return ChiInputs(nu=nu, dt=dt, N=N, k=k, s=s, delta=delta,
                     lam_l2=max(float(t.l2[r]), 0.0), lam_h10=max(float(t.h10[r]), 0.0),
                     s_norm=t.s_norm_at(r), c_sr=c_sr)


def delta_energy(r: int, eigenvalues: Sequence[float], h: float, L: float) -> float:
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size == 0:
        raise StudyError("empty eigenvalue spectrum")
    if not (h > 0 and L > 0):
        raise ValueError("h and L must be positive")
    if not 0 <= r <= lam.size:
        raise ValueError(f"r must lie in 0..{lam.size}")
    total = lam.sum()
    if r == lam.size:
        return float(h)
    frac = float(lam[:r].sum() / total) if total > 0 else 0.0
    if frac == 0.0:
        return float(L)
    return (frac * h ** (2 / 3) + (1 - frac) * L ** (2 / 3)) ** 1.5


# ----------------------------------------------------------------------------
# sweep records and post-processing


@dataclass(frozen=True)
class StudyRecord:
    r: int
    delta: float
    chi: float
    eps_l2: float
    eps_h10: float
    eps_avg_h10: float
    lambda_l2_tail: float
    lambda_h10_tail: float
    s_r_norm: float
    scheme: str
    status: str
    wall_time_s: float = 0.0

    def sort_key(self):
        return (self.r, self.delta, self.chi)


def find_chi_effective(records: Iterable[StudyRecord], metric: str = "eps_h10",
                       tol: float = 0.05) -> float:
    """Largest chi whose metric is within ``(1 + tol)`` of the best one."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    recs = [rec for rec in records if rec.status == STATUS_OK]
    if not recs:
        raise StudyError("no successful runs to select chi from")
    keys = {(rec.r, rec.delta) for rec in recs}
    if len(keys) > 1:
        raise StudyError("records must share one (r, delta) pair")
    vals = np.array([getattr(rec, metric) for rec in recs])
    chis = np.array([rec.chi for rec in recs])
    best = vals.min()
    return float(chis[vals <= (1.0 + tol) * best].max())


def optimal_chi(records: Iterable[StudyRecord], metric: str = "eps_h10") -> float:
    """Argmin of the metric; ties go to the larger chi."""
    recs = [rec for rec in records if rec.status == STATUS_OK]
    if not recs:
        raise StudyError("no successful runs")
    return max(recs, key=lambda rec: (-getattr(rec, metric), rec.chi)).chi


def extrapolate_chi(anchors: Sequence[tuple[float, float]],
                    targets: Sequence[float]) -> tuple[float, np.ndarray]:
    """Scale theoretical chi values by the mean anchor ratio.

    ``anchors`` holds ``(chi_effective, chi_theory)`` pairs; ``targets`` holds the
    theoretical chi at the held-out points.  Returns ``(mean_ratio, predictions)``.
    """
    if len(anchors) < 1:
        raise StudyError("need at least one anchor")
    ratios = []
    for eff, theory in anchors:
        if theory == 0:
            raise ZeroDivisionError("anchor has zero theoretical chi")
        ratios.append(eff / theory)
    rho = float(np.mean(ratios))
    return rho, rho * np.asarray(targets, dtype=float)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float


def fit_rate(xs: Sequence[float], ys: Sequence[float]) -> RateFit:
    """Least-squares line through ``(log x, log y)``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise StudyError("need at least two (x, y) pairs of equal length")
    if np.any(x <= 0) or np.any(y <= 0) or not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise StudyError("rate fit needs positive finite data")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise StudyError("x values are all equal")
    res = stats.linregress(lx, ly)
    # a perfect fit through constant y gives rvalue = 0 from scipy; report 1
    r2 = 1.0 if np.ptp(ly) == 0 else float(res.rvalue**2)
    return RateFit(float(res.slope), float(res.intercept), r2)


@dataclass(frozen=True)
class SegmentFit:
    breaks: tuple[float, ...]  # x values where each later segment starts
    slopes: tuple[float, ...]
    intercepts: tuple[float, ...]
    sse: float


def fit_segments(xs: Sequence[float], ys: Sequence[float], n_segments: int = 2,
                 min_points: int = 2) -> SegmentFit:
    """Piecewise log-log line fit with breakpoints chosen by minimum total squared residual.

    Segments are fitted independently; every segment holds at least ``min_points``
    samples.  Breakpoints are searched exhaustively over the sample positions.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise StudyError("segment fit needs positive data")
    order = np.argsort(x)
    xs_sorted = x[order]
    lx, ly = np.log(xs_sorted), np.log(y[order])
    n = lx.size
    if n_segments < 1 or n < n_segments * min_points:
        raise StudyError("not enough points for the requested segments")

    def line(a, b):
        sx, sy = lx[a:b], ly[a:b]
        if np.ptp(sx) == 0:
            return 0.0, float(sy.mean()), float(((sy - sy.mean()) ** 2).sum())
        slope, icpt = np.polyfit(sx, sy, 1)
        return float(slope), float(icpt), float(((sy - slope * sx - icpt) ** 2).sum())

    best = None
    for cut in combinations(range(min_points, n - min_points + 1), n_segments - 1):
        bounds = (0,) + cut + (n,)
        if any(bounds[i + 1] - bounds[i] < min_points for i in range(n_segments)):
            continue
        fits = [line(bounds[i], bounds[i + 1]) for i in range(n_segments)]
        sse = sum(f[2] for f in fits)
        if best is None or sse < best[0] - 1e-15:
            best = (sse, cut, fits)
    sse, cut, fits = best
    return SegmentFit(tuple(float(xs_sorted[c]) for c in cut),
                      tuple(f[0] for f in fits), tuple(f[1] for f in fits), float(sse))


# ----------------------------------------------------------------------------
# sweep runner


@dataclass(frozen=True)
class SweepSpec:
    r_values: tuple[int, ...]
    deltas: tuple[float, ...]
    chis: tuple[float, ...]
    nu: float
    dt: float
    n_steps: int
    t0: float = 0.0
    scheme: str = IMPLICIT_BE
    form: str = SKEW
    tol: float = 1e-10
    max_iter: int = 50
    R_ref: int | None = None
    workers: int = 1
    record_wall_time: bool = False


def _points(spec: SweepSpec):
    for r in sorted(set(spec.r_values)):
        for d in sorted(set(spec.deltas)):
            for c in sorted(set(spec.chis)):
                yield r, float(d), float(c)


def run_sweep(spec: SweepSpec, basis: PodBasis, snaps: SnapshotSet,
              initial: Callable[[int], np.ndarray] | None = None) -> list[StudyRecord]:
    """Run every ``(r, delta, chi)`` grid point and collect one record each.

    ``initial(r)`` supplies initial coefficients (zero by default).  Failed runs
    are kept with a non-``ok`` status and NaN errors.
    """
    R_ref = basis.R if spec.R_ref is None else spec.R_ref
    t = tails(basis)
    ops_cache = {r: assemble_operators(basis, r, spec.nu, spec.form)
                 for r in sorted(set(spec.r_values))}
    filt_cache = {(r, d): build_filter(ops_cache[r], d)
                  for r in ops_cache for d in sorted(set(spec.deltas))}

    def one(point):
        r, d, c = point
        params = TrRomParams(r=r, nu=spec.nu, dt=spec.dt, chi=c, delta=d, scheme=spec.scheme,
                             form=spec.form, tol=spec.tol, max_iter=spec.max_iter,
                             n_steps=spec.n_steps, t0=spec.t0)
        a0 = np.zeros(r) if initial is None else np.asarray(initial(r), dtype=float)
        start = time.perf_counter()
        status = STATUS_OK
        errs = (math.nan, math.nan, math.nan)
        try:
            traj = run_rom(a0, params, ops_cache[r], filt_cache[(r, d)])
            if traj.diverged:
                status = "diverged"
            else:
                errs = (error_l2(traj, snaps, basis, R_ref), error_h10(traj, snaps, basis, R_ref),
                        error_avg_h10(traj, snaps, basis, R_ref))
        except RomError as exc:
            status = type(exc).__name__
        wall = time.perf_counter() - start if spec.record_wall_time else 0.0
        return StudyRecord(r, d, c, *errs, float(t.l2[r]), float(t.h10[r]), t.s_norm_at(r),
                           spec.scheme, status, wall)

    points = list(_points(spec))
    if spec.workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            records = list(pool.map(one, points))
    else:
        records = [one(p) for p in points]
    return sorted(records, key=StudyRecord.sort_key)


def group_records(records: Iterable[StudyRecord]) -> dict[tuple[int, float], list[StudyRecord]]:
    groups: dict[tuple[int, float], list[StudyRecord]] = {}
    for rec in sorted(records, key=StudyRecord.sort_key):
        groups.setdefault((rec.r, rec.delta), []).append(rec)
    return groups
