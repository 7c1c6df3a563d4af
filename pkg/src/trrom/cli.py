"""``trrom`` command-line entry point.

Exit status is 0 on success, 2 for configuration or input problems and 3 for a
numerical failure.  Failures print one JSON object on stderr, for example
``{"error": "numerical", "stage": "rom", "type": "NonConvergenceError", "message": "..."}``.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, from_dict, load_config, rom_steps
from .fields import l2_inner
from .fom import FomError, run_fom
from .integrate import IMPLICIT_BE, RomError, TrRomParams, run_rom, stability_check
from .io import (FormatError, decode_basis, decode_snapshots, encode_basis, encode_snapshots,
                 encode_trajectory, format_results, parse_results, read_bytes, write_bytes)
from .operators import SKEW, FilterError, assemble_operators, build_filter
from .pod import RankError, compute_pod, project, tails
from .study import (ChiInputs, StudyError, SweepSpec, chi_theory_simplified, extrapolate_chi,
                    find_chi_effective, fit_rate, fit_segments, group_records, optimal_chi,
                    run_sweep, term_magnitudes)

log = logging.getLogger("trrom")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
_NUMERICAL = (FomError, RomError, RankError, FilterError, ArithmeticError, np.linalg.LinAlgError)


def _emit_error(kind: str, stage: str, exc: BaseException) -> None:
    print(json.dumps({"error": kind, "stage": stage, "type": type(exc).__name__,
                      "message": str(exc)}, sort_keys=True), file=sys.stderr)


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


# ----------------------------------------------------------------------------
# stages


def _load_snapshots(cfg: RunConfig, build: bool = False):
    p = Path(cfg.paths.snapshots)
    if not p.exists():
        if not build:
            raise FileNotFoundError(f"snapshot file not found: {p}")
        snaps = run_fom(cfg.fom)
        write_bytes(p, encode_snapshots(snaps))
        return snaps
    return decode_snapshots(read_bytes(p))


def _load_basis(cfg: RunConfig, snaps=None, build: bool = False):
    p = Path(cfg.paths.basis)
    if not p.exists():
        if not build:
            raise FileNotFoundError(f"basis file not found: {p}")
        basis = compute_pod(snaps if snaps is not None else _load_snapshots(cfg, build), cfg.pod.R)
        write_bytes(p, encode_basis(basis))
        return basis
    return decode_basis(read_bytes(p))


def cmd_fom(cfg: RunConfig) -> int:
    snaps = run_fom(cfg.fom)
    write_bytes(cfg.paths.snapshots, encode_snapshots(snaps))
    print(json.dumps({"snapshots": len(snaps), "path": cfg.paths.snapshots,
                      "config_sha256": snaps.metadata.get("config_sha256")}, sort_keys=True))
    return 0


def tails_table(basis) -> str:
    t = tails(basis)
    out = io.StringIO()
    out.write("r,lambda_l2_tail,lambda_h10_tail,s_r_norm\n")
    for r in range(basis.R + 1):
        out.write(f"{r},{t.l2[r]:.17g},{t.h10[r]:.17g},{t.s_norm_at(r):.17g}\n")
    return out.getvalue()


def cmd_pod(cfg: RunConfig) -> int:
    snaps = _load_snapshots(cfg)
    basis = compute_pod(snaps, cfg.pod.R)
    write_bytes(cfg.paths.basis, encode_basis(basis))
    _write_text(cfg.paths.tails, tails_table(basis))
    return 0


def rom_params(cfg: RunConfig, t0: float) -> TrRomParams:
    rom = cfg.rom
    return TrRomParams(r=rom.r, nu=cfg.fom.nu, dt=rom.dt, chi=rom.chi, delta=rom.delta,
                       scheme=rom.scheme, form=rom.form, tol=rom.tol, max_iter=rom.max_iter,
                       n_steps=rom_steps(cfg), t0=t0, newton=rom.newton)


def cmd_rom(cfg: RunConfig) -> int:
    snaps = _load_snapshots(cfg)
    basis = _load_basis(cfg)
    params = rom_params(cfg, float(snaps.times[0]))
    ops = assemble_operators(basis, params.r, params.nu, params.form)
    filt = build_filter(ops, params.delta)
    u0 = snaps.fields[0]
    a0 = project(u0, basis, params.r) if cfg.rom.initial == "projection" else np.zeros(params.r)
    traj = run_rom(a0, params, ops, filt)
    write_bytes(cfg.paths.trajectory, encode_trajectory(traj, basis.grid))
    summary = {"steps": len(traj.coeffs) - 1, "diverged": traj.diverged,
               "final_energy": float(traj.energy[-1]), "path": cfg.paths.trajectory}
    # the energy inequality assumes homogeneous boundary data, i.e. a zero lift
    if params.scheme != IMPLICIT_BE or params.form != SKEW:
        summary["stability"] = "skipped: needs implicit_be with skew convection"
    elif np.any(basis.lift.flat()):
        summary["stability"] = "skipped: nonzero lift"
    else:
        rep = stability_check(traj, params, ops, l2_inner(u0, u0))
        summary.update(stability_ok=rep.ok, bound=rep.bound,
                       min_step_slack=float(rep.step_slack.min()) if rep.step_slack.size else 0.0)
        if cfg.paths.stability:
            lines = ["step,energy,diffusion_sum,relaxation_sum,step_ok,step_slack"]
            for n in range(len(rep.energy)):
                ok = bool(rep.step_ok[n - 1]) if n else True
                slack = float(rep.step_slack[n - 1]) if n else 0.0
                lines.append(f"{n},{rep.energy[n]:.17g},{rep.diffusion_sum[n]:.17g},"
                             f"{rep.relaxation_sum[n]:.17g},{int(ok)},{slack:.17g}")
            _write_text(cfg.paths.stability, "\n".join(lines) + "\n")
    print(json.dumps(summary, sort_keys=True))
    if traj.diverged:
        raise RomError("trajectory diverged; file holds the truncated run", step=len(traj.coeffs) - 1)
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    sw = cfg.sweep
    snaps = _load_snapshots(cfg, build=True)
    basis = _load_basis(cfg, snaps, build=True)
    spec = SweepSpec(r_values=tuple(int(r) for r in sw.r_values), deltas=tuple(sw.deltas),
                     chis=tuple(sw.chis), nu=cfg.fom.nu, dt=cfg.rom.dt, n_steps=rom_steps(cfg),
                     t0=float(snaps.times[0]), scheme=cfg.rom.scheme, form=cfg.rom.form,
                     tol=cfg.rom.tol, max_iter=cfg.rom.max_iter, workers=sw.workers,
                     record_wall_time=sw.record_wall_time)
    init = None
    if cfg.rom.initial == "projection":
        def init(r):
            return project(snaps.fields[0], basis, r)
    records = run_sweep(spec, basis, snaps, init)
    _write_text(cfg.paths.results, format_results(records))
    failed = sum(rec.status != "ok" for rec in records)
    print(json.dumps({"records": len(records), "failed": failed, "path": cfg.paths.results},
                     sort_keys=True))
    return 0


# ----------------------------------------------------------------------------
# report


def _g(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6g}"


def _c_sr(cfg: RunConfig) -> float:
    if cfg.study.c_sr is not None:
        return float(cfg.study.c_sr)
    p = Path(cfg.paths.snapshots)
    if p.exists():
        u0 = decode_snapshots(read_bytes(p)).raw_fields()[0]
        return l2_inner(u0, u0)
    return math.nan


def _theory(rec, c_sr: float) -> float:
    if math.isnan(c_sr):
        return math.nan
    try:
        return chi_theory_simplified(ChiInputs(nu=1.0, dt=1.0, N=1.0, k=0.0, s=0.0, delta=rec.delta,
                                               lam_l2=rec.lambda_l2_tail,
                                               lam_h10=rec.lambda_h10_tail,
                                               s_norm=rec.s_r_norm, c_sr=c_sr))
    except (ZeroDivisionError, ValueError):
        return math.nan


def build_report(records, cfg: RunConfig) -> str:
    st = cfg.study
    c_sr = _c_sr(cfg)
    out = io.StringIO()
    w = out.write

    w("# rate fits (chi = 0 runs): log eps vs log tail\n")
    w("delta,metric,n_points,slope,intercept,r2\n")
    base = [rec for rec in records if rec.chi == 0 and rec.status == "ok"]
    for delta in sorted({rec.delta for rec in base}):
        rows = [rec for rec in base if rec.delta == delta and rec.lambda_l2_tail > 0]
        if len({rec.r for rec in rows}) < 2:
            continue
        for metric, tail in (("eps_l2", "lambda_l2_tail"), ("eps_h10", "lambda_h10_tail")):
            try:
                fit = fit_rate([getattr(x, tail) for x in rows], [getattr(x, metric) for x in rows])
            except StudyError:
                continue
            w(f"{_g(delta)},{metric},{len(rows)},{fit.slope:.6g},{fit.intercept:.6g},{fit.r2:.6g}\n")

    groups = group_records(records)
    eff: dict[tuple[int, float], float] = {}
    theory: dict[tuple[int, float], float] = {}
    w(f"\n# chi_effective ({st.metric}, within {st.tolerance:g} of optimum); C_sr = {_g(c_sr)}\n")
    w("r,delta,n_ok,chi_optimal,chi_effective,chi_theory\n")
    for (r, delta), recs in groups.items():
        ok = [x for x in recs if x.status == "ok"]
        if not ok:
            w(f"{r},{_g(delta)},0,nan,nan,nan\n")
            continue
        ce = find_chi_effective(ok, st.metric, st.tolerance)
        ct = _theory(ok[0], c_sr)
        eff[(r, delta)], theory[(r, delta)] = ce, ct
        w(f"{r},{_g(delta)},{len(ok)},{_g(optimal_chi(ok, st.metric))},{_g(ce)},{_g(ct)}\n")

    if st.anchors and st.targets:
        w("\n# extrapolation: mean(chi_eff / chi_theory) at anchors times chi_theory at targets\n")
        w("r,delta,role,chi_theory,chi_predicted,chi_effective,ratio\n")
        for r in sorted({k[0] for k in eff}):
            anchors = [(eff[(r, d)], theory[(r, d)]) for d in st.anchors if (r, d) in eff]
            tgts = [d for d in st.targets if (r, d) in eff]
            if len(anchors) != len(st.anchors) or not tgts or any(
                    math.isnan(t) or t == 0 for _, t in anchors):
                continue
            rho, pred = extrapolate_chi(anchors, [theory[(r, d)] for d in tgts])
            for d in st.anchors:
                w(f"{r},{_g(d)},anchor,{_g(theory[(r, d)])},{_g(rho * theory[(r, d)])},"
                  f"{_g(eff[(r, d)])},{_g(eff[(r, d)] / theory[(r, d)])}\n")
            for d, p in zip(tgts, pred):
                w(f"{r},{_g(d)},target,{_g(theory[(r, d)])},{_g(p)},{_g(eff[(r, d)])},"
                  f"{_g(p / eff[(r, d)])}\n")

    w("\n# regime breakpoints: piecewise log-log fits over delta\n")
    w("r,curve,segments,breaks,slopes\n")
    for r in sorted({k[0] for k in eff}):
        ds = sorted(d for (rr, d) in eff if rr == r and d > 0)
        for name, src in (("chi_effective", eff), ("chi_theory", theory)):
            ys = [src[(r, d)] for d in ds]
            if any(math.isnan(y) or y <= 0 for y in ys):
                continue
            for nseg in (2, 3):
                if len(ds) < 3 * nseg:
                    continue
                fit = fit_segments(ds, ys, nseg, min_points=3)
                w(f"{r},{name},{nseg},{' '.join(_g(b) for b in fit.breaks)},"
                  f"{' '.join(f'{s:.4g}' for s in fit.slopes)}\n")

    w(f"\n# term magnitudes at chi_effective (N={_g(st.N)}, k={_g(st.k)}, s={_g(st.s)}, "
      f"dt={_g(cfg.rom.dt)})\n")
    names = None
    for (r, delta), ce in eff.items():
        rec = groups[(r, delta)][0]
        inp = ChiInputs(nu=cfg.fom.nu, dt=cfg.rom.dt, N=st.N, k=st.k, s=st.s, delta=delta,
                        lam_l2=max(rec.lambda_l2_tail, 0.0), lam_h10=max(rec.lambda_h10_tail, 0.0),
                        s_norm=max(rec.s_r_norm, 0.0), c_sr=0.0 if math.isnan(c_sr) else c_sr)
        terms = term_magnitudes(inp, ce)
        if names is None:
            names = list(terms)
            w("r,delta,chi," + ",".join(names) + "\n")
        w(f"{r},{_g(delta)},{_g(ce)}," + ",".join(f"{terms[n]:.3e}" for n in names) + "\n")
    return out.getvalue()


def cmd_report(cfg: RunConfig, results: str | None) -> int:
    path = Path(results or cfg.paths.results)
    if not path.exists():
        raise FileNotFoundError(f"results file not found: {path}")
    records = parse_results(path.read_text())
    _write_text(cfg.paths.report, build_report(records, cfg))
    return 0


# ----------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trrom", description="Time-relaxation ROM laboratory")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("fom", "run the full-order solver and write snapshots"),
                        ("pod", "build the POD basis and tail table"),
                        ("rom", "integrate one ROM and write its trajectory"),
                        ("sweep", "run the (r, delta, chi) sweep and write the results CSV"),
                        ("report", "summarise a results CSV")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=(name != "report"), help="JSON run configuration")
        if name == "report":
            sp.add_argument("--results", help="results CSV (defaults to paths.results)")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        cfg = load_config(args.config) if args.config else from_dict({})
    except ConfigError as exc:
        _emit_error("config", stage, exc)
        return EXIT_CONFIG
    handlers = {"fom": cmd_fom, "pod": cmd_pod, "rom": cmd_rom, "sweep": cmd_sweep}
    try:
        if stage == "report":
            return cmd_report(cfg, args.results)
        return handlers[stage](cfg)
    except (ConfigError, FileNotFoundError, FormatError, StudyError) as exc:
        _emit_error("input", stage, exc)
        return EXIT_CONFIG
    except _NUMERICAL as exc:
        _emit_error("numerical", stage, exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
