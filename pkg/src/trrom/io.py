"""Binary codecs for snapshots, bases and trajectories, plus the results CSV.

Every binary file starts with the same little-endian header::

    b"TRRM"  u32 version  u8 kind  u32 nx  u32 ny  f64 lx  f64 ly  u8 bc  u32 count

followed by a kind-specific payload of little-endian f64 arrays.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .fields import BC_CODES, Grid, VectorField
from .fom import SnapshotSet
from .integrate import Trajectory
from .pod import PodBasis
from .study import StudyRecord

MAGIC = b"TRRM"
VERSION = 1
KIND_SNAPSHOTS = 1
KIND_BASIS = 2
KIND_TRAJECTORY = 3

_HEADER = struct.Struct("<4sIBIIddBI")
_BC_NAMES = {code: name for name, code in BC_CODES.items()}
_F64 = np.dtype("<f8")

CSV_COLUMNS = ("r", "delta", "chi", "eps_l2", "eps_h10", "eps_avg_h10", "lambda_l2_tail",
               "lambda_h10_tail", "s_r_norm", "scheme", "status", "wall_time_s")
_FLOAT_COLUMNS = tuple(c for c in CSV_COLUMNS if c not in ("r", "scheme", "status"))


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class Header:
    kind: int
    grid: Grid
    count: int


def _pack_header(kind: int, grid: Grid, count: int) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, kind, grid.nx, grid.ny, grid.lx, grid.ly,
                        BC_CODES[grid.bc], count)


def read_header(buf: bytes) -> tuple[Header, int]:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, kind, nx, ny, lx, ly, bc, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if kind not in (KIND_SNAPSHOTS, KIND_BASIS, KIND_TRAJECTORY):
        raise FormatError(f"unknown kind {kind}")
    if bc not in _BC_NAMES:
        raise FormatError(f"unknown boundary code {bc}")
    try:
        grid = Grid(nx, ny, lx, ly, _BC_NAMES[bc])
    except ValueError as exc:
        raise FormatError(f"invalid grid in header: {exc}") from exc
    return Header(kind, grid, count), _HEADER.size


class _Reader:
    def __init__(self, buf: bytes, offset: int):
        self.buf, self.pos = buf, offset

    def f64(self, n: int) -> np.ndarray:
        end = self.pos + 8 * n
        if end > len(self.buf):
            raise FormatError("truncated payload")
        out = np.frombuffer(self.buf, dtype=_F64, count=n, offset=self.pos).astype(np.float64)
        self.pos = end
        return out

    def u32(self) -> int:
        if self.pos + 4 > len(self.buf):
            raise FormatError("truncated payload")
        (val,) = struct.unpack_from("<I", self.buf, self.pos)
        self.pos += 4
        return val

    def finish(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing bytes")


def _f64_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype=_F64).tobytes()


def _field_bytes(f: VectorField) -> bytes:
    return _f64_bytes(f.u) + _f64_bytes(f.v)


def _expect(header: Header, kind: int):
    if header.kind != kind:
        raise FormatError(f"expected file kind {kind}, found {header.kind}")


def encode_snapshots(s: SnapshotSet) -> bytes:
    parts = [_pack_header(KIND_SNAPSHOTS, s.grid, len(s)), _f64_bytes(s.times), _field_bytes(s.lift)]
    parts.extend(_field_bytes(f) for f in s.fields)
    return b"".join(parts)


def decode_snapshots(buf: bytes) -> SnapshotSet:
    h, off = read_header(buf)
    _expect(h, KIND_SNAPSHOTS)
    rd = _Reader(buf, off)
    times = rd.f64(h.count)
    g = h.grid
    lift = VectorField.from_flat(rd.f64(g.n_dof), g)
    fields = tuple(VectorField.from_flat(rd.f64(g.n_dof), g) for _ in range(h.count))
    rd.finish()
    return SnapshotSet(fields, lift, times)


def encode_basis(b: PodBasis) -> bytes:
    parts = [_pack_header(KIND_BASIS, b.grid, b.n_stored), _f64_bytes(b.eigenvalues),
             _f64_bytes(b.grad_norms), _field_bytes(b.lift), _f64_bytes(b.modes)]
    return b"".join(parts)


def decode_basis(buf: bytes) -> PodBasis:
    h, off = read_header(buf)
    _expect(h, KIND_BASIS)
    rd = _Reader(buf, off)
    lam = rd.f64(h.count)
    gn = rd.f64(h.count)
    g = h.grid
    lift = VectorField.from_flat(rd.f64(g.n_dof), g)
    modes = rd.f64(h.count * g.n_dof).reshape(h.count, g.n_dof)
    rd.finish()
    return PodBasis(lift, modes, lam, gn)


def encode_trajectory(t: Trajectory, grid: Grid) -> bytes:
    count, r = t.coeffs.shape
    return b"".join([_pack_header(KIND_TRAJECTORY, grid, count), struct.pack("<I", r),
                     _f64_bytes(t.times), _f64_bytes(t.coeffs)])


def decode_trajectory(buf: bytes) -> tuple[np.ndarray, np.ndarray, Grid]:
    """Returns ``(times, coeffs, grid)``; diagnostics are not stored in the file."""
    h, off = read_header(buf)
    _expect(h, KIND_TRAJECTORY)
    rd = _Reader(buf, off)
    r = rd.u32()
    times = rd.f64(h.count)
    coeffs = rd.f64(h.count * r).reshape(h.count, r)
    rd.finish()
    return times, coeffs, h.grid


def write_bytes(path: str | Path, data: bytes) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(data)


def read_bytes(path: str | Path) -> bytes:
    return Path(path).read_bytes()


# ----------------------------------------------------------------------------
# results CSV


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    return format(float(x), ".17g")


def format_results(records: Iterable[StudyRecord]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in sorted(records, key=StudyRecord.sort_key):
        row = []
        for col in CSV_COLUMNS:
            val = getattr(rec, col)
            row.append(_fmt(val) if col in _FLOAT_COLUMNS else str(val))
        w.writerow(row)
    return out.getvalue()


def parse_results(text: str) -> list[StudyRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise FormatError("results CSV header does not match the expected columns")
    recs = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_COLUMNS):
            raise FormatError(f"line {n}: expected {len(CSV_COLUMNS)} fields")
        vals = dict(zip(CSV_COLUMNS, row))
        try:
            kw = {c: float(vals[c]) for c in _FLOAT_COLUMNS}
            recs.append(StudyRecord(r=int(vals["r"]), scheme=vals["scheme"], status=vals["status"], **kw))
        except ValueError as exc:
            raise FormatError(f"line {n}: {exc}") from exc
    return recs
