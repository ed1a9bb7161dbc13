"""Demonstration files, segmentation, synthetic demos and trajectory export.

CSV files have a mandatory header. The required columns are
``t,px,py,pz,qw,qx,qy,qz``; ``vx,vy,vz,wx,wy,wz`` and the exported extras
``ax,ay,az,wdx,wdy,wdz,h`` are optional. JSON files hold one array per column
under the same names.
"""
from dataclasses import dataclass
import io
import json
import os
import tempfile

import numpy as np

from . import quat
from .dmp import PoseTrajectory, sign_continuous
from .errors import (DomainError, NoSegments, NonUniformSampling,
                     NonUnitQuaternion, ParseError)

REQUIRED = ("t", "px", "py", "pz", "qw", "qx", "qy", "qz")
GROUPS = {
    "p": ("px", "py", "pz"),
    "q": ("qw", "qx", "qy", "qz"),
    "v": ("vx", "vy", "vz"),
    "w": ("wx", "wy", "wz"),
    "a": ("ax", "ay", "az"),
    "wd": ("wdx", "wdy", "wdz"),
}
EXPORT_COLUMNS = (("t",) + GROUPS["p"] + GROUPS["v"] + GROUPS["a"] + GROUPS["q"]
                  + GROUPS["w"] + GROUPS["wd"] + ("h",))
KNOWN = set(EXPORT_COLUMNS)
SAMPLING_TOL = 1e-6
# accepted deviation of |q| from 1 before normalizing
UNIT_TOL = 1e-3
SPEED_THRESHOLD = 0.005
# endpoints of the two-rotation merge benchmark
BENCHMARK_START = np.array([0.247, 0.178, 0.318, -0.897])
BENCHMARK_VIA = np.array([0.372, -0.499, -0.616, 0.482])


def _read_csv(path):
    with open(path, newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError(f"{path}: missing header row", line=1)
    header = [c.strip() for c in lines[0].split(",")]
    for j, name in enumerate(header):
        if name not in KNOWN:
            raise ParseError(f"{path}: unknown column {name!r}", line=1, column=j + 1)
    if len(set(header)) != len(header):
        raise ParseError(f"{path}: duplicate column in header", line=1)
    try:
        data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
    except ValueError:
        data = None
    if data is None or data.shape[1] != len(header):
        data = _slow_parse(path, lines, len(header))
    return header, data


def _slow_parse(path, lines, width):
    """Cell-by-cell parse that reports where the file is malformed."""
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != width:
            raise ParseError(f"{path}: expected {width} fields, got {len(cells)}", line=i)
        row = []
        for j, cell in enumerate(cells, start=1):
            try:
                row.append(float(cell))
            except ValueError:
                raise ParseError(f"{path}: not a number: {cell.strip()!r}",
                                 line=i, column=j) from None
        rows.append(row)
    return np.array(rows, dtype=float).reshape(len(rows), width)


def _read_json(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", line=exc.lineno, column=exc.colno) from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected an object of columns")
    header = list(doc)
    for name in header:
        if name not in KNOWN:
            raise ParseError(f"{path}: unknown column {name!r}")
    try:
        cols = [np.asarray(doc[name], dtype=float) for name in header]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: non-numeric column ({exc})") from None
    if len({c.shape for c in cols}) > 1 or any(c.ndim != 1 for c in cols):
        raise ParseError(f"{path}: columns must be flat arrays of equal length")
    return header, np.stack(cols, axis=1) if cols else np.zeros((0, 0))


def load_demo(path):
    """Read and validate a demonstration.

    Quaternions are normalized and made sign-continuous. Velocities and
    accelerations missing from the file are obtained by finite differences.

    Parameters
    ----------
    path : str or path-like
        ``.json`` files are read as JSON, anything else as CSV.

    Returns
    -------
    PoseTrajectory

    Raises
    ------
    ParseError
        Malformed file; carries the 1-based line and column where known.
    NonUniformSampling
        Time steps differ from the first one by more than 1e-6 s.
    NonUnitQuaternion
        ``| |q| - 1 |`` exceeds 1e-3; ``row`` is the 0-based sample index.
    """
    path = os.fspath(path)
    if path.endswith(".json"):
        header, data = _read_json(path)
    else:
        header, data = _read_csv(path)
    missing = [c for c in REQUIRED if c not in header]
    if missing:
        raise ParseError(f"{path}: missing column(s) {', '.join(missing)}", line=1)
    col = {name: data[:, j] for j, name in enumerate(header)}
    if data.shape[0] < 2:
        raise ParseError(f"{path}: need at least two samples")
    finite = np.isfinite(data)
    if "h" in col:
        # h is NaN for samples not produced by a primitive
        finite[:, header.index("h")] |= np.isnan(col["h"])
    if not np.all(finite):
        i, j = np.argwhere(~finite)[0]
        raise ParseError(f"{path}: non-finite value", line=int(i) + 2, column=int(j) + 1)
    t = col["t"]
    steps = np.diff(t)
    if steps[0] <= 0:
        raise NonUniformSampling(f"{path}: time must increase")
    off = np.abs(steps - steps[0]) > SAMPLING_TOL
    if np.any(off):
        k = int(np.argmax(off))
        raise NonUniformSampling(f"{path}: step {steps[k]:.9g} s after sample {k} "
                                 f"differs from dt = {steps[0]:.9g} s")
    q = np.stack([col[c] for c in GROUPS["q"]], axis=1)
    norms = np.linalg.norm(q, axis=1)
    bad = np.abs(norms - 1.0) > UNIT_TOL
    if np.any(bad):
        row = int(np.argmax(bad))
        raise NonUnitQuaternion(f"{path}: |q| = {norms[row]:.6g} at row {row}", row=row)
    q = sign_continuous(q / norms[:, None])

    def group(key):
        names = GROUPS[key]
        if all(n in col for n in names):
            return np.stack([col[n] for n in names], axis=1)
        return None

    traj = PoseTrajectory(t, group("p"), q, v=group("v"), a=group("a"), w=group("w"),
                          wd=group("wd"), h=col.get("h"))
    if len(traj) >= 3:
        traj = traj.with_derivatives()
    return traj


@dataclass(frozen=True)
class Segment:
    """Samples ``start_index..end_index`` (inclusive) of a demonstration."""
    start_index: int
    end_index: int
    goal_p: np.ndarray
    goal_q: np.ndarray

    def slice(self, demo):
        return demo.segment(self.start_index, self.end_index + 1)


def segment_zero_velocity(demo, v_thresh=SPEED_THRESHOLD, w_thresh=None):
    """Split a demonstration at rests between motion bursts.

    A burst is a maximal run of samples whose linear speed exceeds
    ``v_thresh`` (or whose angular speed exceeds ``w_thresh`` when given).
    Each burst but the last ends a segment at the first resting sample after
    it; the next segment starts right after. The segments therefore cover
    the whole demonstration without overlap.

    Raises
    ------
    NoSegments
        If no sample moves faster than the threshold.
    """
    demo = demo.with_derivatives()
    moving = np.linalg.norm(demo.v, axis=1) > v_thresh
    if w_thresh is not None:
        moving |= np.linalg.norm(demo.w, axis=1) > w_thresh
    if not np.any(moving):
        raise NoSegments(f"speed never exceeds {v_thresh} m/s")
    edges = np.diff(moving.astype(int))
    ends = np.flatnonzero(edges == -1) + 1
    starts = np.flatnonzero(edges == 1) + 1
    if moving[0]:
        starts = np.insert(starts, 0, 0)
    # cut after every burst that is followed by another one
    cuts = [int(e) for e in ends if np.any(starts > e)]
    bounds = [0] + [c + 1 for c in cuts] + [len(demo)]
    out = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        end = b - 1
        out.append(Segment(a, end, demo.p[end].copy(), demo.q[end].copy()))
    return out


def _min_jerk_profile(T, dt):
    n = int(round(T / dt)) + 1
    t = np.arange(n) * dt
    x = np.clip(t / T, 0.0, 1.0)
    s = 10 * x ** 3 - 15 * x ** 4 + 6 * x ** 5
    sd = (30 * x ** 2 - 60 * x ** 3 + 30 * x ** 4) / T
    sdd = (60 * x - 180 * x ** 2 + 120 * x ** 3) / T ** 2
    return t, s, sd, sdd


def min_jerk_pose(p0, q0, p1, q1, T, dt=0.01):
    """Minimum-jerk pose trajectory.

    Position follows the quintic ``s = 10x^3 - 15x^4 + 6x^5`` (``x = t/T``)
    and orientation follows the short-arc SLERP from ``q0`` to ``q1`` with
    parameter ``s(t)``. Angular velocity and acceleration are analytic.
    The path starts exactly at ``q0`` and ends at ``q1`` or ``-q1``,
    whichever lies in the hemisphere of ``q0``.

    Parameters
    ----------
    p0, p1 : array_like or None
        Positions; ``None`` means a pure rotation at the origin.
    q0, q1 : array_like
    T, dt : float

    Raises
    ------
    DomainError
        If the endpoints are a half-turn apart, where the shortest rotation
        is not unique.
    """
    if not T > 0 or not dt > 0:
        raise ValueError("T and dt must be positive")
    t, s, sd, sdd = _min_jerk_profile(T, dt)
    p0 = np.zeros(3) if p0 is None else np.asarray(p0, dtype=float)
    p1 = np.zeros(3) if p1 is None else np.asarray(p1, dtype=float)
    q0 = quat.normalize(q0)
    q1 = quat.normalize(q1)
    if abs(float(np.dot(q0, q1))) < 1e-9:
        raise DomainError("orientation endpoints are a half-turn apart")
    q1 = quat.align(q0, q1)
    r = quat.qlog(quat.qmul(q1, quat.conj(q0)))
    q = quat.qmul(quat.qexp(s[:, None] * r), q0)
    q[-1] = q1
    dp = p1 - p0
    return PoseTrajectory(
        t, p0 + s[:, None] * dp, q,
        v=sd[:, None] * dp, a=sdd[:, None] * dp,
        w=2.0 * sd[:, None] * r, wd=2.0 * sdd[:, None] * r,
    )


def benchmark_demos(T=5.0, dt=0.01):
    """The two minimum-jerk rotations of the merge benchmark.

    The first goes from ``BENCHMARK_START`` to ``BENCHMARK_VIA``, the second
    returns from where the first ended. Position stays at the origin.
    """
    d1 = min_jerk_pose(None, BENCHMARK_START, None, BENCHMARK_VIA, T, dt)
    d2 = min_jerk_pose(None, d1.q[-1], None, BENCHMARK_START, T, dt)
    return d1, d2


def concatenate(demos):
    """Join demonstrations end to end, dropping each duplicated junction sample.

    Every demo after the first must start where the previous one ended.
    """
    out = [demos[0].with_derivatives()]
    for d in demos[1:]:
        d = d.with_derivatives()
        prev = out[-1]
        if not np.allclose(prev.p[-1], d.p[0]) or quat.qdist(prev.q[-1], d.q[0]) > 1e-9:
            raise ValueError("demonstrations do not connect")
        if not np.isclose(d.dt, prev.dt):
            raise NonUniformSampling("demonstrations use different sample times")
        t0 = prev.t[-1] - d.t[0]
        out.append(PoseTrajectory(d.t[1:] + t0, d.p[1:], quat.align(prev.q[-1], d.q[1:]),
                                  d.v[1:], d.a[1:], d.w[1:], d.wd[1:]))
    return PoseTrajectory(
        np.concatenate([d.t for d in out]), np.concatenate([d.p for d in out]),
        np.concatenate([d.q for d in out]), np.concatenate([d.v for d in out]),
        np.concatenate([d.a for d in out]), np.concatenate([d.w for d in out]),
        np.concatenate([d.wd for d in out]))


# 10**k for every exponent a finite double can need, in extended precision
_POW_LO = -300
_POW10 = np.power(np.longdouble(10), np.arange(_POW_LO, 346).astype(np.longdouble))
_FIELD = 24


def _scaled_mantissa(a, e):
    return np.rint(a * _POW10[16 - e - _POW_LO]).astype(np.int64)


def format_rows(data):
    """Encode a 2-D float array as CSV rows with 17 significant digits.

    Every field is ``+d.dddddddddddddddde+ddd`` (non-finite values are
    right-aligned ``nan``/``inf``). The digits are produced with vectorized
    integer arithmetic because per-value string formatting is too slow for
    long trajectories; the mantissa is rounded in extended precision, so
    reading the text back returns the original doubles.
    """
    x = np.asarray(data, dtype=float)
    n, m = x.shape
    flat = x.ravel()
    bad = ~np.isfinite(flat)
    a = np.abs(np.where(bad, 0.0, flat))
    nz = a > 0
    e = np.zeros(flat.shape, dtype=np.int64)
    e[nz] = np.floor(np.log10(a[nz])).astype(np.int64)
    a = a.astype(np.longdouble)
    mant = _scaled_mantissa(a, e)
    # log10 can be off by one next to powers of ten
    for fix, step in ((mant >= 10 ** 17, 1), (nz & (mant < 10 ** 16), -1)):
        e[fix] += step
        mant[fix] = _scaled_mantissa(a[fix], e[fix])
    buf = np.empty((flat.size, _FIELD + 1), dtype=np.uint8)
    buf[:, 0] = np.where(np.signbit(flat), ord("-"), ord("+"))
    for k in range(18, 2, -1):
        mant, r = np.divmod(mant, 10)
        buf[:, k] = r + 48
    buf[:, 1] = mant + 48
    buf[:, 2] = ord(".")
    buf[:, 19] = ord("e")
    buf[:, 20] = np.where(e < 0, ord("-"), ord("+"))
    ae = np.abs(e)
    buf[:, 21] = ae // 100 + 48
    buf[:, 22] = ae // 10 % 10 + 48
    buf[:, 23] = ae % 10 + 48
    buf[:, _FIELD] = ord(",")
    for value, txt in ((np.nan, b"nan"), (np.inf, b"inf"), (-np.inf, b"-inf")):
        sel = np.isnan(flat) if np.isnan(value) else flat == value
        if np.any(sel):
            field = np.frombuffer(txt.rjust(_FIELD), dtype=np.uint8)
            buf[sel, :_FIELD] = field
    rows = buf.reshape(n, m * (_FIELD + 1))
    rows[:, -1] = ord("\n")
    return rows.tobytes()


def _columns(traj):
    traj = traj.with_derivatives()
    return np.column_stack([traj.t, traj.p, traj.v, traj.a, traj.q, traj.w, traj.wd, traj.h])


def atomic_write(path, data):
    """Write ``bytes`` to ``path`` through a temporary file and a rename."""
    _atomic_write(path, lambda fh: fh.write(data))


def _atomic_write(path, write):
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def export_trajectory(traj, path, format=None):
    """Write a trajectory as CSV or JSON.

    Columns are ``t``, position, velocity, acceleration, quaternion, angular
    velocity, angular acceleration and ``h``. Numbers carry 17 significant
    digits, so reading the file back reproduces every sample. The file is
    written to a temporary name and renamed, so a failure never leaves a
    partial file behind.

    Parameters
    ----------
    format : {"csv", "json"}, optional
        Inferred from the suffix when omitted (``.json`` or CSV).

    Raises
    ------
    ValueError
        For an empty trajectory or an unknown format.
    """
    if traj is None or len(traj) == 0:
        raise ValueError("refusing to export an empty trajectory")
    if format is None:
        format = "json" if os.fspath(path).endswith(".json") else "csv"
    if format not in ("csv", "json"):
        raise ValueError(f"unknown format {format!r}")
    data = _columns(traj)
    if format == "csv":
        def write(fh):
            fh.write((",".join(EXPORT_COLUMNS) + "\n").encode())
            fh.write(format_rows(data))
    else:
        def write(fh):
            doc = {name: data[:, j].tolist() for j, name in enumerate(EXPORT_COLUMNS)}
            fh.write((json.dumps(doc) + "\n").encode())
    _atomic_write(path, write)
