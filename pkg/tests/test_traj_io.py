import csv
import json
import os
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pose_dmp import quat
from pose_dmp.dmp import PoseTrajectory, sign_continuous
from pose_dmp.errors import (DomainError, NonUniformSampling, NonUnitQuaternion, NoSegments,
                             ParseError)
from pose_dmp.traj_io import (EXPORT_COLUMNS, benchmark_demos, concatenate, export_trajectory,
                              format_rows, load_demo, min_jerk_pose, segment_zero_velocity)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def simple_rows(n=20, dt=0.01):
    q = quat.qexp(np.outer(np.linspace(0, 0.4, n), [0, 0, 1]))
    return [[k * dt, 0.01 * k, 0, 0, *q[k]] for k in range(n)]


HEADER = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"]


def random_traj(rng, n=50):
    q = sign_continuous(quat.random_quaternions(rng, n))
    return PoseTrajectory(np.arange(n) * 0.01, rng.normal(size=(n, 3)), q,
                          v=rng.normal(size=(n, 3)), a=rng.normal(size=(n, 3)),
                          w=rng.normal(size=(n, 3)), wd=rng.normal(size=(n, 3)),
                          h=np.linspace(1, 0, n))


# -- round trips -------------------------------------------------------------

@pytest.mark.parametrize("suffix", [".csv", ".json"])
def test_export_round_trip(tmp_path, rng, suffix):
    traj = random_traj(rng)
    path = tmp_path / f"traj{suffix}"
    export_trajectory(traj, path)
    back = load_demo(path)
    np.testing.assert_array_equal(back.t, traj.t)
    np.testing.assert_array_equal(back.p, traj.p)
    np.testing.assert_array_equal(back.v, traj.v)
    np.testing.assert_array_equal(back.w, traj.w)
    np.testing.assert_array_equal(back.h, traj.h)
    # load renormalizes, which can move the last bit
    np.testing.assert_allclose(back.q, traj.q, rtol=0, atol=4e-16)


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1,
                max_size=30))
def test_formatter_is_exact(values):
    data = np.array(values).reshape(-1, 1)
    text = format_rows(data).decode()
    parsed = [float(x) for x in text.split()]
    assert parsed == [float(v) for v in values]


def test_export_header(tmp_path, rng):
    path = tmp_path / "t.csv"
    export_trajectory(random_traj(rng, 5), path)
    first = path.read_text().splitlines()[0]
    assert tuple(first.split(",")) == EXPORT_COLUMNS


def test_large_export_is_fast(tmp_path, rng):
    n = 100_000
    traj = PoseTrajectory(np.arange(n) * 1e-3, rng.normal(size=(n, 3)),
                          sign_continuous(quat.random_quaternions(rng, n)),
                          v=rng.normal(size=(n, 3)), a=rng.normal(size=(n, 3)),
                          w=rng.normal(size=(n, 3)), wd=rng.normal(size=(n, 3)),
                          h=np.zeros(n))
    start = time.perf_counter()
    export_trajectory(traj, tmp_path / "big.csv")
    elapsed = time.perf_counter() - start
    print(f"exported {n} samples in {elapsed:.3f} s")
    assert elapsed < 1.0
    assert sum(1 for _ in open(tmp_path / "big.csv")) == n + 1


def test_empty_export_refused(tmp_path):
    with pytest.raises(ValueError):
        export_trajectory(None, tmp_path / "x.csv")
    assert not os.path.exists(tmp_path / "x.csv")


def test_failed_export_leaves_nothing(tmp_path, rng, monkeypatch):
    import pose_dmp.traj_io as tio

    def boom(data):
        raise RuntimeError("disk full")

    monkeypatch.setattr(tio, "format_rows", boom)
    with pytest.raises(RuntimeError):
        export_trajectory(random_traj(rng, 5), tmp_path / "x.csv")
    assert os.listdir(tmp_path) == []


def test_failed_export_keeps_previous_file(tmp_path, rng, monkeypatch):
    import pose_dmp.traj_io as tio

    path = tmp_path / "x.csv"
    path.write_text("old")
    monkeypatch.setattr(tio, "format_rows", lambda data: 1 / 0)
    with pytest.raises(ZeroDivisionError):
        export_trajectory(random_traj(rng, 5), path)
    assert path.read_text() == "old"


# -- validation --------------------------------------------------------------

def test_minimal_demo_gets_derivatives(tmp_path):
    demo = load_demo(write_csv(tmp_path / "d.csv", HEADER, simple_rows()))
    np.testing.assert_allclose(demo.v[5], [1.0, 0, 0], atol=1e-9)
    np.testing.assert_allclose(demo.w[5, 2], 0.4 / 19 / 0.01 * 2, rtol=1e-3)


def test_parse_error_location(tmp_path):
    rows = simple_rows()
    rows[3][2] = "abc"
    with pytest.raises(ParseError) as info:
        load_demo(write_csv(tmp_path / "d.csv", HEADER, rows))
    assert (info.value.line, info.value.column) == (5, 3)
    assert "line 5" in str(info.value)


def test_parse_errors(tmp_path):
    with pytest.raises(ParseError):
        load_demo(write_csv(tmp_path / "a.csv", HEADER[:-1], [r[:-1] for r in simple_rows()]))
    with pytest.raises(ParseError):
        load_demo(write_csv(tmp_path / "b.csv", HEADER + ["zz"], [r + [0] for r in simple_rows()]))
    (tmp_path / "c.json").write_text("{\"t\": [0, 1],")
    with pytest.raises(ParseError):
        load_demo(tmp_path / "c.json")
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(ParseError):
        load_demo(tmp_path / "e.csv")


def test_json_demo(tmp_path):
    rows = np.array(simple_rows())
    (tmp_path / "d.json").write_text(json.dumps({h: rows[:, j].tolist()
                                                 for j, h in enumerate(HEADER)}))
    demo = load_demo(tmp_path / "d.json")
    np.testing.assert_array_equal(demo.p, rows[:, 1:4])


def test_non_unit_quaternion_row(tmp_path):
    rows = simple_rows()
    rows[7][4] *= 1.01
    with pytest.raises(NonUnitQuaternion) as info:
        load_demo(write_csv(tmp_path / "d.csv", HEADER, rows))
    assert info.value.row == 7


def test_small_norm_drift_is_normalized(tmp_path):
    rows = simple_rows()
    rows[7][4:] = [x * 1.0005 for x in rows[7][4:]]
    demo = load_demo(write_csv(tmp_path / "d.csv", HEADER, rows))
    np.testing.assert_allclose(np.linalg.norm(demo.q, axis=1), 1.0)


def test_non_uniform_sampling(tmp_path):
    rows = simple_rows()
    rows[10][0] += 1e-4
    with pytest.raises(NonUniformSampling):
        load_demo(write_csv(tmp_path / "d.csv", HEADER, rows))
    rows = simple_rows()
    rows[10][0] += 1e-7
    load_demo(write_csv(tmp_path / "ok.csv", HEADER, rows))


def test_sign_flips_removed(tmp_path):
    rows = simple_rows()
    for r in rows[5:]:
        r[4:] = [-x for x in r[4:]]
    demo = load_demo(write_csv(tmp_path / "d.csv", HEADER, rows))
    assert np.all(np.sum(demo.q[1:] * demo.q[:-1], axis=1) > 0)


# -- segmentation ------------------------------------------------------------

def bursts(k, rest=50, T=1.0, dt=0.01):
    pts = [np.zeros(3)] + [np.array([0.1 * (i + 1), 0, 0]) for i in range(k)]
    parts = []
    for a, b in zip(pts[:-1], pts[1:]):
        parts.append(min_jerk_pose(a, quat.IDENTITY, b, quat.IDENTITY, T, dt))
        still = PoseTrajectory(np.arange(rest + 1) * dt, np.tile(b, (rest + 1, 1)),
                               np.tile(quat.IDENTITY, (rest + 1, 1)))
        parts.append(still)
    return concatenate(parts)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_segments_per_burst(k):
    demo = bursts(k)
    segs = segment_zero_velocity(demo)
    assert len(segs) == k
    assert segs[0].start_index == 0 and segs[-1].end_index == len(demo) - 1
    for a, b in zip(segs[:-1], segs[1:]):
        assert b.start_index == a.end_index + 1
    for i, s in enumerate(segs[:-1]):
        np.testing.assert_allclose(s.goal_p, [0.1 * (i + 1), 0, 0], atol=1e-4)


def test_threshold_above_peak_speed():
    demo = bursts(2)
    peak = np.linalg.norm(demo.with_derivatives().v, axis=1).max()
    with pytest.raises(NoSegments):
        segment_zero_velocity(demo, v_thresh=peak * 1.01)


def test_pure_rotation_needs_angular_threshold():
    d1, d2 = benchmark_demos()
    demo = concatenate([d1, d2])
    with pytest.raises(NoSegments):
        segment_zero_velocity(demo)
    segs = segment_zero_velocity(demo, w_thresh=0.005)
    assert len(segs) == 2
    assert abs(segs[0].end_index - 500) <= 20


# -- minimum jerk ------------------------------------------------------------

def test_min_jerk_boundaries(rng):
    p0, p1 = rng.normal(size=3), rng.normal(size=3)
    q0, q1 = quat.random_quaternions(rng, 2)
    tr = min_jerk_pose(p0, q0, p1, q1, 2.0, 0.01)
    assert len(tr) == 201
    np.testing.assert_allclose(tr.p[[0, -1]], [p0, p1], atol=1e-14)
    np.testing.assert_array_equal(tr.q[0], quat.normalize(q0))
    assert quat.qdist(tr.q[-1], q1) < 1e-12
    for arr in (tr.v, tr.a, tr.w, tr.wd):
        np.testing.assert_allclose(arr[[0, -1]], 0.0, atol=1e-12)


def test_min_jerk_angular_velocity_matches_quaternions(rng):
    q0, q1 = quat.random_quaternions(rng, 2)
    tr = min_jerk_pose(None, q0, None, q1, 1.0, 1e-3)
    # central difference of the orientation path
    fd = 2 * quat.qlog(quat.qmul(tr.q[2:], quat.conj(tr.q[:-2]))) / 2e-3
    np.testing.assert_allclose(fd, tr.w[1:-1], atol=1e-4)


def test_min_jerk_half_turn():
    with pytest.raises(DomainError):
        min_jerk_pose(None, quat.IDENTITY, None, [0, 1, 0, 0], 1.0)


def test_min_jerk_rejects_bad_timing():
    with pytest.raises(ValueError):
        min_jerk_pose(None, quat.IDENTITY, None, quat.IDENTITY, 0.0)


def test_concatenate_joins_without_duplicates():
    d1, d2 = benchmark_demos()
    demo = concatenate([d1, d2])
    assert len(demo) == len(d1) + len(d2) - 1
    np.testing.assert_allclose(np.diff(demo.t), 0.01)
    with pytest.raises(ValueError):
        concatenate([d1, d1])
