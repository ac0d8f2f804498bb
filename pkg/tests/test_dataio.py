import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pgap.dataio import (
    PointCloud,
    Pose,
    ScanRecord,
    Sequence,
    SequenceMeta,
    downsample,
    load_sequence,
    rotate_z,
    save_sequence,
    write_scan,
)
from pgap.errors import ConsistencyError, EmptyInputError, InputError, LoadError, ParseError
from pgap.synthgen import OrchardSpec, generate_to


def _tiny_sequence(n=3):
    rng = np.random.default_rng(0)
    recs = []
    for i in range(n):
        pts = rng.normal(size=(5 + i, 3)).astype(np.float32).astype(np.float64)
        recs.append(ScanRecord(PointCloud(pts, i), Pose(np.array([i, 0.0, 0.0]), np.eye(3)), segment=1 + i % 2))
    meta = SequenceMeta("tiny", n, {r.frame_index: r.segment for r in recs}, 2)
    return Sequence(recs, meta)


def test_load_three_frames(tmp_path):
    save_sequence(_tiny_sequence(), tmp_path / "seq")
    seq = load_sequence(tmp_path / "seq")
    assert len(seq) == 3
    assert seq.meta.frame_count == 3
    assert [r.frame_index for r in seq.records] == [0, 1, 2]


def test_pose_count_mismatch(tmp_path):
    d = save_sequence(_tiny_sequence(), tmp_path / "seq")
    lines = (d / "poses.txt").read_text().splitlines()
    (d / "poses.txt").write_text("\n".join(lines[:2]) + "\n")
    with pytest.raises(ConsistencyError, match="poses=2"):
        load_sequence(d)


def test_missing_file_is_named(tmp_path):
    d = save_sequence(_tiny_sequence(), tmp_path / "seq")
    (d / "segments.csv").unlink()
    with pytest.raises(LoadError, match="segments.csv"):
        load_sequence(d)


def test_malformed_pose_reports_offset(tmp_path):
    d = save_sequence(_tiny_sequence(), tmp_path / "seq")
    lines = (d / "poses.txt").read_text().splitlines(keepends=True)
    lines[1] = "1 2 3\n"
    (d / "poses.txt").write_text("".join(lines))
    with pytest.raises(ParseError) as err:
        load_sequence(d)
    assert err.value.offset == len(lines[0])


def test_truncated_scan_reports_offset(tmp_path):
    d = save_sequence(_tiny_sequence(), tmp_path / "seq")
    scan = d / "scans" / "000001.bin"
    scan.write_bytes(scan.read_bytes()[:-3])
    with pytest.raises(ParseError, match="byte"):
        load_sequence(d)


def test_scan_format_is_kitti_float32(tmp_path):
    pts = np.array([[1.5, -2.0, 0.25]])
    write_scan(tmp_path / "a.bin", pts, intensity=np.array([0.7]))
    raw = np.fromfile(tmp_path / "a.bin", dtype="<f4")
    np.testing.assert_array_equal(raw, np.array([1.5, -2.0, 0.25, 0.7], dtype="<f4"))


def test_synthetic_round_trip_is_bit_exact(tmp_path, small_spec):
    seq = generate_to(small_spec, tmp_path / "a")
    loaded = load_sequence(tmp_path / "a")
    save_sequence(loaded, tmp_path / "b")
    again = load_sequence(tmp_path / "b")
    for s, l, a in zip(seq.records, loaded.records, again.records):
        assert np.array_equal(s.cloud.points, l.cloud.points)
        assert np.array_equal(l.cloud.points, a.cloud.points)
        assert np.array_equal(s.pose.matrix(), l.pose.matrix())
        assert np.array_equal(l.pose.matrix(), a.pose.matrix())
        assert s.segment == l.segment == a.segment
        assert s.timestamp == l.timestamp == a.timestamp
    assert loaded.meta.segment_of == again.meta.segment_of


def test_pose_rejects_improper_rotation():
    with pytest.raises(InputError):
        Pose(np.zeros(3), np.diag([1.0, 1.0, -1.0]))


def test_point_cloud_rejects_nan():
    with pytest.raises(InputError):
        PointCloud(np.array([[0.0, np.nan, 1.0]]))


# ---------------------------------------------------------------- downsample


def test_downsample_to_10k_keeps_original_points():
    cloud = np.random.default_rng(0).normal(size=(20000, 3))
    out = downsample(cloud, 10000, seed=1)
    assert out.shape == (10000, 3)
    original = {tuple(p) for p in cloud}
    assert all(tuple(p) in original for p in out)
    assert len({tuple(p) for p in out}) == 10000


def test_downsample_same_size_is_permutation():
    cloud = np.arange(15, dtype=float).reshape(5, 3)
    out = downsample(cloud, 5, seed=0)
    assert sorted(map(tuple, out)) == sorted(map(tuple, cloud))


def test_downsample_pads_with_original_points():
    cloud = np.arange(9, dtype=float).reshape(3, 3)
    out = downsample(cloud, 6, seed=0)
    assert out.shape == (6, 3)
    assert {tuple(p) for p in out} == {tuple(p) for p in cloud}


def test_downsample_empty():
    with pytest.raises(EmptyInputError):
        downsample(np.zeros((0, 3)), 4, seed=0)


def test_downsample_reproducible():
    cloud = np.random.default_rng(3).normal(size=(100, 3))
    assert np.array_equal(downsample(cloud, 30, 9), downsample(cloud, 30, 9))


# ---------------------------------------------------------------- rotate_z


def test_rotate_zero_is_identity():
    pts = np.random.default_rng(0).normal(size=(10, 3))
    assert np.array_equal(rotate_z(pts, 0.0), pts)


def test_rotate_half_turn():
    np.testing.assert_allclose(rotate_z(np.array([[1.0, 0.0, 5.0]]), np.pi), [[-1.0, 0.0, 5.0]], atol=1e-12)


@given(
    arrays(np.float64, st.tuples(st.integers(1, 20), st.just(3)), elements=st.floats(-100, 100)),
    st.floats(-10, 10),
)
def test_rotate_preserves_norm_and_z(pts, angle):
    out = rotate_z(pts, angle)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), np.linalg.norm(pts, axis=1), rtol=0, atol=1e-12)
    assert np.array_equal(out[:, 2], pts[:, 2])


@given(
    arrays(np.float64, st.tuples(st.integers(1, 20), st.just(3)), elements=st.floats(-100, 100)),
    st.floats(-10, 10),
)
def test_rotate_inverse(pts, angle):
    np.testing.assert_allclose(rotate_z(rotate_z(pts, angle), -angle), pts, rtol=0, atol=1e-9)
