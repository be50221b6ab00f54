import numpy as np
import pytest
from hypothesis import given, strategies as st

from cdstrack.data import (Detection, FormatError, dumps_dense, dumps_sparse, iou, load_features,
                           loads_dense, loads_sparse, read_detections, read_features_bin,
                           read_features_csv, read_trajectories, trajectory_rows_to_csv,
                           write_detections, write_features_bin, write_features_csv,
                           write_trajectories)


def test_detection_validation():
    with pytest.raises(ValueError):
        Detection(0, 0, 0, 0, 0, 5)
    with pytest.raises(ValueError):
        Detection(0, -1, 0, 0, 5, 5)
    assert Detection(0, 0, 10, 20, 4, 6).center.tolist() == [12.0, 23.0]


def test_iou_values():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iou((0, 0, 10, 10), (10, 0, 10, 10)) == 0.0
    assert iou((0, 0, 10, 10), (5, 0, 10, 10)) == pytest.approx(1 / 3)


def test_detections_roundtrip(tmp_path):
    X = np.arange(6, dtype=float).reshape(3, 2)
    dets = [Detection(0, 1, 1.5, 2.0, 10.0, 20.0, None, 0, 4),
            Detection(1, 7, 3.0, 4.25, 10.0, 20.0, None, 2, None)]
    p = tmp_path / "d.csv"
    write_detections(p, dets)
    back = read_detections(p, X)
    assert [(d.camera, d.frame, d.x, d.y, d.feature_id, d.gt) for d in back] == \
        [(0, 1, 1.5, 2.0, 0, 4), (1, 7, 3.0, 4.25, 2, None)]
    assert back[1].feature.tolist() == [4.0, 5.0]
    write_detections(p, dets, with_gt=False)
    assert p.read_text().splitlines()[0] == "camera,frame,x,y,w,h,feature_id"
    assert all(d.gt is None for d in read_detections(p))


def test_detection_errors_carry_line_number(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("camera,frame,x,y,w,h,feature_id\n0,1,1,1,5,5,0\n0,2,1,1,5\n")
    with pytest.raises(FormatError, match=r"bad.csv:3"):
        read_detections(p)
    p.write_text("0,1,1,1,5,5,zero\n")
    with pytest.raises(FormatError, match=r":1:"):
        read_detections(p)
    p.write_text("0,1,1,1,5,5,9\n")
    with pytest.raises(FormatError, match=r":1:"):
        read_detections(p, np.zeros((2, 2)))


def test_trajectories_roundtrip(tmp_path):
    rows = [(1, 0, 5, 1.5, 2.0, 10.0, 20.0), (0, 1, 3, 7.0, 8.0, 10.0, 20.0)]
    p = tmp_path / "t.csv"
    write_trajectories(p, rows)
    assert read_trajectories(p) == sorted(rows)
    assert trajectory_rows_to_csv(rows).splitlines()[1] == "0,1,3,7,8,10,20"
    p.write_text("trajectory_id,camera,frame,x,y,w,h\n0,1,2\n")
    with pytest.raises(FormatError, match=":2:"):
        read_trajectories(p)


def test_features_bin_roundtrip(tmp_path):
    X = np.random.default_rng(0).normal(size=(4, 3)).astype("<f4")
    p = tmp_path / "f.bin"
    write_features_bin(p, X)
    assert np.array_equal(read_features_bin(p), X.astype(float))
    assert np.array_equal(load_features(p), X.astype(float))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_features_bin(p)


def test_features_csv_roundtrip(tmp_path):
    X = np.array([[0.1, 0.2], [0.3, 0.4]])
    p = tmp_path / "f.csv"
    write_features_csv(p, [5, 9], X)
    ids, Y = read_features_csv(p)
    assert ids == [5, 9] and np.array_equal(X, Y)
    assert load_features(p)[9].tolist() == [0.3, 0.4]
    p.write_text("0,1.0,2.0\n1,1.0\n")
    with pytest.raises(FormatError, match=":2:"):
        read_features_csv(p)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 8))
def test_matrix_text_roundtrips(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.random((n, n)) * (rng.random((n, n)) < 0.5)
    A = A + A.T
    np.fill_diagonal(A, 0)
    assert np.array_equal(loads_dense(dumps_dense(A)), A)
    assert np.array_equal(loads_sparse(dumps_sparse(A), n), A)


def test_matrix_text_errors():
    with pytest.raises(FormatError):
        loads_dense("0 1\n1\n")
    with pytest.raises(FormatError, match="line 2"):
        loads_sparse("0 1 0.5\n1 2\n")
