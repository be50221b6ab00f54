"""Records and the on-disk formats shared by the pipeline, evaluation and CLI."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """Malformed input file; the message carries the line number."""


@dataclass
class Detection:
    camera: int
    frame: int
    x: float
    y: float
    w: float
    h: float
    feature: np.ndarray = None
    feature_id: int = -1
    gt: int | None = None

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"detection box must have positive size, got w={self.w} h={self.h}")
        if self.frame < 0:
            raise ValueError(f"negative frame index {self.frame}")

    @property
    def box(self):
        return (self.x, self.y, self.w, self.h)

    @property
    def center(self):
        return np.array([self.x + self.w / 2.0, self.y + self.h / 2.0])


def iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


# ---------------------------------------------------------------- detections

DET_HEADER = ["camera", "frame", "x", "y", "w", "h", "feature_id", "gt_id"]


def write_detections(path, detections, with_gt=True):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(DET_HEADER if with_gt else DET_HEADER[:-1])
        for d in detections:
            row = [d.camera, d.frame, _fmt(d.x), _fmt(d.y), _fmt(d.w), _fmt(d.h), d.feature_id]
            if with_gt:
                row.append("" if d.gt is None else d.gt)
            wr.writerow(row)


def read_detections(path, features=None):
    """Parse ``camera,frame,x,y,w,h,feature_id[,gt_id]``; attach feature rows."""
    out = []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    for lineno, row in enumerate(rows, 1):
        if not row or (lineno == 1 and row[0].strip() == "camera"):
            continue
        if len(row) not in (7, 8):
            raise FormatError(f"{path}:{lineno}: expected 7 or 8 fields, got {len(row)}")
        try:
            cam, frame = int(row[0]), int(row[1])
            x, y, w, h = (float(v) for v in row[2:6])
            fid = int(row[6])
            gt = int(row[7]) if len(row) == 8 and row[7].strip() != "" else None
            feat = None
            if features is not None:
                feat = features[fid]
            out.append(Detection(cam, frame, x, y, w, h, feat, fid, gt))
        except (ValueError, IndexError, KeyError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return out


# ---------------------------------------------------------------- trajectories

TRAJ_HEADER = ["trajectory_id", "camera", "frame", "x", "y", "w", "h"]


def _fmt(v):
    return format(float(v), ".6g") if not float(v).is_integer() else str(int(v))


def trajectory_rows_to_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(TRAJ_HEADER)
    for tid, cam, frame, x, y, w, h in sorted(rows, key=lambda r: (r[0], r[1], r[2], r[3], r[4])):
        wr.writerow([tid, cam, frame, _fmt(x), _fmt(y), _fmt(w), _fmt(h)])
    return buf.getvalue()


def write_trajectories(path, rows):
    Path(path).write_text(trajectory_rows_to_csv(rows))


def read_trajectories(path):
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or (lineno == 1 and row[0].strip() == "trajectory_id"):
                continue
            if len(row) != 7:
                raise FormatError(f"{path}:{lineno}: expected 7 fields, got {len(row)}")
            try:
                rows.append((int(row[0]), int(row[1]), int(row[2]),
                             float(row[3]), float(row[4]), float(row[5]), float(row[6])))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return rows


# ---------------------------------------------------------------- features

def write_features_bin(path, X):
    """Raw little-endian float32 rows plus a JSON sidecar ``<path>.hdr``."""
    X = np.ascontiguousarray(X, dtype="<f4")
    Path(path).write_bytes(X.tobytes())
    hdr = {"count": int(X.shape[0]), "dim": int(X.shape[1]) if X.ndim == 2 else 0, "dtype": "<f4"}
    Path(str(path) + ".hdr").write_text(json.dumps(hdr, sort_keys=True) + "\n")


def read_features_bin(path):
    hdr = json.loads(Path(str(path) + ".hdr").read_text())
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    count, dim = int(hdr["count"]), int(hdr["dim"])
    if raw.size != count * dim:
        raise FormatError(f"{path}: header says {count}x{dim} values, file holds {raw.size}")
    return raw.reshape(count, dim).astype(float)


def write_features_csv(path, ids, X):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        for i, row in zip(ids, np.asarray(X)):
            wr.writerow([i] + [repr(float(v)) for v in row])


def read_features_csv(path):
    """Return ``(ids, X)`` from ``node_id,v0,v1,...`` lines."""
    ids, rows, dim = [], [], None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            try:
                vals = [float(v) for v in row[1:]]
                ident = int(row[0])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if dim is None:
                dim = len(vals)
            elif len(vals) != dim:
                raise FormatError(f"{path}:{lineno}: expected {dim} values, got {len(vals)}")
            ids.append(ident)
            rows.append(vals)
    return ids, np.array(rows, dtype=float)


def load_features(path):
    """Feature lookup ``id -> vector`` from either supported format."""
    path = Path(path)
    if path.suffix == ".csv":
        ids, X = read_features_csv(path)
        return {i: x for i, x in zip(ids, X)}
    return read_features_bin(path)


# ---------------------------------------------------------------- matrices

def dumps_dense(A) -> str:
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in np.asarray(A))


def loads_dense(text) -> np.ndarray:
    rows = [[float(v) for v in line.split()] for line in text.splitlines() if line.strip()]
    if any(len(r) != len(rows) for r in rows):
        raise FormatError("dense matrix must be square")
    return np.array(rows, dtype=float).reshape(len(rows), len(rows))


def dumps_sparse(A) -> str:
    A = np.asarray(A)
    out = [f"{i} {j} {float(A[i, j])!r}\n" for i, j in zip(*np.nonzero(A))]
    return "".join(out)


def loads_sparse(text, n=None, symmetric=True) -> np.ndarray:
    triples = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"line {lineno}: expected 'i j w'")
        triples.append((int(parts[0]), int(parts[1]), float(parts[2])))
    if n is None:
        n = 1 + max((max(i, j) for i, j, _ in triples), default=-1)
    A = np.zeros((n, n))
    for i, j, w in triples:
        A[i, j] = w
        if symmetric:
            A[j, i] = w
    return A
