"""Node affinities: appearance kernel, constant-velocity motion, and the
gated cross-camera block matrix."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform


class UnknownZoneError(KeyError):
    pass


@dataclass
class NodeDescriptor:
    camera: int
    first: int
    last: int
    entry_zone: int
    exit_zone: int
    entry_pos: np.ndarray
    exit_pos: np.ndarray
    velocity: np.ndarray
    feature: np.ndarray
    node_id: object = None

    def __post_init__(self):
        if self.first > self.last:
            raise ValueError(f"node {self.node_id}: first frame {self.first} after last {self.last}")
        self.entry_pos = np.asarray(self.entry_pos, dtype=float)
        self.exit_pos = np.asarray(self.exit_pos, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.feature = np.asarray(self.feature, dtype=float)


@dataclass
class TransitionModel:
    """Allowed camera-to-camera moves with travel-time windows in frames.

    ``zones`` optionally maps a camera to its zone rectangles
    ``{zone_id: (x0, y0, x1, y1)}``; a camera without declared zones accepts
    any zone id.
    """

    cameras: list
    transitions: list = field(default_factory=list)
    zones: dict = field(default_factory=dict)

    def __post_init__(self):
        cams = set(self.cameras)
        norm = []
        for t in self.transitions:
            if isinstance(t, dict):
                t = (t["from_cam"], t["from_zone"], t["to_cam"], t["to_zone"],
                     t["min_frames"], t["max_frames"])
            a, za, b, zb, lo, hi = t
            if a not in cams or b not in cams:
                raise ValueError(f"transition {t} references an undeclared camera")
            if lo > hi:
                raise ValueError(f"transition {t}: min travel frames exceed max")
            norm.append((a, za, b, zb, int(lo), int(hi)))
        self.transitions = norm
        self._windows = {}
        for a, za, b, zb, lo, hi in norm:
            self._windows.setdefault((a, za, b, zb), []).append((lo, hi))

    def window(self, cam_a, zone_a, cam_b, zone_b):
        return self._windows.get((cam_a, zone_a, cam_b, zone_b), [])

    def check_zone(self, camera, zone, who=None):
        if camera not in self.cameras:
            raise UnknownZoneError(f"track {who}: camera {camera} not in the transition model")
        declared = self.zones.get(camera)
        if declared is not None and zone not in declared:
            raise UnknownZoneError(f"track {who}: zone {zone} unknown for camera {camera}")

    def zone_of(self, camera, point):
        """Zone whose rectangle contains ``point`` (nearest one otherwise)."""
        rects = self.zones.get(camera)
        if not rects:
            return 0
        px, py = point
        best, best_d = None, np.inf
        for zid, (x0, y0, x1, y1) in sorted(rects.items()):
            dx = max(x0 - px, 0.0, px - x1)
            dy = max(y0 - py, 0.0, py - y1)
            d = np.hypot(dx, dy)
            if d < best_d:
                best, best_d = zid, d
        return best

    @classmethod
    def from_json(cls, text_or_dict):
        doc = json.loads(text_or_dict) if isinstance(text_or_dict, str) else text_or_dict
        cameras, zones = [], {}
        for c in doc["cameras"]:
            if isinstance(c, dict):
                cameras.append(c["id"])
                if "zones" in c:
                    zones[c["id"]] = {int(z["id"]): tuple(z["rect"]) for z in c["zones"]}
            else:
                cameras.append(c)
        return cls(cameras, doc.get("transitions", []), zones)

    def to_json(self) -> str:
        cams = []
        for c in self.cameras:
            if c in self.zones:
                cams.append({"id": c, "zones": [{"id": z, "rect": list(r)}
                                                 for z, r in sorted(self.zones[c].items())]})
            else:
                cams.append(c)
        trans = [dict(from_cam=a, from_zone=za, to_cam=b, to_zone=zb, min_frames=lo, max_frames=hi)
                 for a, za, b, zb, lo, hi in self.transitions]
        return json.dumps({"cameras": cams, "transitions": trans}, indent=2, sort_keys=True)


def median_gamma(features) -> float:
    """Inverse of the (lower) median pairwise L1 distance."""
    X = np.asarray(features, dtype=float)
    if len(X) < 2:
        raise ValueError("need at least two features for a median distance")
    d = np.sort(pdist(X, metric="cityblock"))
    med = d[(len(d) - 1) // 2]
    if med <= 0:
        raise ValueError("median pairwise distance is zero (features identical); pass gamma explicitly")
    return 1.0 / float(med)


def laplacian_kernel(features, gamma: float) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    return np.exp(-gamma * squareform(pdist(X, metric="cityblock")))


def kernel_distance_affinity(K) -> np.ndarray:
    """``1 - sqrt((K_ii + K_jj - 2 K_ij) / 2)`` without touching the diagonal."""
    K = np.asarray(K, dtype=float)
    d = np.diag(K)
    inner = (d[:, None] + d[None, :] - 2.0 * K) / 2.0
    return 1.0 - np.sqrt(np.clip(inner, 0.0, None))


def kernel_affinity(features, gamma: float | None = None) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if len(X) < 2:
        raise ValueError("need at least two features")
    if gamma is None:
        gamma = median_gamma(X)
    A = np.clip(kernel_distance_affinity(laplacian_kernel(X, gamma)), 0.0, 1.0)
    np.fill_diagonal(A, 0.0)
    return A


def motion_affinity(a: NodeDescriptor, b: NodeDescriptor, scale: float = 5.0) -> float:
    """Constant-velocity agreement of ``a`` followed by ``b``.

    ``a``'s exit is pushed forward and ``b``'s entry backward over the gap;
    the summed misses are scored with ``exp(-err / (2 * scale * gap))``.
    """
    gap = b.first - a.last
    if gap <= 0:
        return 0.0
    # a node seen in a single frame has no velocity of its own (NaN); it
    # borrows its partner's, and two such nodes are taken to move straight
    # from one to the other, which leaves motion uninformative
    va, vb = a.velocity, b.velocity
    if not np.all(np.isfinite(va)):
        va = vb if np.all(np.isfinite(vb)) else (b.entry_pos - a.exit_pos) / gap
    if not np.all(np.isfinite(vb)):
        vb = va
    e_f = np.linalg.norm(a.exit_pos + va * gap - b.entry_pos)
    e_b = np.linalg.norm(b.entry_pos - vb * gap - a.exit_pos)
    return float(np.exp(-(e_f + e_b) / (2.0 * scale * gap)))


def pair_motion(a: NodeDescriptor, b: NodeDescriptor, scale: float = 5.0,
                max_gap: int | None = None, min_motion: float = 0.0) -> float:
    """Motion affinity with the two nodes put in temporal order, gated.

    Pairs further apart than ``max_gap`` frames, or whose affinity falls
    below ``min_motion``, get 0: such a pair is not a plausible continuation
    under the constant-velocity model.
    """
    if b.last < a.first:
        a, b = b, a
    if not a.last < b.first:
        return 0.0
    if max_gap is not None and b.first - a.last > max_gap:
        return 0.0
    m = motion_affinity(a, b, scale)
    return m if m >= min_motion else 0.0


def combine(appearance: float, motion: float, same_camera: bool = True) -> float:
    return appearance * motion if same_camera else appearance


def within_camera_affinity(nodes, gamma: float | None = None, motion_scale: float = 5.0,
                           max_gap: int | None = None, min_motion: float = 0.0) -> np.ndarray:
    n = len(nodes)
    if n < 2:
        return np.zeros((n, n))
    A = kernel_affinity([d.feature for d in nodes], gamma)
    for i in range(n):
        for j in range(i + 1, n):
            if A[i, j] > 0:
                A[i, j] = A[j, i] = combine(A[i, j], pair_motion(nodes[i], nodes[j], motion_scale, max_gap, min_motion))
    return A


def spatiotemporal_gate(tracks, model: TransitionModel) -> np.ndarray:
    """``mask[i, j]``: the earlier track's exit zone connects to the later
    track's entry zone within the declared travel window."""
    n = len(tracks)
    for k, t in enumerate(tracks):
        who = t.node_id if t.node_id is not None else k
        model.check_zone(t.camera, t.entry_zone, who)
        model.check_zone(t.camera, t.exit_zone, who)
    mask = np.zeros((n, n), dtype=bool)
    for i in range(n):
        a = tracks[i]
        for j in range(n):
            if i == j:
                continue
            b = tracks[j]
            gap = b.first - a.last
            if gap <= 0:
                continue
            for lo, hi in model.window(a.camera, a.exit_zone, b.camera, b.entry_zone):
                if lo <= gap <= hi:
                    mask[i, j] = mask[j, i] = True
                    break
    return mask


def path_closure(mask, spans=None) -> np.ndarray:
    """Transitive closure along chains whose middle node sits between the ends in time.

    ``spans`` is a sequence of ``(first, last)`` frames; without it the plain
    transitive closure is returned.
    """
    M = np.array(mask, dtype=bool)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("mask must be square")
    n = len(M)
    if spans is None:
        first = np.zeros(n)
        last = np.zeros(n)
        timed = False
    else:
        first = np.array([s[0] for s in spans], dtype=float)
        last = np.array([s[1] for s in spans], dtype=float)
        timed = True
    while True:
        new = M.copy()
        for j in range(n):
            nb = M[j]
            if timed:
                before = nb & (last < first[j])
                after = nb & (first > last[j])
            else:
                before = after = nb
            if before.any() and after.any():
                new |= np.outer(before, after)
                new |= np.outer(after, before)
        np.fill_diagonal(new, False)
        if np.array_equal(new, M):
            return M
        M = new


def build_cross_camera_affinity(tracks_by_camera, model: TransitionModel, gamma: float | None = None,
                                motion_scale: float = 5.0, max_gap: int | None = None,
                                min_motion: float = 0.0):
    """Block affinity over all tracks, cameras in the given order.

    Returns ``(A, nodes, camera_slices)`` where ``nodes`` lists the
    descriptors in matrix order.
    """
    cams = list(tracks_by_camera)
    nodes, slices, start = [], {}, 0
    for c in cams:
        ts = list(tracks_by_camera[c])
        nodes.extend(ts)
        slices[c] = slice(start, start + len(ts))
        start += len(ts)
    n = len(nodes)
    if n == 0:
        return np.zeros((0, 0)), nodes, slices
    if n == 1:
        return np.zeros((1, 1)), nodes, slices
    app = kernel_affinity([t.feature for t in nodes], gamma)
    gate = path_closure(spatiotemporal_gate(nodes, model), [(t.first, t.last) for t in nodes])
    cam_of = np.array([t.camera for t in nodes])
    same = cam_of[:, None] == cam_of[None, :]
    A = np.where(same, 0.0, np.where(gate, app, 0.0))
    for c in cams:
        s = slices[c]
        for i in range(s.start, s.stop):
            for j in range(i + 1, s.stop):
                if app[i, j] > 0:
                    A[i, j] = A[j, i] = combine(app[i, j], pair_motion(nodes[i], nodes[j], motion_scale, max_gap, min_motion))
    np.fill_diagonal(A, 0.0)
    return A, nodes, slices
