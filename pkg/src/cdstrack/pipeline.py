"""Three-layer tracking: detections to short-tracklets, tracklets, per-camera
tracks, and finally cross-camera trajectories with set refinement."""
from __future__ import annotations

import time
import warnings
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .affinity import (NodeDescriptor, TransitionModel, build_cross_camera_affinity,
                       within_camera_affinity)
from .data import iou
from .enumeration import (ClusterCollection, _cluster_from, _extractions,
                          assign_unique, enumerate_clusters)
from .simplex_qp import KKT_TOL, MAX_ITER


@dataclass
class PipelineConfig:
    segment_length: int = 15
    window_segments: int = 10
    iou_threshold: float = 0.7
    motion_scale: float = 5.0
    # within-camera pairs further apart than this (frames) get no motion affinity
    max_link_gap: int | None = 300
    # ... or whose motion affinity is below this
    min_motion: float = 0.3
    alpha_mode: str = "fast"
    tol: float = KKT_TOL
    max_iter: int = MAX_ITER
    jobs: int = 1
    # drop set members whose own extraction does not point back (see reciprocal_filter)
    reciprocal: bool = True
    # members with |set| * membership below this neither bridge pieces of a
    # set nor confirm an association
    min_strength: float = 0.1

    def __post_init__(self):
        for name in ("segment_length", "window_segments", "max_iter", "jobs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("iou_threshold", "motion_scale", "tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.min_motion <= 1.0:
            raise ValueError("min_motion must lie in [0, 1]")
        if self.max_link_gap is not None and self.max_link_gap <= 0:
            raise ValueError("max_link_gap must be positive or None")
        if self.alpha_mode not in ("exact", "fast"):
            raise ValueError(f"alpha_mode must be 'exact' or 'fast', got {self.alpha_mode!r}")

    @property
    def solver_kw(self):
        return dict(alpha_mode=self.alpha_mode, tol=self.tol, max_iter=self.max_iter)


# ---------------------------------------------------------------- node types

def describe(detections, camera, model: TransitionModel | None = None, node_id=None) -> NodeDescriptor:
    """Span, fitted entry/exit positions, velocity and max-pooled feature."""
    frames = np.array([d.frame for d in detections], dtype=float)
    centers = np.array([d.center for d in detections])
    first, last = int(frames.min()), int(frames.max())
    if last > first:
        # least-squares constant velocity fit per coordinate
        t = frames - first
        coef = np.polyfit(t, centers, 1)
        vel = coef[0]
        entry = coef[1]
        exit_ = coef[1] + coef[0] * (last - first)
    else:
        vel = np.full(2, np.nan)
        entry = exit_ = centers.mean(axis=0)
    feats = [d.feature for d in detections if d.feature is not None]
    feat = np.max(np.array(feats), axis=0) if feats else np.zeros(1)
    ez = xz = 0
    if model is not None:
        ez = model.zone_of(camera, entry)
        xz = model.zone_of(camera, exit_)
    return NodeDescriptor(camera, first, last, ez, xz, entry, exit_, vel, feat, node_id)


@dataclass
class ShortTracklet:
    detections: list
    segment: int
    camera: int
    descriptor: NodeDescriptor = None

    def __post_init__(self):
        if self.descriptor is None:
            self.descriptor = describe(self.detections, self.camera)


@dataclass
class Tracklet:
    members: list
    window: int
    camera: int
    descriptor: NodeDescriptor = None

    @property
    def detections(self):
        return [d for m in self.members for d in m.detections]

    def __post_init__(self):
        if self.descriptor is None:
            self.descriptor = describe(self.detections, self.camera)


@dataclass
class Track:
    members: list
    camera: int
    track_id: int = -1
    descriptor: NodeDescriptor = None

    @property
    def detections(self):
        return sorted((d for m in self.members for d in m.detections), key=lambda d: d.frame)


@dataclass
class Trajectory:
    label: int
    tracks: list
    flagged: bool = False

    @property
    def cameras(self):
        return sorted({t.camera for t in self.tracks})


@dataclass
class TrackSetIndex:
    """Which constraint-camera sets contain which tracks.

    ``sets[k]`` maps track index to membership score; ``tags[k]`` is the
    camera whose tracks formed the constraint when set ``k`` was extracted.
    """

    sets: list
    tags: list
    track_camera: list
    objectives: list = field(default_factory=list)
    # cores[k]: members of set k that were still in the constraint set when it
    # was extracted; every track is core in exactly one set
    cores: list = field(default_factory=list)

    @classmethod
    def from_collection(cls, coll: ClusterCollection, track_camera, cores=None):
        return cls([dict(c.membership) for c in coll.clusters], [c.tag for c in coll.clusters],
                   list(track_camera), [c.objective for c in coll.clusters],
                   [set(c) for c in cores] if cores is not None else [])

    def copy(self):
        return TrackSetIndex([dict(s) for s in self.sets], list(self.tags),
                             list(self.track_camera), list(self.objectives),
                             [set(c) for c in self.cores])

    @property
    def n_tracks(self):
        return len(self.track_camera)

    @property
    def cameras(self):
        return sorted(set(self.track_camera))

    def containing(self, track, camera=None):
        return [k for k, s in enumerate(self.sets)
                if track in s and (camera is None or self.tags[k] == camera)]

    def violations(self, n_cameras=None):
        """``(constraint1, constraint2)`` violation counts."""
        I = n_cameras if n_cameras is not None else len(self.cameras)
        c1 = c2 = 0
        for t in range(self.n_tracks):
            per = defaultdict(int)
            for k in self.containing(t):
                per[self.tags[k]] += 1
            c1 += sum(1 for v in per.values() if v > 1)
            c2 += int(sum(per.values()) > I)
        return c1, c2


# ---------------------------------------------------------------- layer 0

def build_short_tracklets(detections, segment_length=15, iou_threshold=0.7):
    """Chain boxes across consecutive frames inside fixed-length segments.

    At each frame, candidate (chain, detection) pairs are accepted in order of
    decreasing IoU while both ends are still free.
    """
    by_cam = defaultdict(list)
    for d in detections:
        by_cam[d.camera].append(d)
    out = []
    for cam in sorted(by_cam):
        dets = sorted(by_cam[cam], key=lambda d: (d.frame, d.x, d.y, d.w, d.h, d.feature_id))
        by_seg = defaultdict(lambda: defaultdict(list))
        for d in dets:
            by_seg[d.frame // segment_length][d.frame].append(d)
        for seg in sorted(by_seg):
            chains = []
            active = []
            for frame in sorted(by_seg[seg]):
                cur = by_seg[seg][frame]
                live = [c for c in active if chains[c][-1].frame == frame - 1]
                pairs = []
                for ci in live:
                    for di, d in enumerate(cur):
                        v = iou(chains[ci][-1].box, d.box)
                        if v >= iou_threshold:
                            pairs.append((-v, ci, di))
                pairs.sort()
                used_c, used_d = set(), set()
                for _, ci, di in pairs:
                    if ci in used_c or di in used_d:
                        continue
                    chains[ci].append(cur[di])
                    used_c.add(ci)
                    used_d.add(di)
                active = list(used_c)
                for di, d in enumerate(cur):
                    if di not in used_d:
                        chains.append([d])
                        active.append(len(chains) - 1)
            for c in chains:
                out.append(ShortTracklet(c, seg, cam))
    return out


# ---------------------------------------------------------------- layers 1 and 2

def _layer_gamma(features):
    """Inverse median L1 distance over a layer's features (robust to ties at 0)."""
    X = np.array(list(features))
    if len(X) < 2:
        return 1.0
    d = np.sort(pdist(X, metric="cityblock"))
    med = d[(len(d) - 1) // 2]
    if med > 0:
        return 1.0 / float(med)
    nz = d[d > 0]
    return 1.0 / float(nz.mean()) if nz.size else 1.0


def _cluster_nodes(nodes, gamma, cfg: PipelineConfig, stats):
    """Group node indices with the enumerate-then-assign recipe."""
    n = len(nodes)
    if n == 1:
        return [[0]]
    A = within_camera_affinity([x.descriptor for x in nodes], gamma, cfg.motion_scale,
                               cfg.max_link_gap, cfg.min_motion)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        coll = enumerate_clusters(A, range(n), min_strength=cfg.min_strength, **cfg.solver_kw)
    stats["nonconverged"] += sum(1 for c in coll if not c.converged)
    stats["warnings"] += len(caught)
    owner = assign_unique(coll, range(n))
    spans = [(x.descriptor.first, x.descriptor.last) for x in nodes]
    owner = absorb_fragments(coll, owner, spans, cfg.min_strength)
    groups = defaultdict(list)
    for v, k in owner.items():
        groups[k].append(v)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def absorb_fragments(coll: ClusterCollection, owner: dict, spans, min_strength: float = 0.0) -> dict:
    """Fold a group into the group its own cluster strongly points at.

    A vertex that scores below its cluster's payoff is left out of it and
    picked up by a later extraction, whose constraint keeps most of the mass
    on it while its true companions join with small weight; the assignment
    then leaves it stranded in a group of its own.  Each later group is
    merged into the earlier group holding the most mass among the strong
    (``|cluster| * membership >= min_strength``) members of the later group's
    cluster, provided no two nodes of the union overlap in time.
    """
    parent = {k: k for k in set(owner.values())}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    def overlaps(ga, gb):
        return any(not (spans[a][1] < spans[b][0] or spans[b][1] < spans[a][0])
                   for a in ga for b in gb)

    for k in sorted(parent):
        c = coll.clusters[k]
        size = len(c.support)
        pull = defaultdict(float)
        for v, d in c.membership.items():
            h = find(owner[v])
            if h != find(k) and size * d >= min_strength:
                pull[h] += d
        if not pull:
            continue
        h = max(sorted(pull), key=lambda g: pull[g])
        members = defaultdict(list)
        for v, g in owner.items():
            members[find(g)].append(v)
        if not overlaps(members[find(k)], members[h]):
            parent[find(k)] = h
    return {v: find(k) for v, k in owner.items()}


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def _new_stats():
    return {"nonconverged": 0, "warnings": 0}


def layer1_tracklets(short_tracklets, cfg: PipelineConfig | None = None, gamma=None, stats=None):
    """Cluster the short-tracklets of each camera window into tracklets."""
    cfg = cfg or PipelineConfig()
    stats = stats if stats is not None else _new_stats()
    short_tracklets = list(short_tracklets)
    if not short_tracklets:
        return []
    if gamma is None:
        gamma = _layer_gamma(s.descriptor.feature for s in short_tracklets)
    windows = defaultdict(list)
    for s in short_tracklets:
        windows[(s.camera, s.segment // cfg.window_segments)].append(s)
    keys = sorted(windows)

    def run(key):
        nodes = sorted(windows[key], key=lambda s: (s.descriptor.first, s.descriptor.last,
                                                     s.detections[0].x, s.detections[0].y))
        local = _new_stats()
        groups = _cluster_nodes(nodes, gamma, cfg, local)
        return [Tracklet([nodes[i] for i in g], key[1], key[0]) for g in groups], local

    out = []
    for tl, local in _map(run, keys, cfg.jobs):
        out.extend(tl)
        for k in stats:
            stats[k] += local[k]
    return out


def layer2_tracks(tracklets, cfg: PipelineConfig | None = None, gamma=None, stats=None):
    """Cluster all tracklets of each camera into tracks."""
    cfg = cfg or PipelineConfig()
    stats = stats if stats is not None else _new_stats()
    tracklets = list(tracklets)
    if not tracklets:
        return []
    if gamma is None:
        gamma = _layer_gamma(t.descriptor.feature for t in tracklets)
    by_cam = defaultdict(list)
    for t in tracklets:
        by_cam[t.camera].append(t)
    cams = sorted(by_cam)

    def run(cam):
        nodes = sorted(by_cam[cam], key=lambda t: (t.descriptor.first, t.descriptor.last,
                                                    t.detections[0].x, t.detections[0].y))
        local = _new_stats()
        groups = _cluster_nodes(nodes, gamma, cfg, local)
        return [Track([nodes[i] for i in g], cam) for g in groups], local

    out = []
    for tr, local in _map(run, cams, cfg.jobs):
        out.extend(tr)
        for k in stats:
            stats[k] += local[k]
    return out


# ---------------------------------------------------------------- layer 3

def finalize_tracks(tracks, model: TransitionModel | None = None):
    """Number tracks by (camera, first frame) and attach zone-aware descriptors."""
    tracks = sorted(tracks, key=lambda t: (t.camera, t.detections[0].frame,
                                           t.detections[0].x, t.detections[0].y))
    for k, t in enumerate(tracks):
        t.track_id = k
        t.descriptor = describe(t.detections, t.camera, model, node_id=k)
    return tracks


def layer3_associate(tracks_by_camera, model: TransitionModel, cfg: PipelineConfig | None = None,
                     gamma=None, stats=None):
    """Run one constrained extraction sequence per camera over the shared block matrix.

    ``tracks_by_camera`` maps camera to a list of :class:`NodeDescriptor`.
    Returns ``(collection, index)``; vertex ids are positions in camera order.
    """
    cfg = cfg or PipelineConfig()
    stats = stats if stats is not None else _new_stats()
    if not tracks_by_camera:
        raise ValueError("need at least one camera")
    cams = sorted(tracks_by_camera)
    ordered = {c: list(tracks_by_camera[c]) for c in cams}
    if gamma is None:
        gamma = _layer_gamma(t.feature for c in cams for t in ordered[c])
    A, nodes, slices = build_cross_camera_affinity(ordered, model, gamma, cfg.motion_scale,
                                                   cfg.max_link_gap, cfg.min_motion)
    cam_of = [t.camera for t in nodes]

    def run(cam):
        s = slices[cam]
        Q = list(range(s.start, s.stop))
        if not Q:
            return []
        found = []
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            for snapshot, rep in _extractions(A, Q, cfg.solver_kw, cfg.min_strength):
                c = _cluster_from(rep.x, cam, rep.objective, rep.converged)
                found.append((c, set(c.support) & set(snapshot)))
        return found, len(caught)

    coll, cores = ClusterCollection(), []
    for res in _map(run, cams, cfg.jobs):
        if not res:
            continue
        found, nwarn = res
        stats["warnings"] += nwarn
        for c, core in found:
            stats["nonconverged"] += int(not c.converged)
            coll.add(c)
            cores.append(core)
    return coll, TrackSetIndex.from_collection(coll, cam_of, cores)


# ---------------------------------------------------------------- refinement

def reciprocal_filter(index: TrackSetIndex, min_strength: float = 0.0) -> TrackSetIndex:
    """Keep a non-core member only when the association is confirmed from its side.

    Track ``v`` stays in set ``k`` if it is core there, or if it is held with
    strength ``|k| * membership >= min_strength`` and the set where ``v``
    itself is core holds one of ``k``'s core members with at least that
    strength.  Core memberships are never removed, so every track keeps at
    least one set.
    """
    if not index.cores:
        return index.copy()
    out = index.copy()
    home = {}
    for k, core in enumerate(index.cores):
        for v in core:
            home[v] = k

    def strong(k, v):
        s = index.sets[k]
        return v in s and len(s) * s[v] >= min_strength

    for k, s in enumerate(out.sets):
        core = index.cores[k]
        for v in list(s):
            if v in core:
                continue
            h = home.get(v)
            if not strong(k, v) or h is None or not any(strong(h, u) for u in core):
                del s[v]
    return out


def refine_constraint1(index: TrackSetIndex) -> TrackSetIndex:
    """Leave each track in at most one set per constraint camera.

    A track found in several sets of camera p stays only in the one with the
    largest ``|set| * membership``; sizes are taken before any removal and
    ties go to the earlier-extracted set.
    """
    out = index.copy()
    sizes = [len(s) for s in index.sets]
    for t in range(out.n_tracks):
        for p in out.cameras:
            ks = out.containing(t, p)
            if len(ks) <= 1:
                continue
            keep = max(ks, key=lambda k: (sizes[k] * index.sets[k][t], -k))
            for k in ks:
                if k != keep:
                    del out.sets[k][t]
    return out


def refine_constraint2(index: TrackSetIndex, n_cameras: int | None = None) -> TrackSetIndex:
    """Cap the number of sets holding a track at the number of cameras.

    The anchor is the set holding the track under its own camera's
    constraint.  Within every other constraint camera q with several
    candidates, the track stays in the set sharing most tracks with the
    anchor (ties to the earlier set).  Whatever excess is left is cut by the
    ``|set| * membership`` rule.
    """
    out = index.copy()
    I = n_cameras if n_cameras is not None else len(out.cameras)
    for t in range(out.n_tracks):
        ks = out.containing(t)
        if len(ks) <= I:
            continue
        home = out.containing(t, out.track_camera[t])
        anchor = set(out.sets[home[0]]) if home else set()
        for q in out.cameras:
            kq = out.containing(t, q)
            if len(kq) <= 1:
                continue
            keep = max(kq, key=lambda k: (len(set(out.sets[k]) & anchor), -k))
            for k in kq:
                if k != keep:
                    del out.sets[k][t]
        ks = out.containing(t)
        if len(ks) > I:
            ranked = sorted(ks, key=lambda k: (-(len(out.sets[k]) * out.sets[k][t]), k))
            for k in ranked[I:]:
                del out.sets[k][t]
    return out


def merge_to_trajectories(index: TrackSetIndex, spans=None):
    """Connected components of the co-membership graph.

    Labels follow the smallest track index of each component.  ``spans``
    (track -> (first, last)) lets components holding two time-overlapping
    tracks of one camera be flagged.
    Returns a list of ``(label, sorted track indices, flagged)``.
    """
    n = index.n_tracks
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for s in index.sets:
        members = sorted(s)
        for v in members[1:]:
            ra, rb = find(members[0]), find(v)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    comps = defaultdict(list)
    for v in range(n):
        comps[find(v)].append(v)
    out = []
    for label, root in enumerate(sorted(comps)):
        members = comps[root]
        flagged = False
        if spans is not None:
            for i, a in enumerate(members):
                for b in members[i + 1:]:
                    if index.track_camera[a] == index.track_camera[b]:
                        (fa, la), (fb, lb) = spans[a], spans[b]
                        if fa <= lb and fb <= la:
                            flagged = True
        out.append((label, members, flagged))
    return out


# ---------------------------------------------------------------- end to end

@dataclass
class RunResult:
    trajectories: list
    tracks: list
    index: TrackSetIndex
    report: dict

    def rows(self):
        """``(label, camera, frame, x, y, w, h)`` for every tracked detection."""
        out = []
        for traj in self.trajectories:
            for t in traj.tracks:
                for d in t.detections:
                    out.append((traj.label, d.camera, d.frame, d.x, d.y, d.w, d.h))
        out.sort(key=lambda r: (r[0], r[1], r[2], r[3], r[4]))
        return out


def run_pipeline(detections, model: TransitionModel, cfg: PipelineConfig | None = None) -> RunResult:
    cfg = cfg or PipelineConfig()
    report = {"counts": {}, "timing": {}, "nonconverged": {}, "warnings": {}, "flagged_trajectories": []}
    detections = list(detections)
    report["counts"]["detections"] = len(detections)
    if not detections:
        report["counts"].update(short_tracklets=0, tracklets=0, tracks=0, sets=0, trajectories=0)
        return RunResult([], [], TrackSetIndex([], [], []), report)

    t0 = time.perf_counter()
    shorts = build_short_tracklets(detections, cfg.segment_length, cfg.iou_threshold)
    report["timing"]["short_tracklets"] = time.perf_counter() - t0
    report["counts"]["short_tracklets"] = len(shorts)

    for name, fn in (("layer1", layer1_tracklets), ("layer2", layer2_tracks)):
        t0 = time.perf_counter()
        stats = _new_stats()
        if name == "layer1":
            tracklets = fn(shorts, cfg, stats=stats)
            report["counts"]["tracklets"] = len(tracklets)
        else:
            tracks = fn(tracklets, cfg, stats=stats)
            report["counts"]["tracks"] = len(tracks)
        report["timing"][name] = time.perf_counter() - t0
        report["nonconverged"][name] = stats["nonconverged"]
        report["warnings"][name] = stats["warnings"]

    t0 = time.perf_counter()
    tracks = finalize_tracks(tracks, model)
    by_cam = defaultdict(list)
    for t in tracks:
        by_cam[t.camera].append(t.descriptor)
    stats = _new_stats()
    coll, index = layer3_associate(dict(by_cam), model, cfg, stats=stats)
    # matrix order is camera-major, which is also track_id order
    if cfg.reciprocal:
        index = reciprocal_filter(index, cfg.min_strength)
    refined = refine_constraint2(refine_constraint1(index), len(by_cam))
    c1, c2 = refined.violations(len(by_cam))
    spans = {t.track_id: (t.descriptor.first, t.descriptor.last) for t in tracks}
    comps = merge_to_trajectories(refined, spans)
    trajectories = [Trajectory(label, [tracks[i] for i in members], flagged)
                    for label, members, flagged in comps]
    report["timing"]["layer3"] = time.perf_counter() - t0
    report["nonconverged"]["layer3"] = stats["nonconverged"]
    report["warnings"]["layer3"] = stats["warnings"]
    report["counts"].update(sets=len(coll), trajectories=len(trajectories),
                            constraint1_violations=c1, constraint2_violations=c2)
    report["flagged_trajectories"] = [t.label for t in trajectories if t.flagged]
    return RunResult(trajectories, tracks, refined, report)
