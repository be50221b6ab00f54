"""Deterministic multi-camera walking scenario with ground truth."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .affinity import TransitionModel
from .data import Detection


@dataclass
class SynthConfig:
    cameras: int = 3
    zones_per_camera: int = 2
    identities: int = 10
    visit_frames: tuple = (200, 300)
    travel_frames: tuple = (30, 90)
    feature_dim: int = 32
    appearance_noise: float = 0.0
    drop_prob: float = 0.0
    seed: int = 0
    # camera pairs (a, b), a < b, joined right edge of a to left edge of b;
    # None means a chain 0-1-2-...
    links: list | None = None
    continue_prob: float = 0.85
    start_spread: int = 400
    image_size: tuple = (1920, 1080)
    box_size: tuple = (80, 180)
    lane_spacing: float = 95.0

    def __post_init__(self):
        for name in ("cameras", "zones_per_camera", "identities", "feature_dim", "start_spread"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        for name in ("appearance_noise",):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("drop_prob", "continue_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        for name in ("visit_frames", "travel_frames"):
            lo, hi = getattr(self, name)
            if lo <= 0 or hi < lo:
                raise ValueError(f"{name} must be a range 0 < min <= max, got {(lo, hi)}")
            setattr(self, name, (int(lo), int(hi)))
        if self.visit_frames[0] < 2:
            raise ValueError("visit_frames minimum must be at least 2")
        if self.links is None:
            self.links = [(c, c + 1) for c in range(self.cameras - 1)]
        self.links = sorted({(min(a, b), max(a, b)) for a, b in self.links})
        for a, b in self.links:
            if not (0 <= a < b < self.cameras):
                raise ValueError(f"links entry {(a, b)} is not a pair of distinct declared cameras")
        if self.cameras > 1 and not self.links:
            raise ValueError("links: more than one camera but no transitions between them")

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown synth field(s): {', '.join(sorted(extra))}")
        kw = dict(doc)
        for k in ("visit_frames", "travel_frames", "image_size", "box_size"):
            if k in kw:
                kw[k] = tuple(kw[k])
        if kw.get("links") is not None:
            kw["links"] = [tuple(p) for p in kw["links"]]
        return cls(**kw)

    def as_dict(self):
        d = asdict(self)
        d["links"] = [list(p) for p in self.links]
        return d


@dataclass
class Visit:
    identity: int
    camera: int
    first: int
    last: int
    entry_zone: int
    exit_zone: int


@dataclass
class SynthDataset:
    config: SynthConfig
    model: TransitionModel
    detections: list
    features: np.ndarray
    visits: list = field(default_factory=list)

    def truth_rows(self):
        return [(d.gt, d.camera, d.frame, d.x, d.y, d.w, d.h) for d in self.detections]


def make_topology(cfg: SynthConfig) -> TransitionModel:
    W, H = cfg.image_size
    Z = cfg.zones_per_camera
    edges = np.linspace(0.0, W, Z + 1)
    zones = {c: {z: (float(edges[z]), 0.0, float(edges[z + 1]), float(H)) for z in range(Z)}
             for c in range(cfg.cameras)}
    lo, hi = cfg.travel_frames
    trans = []
    for a, b in cfg.links:
        trans.append((a, Z - 1, b, 0, lo, hi))
        trans.append((b, 0, a, Z - 1, lo, hi))
    return TransitionModel(list(range(cfg.cameras)), trans, zones)


def _unit_l1(rng, d):
    v = rng.exponential(1.0, d) * rng.choice([-1.0, 1.0], d)
    return v / np.abs(v).sum()


def synth_generate(cfg: SynthConfig) -> SynthDataset:
    """Walk every identity through the camera graph and emit per-frame boxes.

    Inside a camera an identity moves at constant velocity along its own
    horizontal lane, left to right or right to left.  Leaving through the
    right edge it may continue into a camera linked on that side after a
    travel gap drawn inside the declared window.
    """
    rng = np.random.default_rng(cfg.seed)
    model = make_topology(cfg)
    W, H = cfg.image_size
    bw, bh = cfg.box_size
    Z = cfg.zones_per_camera
    margin = 10.0
    n_lanes = max(1, int((H - bh - 2 * margin) // cfg.lane_spacing) + 1)
    right = {c: [b for a, b in cfg.links if a == c] for c in range(cfg.cameras)}
    left = {c: [a for a, b in cfg.links if b == c] for c in range(cfg.cameras)}

    bases = np.array([_unit_l1(rng, cfg.feature_dim) for _ in range(cfg.identities)])
    visits = []
    for ident in range(cfg.identities):
        cam = int(rng.integers(cfg.cameras))
        heading = 1 if rng.random() < 0.5 else -1
        t = int(rng.integers(cfg.start_spread))
        while True:
            dur = int(rng.integers(cfg.visit_frames[0], cfg.visit_frames[1] + 1))
            entry, exit_ = (0, Z - 1) if heading > 0 else (Z - 1, 0)
            visits.append(Visit(ident, cam, t, t + dur - 1, entry, exit_))
            nxt = right[cam] if heading > 0 else left[cam]
            if not nxt or rng.random() >= cfg.continue_prob:
                break
            cam = int(nxt[int(rng.integers(len(nxt)))])
            gap = int(rng.integers(cfg.travel_frames[0], cfg.travel_frames[1] + 1))
            t = t + dur - 1 + gap

    dets, feats = [], []
    sd = cfg.appearance_noise / np.sqrt(cfg.feature_dim)
    x_lo, x_hi = margin, W - margin - bw
    for v in visits:
        lane = v.identity % n_lanes
        y = margin + lane * cfg.lane_spacing
        x0, x1 = (x_lo, x_hi) if v.entry_zone == 0 else (x_hi, x_lo)
        span = v.last - v.first
        for f in range(v.first, v.last + 1):
            # draws happen for every frame so drop_prob does not shift the stream
            keep = rng.random() >= cfg.drop_prob
            noise = rng.normal(0.0, sd, cfg.feature_dim) if sd > 0 else 0.0
            if not keep:
                continue
            x = x0 + (x1 - x0) * (f - v.first) / span
            feat = bases[v.identity] + noise
            s = np.abs(feat).sum()
            feat = feat / s if s > 0 else feat
            feats.append(feat)
            dets.append(Detection(v.camera, f, round(float(x), 2), round(float(y), 2),
                                  float(bw), float(bh), None, -1, v.identity))
    order = sorted(range(len(dets)), key=lambda k: (dets[k].camera, dets[k].frame, dets[k].gt))
    dets = [dets[k] for k in order]
    X = np.array([feats[k] for k in order]).astype("<f4") if order else np.zeros((0, cfg.feature_dim), "<f4")
    for k, d in enumerate(dets):
        d.feature_id = k
        d.feature = X[k].astype(float)
    return SynthDataset(cfg, model, dets, X, visits)
