"""Identity-level precision, recall and F1 under the best identity matching."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import iou

MATCH_IOU = 0.5


@dataclass(frozen=True)
class IdentityMetrics:
    idtp: int
    idfp: int
    idfn: int

    @property
    def idp(self) -> float:
        d = self.idtp + self.idfp
        return self.idtp / d if d else 0.0

    @property
    def idr(self) -> float:
        d = self.idtp + self.idfn
        return self.idtp / d if d else 0.0

    @property
    def idf1(self) -> float:
        d = 2 * self.idtp + self.idfp + self.idfn
        return 2 * self.idtp / d if d else 0.0

    def as_dict(self):
        out = asdict(self)
        out.update(idp=self.idp, idr=self.idr, idf1=self.idf1)
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        head = f"{'IDF1':>7} {'IDP':>7} {'IDR':>7} {'IDTP':>8} {'IDFP':>8} {'IDFN':>8}"
        row = (f"{self.idf1:7.3f} {self.idp:7.3f} {self.idr:7.3f} "
               f"{self.idtp:8d} {self.idfp:8d} {self.idfn:8d}")
        return head + "\n" + row + "\n"


def _by_frame(rows):
    out = defaultdict(list)
    for tid, cam, frame, x, y, w, h in rows:
        out[(cam, frame)].append((tid, (x, y, w, h)))
    return out


def pair_counts(predicted, truth, threshold=MATCH_IOU):
    """``(truth ids, pred ids, counts)`` where ``counts[t, p]`` is the number of
    frames in which a box of truth identity t overlaps a box of predicted
    identity p by at least ``threshold`` IoU."""
    t_ids = sorted({r[0] for r in truth})
    p_ids = sorted({r[0] for r in predicted})
    ti = {t: k for k, t in enumerate(t_ids)}
    pi = {p: k for k, p in enumerate(p_ids)}
    counts = np.zeros((len(t_ids), len(p_ids)), dtype=np.int64)
    pred = _by_frame(predicted)
    for key, tboxes in _by_frame(truth).items():
        for t, tb in tboxes:
            for p, pb in pred.get(key, ()):
                if iou(tb, pb) >= threshold:
                    counts[ti[t], pi[p]] += 1
    return t_ids, p_ids, counts


def identity_metrics(predicted, truth, threshold=MATCH_IOU) -> IdentityMetrics:
    """IDTP/IDFP/IDFN from rows ``(identity, camera, frame, x, y, w, h)``.

    Truth and predicted identities are matched one-to-one to maximize the
    number of co-located detections; everything unmatched counts as a miss
    (truth side) or a false positive (prediction side).
    """
    truth = list(truth)
    predicted = list(predicted)
    if not truth:
        raise ValueError("truth is empty; identity metrics are undefined")
    _, _, counts = pair_counts(predicted, truth, threshold)
    idtp = 0
    if counts.size:
        r, c = linear_sum_assignment(counts, maximize=True)
        idtp = int(counts[r, c].sum())
    return IdentityMetrics(idtp, len(predicted) - idtp, len(truth) - idtp)
