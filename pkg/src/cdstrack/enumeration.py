"""Enumerating constrained dominant sets without peeling vertices off the graph."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .simplex_qp import SUPPORT_EPS, ConstraintSpec, fast_cdsc, objective


@dataclass
class Cluster:
    support: tuple
    membership: dict
    objective: float
    tag: object = 0
    converged: bool = True

    def __len__(self):
        return len(self.support)

    def __contains__(self, v):
        return v in self.membership


@dataclass
class ClusterCollection:
    clusters: list = field(default_factory=list)
    groups: dict = field(default_factory=dict)

    def add(self, cluster: Cluster) -> int:
        self.clusters.append(cluster)
        k = len(self.clusters) - 1
        self.groups.setdefault(cluster.tag, []).append(k)
        return k

    def extend(self, other: "ClusterCollection"):
        for c in other.clusters:
            self.add(c)

    def covered(self) -> set:
        return {v for c in self.clusters for v in c.support}

    def __len__(self):
        return len(self.clusters)

    def __iter__(self):
        return iter(self.clusters)

    def to_text(self) -> str:
        """One line per cluster: ``tag objective v0:d0 v1:d1 ...``."""
        lines = []
        for c in self.clusters:
            members = " ".join(f"{v}:{c.membership[v]:.12g}" for v in c.support)
            lines.append(f"{c.tag} {c.objective:.12g} {members}".rstrip())
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str) -> "ClusterCollection":
        out = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ValueError(f"line {lineno}: expected 'tag objective v:d ...'")
            tag = int(parts[0]) if parts[0].lstrip("-").isdigit() else parts[0]
            membership = {}
            for tok in parts[2:]:
                v, d = tok.split(":")
                membership[int(v)] = float(d)
            out.add(Cluster(tuple(membership), membership, float(parts[1]), tag))
        return out


def _cluster_from(x, tag, rep_objective, converged, eps=SUPPORT_EPS):
    S = np.flatnonzero(x > eps)
    w = x[S] / x[S].sum()
    membership = {int(v): float(d) for v, d in zip(S, w)}
    return Cluster(tuple(int(v) for v in S), membership, float(rep_objective), tag, converged)


def _main_component(A, x, min_strength=0.0, eps=SUPPORT_EPS):
    """Restrict ``x`` to the heaviest connected piece of its support.

    A point whose support splits into pieces with no edges between them sits
    on a flat stretch of the objective (typically several mutually unrelated
    constraint vertices at zero payoff); only one piece is a cluster.
    Connectivity is judged on members with ``|support| * x_v >= min_strength``
    so that a barely-present vertex cannot bridge two pieces.  Ties go to the
    piece holding the smallest vertex.
    """
    S = np.flatnonzero(x > eps)
    if len(S) < 2:
        return x, False
    strong = S[len(S) * x[S] >= min_strength]
    k, labels = connected_components(np.asarray(A)[np.ix_(strong, strong)] > 0, directed=False)
    if k == 1:
        return x, False
    mass = np.bincount(labels, weights=x[strong])
    best = max(range(k), key=lambda c: (mass[c], -strong[labels == c].min()))
    y = np.zeros_like(x)
    keep = strong[labels == best]
    y[keep] = x[keep] / x[keep].sum()
    return y, True


def _extractions(A, Q, solver_kw, min_strength=0.0):
    """Yield ``(constraint snapshot, report)`` until every member of Q is clustered."""
    remaining = sorted({int(q) for q in Q})
    if not remaining:
        raise ValueError("constraint set must be nonempty")
    while remaining:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rep = fast_cdsc(A, remaining, **solver_kw)
        snapshot = list(remaining)
        x, split = _main_component(A, rep.x, min_strength)
        if split:
            rep.x = x
            rep.objective = objective(A, ConstraintSpec(len(x), remaining, rep.alpha), x)
        hit = set(int(v) for v in np.flatnonzero(rep.x > SUPPORT_EPS)) & set(remaining)
        if not hit:
            # only possible for a non-converged solve; fall back to the first
            # constraint vertex as its own cluster so the loop terminates
            rep.converged = False
            rep.x = np.zeros(A.shape[0])
            rep.x[remaining[0]] = 1.0
            rep.objective = 0.0
            hit = {remaining[0]}
        yield snapshot, rep
        remaining = [q for q in remaining if q not in hit]


def find_constrained_sets(Q, A, min_strength=0.0, **solver_kw) -> list:
    """All local solutions obtained while shrinking ``Q`` by what got clustered.

    Returns the solution vectors in extraction order.
    """
    return [rep.x for _, rep in _extractions(A, Q, solver_kw, min_strength)]


def enumerate_clusters(A, Q0, tag=0, min_strength=0.0, **solver_kw) -> ClusterCollection:
    """Extract clusters until every vertex of ``Q0`` is in at least one.

    Vertices are never removed from the graph; after each extraction the
    constraint set loses the vertices just clustered, which makes the old
    cluster unstable under the penalized dynamics.  A vertex may therefore
    end up in more than one cluster (see :func:`assign_unique`).
    """
    out = ClusterCollection()
    for _, rep in _extractions(A, Q0, solver_kw, min_strength):
        if not rep.converged:
            warnings.warn(f"cluster {len(out)} (tag {tag}) from a non-converged solve",
                          RuntimeWarning, stacklevel=2)
        out.add(_cluster_from(rep.x, tag, rep.objective, rep.converged))
    return out


def assign_unique(collection: ClusterCollection, vertices=None) -> dict:
    """Map each vertex to the cluster maximizing ``|cluster| * membership``.

    Ties go to the earlier-extracted cluster.
    """
    best = {}
    for k, c in enumerate(collection.clusters):
        size = len(c.support)
        for v, d in c.membership.items():
            score = size * d
            if v not in best or score > best[v][0]:
                best[v] = (score, k)
    if vertices is not None:
        missing = [v for v in vertices if v not in best]
        if missing:
            raise KeyError(f"vertices {missing} are in no cluster")
    return {v: k for v, (_, k) in sorted(best.items())}


def rank_by_membership(A, query, mode: str = "membership", distances=None,
                       **solver_kw) -> list:
    """Rank the co-members of the constrained dominant set grown from ``query``.

    ``membership`` mode sorts by descending membership score; ``distance``
    mode sorts the same members by ascending mean distance to the query
    vertices (``distances`` is an n x n matrix).
    """
    query = sorted({int(q) for q in query})
    if not query:
        raise ValueError("query must be nonempty")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = fast_cdsc(A, query, **solver_kw)
    x = rep.x
    members = [int(v) for v in np.flatnonzero(x > SUPPORT_EPS) if v not in set(query)]
    if mode == "membership":
        members.sort(key=lambda v: (-x[v], v))
        return [(v, float(x[v])) for v in members]
    if mode == "distance":
        if distances is None:
            raise ValueError("distance mode needs a distance matrix")
        D = np.asarray(distances, dtype=float)
        score = {v: float(np.mean(D[v, query])) for v in members}
        members.sort(key=lambda v: (score[v], v))
        return [(v, score[v]) for v in members]
    raise ValueError(f"unknown ranking mode {mode!r}")
