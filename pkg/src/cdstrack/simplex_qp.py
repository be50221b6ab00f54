"""Parametrized simplex quadratic program and its solvers.

The program maximizes ``x' (A - alpha * I_Q) x`` over the probability simplex,
where ``I_Q`` is diagonal with ones on the vertices *outside* the constraint
set ``Q``.  Choosing ``alpha`` above the largest eigenvalue of ``A`` restricted
to ``V \\ Q`` forces every local solution to put mass on ``Q``.

Two solvers are provided: :func:`local_maximizer` (discrete replicator
dynamics over the whole matrix) and :func:`fast_cdsc`, which grows a small
subgraph with pure-strategy infections and only runs the dynamics there.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

SUPPORT_EPS = 1e-8
KKT_TOL = 1e-6
MAX_ITER = 10_000
EXACT_MARGIN = 1e-4
FAST_MARGIN = 1.0


class DegeneratePayoffError(ArithmeticError):
    pass


def as_affinity(weights, check=True) -> np.ndarray:
    """Return ``weights`` as a read-only float array, validating the invariants."""
    A = np.array(weights, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"affinity must be square, got shape {A.shape}")
    if check:
        if not np.all(np.isfinite(A)):
            raise ValueError("affinity has non-finite entries")
        if np.any(A < 0):
            raise ValueError("affinity has negative entries")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12):
            raise ValueError("affinity is not symmetric")
        if np.any(np.diag(A) != 0):
            raise ValueError("affinity diagonal must be zero")
    A.setflags(write=False)
    return A


def barycenter(n: int, subset=None) -> np.ndarray:
    x = np.zeros(n)
    if subset is None:
        x[:] = 1.0 / n
    else:
        idx = np.asarray(sorted(subset), dtype=int)
        x[idx] = 1.0 / len(idx)
    return x


def support(x, eps: float = SUPPORT_EPS) -> np.ndarray:
    return np.flatnonzero(np.asarray(x) > eps)


@dataclass(frozen=True)
class ConstraintSpec:
    """Constraint set ``Q`` of an ``n``-vertex problem plus the penalty ``alpha``."""

    n: int
    Q: tuple
    alpha: float

    def __post_init__(self):
        q = tuple(sorted({int(i) for i in self.Q}))
        if not q:
            raise ValueError("constraint set must be nonempty")
        if q[0] < 0 or q[-1] >= self.n:
            raise ValueError(f"constraint set {q} out of range for n={self.n}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        object.__setattr__(self, "Q", q)

    @property
    def mask(self) -> np.ndarray:
        """1 on ``V \\ Q``, 0 on ``Q``."""
        m = np.ones(self.n)
        m[list(self.Q)] = 0.0
        return m

    def restrict(self, H) -> "ConstraintSpec":
        """The same problem on the principal subgraph ``H`` (which must contain Q)."""
        H = list(H)
        pos = {v: k for k, v in enumerate(H)}
        return ConstraintSpec(len(H), tuple(pos[q] for q in self.Q), self.alpha)


@dataclass
class SolveReport:
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    wall_time: float
    converged: bool = True
    alpha: float = float("nan")
    history: list = field(default_factory=list, repr=False)

    @property
    def support(self) -> np.ndarray:
        return support(self.x)


def _check_dims(A, x):
    if len(x) != A.shape[0]:
        raise ValueError(f"vector of length {len(x)} does not match {A.shape[0]}-vertex affinity")


def objective(A, spec: ConstraintSpec, x) -> float:
    """``x'Ax - alpha * sum_{i not in Q} x_i**2``."""
    x = np.asarray(x, dtype=float)
    _check_dims(A, x)
    if spec.n != len(x):
        raise ValueError("constraint spec size does not match vector")
    return float(x @ (A @ x) - spec.alpha * np.sum(spec.mask * x * x))


def _gradient(A, spec, x):
    # half-gradient of the objective: (A - alpha I_Q) x
    return A @ x - spec.alpha * spec.mask * x


def _sub_lambda_max(A, Q):
    n = A.shape[0]
    rest = np.setdiff1d(np.arange(n), np.asarray(sorted(Q), dtype=int))
    return A[np.ix_(rest, rest)]


def lambda_max(B, tol: float = 1e-10, max_iter: int = 10_000) -> tuple[float, float]:
    """Bracket the largest eigenvalue of a symmetric nonnegative matrix.

    Power iteration on ``B + cI`` (``c`` = max row sum keeps every iterate
    positive and kills the -rho eigenvalue of bipartite graphs).  Returns
    ``(lower, upper)``: the Rayleigh quotient and the Collatz-Wielandt bound.
    """
    B = np.asarray(B, dtype=float)
    m = B.shape[0]
    if m == 0:
        return 0.0, 0.0
    deg = B.sum(axis=1)
    c = float(deg.max())
    if c == 0.0:
        return 0.0, 0.0
    v = np.ones(m) / np.sqrt(m)
    lo, hi = 0.0, c
    for _ in range(max_iter):
        w = B @ v + c * v
        lo = float(v @ w) - c
        hi = float(np.max(w / v)) - c
        v = w / np.linalg.norm(w)
        np.maximum(v, 1e-300, out=v)
        if hi - lo <= tol * max(1.0, abs(hi)):
            break
    return lo, min(hi, c)


def alpha_bound(A, Q, mode: str = "exact") -> float:
    """Penalty strictly above ``lambda_max(A[V\\Q, V\\Q])``.

    ``exact`` uses the certified power-iteration upper bound plus a relative
    margin; ``fast`` uses the maximum weighted degree plus one.
    """
    sub = _sub_lambda_max(A, Q)
    if mode == "exact":
        if sub.size == 0:
            return EXACT_MARGIN
        _, hi = lambda_max(sub)
        return hi + EXACT_MARGIN * (1.0 + hi)
    if mode == "fast":
        if sub.size == 0:
            return FAST_MARGIN
        return float(sub.sum(axis=1).max()) + FAST_MARGIN
    raise ValueError(f"unknown alpha mode {mode!r}")


def replicator_step(A, spec: ConstraintSpec, x) -> np.ndarray:
    """One discrete replicator update on the shifted, nonnegative payoff.

    ``M = A - alpha*diag(I_Q) + alpha*J``; since ``x`` sums to one,
    ``Mx = g + alpha`` and ``x'Mx = f + alpha``.
    """
    x = np.asarray(x, dtype=float)
    _check_dims(A, x)
    Mx = _gradient(A, spec, x) + spec.alpha
    xMx = float(x @ Mx)
    if xMx <= 0:
        raise DegeneratePayoffError("x'Mx is zero; the shifted payoff is degenerate at x")
    return x * Mx / xMx


def _residual(g, f, x, eps):
    on = x > eps
    r_on = np.max(np.abs(g[on] - f)) if on.any() else 0.0
    r_off = np.max(g[~on] - f) if (~on).any() else 0.0
    return max(float(r_on), float(r_off), 0.0)


def kkt_residual(A, spec: ConstraintSpec, x, support_eps: float = SUPPORT_EPS) -> float:
    """Largest violation of the first-order conditions at ``x``."""
    x = np.asarray(x, dtype=float)
    _check_dims(A, x)
    g = _gradient(A, spec, x)
    f = float(x @ g)
    return _residual(g, f, x, support_eps)


def dominant_distribution(A, spec: ConstraintSpec, x, tol: float = 0.0,
                          support_eps: float = SUPPORT_EPS):
    """Vertex ``i`` outside the support with ``(Ax)_i > f(x) + tol``, or None.

    Picks the largest gap; ties go to the lowest index.  ``e_i`` is then a
    dominant distribution for ``x`` since ``x_i`` is (numerically) zero.
    Only the support columns of ``A`` are touched.
    """
    x = np.asarray(x, dtype=float)
    _check_dims(A, x)
    S = support(x, support_eps)
    xs = x[S]
    Ax = A[:, S] @ xs
    f = float(xs @ Ax[S]) - spec.alpha * float(np.sum(spec.mask[S] * xs * xs))
    gap = Ax - f
    gap[S] = -np.inf
    i = int(np.argmax(gap))
    if gap[i] > tol:
        return i
    return None


def _infect(A, spec, x, i):
    """Move ``x`` toward ``e_i`` by the step maximizing the objective."""
    g = _gradient(A, spec, x)
    f = float(x @ g)
    gain = g[i] - f
    curv = -spec.alpha * spec.mask[i] - 2.0 * g[i] + f
    eps = 1.0 if curv >= 0 else min(1.0, gain / -curv)
    y = (1.0 - eps) * x
    y[i] += eps
    return y


def _solve_face(A, pen, S, support_eps, drops=3):
    """Stationary point of the objective on the face ``S``; coordinates that
    come out non-positive are dropped and the solve repeated."""
    for _ in range(drops):
        k = len(S)
        if k == 0:
            return None, None, None
        B = A[np.ix_(S, S)] - np.diag(pen[S])
        K = np.zeros((k + 1, k + 1))
        K[:k, :k] = B
        K[:k, k] = -1.0
        K[k, :k] = 1.0
        rhs = np.zeros(k + 1)
        rhs[k] = 1.0
        try:
            y = np.linalg.solve(K, rhs)[:k]
        except np.linalg.LinAlgError:
            return None, None, None
        if not np.all(np.isfinite(y)):
            return None, None, None
        if np.all(y > support_eps):
            return S, y, B
        S = S[y > support_eps]
    return None, None, None


def _face_solution(A, pen, x, g, f, tol, support_eps, max_face=256):
    """Stationary point of the objective on a face near the iterate, if it is
    a strict local maximizer on that face, satisfies the off-face conditions
    and does not lower the objective.  Otherwise None.

    Candidate faces: the numerical support minus the coordinates whose gain
    is already clearly negative, then the whole numerical support.  Faces
    larger than ``max_face`` are skipped (the dense solve would dominate).
    """
    live = x > support_eps
    full = np.flatnonzero(live)
    alt = np.flatnonzero(live & (g - f > -10 * tol))
    cands = [alt] if 0 < len(alt) < len(full) else []
    cands.append(full)
    for S in cands:
        # a face that is too small leaves outside vertices with positive
        # gain; add the best one and re-solve (active-set pivoting)
        for _ in range(max_face):
            if len(S) > max_face:
                break
            S, y, B = _solve_face(A, pen, S, support_eps)
            if S is None:
                break
            z = np.zeros(len(x))
            z[S] = y / y.sum()
            gz = A[:, S] @ z[S] - pen * z
            fz = float(z @ gz)
            out = np.full(len(x), -np.inf)
            out[S] = 0.0
            gain = np.where(np.isinf(out), gz - fz, -np.inf)
            j = int(np.argmax(gain))
            if gain[j] > tol:
                S = np.sort(np.append(S, j))
                continue
            if fz < f or _residual(gz, fz, z, support_eps) > tol:
                break
            k = len(S)
            if k > 1:
                P = np.eye(k)[:, :-1] - np.eye(k)[:, [-1]]
                if np.max(np.linalg.eigvalsh(P.T @ B @ P)) >= 0:
                    break
            return z
    return None


def local_maximizer(A, spec: ConstraintSpec, x0=None, tol: float = KKT_TOL,
                    max_iter: int = MAX_ITER, support_eps: float = SUPPORT_EPS,
                    record: bool = False, polish_every: int = 25) -> SolveReport:
    """Run replicator dynamics from ``x0`` (default: barycenter of the simplex).

    Replicator dynamics cannot revive an exactly-zero coordinate, so when the
    iterate is stationary on its face but some zero coordinate still has a
    positive gain, that coordinate is infected before continuing.

    Every ``polish_every`` steps the stationary point of the current face is
    tried; it is accepted only when it is a certified KKT point that is no
    worse than the iterate.  This cuts the long tail of near-degenerate
    coordinates that the dynamics would otherwise shrink one ulp at a time.
    ``polish_every=0`` gives plain replicator dynamics.
    """
    t0 = time.perf_counter()
    n = A.shape[0]
    if spec.n != n:
        raise ValueError("constraint spec size does not match affinity")
    if not np.any(A > 0):
        x = barycenter(n, spec.Q)
        return SolveReport(x, objective(A, spec, x), kkt_residual(A, spec, x, support_eps),
                           0, time.perf_counter() - t0, True, spec.alpha)
    x = barycenter(n) if x0 is None else np.array(x0, dtype=float)
    _check_dims(A, x)
    if np.any(x < 0) or abs(x.sum() - 1.0) > 1e-9:
        raise ValueError("initial point is not in the simplex")
    shift = spec.alpha
    pen = spec.alpha * spec.mask
    history = []
    converged = False
    it = 0
    while True:
        g = A @ x - pen * x
        f = float(x @ g)
        if record:
            history.append(f)
        res = _residual(g, f, x, support_eps)
        if res <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        if polish_every and it and it % polish_every == 0:
            z = _face_solution(A, pen, x, g, f, tol, support_eps)
            if z is not None:
                x = z
                it += 1
                continue
        live = x > 0
        dead_gain = np.where(live, -np.inf, g - f)
        j = int(np.argmax(dead_gain))
        if dead_gain[j] > tol and _residual(g[live], f, x[live], support_eps) <= tol:
            x = _infect(A, spec, x, j)
        else:
            Mx = g + shift
            xMx = f + shift
            if xMx <= 0:
                raise DegeneratePayoffError("x'Mx is zero; the shifted payoff is degenerate at x")
            x = x * Mx / xMx
        it += 1
    if not converged:
        warnings.warn(f"local_maximizer stopped after {it} iterations, residual {res:.3g}",
                      RuntimeWarning, stacklevel=2)
    return SolveReport(x, f, res, it, time.perf_counter() - t0, converged, spec.alpha, history)


def fast_cdsc(A, Q, alpha: float | None = None, alpha_mode: str = "exact",
              tol: float = KKT_TOL, max_iter: int = MAX_ITER,
              support_eps: float = SUPPORT_EPS, max_outer: int | None = None,
              record: bool = False) -> SolveReport:
    """Constrained dominant set containing part of ``Q``, solved locally.

    Starts from the barycenter of the face spanned by ``Q``, settles the
    dynamics there, then repeatedly infects the best pure strategy found on
    the full graph and re-solves on ``support(x) | {i} | Q`` only.
    ``alpha`` is fixed once for the whole call so every outer step improves
    the same objective.
    """
    t0 = time.perf_counter()
    n = A.shape[0]
    Q = sorted({int(q) for q in Q})
    if not Q:
        raise ValueError("constraint set must be nonempty")
    if alpha is None:
        alpha = alpha_bound(A, Q, alpha_mode)
    spec = ConstraintSpec(n, tuple(Q), alpha)
    max_outer = n if max_outer is None else max_outer
    qset = set(Q)

    def solve_on(H, xH):
        sub = A[np.ix_(H, H)]
        return local_maximizer(sub, spec.restrict(H), xH, tol=tol, max_iter=max_iter,
                               support_eps=support_eps)

    x = np.zeros(n)
    H = np.asarray(Q)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = solve_on(H, barycenter(len(H)))
        inner_ok = rep.converged
        x[H] = rep.x
        iters = rep.iterations
        history = [objective(A, spec, x)] if record else []
        outer = 0
        converged = False
        while True:
            i = dominant_distribution(A, spec, x, tol=tol, support_eps=support_eps)
            if i is None:
                converged = True
                break
            if outer >= max_outer:
                break
            H = np.asarray(sorted(set(support(x, support_eps)) | {i} | qset))
            xH = _infect(A[np.ix_(H, H)], spec.restrict(H), x[H], int(np.searchsorted(H, i)))
            rep = solve_on(H, xH)
            inner_ok = inner_ok and rep.converged
            iters += rep.iterations
            x = np.zeros(n)
            x[H] = rep.x
            outer += 1
            if record:
                history.append(objective(A, spec, x))
    res = kkt_residual(A, spec, x, support_eps)
    ok = converged and inner_ok and res <= tol
    if not ok:
        warnings.warn(f"fast_cdsc did not converge (outer={outer}, residual={res:.3g})",
                      RuntimeWarning, stacklevel=2)
    return SolveReport(x, objective(A, spec, x), res, iters, time.perf_counter() - t0,
                       ok, alpha, history)
