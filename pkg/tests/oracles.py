"""Independent reference computations used to freeze expected values.

Nothing here calls into the solvers under test.
"""
import itertools

import numpy as np


def penalized(A, Q, alpha):
    A = np.asarray(A, dtype=float)
    mask = np.ones(len(A))
    mask[list(Q)] = 0.0
    return A - alpha * np.diag(mask)


def brute_force_local_maximizers(A, Q, alpha, tol=1e-9):
    """All strict local maximizers of x'(A - alpha I_Q)x over the simplex.

    Enumerates every support S, solves B_S x = mu 1, 1'x = 1, and keeps the
    points that are positive on S, satisfy the off-support KKT inequalities
    and have a negative definite Hessian on the tangent space of the face.
    Returns a list of (objective, support tuple, x).
    """
    B = penalized(A, Q, alpha)
    n = len(B)
    out = []
    for k in range(1, n + 1):
        for S in itertools.combinations(range(n), k):
            S = list(S)
            BS = B[np.ix_(S, S)]
            K = np.zeros((k + 1, k + 1))
            K[:k, :k] = BS
            K[:k, k] = -1.0
            K[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            xs = sol[:k]
            if np.any(xs <= tol):
                continue
            x = np.zeros(n)
            x[S] = xs
            g = B @ x
            f = x @ g
            off = [j for j in range(n) if j not in S]
            if off and np.max(g[off]) > f - tol:
                continue
            if k > 1:
                # basis of {v : sum v = 0}
                P = np.eye(k)[:, :-1] - np.eye(k)[:, [-1]]
                H = P.T @ BS @ P
                if np.max(np.linalg.eigvalsh(H)) >= -tol:
                    continue
            out.append((float(f), tuple(S), x))
    return out


def best_constrained_objective(A, Q, alpha):
    sols = [s for s in brute_force_local_maximizers(A, Q, alpha) if set(s[1]) & set(Q)]
    return max(sols, key=lambda s: s[0])


def global_max_objective(A, Q, alpha, tol=1e-9):
    """max of the objective over the simplex as the best KKT point of any face."""
    B = penalized(A, Q, alpha)
    n = len(B)
    best = -np.inf
    for k in range(1, n + 1):
        for S in itertools.combinations(range(n), k):
            S = list(S)
            BS = B[np.ix_(S, S)]
            K = np.zeros((k + 1, k + 1))
            K[:k, :k] = BS
            K[:k, k] = -1.0
            K[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            xs = sol[:k]
            if np.any(xs < -tol):
                continue
            best = max(best, float(xs @ BS @ xs))
    return best


def lambda_max_eigh(B):
    B = np.asarray(B, dtype=float)
    if B.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(B)[-1])


def random_affinity(rng, n, density=1.0):
    W = rng.random((n, n))
    W = np.triu(W, 1)
    if density < 1.0:
        W *= np.triu(rng.random((n, n)) < density, 1)
    return W + W.T


def numeric_replicator(A, Q, alpha, x):
    """Textbook update written out entry by entry."""
    B = penalized(A, Q, alpha)
    n = len(B)
    M = [[B[i][j] + alpha for j in range(n)] for i in range(n)]
    Mx = [sum(M[i][j] * x[j] for j in range(n)) for i in range(n)]
    xMx = sum(x[i] * Mx[i] for i in range(n))
    return np.array([x[i] * Mx[i] / xMx for i in range(n)])


def exhaustive_idf1(truth_frames, pred_frames):
    """IDF1 by trying every one-to-one matching of truth to predicted identities.

    Both arguments map identity -> set of (camera, frame, x, y, w, h) keys;
    boxes are assumed exact or disjoint, so co-location is set intersection.
    """
    t_ids, p_ids = sorted(truth_frames), sorted(pred_frames)
    best = 0
    slots = p_ids + [None] * len(t_ids)
    for perm in itertools.permutations(slots, len(t_ids)):
        tp = sum(len(truth_frames[t] & pred_frames[p]) for t, p in zip(t_ids, perm) if p is not None)
        best = max(best, tp)
    n_t = sum(len(v) for v in truth_frames.values())
    n_p = sum(len(v) for v in pred_frames.values())
    return 2 * best / (n_t + n_p)
