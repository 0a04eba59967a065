"""Weighted soft-margin SVM: RBF kernel, SMO dual solver, prediction,
class/point weights and a small dense QP oracle used by the tests."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit



class SolverError(ValueError):
    pass


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise SolverError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    if gamma <= 0:
        raise SolverError("gamma must be positive")
    diff = x - y
    return math.exp(-gamma * float(diff @ diff))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    d2 = (
        np.einsum("ij,ij->i", A, A)[:, None]
        - 2.0 * A @ B.T
        + np.einsum("ij,ij->i", B, B)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    d2 *= -gamma
    return np.exp(d2, out=d2)


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i
    b: float
    gamma: float
    C: float
    w_pos: float = 1.0
    w_neg: float = 1.0
    support: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    level: int = 0
    iterations: int = 0
    converged: bool = True

    @property
    def n_sv(self) -> int:
        return self.support_vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def decision_function(self, X, chunk: int = 4096) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.n_sv == 0:
            return np.full(X.shape[0], self.b)
        if X.shape[1] != self.dim:
            raise SolverError(f"dimension mismatch: model {self.dim}, input {X.shape[1]}")
        # positive and negative terms are summed apart so symmetric
        # configurations cancel exactly instead of leaving FMA residue
        cp = np.maximum(self.dual_coef, 0.0)
        cn = np.maximum(-self.dual_coef, 0.0)
        out = np.empty(X.shape[0])
        for lo in range(0, X.shape[0], chunk):
            K = rbf_matrix(X[lo : lo + chunk], self.support_vectors, self.gamma)
            out[lo : lo + chunk] = (K @ cp - K @ cn) + self.b
        return out

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1, -1)


def predict(m: SvmModel, x) -> tuple[float, int]:
    """Decision value and label for a single point; sign(0) is +1."""
    x = np.asarray(x, dtype=float).ravel()
    if m.n_sv and x.shape[0] != m.dim:
        raise SolverError(f"dimension mismatch: model {m.dim}, input {x.shape[0]}")
    val = float(m.decision_function(x[None, :])[0])
    return val, 1 if val >= 0 else -1


# ---------------------------------------------------------------------------
# SMO


@njit(cache=True, nogil=True)
def _kernel_row(X, sq, i, gamma, out):
    n, d = X.shape
    for t in range(n):
        dot = 0.0
        for k in range(d):
            dot += X[i, k] * X[t, k]
        d2 = sq[i] + sq[t] - 2.0 * dot
        if d2 < 0.0:
            d2 = 0.0
        out[t] = math.exp(-gamma * d2)


@njit(cache=True, nogil=True)
def _get_row(X, sq, i, gamma, cache, slot_of, owner, stamp, clock):
    s = slot_of[i]
    if s < 0:
        # least recently used slot
        s = 0
        for c in range(owner.size):
            if stamp[c] < stamp[s]:
                s = c
        if owner[s] >= 0:
            slot_of[owner[s]] = -1
        owner[s] = i
        slot_of[i] = s
        _kernel_row(X, sq, i, gamma, cache[s])
    stamp[s] = clock
    return cache[s]


@njit(cache=True, nogil=True)
def _smo(X, y, C, gamma, tol, max_iter, cache_rows):
    n = X.shape[0]
    sq = np.empty(n)
    for i in range(n):
        sq[i] = np.dot(X[i], X[i])
    alpha = np.zeros(n)
    G = -np.ones(n)
    cache = np.empty((cache_rows, n))
    slot_of = -np.ones(n, dtype=np.int64)
    owner = -np.ones(cache_rows, dtype=np.int64)
    stamp = np.zeros(cache_rows, dtype=np.int64)
    it = 0
    gap = np.inf
    converged = False
    while it < max_iter:
        # i: maximal violator in I_up
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C[t]) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * G[t]
                if v > gmax:
                    gmax = v
                    i = t
        gmax2 = -np.inf
        j = -1
        best = np.inf
        Ki = cache[0]
        if i >= 0:
            Ki = _get_row(X, sq, i, gamma, cache, slot_of, owner, stamp, 2 * it + 1)
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C[t]):
                v = y[t] * G[t]
                if v > gmax2:
                    gmax2 = v
                if i >= 0:
                    bgrad = gmax + v
                    if bgrad > 0.0:
                        a = 2.0 - 2.0 * Ki[t]
                        if a <= 0.0:
                            a = 1e-12
                        val = -(bgrad * bgrad) / a
                        if val < best:
                            best = val
                            j = t
        gap = gmax + gmax2
        if gap < tol or i < 0 or j < 0:
            converged = True
            break
        Kj = _get_row(X, sq, j, gamma, cache, slot_of, owner, stamp, 2 * it + 2)
        Ki = cache[slot_of[i]]
        Kij = Ki[j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        Ci = C[i]
        Cj = C[j]
        if y[i] != y[j]:
            quad = 2.0 + 2.0 * Kij * (y[i] * y[j])
            if quad <= 0.0:
                quad = 1e-12
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > Ci - Cj:
                if alpha[i] > Ci:
                    alpha[i] = Ci
                    alpha[j] = Ci - diff
            else:
                if alpha[j] > Cj:
                    alpha[j] = Cj
                    alpha[i] = Cj + diff
        else:
            quad = 2.0 - 2.0 * Kij
            if quad <= 0.0:
                quad = 1e-12
            delta = (G[i] - G[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > Ci:
                if alpha[i] > Ci:
                    alpha[i] = Ci
                    alpha[j] = s - Ci
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > Cj:
                if alpha[j] > Cj:
                    alpha[j] = Cj
                    alpha[i] = s - Cj
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        yi = y[i]
        yj = y[j]
        for t in range(n):
            G[t] += y[t] * (yi * Ki[t] * dai + yj * Kj[t] * daj)
        it += 1
    # bias
    ub = np.inf
    lb = -np.inf
    nfree = 0
    sfree = 0.0
    for t in range(n):
        yg = y[t] * G[t]
        if alpha[t] >= C[t]:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0.0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            sfree += yg
    if nfree > 0:
        rho = sfree / nfree
    else:
        rho = (ub + lb) / 2.0
    return alpha, -rho, it, converged, gap


def smo_solve(points, labels, bounds, gamma: float, tol: float = 1e-3,
              max_iter: int = 10_000_000, cache_mb: float = 512.0):
    """Raw dual solve. Returns (alpha, b, iterations, converged, final_gap)."""
    X = np.ascontiguousarray(points, dtype=float)
    y = np.asarray(labels, dtype=float).ravel()
    C = np.ascontiguousarray(bounds, dtype=float).ravel()
    n = X.shape[0]
    if y.shape[0] != n or C.shape[0] != n:
        raise SolverError("points, labels and bounds differ in length")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SolverError("both labels must be present")
    if np.any(C <= 0):
        raise SolverError("all box bounds must be positive")
    if gamma <= 0:
        raise SolverError("gamma must be positive")
    rows = int(min(n, max(2, cache_mb * 2**20 // (8 * max(n, 1)))))
    return _smo(X, y, C, float(gamma), float(tol), int(max_iter), rows)


def point_bounds(C: float, weights) -> np.ndarray:
    """Per-point box bounds C_i = C * W_i * n / sum(W).

    The rescaling keeps the mean bound equal to C, so the usual
    2^-10..2^10 search range stays meaningful for any weighting scheme.
    """
    w = np.asarray(weights, dtype=float)
    return C * w * (w.size / w.sum())


def smo_train(points, labels, C: float, per_point_weights=None, gamma: float = 1.0,
              tol: float = 1e-3, max_iter: int = 10_000_000, cache_mb: float = 512.0,
              level: int = 0) -> SvmModel:
    X = np.ascontiguousarray(points, dtype=float)
    y = np.asarray(labels).astype(np.int64).ravel()
    if per_point_weights is None:
        per_point_weights = np.ones(X.shape[0])
    W = np.asarray(per_point_weights, dtype=float)
    bounds = point_bounds(C, W)
    alpha, b, it, conv, gap = smo_solve(X, y, bounds, gamma, tol, max_iter, cache_mb)
    if not conv:
        warnings.warn(f"SMO stopped after {it} updates with KKT gap {gap:.3g}", RuntimeWarning)
    sv = np.flatnonzero(alpha > 0)
    pos, neg = y == 1, y == -1
    return SvmModel(
        support_vectors=X[sv].copy(),
        dual_coef=(alpha[sv] * y[sv]).astype(float),
        b=float(b),
        gamma=float(gamma),
        C=float(C),
        w_pos=float(W[pos].sum()),
        w_neg=float(W[neg].sum()),
        support=sv,
        level=level,
        iterations=int(it),
        converged=bool(conv),
    )


def dual_objective(alpha, labels, K) -> float:
    """sum(alpha) - 1/2 alpha^T Q alpha with Q_ij = y_i y_j K_ij (maximised)."""
    a = np.asarray(alpha, dtype=float)
    ya = a * np.asarray(labels, dtype=float)
    return float(a.sum() - 0.5 * ya @ K @ ya)


def kkt_violation(alpha, labels, bounds, K) -> float:
    """m(alpha) - M(alpha): the maximal-violating-pair gap (<= 0 at optimum)."""
    a = np.asarray(alpha, dtype=float)
    y = np.asarray(labels, dtype=float)
    C = np.asarray(bounds, dtype=float)
    G = y * (K @ (a * y)) - 1.0
    up = ((y > 0) & (a < C)) | ((y < 0) & (a > 0))
    low = ((y > 0) & (a > 0)) | ((y < 0) & (a < C))
    if not up.any() or not low.any():
        return 0.0
    return float(np.max(-y[up] * G[up]) - np.min(-y[low] * G[low]))


# ---------------------------------------------------------------------------
# weights


def class_weights(labels, volumes=None, scheme: str = "per_point") -> np.ndarray:
    """Per-point importance W_i.

    ``per_class``: 1 / (class volume). ``per_point``: the class weight times
    the point's share of its class volume. ``none``: all ones.
    """
    y = np.asarray(labels).ravel()
    v = np.ones(y.shape[0]) if volumes is None else np.asarray(volumes, dtype=float)
    if np.any(v <= 0):
        raise SolverError("volumes must be positive")
    if scheme == "none":
        return np.ones_like(v)
    W = np.empty_like(v)
    for cls in (1, -1):
        m = y == cls
        if not m.any():
            continue
        total = v[m].sum()
        if scheme == "per_class":
            W[m] = 1.0 / total
        elif scheme == "per_point":
            W[m] = (1.0 / total) * v[m] / total
        else:
            raise SolverError(f"unknown weight scheme {scheme!r}")
    return W


# ---------------------------------------------------------------------------
# dense oracle


def _project(z, y, C):
    """Euclidean projection onto {0 <= a <= C, y.a = 0} via the breakpoints of
    the piecewise-linear multiplier equation."""

    def g(lam):
        return y @ np.clip(z - lam * y, 0.0, C)

    bps = np.unique(np.concatenate([y * z, y * (z - C)]))
    vals = np.array([g(b) for b in bps])
    # g is non-increasing in lam
    if vals[0] <= 0.0:
        lam = bps[0]
    elif vals[-1] >= 0.0:
        lam = bps[-1]
    else:
        k = int(np.flatnonzero(vals < 0.0)[0])
        l0, l1, g0, g1 = bps[k - 1], bps[k], vals[k - 1], vals[k]
        lam = l0 + (l1 - l0) * g0 / (g0 - g1)
    return np.clip(z - lam * y, 0.0, C)


def _polish(alpha, y, C, Q, eps=1e-9):
    """Re-solve the equality-constrained QP on the free variables of
    ``alpha`` exactly; returns None when the result leaves the box."""
    upper = alpha >= C - eps * np.maximum(C, 1.0)
    lower = alpha <= eps * np.maximum(C, 1.0)
    free = ~(upper | lower)
    a = np.where(upper, C, 0.0)
    if not free.any():
        return a if abs(y @ a) < 1e-12 else None
    f = np.flatnonzero(free)
    fixed = np.flatnonzero(~free)
    m = f.size
    A = np.zeros((m + 1, m + 1))
    A[:m, :m] = Q[np.ix_(f, f)]
    A[:m, m] = y[f]
    A[m, :m] = y[f]
    rhs = np.zeros(m + 1)
    rhs[:m] = 1.0 - Q[np.ix_(f, fixed)] @ a[fixed]
    rhs[m] = -(y[fixed] @ a[fixed])
    try:
        sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    except np.linalg.LinAlgError:
        return None
    a[f] = sol[:m]
    if np.any(a < -1e-10) or np.any(a > C + 1e-10):
        return None
    return np.clip(a, 0.0, C)


def qp_oracle(points, labels, bounds, gamma: float, max_iter: int = 200_000,
              kkt_tol: float = 1e-11) -> np.ndarray:
    """Dense dual solution by accelerated projected gradient. Every 50 steps
    the iterate's free set is re-solved exactly; the first polished point that
    meets ``kkt_tol`` is returned. Only for n <= 50."""
    X = np.asarray(points, dtype=float)
    y = np.asarray(labels, dtype=float).ravel()
    C = np.asarray(bounds, dtype=float).ravel()
    n = X.shape[0]
    if n > 50:
        raise SolverError("qp_oracle is limited to n <= 50")
    K = rbf_matrix(X, X, gamma)
    Q = (y[:, None] * y[None, :]) * K
    L = max(np.linalg.eigvalsh(Q)[-1], 1e-12)

    def f(a):
        return 0.5 * a @ Q @ a - a.sum()

    def violation(a):
        G = Q @ a - 1.0
        up = ((y > 0) & (a < C)) | ((y < 0) & (a > 0))
        low = ((y > 0) & (a > 0)) | ((y < 0) & (a < C))
        if not up.any() or not low.any():
            return 0.0
        return float(np.max(-y[up] * G[up]) - np.min(-y[low] * G[low]))

    a = np.zeros(n)
    z = a.copy()
    t = 1.0
    prev = f(a)
    for it in range(max_iter):
        a_new = _project(z - (Q @ z - 1.0) / L, y, C)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = a_new + ((t - 1.0) / t_new) * (a_new - a)
        cur = f(a_new)
        if cur > prev:  # restart momentum
            z = a_new.copy()
            t_new = 1.0
        a, t, prev = a_new, t_new, cur
        if it % 50 == 49:
            polished = _polish(a, y, C, Q)
            if polished is not None and violation(polished) <= kkt_tol:
                return polished
    return a
