"""Gaussian-kernel SVM: SMO training, decision function and a small QP oracle.

The dual problem solved here is

    max  W(a) = sum(a) - 1/2 sum_ij a_i a_j y_i y_j k(x_i, x_j)
    s.t. 0 <= a_i <= C,  sum_i a_i y_i = 0

with k(x, z) = exp(-gamma * |x - z|^2).  Labels are +1 (gamma) / -1 (hadron).
"""

from __future__ import annotations

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataFormatError, InvalidArgument
from .rng import SplitMix64

log = logging.getLogger(__name__)

GAMMA_LABEL = 1
HADRON_LABEL = -1

FULL_GRAM_LIMIT = 8000
_TAU = 1e-12


def rbf_kernel(x, z, gamma: float) -> float:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape:
        raise InvalidArgument(f"kernel arguments differ in shape: {x.shape} vs {z.shape}")
    if not gamma > 0:
        raise InvalidArgument("gamma must be positive")
    d = x - z
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """Kernel matrix k(A[i], B[j]) using the expanded squared distance."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=int)
        if self.X.shape[0] != self.y.shape[0]:
            raise InvalidArgument("X and y have different lengths")
        if not np.all((self.y == 1) | (self.y == -1)):
            raise InvalidArgument("labels must be +1 or -1")

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=int)
        return LabeledDataset(self.X[idx], self.y[idx])


@dataclass
class SvmModel:
    gamma: float
    C: float
    support_vectors: np.ndarray
    dual_coeffs: np.ndarray
    bias: float
    normalizer: Optional[object] = None
    tol: float = 1e-3
    converged: bool = True
    iterations: int = 0
    seed: int = 0
    # full-length alphas from training, kept in memory only (not serialised)
    alpha: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_support(self) -> int:
        return len(self.dual_coeffs)

    def to_json(self) -> str:
        norm = self.normalizer
        doc = {
            "version": 1,
            "kernel": "rbf",
            "gamma": float(self.gamma),
            "C": float(self.C),
            "tol": float(self.tol),
            "bias": float(self.bias),
            "normalizer": None if norm is None else {
                "mean": [float(v) for v in norm.mean],
                "std": [float(v) for v in norm.std],
            },
            "support_vectors": [[float(v) for v in row] for row in self.support_vectors],
            "dual_coeffs": [float(v) for v in self.dual_coeffs],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "seed": int(self.seed),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "SvmModel":
        from .modelsel import Normalizer

        try:
            d = json.loads(text)
            if d.get("version") != 1 or d.get("kernel") != "rbf":
                raise DataFormatError("unsupported model file")
            norm = None
            if d.get("normalizer") is not None:
                norm = Normalizer(np.array(d["normalizer"]["mean"], dtype=float),
                                  np.array(d["normalizer"]["std"], dtype=float))
            return cls(
                gamma=float(d["gamma"]), C=float(d["C"]),
                support_vectors=np.array(d["support_vectors"], dtype=float),
                dual_coeffs=np.array(d["dual_coeffs"], dtype=float),
                bias=float(d["bias"]), normalizer=norm, tol=float(d["tol"]),
                converged=bool(d["converged"]), iterations=int(d.get("iterations", 0)),
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"bad model file: {exc}") from exc


class _KernelRows:
    """Row access to the training Gram matrix: dense when small, LRU-cached otherwise."""

    def __init__(self, X: np.ndarray, gamma: float, cache_mb: float = 1024.0):
        self.X = X
        self.gamma = gamma
        self.sq = (X * X).sum(1)
        n = len(X)
        self.full = None
        if n <= FULL_GRAM_LIMIT:
            self.full = np.vstack([self._compute(i) for i in range(n)])
        else:
            self.cache: OrderedDict = OrderedDict()
            self.capacity = max(2, int(cache_mb * 2**20 // (8 * n)))

    def _compute(self, i: int) -> np.ndarray:
        d2 = self.sq + self.sq[i] - 2.0 * (self.X @ self.X[i])
        np.maximum(d2, 0.0, out=d2)
        d2[i] = 0.0
        return np.exp(-self.gamma * d2)

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        r = self.cache.get(i)
        if r is None:
            r = self._compute(i)
            self.cache[i] = r
            if len(self.cache) > self.capacity:
                self.cache.popitem(last=False)
        else:
            self.cache.move_to_end(i)
        return r


def train_smo(
    data: LabeledDataset,
    C: float,
    gamma: float,
    tol: float = 1e-3,
    max_passes: int = 50,
    seed: int = 0,
    max_iter: int = 10_000_000,
    normalizer=None,
) -> SvmModel:
    """Train with SMO using maximal-violating-pair / second-order working sets.

    The examples are visited in a seeded random order, which only decides
    ties in the working-set selection.  Training stops when the violation gap
    ``max_up(-y G) - min_low(-y G)`` drops below ``tol``; it gives up (and
    flags the model non-converged) after ``max_passes`` sweeps of ``n``
    iterations without a new best gap, or after ``max_iter`` iterations.
    """
    X, y_in = data.X, data.y
    n = len(y_in)
    if n < 2 or not (np.any(y_in == 1) and np.any(y_in == -1)):
        raise InvalidArgument("training needs at least one example of each class")
    if not (C > 0 and gamma > 0):
        raise InvalidArgument("C and gamma must be positive")
    if not 0 < tol <= 1e-2:
        raise InvalidArgument("tol must be in (0, 1e-2]")

    order = np.array(SplitMix64(seed).shuffle(list(range(n))), dtype=np.int64)
    Xp = X[order]
    y = y_in[order].astype(float)
    rows = _KernelRows(Xp, gamma)

    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    best_gap = np.inf
    stale = 0
    converged = False
    it = 0
    while it < max_iter:
        g = -y * G
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        gu = np.where(up, g, -np.inf)
        i = int(np.argmax(gu))
        m_up = gu[i]
        gl = np.where(low, g, np.inf)
        M_low = gl.min()
        gap = m_up - M_low
        if gap < tol:
            converged = True
            break
        if gap < best_gap:
            best_gap = gap
            stale = 0
        else:
            stale += 1
            if stale >= max_passes * n:
                break

        Ki = rows.row(i)
        b = m_up - gl  # > 0 only for violating candidates
        cand = low & (b > 0)
        a_it = 2.0 - 2.0 * Ki  # K_ii = K_tt = 1 for the RBF kernel
        a_it = np.where(a_it > 0, a_it, _TAU)
        score = np.where(cand, -(b * b) / a_it, np.inf)
        j = int(np.argmin(score))
        Kj = rows.row(j)

        yi, yj = y[i], y[j]
        ai_old, aj_old = alpha[i], alpha[j]
        quad = max(2.0 - 2.0 * Ki[j], _TAU)
        if yi != yj:
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (G[i] - G[j]) / quad
            s = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if s > C:
                if ai > C:
                    ai, aj = C, s - C
            elif aj < 0:
                aj, ai = 0.0, s
            if s > C:
                if aj > C:
                    aj, ai = C, s - C
            elif ai < 0:
                ai, aj = 0.0, s
        alpha[i], alpha[j] = ai, aj
        G += (yi * (ai - ai_old)) * y * Ki + (yj * (aj - aj_old)) * y * Kj
        it += 1

    if not converged:
        log.warning("SMO stopped without converging (C=%g gamma=%g, %d iterations)", C, gamma, it)

    g = -y * G
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        bias = float(g[free].mean())
    else:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        hi = g[up].max() if np.any(up) else g.max()
        lo = g[low].min() if np.any(low) else g.min()
        bias = float(0.5 * (hi + lo))

    alpha_orig = np.empty(n)
    alpha_orig[order] = alpha
    sv = np.flatnonzero(alpha_orig > 0)
    return SvmModel(
        gamma=float(gamma), C=float(C),
        support_vectors=X[sv].copy(),
        dual_coeffs=alpha_orig[sv] * y_in[sv],
        bias=bias, normalizer=normalizer, tol=float(tol),
        converged=converged, iterations=it, seed=int(seed), alpha=alpha_orig,
    )


def decision_values(model: SvmModel, X, raw: bool = False) -> np.ndarray:
    """Vectorised decision function; ``raw=True`` applies the model's normalizer first."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.support_vectors.shape[1]:
        raise InvalidArgument(
            f"feature dimension {X.shape[1]} != model dimension {model.support_vectors.shape[1]}")
    if raw:
        if model.normalizer is None:
            raise InvalidArgument("model has no normalizer")
        X = model.normalizer.apply(X)
    K = rbf_matrix(X, model.support_vectors, model.gamma)
    return K @ model.dual_coeffs + model.bias


def decision_value(model: SvmModel, x, raw: bool = False) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidArgument("decision_value takes a single feature vector")
    return float(decision_values(model, x[None, :], raw=raw)[0])


def sign_label(f):
    """+1 for f >= 0 (borderline events are kept), else -1."""
    return np.where(np.asarray(f) >= 0, 1, -1)


def predict(model: SvmModel, x, raw: bool = False) -> int:
    return int(sign_label(decision_value(model, x, raw=raw)))


def predict_many(model: SvmModel, X, raw: bool = False) -> np.ndarray:
    return sign_label(decision_values(model, X, raw=raw))


def dual_objective(alpha, X, y, gamma: float) -> float:
    alpha = np.asarray(alpha, dtype=float)
    y = np.asarray(y, dtype=float)
    v = alpha * y
    K = rbf_matrix(X, X, gamma)
    return float(alpha.sum() - 0.5 * v @ K @ v)


def kkt_violations(model: SvmModel, data: LabeledDataset) -> np.ndarray:
    """Per-example violation of the soft-margin KKT conditions (0 when satisfied)."""
    if model.alpha is None:
        raise InvalidArgument("model does not carry training alphas")
    a = model.alpha
    yf = data.y * decision_values(model, data.X)
    C = model.C
    v = np.zeros(len(a))
    at0 = a <= 0
    atC = a >= C
    free = ~at0 & ~atC
    v[at0] = np.maximum(0.0, 1.0 - yf[at0])
    v[atC] = np.maximum(0.0, yf[atC] - 1.0)
    v[free] = np.abs(yf[free] - 1.0)
    return v


# ---------------------------------------------------------------------------
# verification oracle

@dataclass
class QPSolution:
    alpha: np.ndarray
    objective: float
    iterations: int
    step_residual: float
    polished: bool


def _project(v: np.ndarray, y: np.ndarray, C: float) -> np.ndarray:
    """Euclidean projection onto {0 <= a <= C, y.a = 0} via the breakpoints of h(lam)."""

    def at(lam):
        return np.clip(v - lam * y, 0.0, C)

    def h(lam):
        return float(y @ at(lam))

    bps = np.unique(np.concatenate([v * y, (v - C) * y]))  # y_i = +-1
    hv = np.array([h(b) for b in bps])
    # h is non-increasing; it is >= 0 at the first breakpoint and <= 0 at the last
    k = int(np.searchsorted(-hv, 0.0))
    if k < len(bps) and hv[k] == 0.0:
        return at(bps[k])
    if k == 0:
        return at(bps[0])
    if k == len(bps):
        return at(bps[-1])
    l0, l1, h0, h1 = bps[k - 1], bps[k], hv[k - 1], hv[k]
    return at(l0 + (l1 - l0) * h0 / (h0 - h1))


def _gram_direct(X: np.ndarray, gamma: float) -> np.ndarray:
    d = X[:, None, :] - X[None, :, :]
    return np.exp(-gamma * np.einsum("ijk,ijk->ij", d, d))


def min_eigenvalue(K: np.ndarray, iters: int = 100_000, tol: float = 1e-15) -> float:
    """Smallest eigenvalue of a symmetric matrix by power iteration on ``s*I - K``."""
    K = np.asarray(K, dtype=float)
    n = len(K)
    s = float(np.abs(K).sum(1).max())  # Gershgorin bound on the spectrum
    B = s * np.eye(n) - K
    v = np.ones(n) / np.sqrt(n) + np.linspace(0, 1e-3, n)
    v /= np.linalg.norm(v)
    mu = 0.0
    for _ in range(iters):
        w = B @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            break
        w /= nrm
        mu_new = float(w @ B @ w)
        if abs(mu_new - mu) <= tol * max(1.0, abs(mu_new)):
            mu = mu_new
            break
        v, mu = w, mu_new
    return s - mu


def brute_force_qp(
    data: LabeledDataset, C: float, gamma: float, max_iter: int = 1_000_000,
    step_tol: float = 1e-10, stall_iter: int = 5000,
) -> QPSolution:
    """Solve the dual by accelerated projected-gradient ascent, then an active-set polish.

    Intended for n <= 12.  The step starts at 1/L (L from power iteration)
    and is halved whenever a step fails to increase the objective.  After
    the iteration stops, the free set is fixed and the equality-constrained
    KKT system is solved exactly; the polished point is kept only if it is
    feasible and not worse.  Iteration also stops once the objective has
    not increased for ``stall_iter`` iterations (rounding-level oscillation);
    the last step size is reported as ``step_residual``.
    """
    X, y = data.X, data.y.astype(float)
    n = len(y)
    if n > 12:
        raise InvalidArgument("brute_force_qp is limited to n <= 12")
    K = _gram_direct(X, gamma)
    Q = (y[:, None] * y[None, :]) * K

    def W(a):
        return float(a.sum() - 0.5 * a @ Q @ a)

    lam_max = s = float(np.abs(Q).sum(1).max())
    v = np.ones(n) / np.sqrt(n)
    for _ in range(500):
        w = Q @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        v = w / nw
        lam_max = float(v @ Q @ v)
    step = 1.0 / max(lam_max, 1e-12) if lam_max > 0 else 1.0 / max(s, 1e-12)

    a = np.zeros(n)
    z = a.copy()
    t = 1.0
    fa = W(a)
    it = 0
    res = np.inf
    best_f, best_it = fa, 0
    while it < max_iter and it - best_it < stall_iter:
        it += 1
        grad = 1.0 - Q @ z
        cand = _project(z + step * grad, y, C)
        fc = W(cand)
        if fc < fa - 1e-15 * max(1.0, abs(fa)):
            # restart momentum; halve the step if even a plain step fails
            plain = _project(a + step * (1.0 - Q @ a), y, C)
            if W(plain) < fa - 1e-15 * max(1.0, abs(fa)):
                step *= 0.5
                z, t = a.copy(), 1.0
                continue
            cand, fc = plain, W(plain)
            t = 1.0
        res = float(np.max(np.abs(cand - a)))
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = cand + ((t - 1.0) / t_new) * (cand - a)
        a, fa, t = cand, fc, t_new
        if fa > best_f:
            best_f, best_it = fa, it
        if res < step_tol:
            # an extrapolated step can be projected straight back onto a; only
            # stop when a plain projected-gradient step is stalled as well
            plain = _project(a + step * (1.0 - Q @ a), y, C)
            res = float(np.max(np.abs(plain - a)))
            if res < step_tol:
                break
            z, t = a.copy(), 1.0

    polished = False
    eps = 1e-9 * C
    free = (a > eps) & (a < C - eps)
    if np.any(free):
        F = np.flatnonzero(free)
        Bset = np.flatnonzero(~free)
        ab = np.where(a[Bset] > C / 2, C, 0.0)
        A = np.zeros((len(F) + 1, len(F) + 1))
        A[:-1, :-1] = Q[np.ix_(F, F)]
        A[:-1, -1] = y[F]
        A[-1, :-1] = y[F]
        rhs = np.concatenate([1.0 - Q[np.ix_(F, Bset)] @ ab, [-(y[Bset] @ ab)]])
        sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
        trial = np.empty(n)
        trial[F] = sol[:-1]
        trial[Bset] = ab
        if np.all(trial >= -1e-12 * C) and np.all(trial <= C * (1 + 1e-12)):
            trial = np.clip(trial, 0.0, C)
            if W(trial) >= fa:
                a, fa, polished = trial, W(trial), True
    return QPSolution(a, fa, it, res, polished)
