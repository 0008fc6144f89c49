"""Epsilon-insensitive support vector regression with an RBF kernel.

The dual is solved in the coefficient-difference form

    maximize  W(b) = y'b - eps * |b|_1 - 0.5 * b'Kb
    s.t.      sum(b) = 0,  -C <= b_i <= C

by repeatedly moving the maximal violating pair ``(i, j)`` along
``b_i += t, b_j -= t`` with an exact line search over the piecewise
quadratic objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from newsforge import ConvergenceError, DataError
from newsforge.ingest import ScalingSpec, fit_scaling

_SNAP = 1e-12


@dataclass(frozen=True)
class SvrParams:
    C: float = 1.0
    epsilon: float = 0.1
    gamma: float | None = None  # None: 1 / n_features
    kkt_tolerance: float = 1e-3
    max_iter: int = 200_000
    standardize: bool = True

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    d2 = np.sum(A**2, axis=1)[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(d2, 0.0))


def dual_objective(beta, K, y, epsilon) -> float:
    return float(y @ beta - epsilon * np.abs(beta).sum() - 0.5 * beta @ K @ beta)


def _line_search(bi, bj, gi, gj, eta, eps, C):
    """Maximize the objective change along ``b_i += t, b_j -= t``.

    ``gi, gj`` are the smooth-part gradients ``y - K b`` at i and j. The
    change is ``t (gi - gj) - 0.5 eta t^2 - eps (|bi+t| + |bj-t| - |bi| - |bj|)``,
    concave and piecewise quadratic with kinks at ``-bi`` and ``bj``.
    """
    lo = max(-C - bi, bj - C)
    hi = min(C - bi, bj + C)
    if hi <= lo:
        return 0.0
    knots = sorted({lo, hi, *(k for k in (-bi, bj) if lo < k < hi)})

    def change(t):
        return t * (gi - gj) - 0.5 * eta * t * t - eps * (abs(bi + t) + abs(bj - t) - abs(bi) - abs(bj))

    best_t, best_v = 0.0, 0.0
    for a, b in zip(knots, knots[1:]):
        mid = 0.5 * (a + b)
        # slope of the eps term is constant inside a segment
        s = eps * (np.sign(bi + mid) - np.sign(bj - mid))
        cands = [a, b]
        if eta > 0:
            cands.append(min(max((gi - gj - s) / eta, a), b))
        for t in cands:
            v = change(t)
            if v > best_v:
                best_t, best_v = t, v
    return best_t


def _bounds(beta, F, eps, C):
    """Lower/upper bias bounds implied by each sample's KKT conditions."""
    pos = beta >= 0
    L = np.where(pos, F - eps, F + eps)
    U = np.where(beta <= 0, F + eps, F - eps)
    L = np.where(beta >= C, -np.inf, L)
    U = np.where(beta <= -C, np.inf, U)
    return L, U


def solve_dual(K, y, C, eps, tol=1e-3, max_iter=200_000, trace=None):
    """Return ``(beta, b)`` with a maximal KKT violation of at most ``tol``."""
    n = y.size
    beta = np.zeros(n)
    F = y.astype(float).copy()
    for it in range(max_iter):
        L, U = _bounds(beta, F, eps, C)
        i = int(np.argmax(L))
        j = int(np.argmin(U))
        if L[i] - U[j] <= tol:
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        t = _line_search(beta[i], beta[j], F[i], F[j], eta, eps, C)
        if t == 0.0:
            break
        beta[i] += t
        beta[j] -= t
        for k in (i, j):
            if abs(beta[k]) <= _SNAP * C:
                beta[k] = 0.0
            elif abs(beta[k]) >= C * (1 - _SNAP):
                beta[k] = np.copysign(C, beta[k])
        F -= t * (K[:, i] - K[:, j])
        if trace is not None:
            trace.append(dual_objective(beta, K, y, eps))
    else:
        F = y - K @ beta
        L, U = _bounds(beta, F, eps, C)
        raise ConvergenceError(
            f"SVR dual did not converge in {max_iter} iterations; worst violation {L.max() - U.min():.3g}"
        )
    F = y - K @ beta
    return beta, _bias(beta, F, eps, C)


def _bias(beta, F, eps, C) -> float:
    free = (beta != 0) & (np.abs(beta) < C)
    if free.any():
        return float(np.mean(F[free] - eps * np.sign(beta[free])))
    L, U = _bounds(beta, F, eps, C)
    lo, hi = L.max(), U.min()
    if np.isinf(lo):
        return float(hi)
    if np.isinf(hi):
        return float(lo)
    return float(0.5 * (lo + hi))


def kkt_violations(beta, K, y, b, C, eps) -> np.ndarray:
    """Per-sample KKT violation of a dual solution in residual form."""
    r = K @ beta + b - y  # f(x_i) - y_i
    at_zero = beta == 0
    at_upper = beta >= C
    at_lower = beta <= -C
    free = ~(at_zero | at_upper | at_lower)
    v = np.zeros_like(r)
    v[at_zero] = np.maximum(0.0, np.abs(r[at_zero]) - eps)
    v[free] = np.abs(r[free] + eps * np.sign(beta[free]))
    v[at_upper] = np.maximum(0.0, eps + r[at_upper])
    v[at_lower] = np.maximum(0.0, eps - r[at_lower])
    return v


@dataclass(frozen=True, eq=False)
class SvrModel:
    support: np.ndarray  # scaled inputs of samples with beta != 0
    beta: np.ndarray
    b: float
    gamma: float
    x_scaling: ScalingSpec
    y_scaling: ScalingSpec

    @property
    def n_features(self) -> int:
        return self.x_scaling.center.shape[0]

    def decision(self, Z) -> np.ndarray:
        if self.beta.size == 0:
            return np.full(Z.shape[0], self.b)
        return rbf_kernel(Z, self.support, self.gamma) @ self.beta + self.b

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {X.shape[1]}")
        return self.y_scaling.invert(self.decision(self.x_scaling.apply(X)))

    def to_dict(self) -> dict:
        return {
            "model": "svr",
            "support": self.support.tolist(),
            "beta": self.beta.tolist(),
            "b": self.b,
            "gamma": self.gamma,
            "x_scaling": self.x_scaling.to_dict(),
            "y_scaling": self.y_scaling.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "SvrModel":
        xs = ScalingSpec.from_dict(d["x_scaling"])
        sup = np.array(d["support"], dtype=float).reshape(-1, xs.center.shape[0])
        return cls(sup, np.array(d["beta"], dtype=float), float(d["b"]), float(d["gamma"]),
                   xs, ScalingSpec.from_dict(d["y_scaling"]))


def fit_svr(X, y, params: SvrParams = SvrParams(), seed=None) -> SvrModel:
    """Fit on standardized inputs and target.

    The working-pair choice is deterministic, so ``seed`` has no effect.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError("X must be 2-D with one row per target")
    n, p = X.shape
    if n < 2:
        raise DataError("SVR needs at least 2 rows")
    kind = "standardize" if params.standardize else "none"
    xs, ys = fit_scaling(X, kind), fit_scaling(y, kind)
    Z, t = xs.apply(X), ys.apply(y)
    gamma = params.gamma if params.gamma is not None else 1.0 / p
    K = rbf_kernel(Z, Z, gamma)
    beta, b = solve_dual(K, t, params.C, params.epsilon, params.kkt_tolerance, params.max_iter)
    sv = beta != 0
    return SvrModel(Z[sv].copy(), beta[sv].copy(), b, gamma, xs, ys)


def predict_svr(model: SvrModel, X) -> np.ndarray:
    return model.predict(X)
