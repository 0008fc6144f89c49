"""General Regression Neural Network (Gaussian Nadaraya-Watson regression)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from newsforge import DataError
from newsforge.ingest import ScalingSpec, fit_scaling

UNDERFLOW = 1e-300
SIGMA_GRID = tuple(round(0.05 * k, 2) for k in range(1, 21))


@dataclass(frozen=True)
class GrnnParams:
    sigma: float = 0.3
    calibrate: bool = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True, eq=False)
class GrnnModel:
    patterns: np.ndarray  # scaled training inputs
    targets: np.ndarray
    sigma: float
    x_scaling: ScalingSpec

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.patterns.shape[1]:
            raise DataError(f"expected {self.patterns.shape[1]} features, got {X.shape[1]}")
        return kernel_regression(self.patterns, self.targets, self.x_scaling.apply(X), self.sigma)

    def to_dict(self) -> dict:
        return {
            "model": "grnn",
            "sigma": self.sigma,
            "patterns": self.patterns.tolist(),
            "targets": self.targets.tolist(),
            "x_scaling": self.x_scaling.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GrnnModel":
        return cls(
            np.array(d["patterns"], dtype=float),
            np.array(d["targets"], dtype=float),
            float(d["sigma"]),
            ScalingSpec.from_dict(d["x_scaling"]),
        )


def _sq_dists(A, B):
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kernel_regression(patterns, targets, queries, sigma, exclude_self=False) -> np.ndarray:
    """Gaussian-weighted mean of ``targets`` at each query row.

    Falls back to the nearest pattern's target when the kernel sum
    underflows below ``1e-300``; patterns tied for nearest share equally,
    which is the small-sigma limit of the kernel ratio.
    """
    D2 = _sq_dists(queries, patterns)
    if exclude_self:
        np.fill_diagonal(D2, np.inf)
    W = np.exp(-D2 / (2.0 * sigma * sigma))
    den = W.sum(axis=1)
    out = np.empty(queries.shape[0])
    ok = den >= UNDERFLOW
    out[ok] = (W[ok] @ targets) / den[ok]
    for q in np.flatnonzero(~ok):
        d = D2[q]
        out[q] = targets[d == d.min()].mean()
    return out


def loo_sse(patterns, targets, sigma) -> float:
    pred = kernel_regression(patterns, targets, patterns, sigma, exclude_self=True)
    return float(np.sum((targets - pred) ** 2))


def fit_grnn(X, y, params: GrnnParams = GrnnParams(), seed=None) -> GrnnModel:
    """Store [0, 1]-scaled patterns; optionally pick sigma by leave-one-out."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("GRNN needs a nonempty 2-D input matrix")
    if X.shape[0] != y.shape[0]:
        raise DataError("X and y have different lengths")
    xs = fit_scaling(X, "minmax", 0.0, 1.0)
    P = xs.apply(X)
    sigma = params.sigma
    if params.calibrate and X.shape[0] >= 2:
        scores = [loo_sse(P, y, s) for s in SIGMA_GRID]
        # first minimum in ascending grid order, so ties go to the smaller sigma
        sigma = SIGMA_GRID[int(np.argmin(scores))]
    return GrnnModel(P, y.copy(), float(sigma), xs)


def predict_grnn(model: GrnnModel, X) -> np.ndarray:
    return model.predict(X)
