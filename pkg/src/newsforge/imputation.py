"""Price-band neighbour imputation for trading days without news.

For a day with a close price but no articles, donors are the days with
known features whose close lies within a band around the target close.
Each missing feature is the inverse-distance weighted mean of the donors,
distance being the absolute close difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from newsforge import DataError
from newsforge.ingest import AlignedDataset

# relative slack on the band edge so e.g. 100 * 0.1 accepts a donor at 110
_BAND_SLACK = 1e-12


@dataclass(frozen=True)
class ImputationParams:
    band: float = 0.10
    expansion_step: float = 0.10
    max_expansions: int = 5
    epsilon: float = 1e-9
    unnormalized: bool = False

    def __post_init__(self):
        if not 0.0 < self.band < 1.0:
            raise ValueError(f"band must lie in (0, 1), got {self.band}")
        if self.max_expansions < 0:
            raise ValueError("max_expansions must be >= 0")
        if self.expansion_step <= 0:
            raise ValueError("expansion_step must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


@dataclass(frozen=True)
class ImputedRow:
    date: object
    features: np.ndarray
    donor_count: int
    band_used: float


def neighbor_band_select(target_price: float, donor_prices, params: ImputationParams = ImputationParams()):
    """Indices of donors whose price lies within the band around ``target_price``.

    The band widens by ``expansion_step`` up to ``max_expansions`` times; if
    it is still empty, every donor is returned with ``band_used = inf``.
    """
    if not target_price > 0:
        raise DataError(f"target price must be positive, got {target_price}")
    donor_prices = np.asarray(donor_prices, dtype=float)
    if donor_prices.size == 0:
        raise DataError("no donor rows with known features")
    dist = np.abs(donor_prices - target_price)
    for step in range(params.max_expansions + 1):
        band = params.band + step * params.expansion_step
        idx = np.flatnonzero(dist <= band * target_price * (1 + _BAND_SLACK))
        if idx.size:
            return idx, band
    return np.arange(donor_prices.size), math.inf


def imputation_weights(target_price: float, donor_prices, epsilon: float = 1e-9):
    """Normalized inverse-distance weights ``(1/(d+eps)) / sum(1/(d+eps))``."""
    d = np.abs(np.asarray(donor_prices, dtype=float) - target_price)
    if epsilon == 0 and np.any(d == 0):
        # exact matches take all the weight
        inv = (d == 0).astype(float)
    else:
        inv = 1.0 / (d + epsilon)
    return inv / inv.sum()


def impute_rows(data: AlignedDataset, params: ImputationParams = ImputationParams()) -> list[ImputedRow]:
    """Imputed feature vectors for every features-missing row of ``data``.

    Donors are restricted to rows whose features were originally known.
    """
    missing = data.missing
    donor_mask = ~missing & ~data.imputed
    if not missing.any():
        return []
    if not donor_mask.any():
        raise DataError("no donor rows with known features")
    donor_close = data.close[donor_mask]
    donor_X = data.X[donor_mask]

    out = []
    for i in np.flatnonzero(missing):
        target = float(data.close[i])
        idx, band = neighbor_band_select(target, donor_close, params)
        if params.unnormalized:
            d = np.abs(donor_close[idx] - target) + params.epsilon
            feats = (donor_X[idx] / d[:, None]).sum(axis=0)
        else:
            w = imputation_weights(target, donor_close[idx], params.epsilon)
            feats = (w[:, None] * donor_X[idx]).sum(axis=0)
        out.append(ImputedRow(data.dates[i], feats, int(idx.size), band))
    return out


def impute_missing_features(data: AlignedDataset, params: ImputationParams = ImputationParams()) -> AlignedDataset:
    """Fill every features-missing row; complete datasets come back unchanged."""
    rows = impute_rows(data, params)
    if not rows:
        return data
    X = data.X.copy()
    imputed = data.imputed.copy()
    for i, row in zip(np.flatnonzero(data.missing), rows):
        X[i] = row.features
        imputed[i] = True
    return data.with_features(X, imputed)
