"""Loading, calendar alignment, scaling and chronological splitting.

Feature CSV: ``date,<name1>,...,<nameP>`` with one row per article.
Price CSV: ``date,close`` (extra columns are ignored).
Aligned CSV: ``date,close,imputed,article_count,<name1>,...`` where rows
still waiting for imputation have empty feature cells.
"""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from newsforge import DataError

logger = logging.getLogger(__name__)

MIN_SPLIT_ROWS = 5


@dataclass(frozen=True)
class FeatureRecord:
    date: dt.date
    features: tuple[float, ...]
    article_count: int = 1


@dataclass(frozen=True)
class FeatureTable:
    """Records of one feature CSV plus the header's feature names."""

    feature_names: tuple[str, ...]
    records: tuple[FeatureRecord, ...]

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


@dataclass(frozen=True)
class PriceBar:
    date: dt.date
    close: float


@dataclass(frozen=True, eq=False)
class AlignedDataset:
    """Date-ordered rows of (features, close); NaN feature rows await imputation."""

    dates: tuple[dt.date, ...]
    X: np.ndarray
    close: np.ndarray
    imputed: np.ndarray
    article_count: np.ndarray
    feature_names: tuple[str, ...]
    dropped_after_last_price: int = 0

    def __post_init__(self):
        n = len(self.dates)
        if self.X.shape != (n, len(self.feature_names)):
            raise DataError(
                f"feature matrix shape {self.X.shape} does not match "
                f"{n} rows x {len(self.feature_names)} names"
            )
        if not (len(self.close) == len(self.imputed) == len(self.article_count) == n):
            raise DataError("row arrays have inconsistent lengths")
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise DataError(f"dates not strictly increasing at {b}")

    def __len__(self):
        return len(self.dates)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def missing(self) -> np.ndarray:
        """Boolean mask of rows whose features are not known."""
        return np.isnan(self.X).any(axis=1)

    def take(self, rows) -> "AlignedDataset":
        rows = np.asarray(rows, dtype=int)
        return AlignedDataset(
            dates=tuple(self.dates[i] for i in rows),
            X=self.X[rows].copy(),
            close=self.close[rows].copy(),
            imputed=self.imputed[rows].copy(),
            article_count=self.article_count[rows].copy(),
            feature_names=self.feature_names,
        )

    def with_features(self, X, imputed) -> "AlignedDataset":
        return replace(self, X=np.asarray(X, dtype=float), imputed=np.asarray(imputed, dtype=bool))


def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise DataError(f"{where}: unparseable date {text!r}") from None


def _parse_float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{where}: non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"{where}: non-finite value {text!r}")
    return value


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    return header, rows[1:]


def load_feature_table(path) -> FeatureTable:
    """Read a per-article feature CSV.

    Rows are returned in file order; same-day rows are kept separate.
    Error messages give the 1-based file row (the header is row 1).
    """
    header, body = _read_rows(path)
    if not header or header[0].lower() != "date":
        raise DataError(f"{path}: first column must be 'date'")
    names = header[1:]
    if not names:
        raise DataError(f"{path}: no feature columns")
    seen = set()
    for name in names:
        if name in seen:
            raise DataError(f"{path}: duplicate header name {name!r}")
        seen.add(name)

    records = []
    for lineno, row in enumerate(body, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {lineno} has {len(row)} columns, header has {len(header)}"
            )
        date = _parse_date(row[0], f"{path}: row {lineno}")
        feats = tuple(
            _parse_float(cell, f"{path}: row {lineno}, column {name!r}")
            for name, cell in zip(names, row[1:])
        )
        records.append(FeatureRecord(date, feats, 1))
    return FeatureTable(tuple(names), tuple(records))


def load_price_table(path) -> list[PriceBar]:
    """Read a ``date,close`` CSV and return bars sorted by date."""
    header, body = _read_rows(path)
    lower = [h.lower() for h in header]
    if "date" not in lower or "close" not in lower:
        raise DataError(f"{path}: header must contain 'date' and 'close'")
    di, ci = lower.index("date"), lower.index("close")
    bars = {}
    for lineno, row in enumerate(body, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        where = f"{path}: row {lineno}"
        date = _parse_date(row[di], where)
        close = _parse_float(row[ci], f"{where}, column 'close'")
        if close <= 0:
            raise DataError(f"{where}: close must be positive, got {close}")
        if date in bars:
            raise DataError(f"{path}: duplicate price date {date.isoformat()}")
        bars[date] = PriceBar(date, close)
    if not bars:
        raise DataError(f"{path}: no price rows")
    return [bars[d] for d in sorted(bars)]


def align_daily(articles, prices: Sequence[PriceBar], feature_names=None) -> AlignedDataset:
    """Merge article features onto trading days.

    Each record is assigned to the first priced date on or after its own
    date, so same-day records and records from weekends/holidays are pooled
    into one arithmetic mean. Records after the last priced date are
    dropped. Priced dates that receive no records get NaN features.
    """
    if isinstance(articles, FeatureTable):
        feature_names = articles.feature_names
        articles = articles.records
    articles = list(articles)
    prices = sorted(prices, key=lambda b: b.date)
    if not articles or not prices:
        raise DataError("align_daily needs nonempty articles and prices")
    width = len(articles[0].features)
    if feature_names is None:
        feature_names = tuple(f"f{j}" for j in range(width))
    if len(feature_names) != width:
        raise DataError("feature_names length does not match feature width")
    for rec in articles:
        if len(rec.features) != width:
            raise DataError(f"inconsistent feature width on {rec.date}")

    first_rec = min(r.date for r in articles)
    last_rec = max(r.date for r in articles)
    if first_rec > prices[-1].date or last_rec < prices[0].date:
        raise DataError("feature and price date ranges do not overlap")

    price_dates = [b.date for b in prices]
    n = len(prices)
    sums = np.zeros((n, width))
    counts = np.zeros(n, dtype=int)
    dropped = 0
    for rec in articles:
        k = bisect.bisect_left(price_dates, rec.date)
        if k == n:
            dropped += rec.article_count
            continue
        sums[k] += np.asarray(rec.features, dtype=float) * rec.article_count
        counts[k] += rec.article_count
    if dropped:
        logger.warning("dropped %d feature records dated after the last price", dropped)

    X = np.full((n, width), np.nan)
    has = counts > 0
    X[has] = sums[has] / counts[has, None]
    return AlignedDataset(
        dates=tuple(price_dates),
        X=X,
        close=np.array([b.close for b in prices], dtype=float),
        imputed=np.zeros(n, dtype=bool),
        article_count=counts,
        feature_names=tuple(feature_names),
        dropped_after_last_price=dropped,
    )


@dataclass(frozen=True, eq=False)
class ScalingSpec:
    """Per-column affine map learned on training rows.

    ``kind`` is ``"minmax"``, ``"standardize"`` or ``"none"``. Transform is
    ``(x - center) * factor + offset``.
    """

    kind: str
    center: np.ndarray
    factor: np.ndarray
    offset: np.ndarray
    lo: float = 0.0
    hi: float = 1.0

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        return (X - self.center) * self.factor + self.offset

    def invert(self, Z):
        Z = np.asarray(Z, dtype=float)
        const = self.factor == 0
        safe = np.where(const, 1.0, self.factor)
        # constant columns collapse to a point; their inverse is the constant
        return np.where(const, self.center, self.center + (Z - self.offset) / safe)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lo": self.lo,
            "hi": self.hi,
            "center": np.atleast_1d(self.center).tolist(),
            "factor": np.atleast_1d(self.factor).tolist(),
            "offset": np.atleast_1d(self.offset).tolist(),
            "scalar": np.ndim(self.center) == 0,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingSpec":
        conv = (lambda v: np.float64(v[0])) if d.get("scalar") else (lambda v: np.array(v, dtype=float))
        return cls(d["kind"], conv(d["center"]), conv(d["factor"]), conv(d["offset"]), d["lo"], d["hi"])


def fit_scaling(X, kind: str = "minmax", lo: float = 0.0, hi: float = 1.0) -> ScalingSpec:
    """Learn a column scaling from training rows.

    Constant columns map to the midpoint ``(lo + hi) / 2`` under minmax and
    to 0 under standardize. A 1-D input yields a scalar spec (for targets).
    """
    X = np.asarray(X, dtype=float)
    if X.size == 0 or X.shape[0] == 0:
        raise DataError("cannot fit scaling on an empty matrix")
    if not np.all(np.isfinite(X)):
        raise DataError("cannot fit scaling on non-finite values")
    if kind not in ("minmax", "standardize", "none"):
        raise ValueError(f"unknown scaling kind {kind!r}")
    if kind == "minmax" and not hi > lo:
        raise ValueError("minmax needs hi > lo")

    mn, mx = X.min(axis=0), X.max(axis=0)
    const = mx == mn
    if kind == "none":
        center = np.zeros_like(mn)
        factor = np.ones_like(mn)
        offset = np.zeros_like(mn)
    elif kind == "minmax":
        span = np.where(const, 1.0, mx - mn)
        center = mn
        factor = np.where(const, 0.0, (hi - lo) / span)
        offset = np.where(const, (lo + hi) / 2.0, lo)
    else:
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        const = const | (sd == 0)
        center = np.where(const, X[0], mean)
        factor = np.where(const, 0.0, 1.0 / np.where(const, 1.0, sd))
        offset = np.zeros_like(mean)
    if X.ndim == 1:
        center, factor, offset = (np.float64(center), np.float64(factor), np.float64(offset))
    return ScalingSpec(kind, center, factor, offset, float(lo), float(hi))


def apply_scaling(spec: ScalingSpec, X):
    return spec.apply(X)


def train_size(n: int, ratio: float) -> int:
    # tolerance guards products such as 0.29 * 100 = 28.999999999999996
    return int(math.floor(n * ratio + 1e-9))


def split_chronological(data: AlignedDataset, ratio: float = 0.8):
    """First ``floor(n * ratio)`` rows train, the rest test; no shuffling."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    n = len(data)
    if n < MIN_SPLIT_ROWS:
        raise DataError(f"need at least {MIN_SPLIT_ROWS} rows to split, got {n}")
    k = train_size(n, ratio)
    if k < 1 or k >= n:
        raise DataError(f"ratio {ratio} leaves an empty partition for {n} rows")
    return data.take(range(k)), data.take(range(k, n))


def write_aligned_csv(data: AlignedDataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "close", "imputed", "article_count", *data.feature_names])
        for i, d in enumerate(data.dates):
            feats = ["" if math.isnan(v) else repr(float(v)) for v in data.X[i]]
            w.writerow([d.isoformat(), repr(float(data.close[i])), int(data.imputed[i]),
                        int(data.article_count[i]), *feats])


def read_aligned_csv(path) -> AlignedDataset:
    header, body = _read_rows(path)
    fixed = ["date", "close", "imputed", "article_count"]
    if [h.lower() for h in header[:4]] != fixed:
        raise DataError(f"{path}: aligned CSV must start with {','.join(fixed)}")
    names = tuple(header[4:])
    dates, closes, imputed, counts, rows = [], [], [], [], []
    for lineno, row in enumerate(body, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(row)} columns, header has {len(header)}")
        where = f"{path}: row {lineno}"
        dates.append(_parse_date(row[0], where))
        closes.append(_parse_float(row[1], where))
        imputed.append(row[2].strip() in ("1", "true", "True"))
        counts.append(int(row[3]))
        rows.append([math.nan if not c.strip() else _parse_float(c, f"{where}, column {n!r}")
                     for n, c in zip(names, row[4:])])
    return AlignedDataset(
        dates=tuple(dates),
        X=np.array(rows, dtype=float).reshape(len(rows), len(names)),
        close=np.array(closes),
        imputed=np.array(imputed, dtype=bool),
        article_count=np.array(counts, dtype=int),
        feature_names=names,
    )
