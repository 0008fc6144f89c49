"""Chi-square and MRMR feature ranking and the five experiment cases."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CASES = ("full", "chi25", "chi10", "mrmr25", "mrmr10")
CASE_LABELS = {
    "full": "Full",
    "chi25": "Chi_25",
    "chi10": "Chi_10",
    "mrmr25": "MRMR_25",
    "mrmr10": "MRMR_10",
}
_CASE_DISPATCH = {
    "chi25": ("chi2", 25),
    "chi10": ("chi2", 10),
    "mrmr25": ("mrmr", 25),
    "mrmr10": ("mrmr", 10),
}


@dataclass(frozen=True, eq=False)
class DiscretizationSpec:
    """Equal-frequency cut points per column, learned on training rows."""

    bins: int
    cuts: list = field(default_factory=list)

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return np.searchsorted(self.cuts[0], X, side="left")
        return np.column_stack(
            [np.searchsorted(c, X[:, j], side="left") for j, c in enumerate(self.cuts)]
        )


def _cut_points(values: np.ndarray, bins: int) -> np.ndarray:
    # "lower" keeps every cut on an observed value, so bins are unchanged
    # by any strictly monotone transform of the column
    q = np.arange(1, bins) / bins
    return np.unique(np.quantile(values, q, method="lower"))


def fit_discretization(X, bins: int = 5) -> DiscretizationSpec:
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        raise ValueError("cannot discretize an empty column")
    cols = [X] if X.ndim == 1 else [X[:, j] for j in range(X.shape[1])]
    return DiscretizationSpec(bins, [_cut_points(c, bins) for c in cols])


def quantile_discretize(values, bins: int = 5) -> np.ndarray:
    """Equal-frequency bin labels; values equal to a cut fall in the lower bin.

    >>> quantile_discretize([3, 1, 2, 4], 2).tolist()
    [1, 0, 0, 1]
    """
    values = np.asarray(values, dtype=float)
    return fit_discretization(values, bins).transform(values)


def chi_square_from_table(table) -> float:
    """Pearson chi-square of a contingency table, skipping zero-expectation cells."""
    O = np.asarray(table, dtype=float)
    n = O.sum()
    if n == 0:
        return 0.0
    E = np.outer(O.sum(axis=1), O.sum(axis=0)) / n
    mask = E > 0
    return float(np.sum((O[mask] - E[mask]) ** 2 / E[mask]))


def contingency_table(a_labels, b_labels) -> np.ndarray:
    a = np.asarray(a_labels)
    b = np.asarray(b_labels)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    return table


def chi_square_scores(X, y, bins: int = 5) -> np.ndarray:
    """Chi-square dependence of each binned feature on the binned target."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"length mismatch: {X.shape[0]} rows vs {y.shape[0]} targets")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    xb = fit_discretization(X, bins).transform(X)
    yb = quantile_discretize(y, bins)
    return np.array([chi_square_from_table(contingency_table(xb[:, j], yb)) for j in range(X.shape[1])])


def relevance_f_statistic(feature, labels) -> float:
    """One-way ANOVA F of ``feature`` across the classes in ``labels``.

    Returns ``inf`` when within-class scatter is zero but classes differ.
    """
    x = np.asarray(feature, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    k = classes.size
    if k < 2:
        raise ValueError("F statistic needs at least 2 classes")
    n = x.size
    grand = x.mean()
    ss_between = 0.0
    ss_within = 0.0
    for c in classes:
        xc = x[labels == c]
        m = xc.mean()
        ss_between += xc.size * (m - grand) ** 2
        ss_within += float(np.sum((xc - m) ** 2))
    df_b, df_w = k - 1, n - k
    if ss_within == 0.0 or df_w == 0:
        return math.inf if ss_between > 0 else 0.0
    return (ss_between / df_b) / (ss_within / df_w)


def _abs_corr_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    norms = np.sqrt(np.sum(Xc**2, axis=0))
    safe = np.where(norms > 0, norms, 1.0)
    Z = Xc / safe
    R = np.abs(Z.T @ Z)
    # constant columns carry no shared information
    R[norms == 0, :] = 0.0
    R[:, norms == 0] = 0.0
    return np.clip(R, 0.0, 1.0)


def _mutual_info(a, b) -> float:
    t = contingency_table(a, b)
    p = t / t.sum()
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / (pa @ pb)[nz])))


@dataclass(frozen=True)
class SelectionResult:
    method: str
    ranked: tuple[tuple[int, float], ...]
    k_requested: int
    degenerate: bool = False

    @property
    def indices(self) -> list[int]:
        return [i for i, _ in self.ranked]


def mrmr_criterion(relevance, redundancy, selected, candidate) -> tuple[bool, float]:
    """Sort key of ``candidate`` given the already ``selected`` features.

    Score is relevance minus mean redundancy to the selected set. Features
    with infinite relevance outrank all others and are compared among
    themselves by redundancy alone.
    """
    red = float(np.mean([redundancy[candidate, s] for s in selected])) if selected else 0.0
    rel = relevance[candidate]
    if math.isinf(rel):
        return True, -red
    return False, rel - red


def mrmr_greedy(relevance, redundancy, k: int) -> list[tuple[int, float]]:
    p = len(relevance)
    selected: list[int] = []
    out = []
    for _ in range(min(k, p)):
        best, best_key = -1, None
        for f in range(p):
            if f in selected:
                continue
            key = mrmr_criterion(relevance, redundancy, selected, f)
            if best_key is None or key > best_key:
                best, best_key = f, key
        selected.append(best)
        out.append((best, math.inf if best_key[0] else best_key[1]))
    return out


def mrmr_select(X, y, k: int, bins: int = 5, scheme: str = "fcd") -> SelectionResult:
    """Greedy minimum-redundancy maximum-relevance ranking.

    ``scheme="fcd"`` uses F-statistic relevance against the binned target
    and mean absolute Pearson correlation as redundancy. ``scheme="mid"``
    uses mutual information on binned data for both terms.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[1] < 2:
        raise ValueError("MRMR needs at least 2 features")
    labels = quantile_discretize(y, bins)
    if scheme == "fcd":
        if np.unique(labels).size < 2:
            relevance = np.zeros(X.shape[1])
        else:
            relevance = np.array([relevance_f_statistic(X[:, j], labels) for j in range(X.shape[1])])
        redundancy = _abs_corr_matrix(X)
    elif scheme == "mid":
        xb = fit_discretization(X, bins).transform(X)
        relevance = np.array([_mutual_info(xb[:, j], labels) for j in range(X.shape[1])])
        p = X.shape[1]
        redundancy = np.zeros((p, p))
        for a in range(p):
            for b in range(a, p):
                redundancy[a, b] = redundancy[b, a] = _mutual_info(xb[:, a], xb[:, b])
    else:
        raise ValueError(f"unknown MRMR scheme {scheme!r}")
    return SelectionResult("mrmr", tuple(mrmr_greedy(relevance, redundancy, k)), k)


def chi2_select(X, y, k: int, bins: int = 5) -> SelectionResult:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = chi_square_scores(X, y, bins)
    # stable sort on -score keeps lower indices first among ties
    order = np.argsort(-scores, kind="stable")[: min(k, scores.size)]
    ranked = tuple((int(j), float(scores[j])) for j in order)
    return SelectionResult("chi2", ranked, k, degenerate=bool(np.all(scores == 0)))


def select_case(case: str, X, y, bins: int = 5, mrmr_scheme: str = "fcd") -> SelectionResult:
    """Feature subset for one experiment case, computed on the given (training) rows."""
    X = np.asarray(X, dtype=float)
    if case == "full":
        p = X.shape[1]
        return SelectionResult("full", tuple((j, math.nan) for j in range(p)), p)
    if case not in _CASE_DISPATCH:
        raise ValueError(f"unknown case {case!r}; expected one of {', '.join(CASES)}")
    method, k = _CASE_DISPATCH[case]
    if method == "chi2":
        return chi2_select(X, y, k, bins)
    if X.shape[1] < 2:
        return SelectionResult("mrmr", ((0, math.nan),), k)
    return mrmr_select(X, y, k, bins, mrmr_scheme)
