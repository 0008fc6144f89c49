import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newsforge import DataError
from newsforge.imputation import (
    ImputationParams,
    imputation_weights,
    impute_missing_features,
    impute_rows,
    neighbor_band_select,
)
from newsforge.ingest import AlignedDataset


def make(closes, X):
    n = len(closes)
    return AlignedDataset(
        dates=tuple(dt.date(2016, 1, 1) + dt.timedelta(days=i) for i in range(n)),
        X=np.array(X, dtype=float),
        close=np.array(closes, dtype=float),
        imputed=np.zeros(n, dtype=bool),
        article_count=np.ones(n, dtype=int),
        feature_names=tuple(f"f{j}" for j in range(len(X[0]))),
    )


def test_band_filter():
    idx, band = neighbor_band_select(100.0, [95.0, 105.0, 150.0])
    assert idx.tolist() == [0, 1]
    assert band == pytest.approx(0.10)


def test_band_expansion_arithmetic():
    # |150 - 100| = 50 first fits once the band reaches 0.50 (fourth widening)
    for expansions, expect in [(1, None), (2, None), (3, None), (4, 0.5)]:
        params = ImputationParams(max_expansions=expansions)
        idx, band = neighbor_band_select(100.0, [150.0], params)
        assert idx.tolist() == [0]
        if expect is None:
            assert band == math.inf
        else:
            assert band == pytest.approx(expect)


def test_no_donors():
    with pytest.raises(DataError):
        neighbor_band_select(100.0, [])


def test_equal_distance_donors_average():
    data = make([100, 95, 105], [[np.nan], [10], [20]])
    out = impute_missing_features(data)
    assert abs(out.X[0, 0] - 15.0) <= 1e-9
    assert out.imputed.tolist() == [True, False, False]
    np.testing.assert_array_equal(out.X[1:], data.X[1:])


def test_exact_price_match_dominates():
    data = make([100, 100, 97, 104], [[np.nan], [42], [0], [1000]])
    out = impute_missing_features(data)
    assert abs(out.X[0, 0] - 42.0) <= 1e-6


def test_single_donor_copied():
    data = make([100, 103, 300], [[np.nan, np.nan], [1.5, -2.0], [9, 9]])
    out = impute_missing_features(data)
    np.testing.assert_array_equal(out.X[0], [1.5, -2.0])


def test_unnormalized_option_skips_weight_normalization():
    data = make([100, 95, 105], [[np.nan], [10], [20]])
    out = impute_missing_features(data, ImputationParams(unnormalized=True))
    assert out.X[0, 0] == pytest.approx(10 / 5 + 20 / 5)


def test_imputed_rows_never_donate():
    data = make([100, 101, 150], [[np.nan], [np.nan], [7]])
    rows = impute_rows(data)
    assert [r.donor_count for r in rows] == [1, 1]
    assert rows[0].features.tolist() == [7.0]


def test_complete_dataset_unchanged():
    data = make([100, 101], [[1.0], [2.0]])
    assert impute_missing_features(data) is data


instances = st.integers(1, 12).flatmap(
    lambda k: st.tuples(
        st.floats(50, 150),
        st.lists(st.floats(50, 150), min_size=k, max_size=k),
        st.lists(st.floats(-100, 100), min_size=k, max_size=k),
        st.randoms(use_true_random=False),
    )
)


@settings(max_examples=500, deadline=None)
@given(inst=instances)
def test_weights_normalized_bounded_and_order_free(inst):
    target, prices, feats, rnd = inst
    w = imputation_weights(target, prices)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) <= 1e-12

    closes = [target] + prices
    data = make(closes, [[np.nan]] + [[f] for f in feats])
    value = impute_missing_features(data).X[0, 0]
    idx, _ = neighbor_band_select(target, prices)
    chosen = [feats[i] for i in idx]
    assert min(chosen) - 1e-9 <= value <= max(chosen) + 1e-9

    perm = list(range(len(prices)))
    rnd.shuffle(perm)
    shuffled = make([target] + [prices[i] for i in perm], [[np.nan]] + [[feats[i]] for i in perm])
    scale = max(1.0, max(abs(f) for f in feats))
    assert abs(impute_missing_features(shuffled).X[0, 0] - value) <= 1e-12 * scale
