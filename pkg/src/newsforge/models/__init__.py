"""The seven regressors behind one ``fit_model`` / ``model.predict`` contract."""

from __future__ import annotations

import dataclasses
import json

from newsforge.models.gmdh import GmdhNetwork, GmdhParams, fit_gmdh
from newsforge.models.grnn import GrnnModel, GrnnParams, fit_grnn
from newsforge.models.mlp import MlpModel, MlpParams, fit_mlp
from newsforge.models.svr import SvrModel, SvrParams, fit_svr
from newsforge.models.trees import (
    CartParams,
    Forest,
    ForestParams,
    QuantileForest,
    Tree,
    fit_cart,
    fit_forest,
    qrrf_params,
)

# column order of the published result tables
MODEL_IDS = ("gmdh", "grnn", "rf", "qrrf", "cart", "svr", "mlp")
MODEL_LABELS = {
    "gmdh": "GMDH",
    "grnn": "GRNN",
    "rf": "RF",
    "qrrf": "QRRF",
    "cart": "RPART",
    "svr": "SVR",
    "mlp": "MLP",
}


def default_params(model_id: str):
    """Parameter object carrying the documented defaults for ``model_id``."""
    return {
        "gmdh": GmdhParams,
        "grnn": GrnnParams,
        "rf": ForestParams,
        "qrrf": qrrf_params,
        "cart": CartParams,
        "svr": SvrParams,
        "mlp": MlpParams,
    }[_check(model_id)]()


def make_params(model_id: str, overrides: dict | None = None):
    base = default_params(model_id)
    if not overrides:
        return base
    fields = {f.name for f in dataclasses.fields(base)}
    unknown = set(overrides) - fields
    if unknown:
        raise ValueError(f"unknown {model_id} parameter(s): {', '.join(sorted(unknown))}")
    return dataclasses.replace(base, **overrides)


def params_to_dict(params) -> dict:
    return dataclasses.asdict(params)


def _check(model_id):
    if model_id not in MODEL_IDS:
        raise ValueError(f"unknown model {model_id!r}; expected one of {', '.join(MODEL_IDS)}")
    return model_id


def fit_model(model_id: str, X, y, params=None, seed: int = 0):
    """Fit ``model_id`` and return an object with ``predict(X)`` and ``to_dict()``."""
    _check(model_id)
    if params is None:
        params = default_params(model_id)
    if model_id == "gmdh":
        return fit_gmdh(X, y, params, seed)
    if model_id == "grnn":
        return fit_grnn(X, y, params, seed)
    if model_id == "cart":
        return fit_cart(X, y, params, seed)
    if model_id == "rf":
        return fit_forest(X, y, dataclasses.replace(params, keep_leaf_samples=False), seed)
    if model_id == "qrrf":
        p = dataclasses.replace(params, keep_leaf_samples=True)
        if p.mtry is not None and p.mtry > len(X[0]):
            # fewer selected features than the configured split candidates
            p = dataclasses.replace(p, mtry=len(X[0]))
        return QuantileForest(fit_forest(X, y, p, seed))
    if model_id == "svr":
        return fit_svr(X, y, params, seed)
    return fit_mlp(X, y, params, seed)


def model_to_json(model) -> str:
    if isinstance(model, Tree):
        d = {"model": "cart", **model.to_dict()}
    else:
        d = model.to_dict()
    return json.dumps(d, sort_keys=True)


def model_from_json(text: str):
    d = json.loads(text)
    kind = d.get("model")
    if kind == "gmdh":
        return GmdhNetwork.from_dict(d)
    if kind == "grnn":
        return GrnnModel.from_dict(d)
    if kind == "cart":
        return Tree.from_dict(d)
    if kind == "rf":
        return Forest.from_dict(d)
    if kind == "qrrf":
        return QuantileForest.from_dict(d)
    if kind == "svr":
        return SvrModel.from_dict(d)
    if kind == "mlp":
        return MlpModel.from_dict(d)
    raise ValueError(f"unknown serialized model kind {kind!r}")
