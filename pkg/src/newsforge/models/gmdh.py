"""Group Method of Data Handling with quadratic two-input neurons.

Every layer fits ``y = a0 + a1 u + a2 v + a3 uv + a4 u^2 + a5 v^2`` by least
squares for each pair of the current candidates, ranks the neurons by GCV
and passes the best ``layer_width`` outputs on as the next candidates.
With ``complexity="network"`` a neuron's GCV counts the coefficients of
every neuron feeding it, so deeper compositions pay for their size;
``"neuron"`` charges each neuron its own six coefficients only.
Growth stops once a layer fails to improve on the best GCV so far. With
``admix_features`` the raw inputs rejoin the candidates of every layer, so
a neuron can combine an earlier neuron with an original feature.

After growth, ``refine`` jointly re-optimizes every coefficient of the
pruned network (Levenberg-Marquardt on training SSE), starting from the
layer-wise solution. It only runs when the network has at most
``refine_max_coef_ratio * n`` coefficients.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from newsforge import DataError
from newsforge.ingest import ScalingSpec, fit_scaling

N_TERMS = 6


@dataclass(frozen=True)
class GmdhParams:
    max_layers: int = 10
    layer_width: int | None = None  # None: number of input features, capped
    max_layer_width: int = 40
    min_improvement: float = 1e-9
    admix_features: bool = True
    refine: bool = True
    complexity: str = "network"  # "network" or "neuron"
    refine_max_coef_ratio: float = 0.5

    def __post_init__(self):
        if self.complexity not in ("network", "neuron"):
            raise ValueError(f"unknown complexity mode {self.complexity!r}")
        if self.max_layers < 1:
            raise ValueError("max_layers must be >= 1")
        if self.layer_width is not None and self.layer_width < 1:
            raise ValueError("layer_width must be >= 1")


@dataclass(frozen=True, eq=False)
class PolyNeuron:
    """Quadratic unit; ``inputs`` refer to node ids (raw features first)."""

    inputs: tuple[int, int]
    coef: np.ndarray
    gcv_score: float


def design(u, v) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return np.column_stack([np.ones_like(u), u, v, u * v, u * u, v * v])


def fit_descriptor(u, v, y) -> np.ndarray:
    """Least-squares coefficients ``a0..a5``; minimum-norm when rank deficient."""
    y = np.asarray(y, dtype=float)
    if y.size < N_TERMS:
        raise DataError(f"need at least {N_TERMS} samples to fit a neuron, got {y.size}")
    A = design(u, v)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef


def eval_neuron(coef, u, v) -> np.ndarray:
    # elementwise rather than a BLAS product: rounding must not depend on
    # array alignment, or the refinement below stops being reproducible
    c0, c1, c2, c3, c4, c5 = coef
    return c0 + c1 * u + c2 * v + c3 * (u * v) + c4 * (u * u) + c5 * (v * v)


def gcv(sse: float, n: int, p: int) -> float:
    """Generalized cross-validation ``(sse/n) / (1 - p/n)^2``."""
    if p >= n:
        raise ValueError(f"GCV undefined for p={p} >= n={n}")
    if sse < 0:
        raise ValueError("sse must be >= 0")
    return (sse / n) / (1.0 - p / n) ** 2


@dataclass(frozen=True, eq=False)
class GmdhNetwork:
    """Pruned DAG feeding the best neuron.

    Node ids ``0..n_features-1`` are the scaled raw inputs; neuron ``k`` in
    ``neurons`` has id ``n_features + k`` and only references lower ids.
    ``layer_gcv`` keeps the sorted survivor GCVs of every accepted layer.
    """

    n_features: int
    neurons: tuple[PolyNeuron, ...]
    x_scaling: ScalingSpec
    y_scaling: ScalingSpec
    layer_gcv: tuple[tuple[float, ...], ...] = ()
    univariate_coef: np.ndarray | None = None
    fitted: np.ndarray | None = field(default=None, repr=False)

    @property
    def best_gcv(self) -> float:
        return self.neurons[-1].gcv_score if self.neurons else float("nan")

    def _forward_scaled(self, Z: np.ndarray) -> np.ndarray:
        if self.univariate_coef is not None:
            z = Z[:, 0]
            return np.column_stack([np.ones_like(z), z, z * z]) @ self.univariate_coef
        values = [Z[:, j] for j in range(self.n_features)]
        for neuron in self.neurons:
            a, b = neuron.inputs
            values.append(eval_neuron(neuron.coef, values[a], values[b]))
        return values[-1]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {X.shape[1]}")
        return self.y_scaling.invert(self._forward_scaled(self.x_scaling.apply(X)))

    def to_dict(self) -> dict:
        return {
            "model": "gmdh",
            "n_features": self.n_features,
            "neurons": [
                {"inputs": list(nr.inputs), "coef": nr.coef.tolist(), "gcv": nr.gcv_score}
                for nr in self.neurons
            ],
            "univariate_coef": None if self.univariate_coef is None else self.univariate_coef.tolist(),
            "layer_gcv": [list(g) for g in self.layer_gcv],
            "x_scaling": self.x_scaling.to_dict(),
            "y_scaling": self.y_scaling.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmdhNetwork":
        uc = d.get("univariate_coef")
        return cls(
            n_features=d["n_features"],
            neurons=tuple(
                PolyNeuron(tuple(nr["inputs"]), np.array(nr["coef"]), nr["gcv"]) for nr in d["neurons"]
            ),
            x_scaling=ScalingSpec.from_dict(d["x_scaling"]),
            y_scaling=ScalingSpec.from_dict(d["y_scaling"]),
            layer_gcv=tuple(tuple(g) for g in d.get("layer_gcv", [])),
            univariate_coef=None if uc is None else np.array(uc),
        )


def _prune(n_features, all_neurons, best_id):
    """Keep only neurons reachable from ``best_id`` and renumber them."""
    needed = set()
    stack = [best_id]
    while stack:
        nid = stack.pop()
        if nid < n_features or nid in needed:
            continue
        needed.add(nid)
        stack.extend(all_neurons[nid - n_features].inputs)
    remap = {j: j for j in range(n_features)}
    kept = []
    for nid in sorted(needed):
        nr = all_neurons[nid - n_features]
        remap[nid] = n_features + len(kept)
        kept.append(PolyNeuron((remap[nr.inputs[0]], remap[nr.inputs[1]]), nr.coef, nr.gcv_score))
    return tuple(kept)


def fit_gmdh(X, y, params: GmdhParams = GmdhParams(), seed=None) -> GmdhNetwork:
    """Grow a GMDH network on ``X`` (n x p) and ``y``.

    Inputs and target are scaled to (-1, 1). The fit has no random
    component; ``seed`` is accepted for interface uniformity only.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError("X must be 2-D with one row per target")
    n, p = X.shape
    if n <= N_TERMS:
        raise DataError(f"GMDH needs more than {N_TERMS} rows, got {n}")
    xs = fit_scaling(X, "minmax", -1.0, 1.0)
    ys = fit_scaling(y, "minmax", -1.0, 1.0)
    Z = xs.apply(X)
    t = ys.apply(y)

    if p == 1:
        z = Z[:, 0]
        A = np.column_stack([np.ones_like(z), z, z * z])
        coef, *_ = np.linalg.lstsq(A, t, rcond=None)
        net = GmdhNetwork(1, (), xs, ys, univariate_coef=coef)
        return _with_fitted(net, X)

    width = params.layer_width or min(p, params.max_layer_width)
    outputs = {j: Z[:, j] for j in range(p)}
    ancestors = {j: frozenset() for j in range(p)}
    candidates = list(range(p))
    all_neurons: list[PolyNeuron] = []
    best_id, best_score = None, np.inf
    layer_scores = []

    for _ in range(params.max_layers):
        if len(candidates) < 2:
            break
        layer = []
        for a, b in itertools.combinations(candidates, 2):
            coef = fit_descriptor(outputs[a], outputs[b], t)
            out = eval_neuron(coef, outputs[a], outputs[b])
            sse = _sse(t - out)
            if params.complexity == "network":
                k = N_TERMS * (1 + len(ancestors[a] | ancestors[b]))
            else:
                k = N_TERMS
            score = gcv(sse, n, k) if k < n else np.inf
            layer.append((score, a, b, coef, out))
        layer.sort(key=lambda r: (r[0], r[1], r[2]))
        survivors = [r for r in layer[:width] if np.isfinite(r[0])]
        if not survivors or survivors[0][0] > best_score - params.min_improvement:
            break
        next_candidates = []
        for score, a, b, coef, out in survivors:
            nid = p + len(all_neurons)
            all_neurons.append(PolyNeuron((a, b), coef, score))
            outputs[nid] = out
            ancestors[nid] = ancestors[a] | ancestors[b] | {nid}
            next_candidates.append(nid)
        best_id, best_score = next_candidates[0], survivors[0][0]
        layer_scores.append(tuple(s[0] for s in survivors))
        candidates = next_candidates
        if params.admix_features:
            candidates = candidates + list(range(p))

    neurons = _prune(p, all_neurons, best_id)
    if params.refine and N_TERMS * len(neurons) <= params.refine_max_coef_ratio * n:
        neurons = _refine(neurons, Z, t)
    net = GmdhNetwork(p, neurons, xs, ys, tuple(layer_scores))
    return _with_fitted(net, X)


def _solve(A, b):
    """Gaussian elimination with partial pivoting, built from elementwise ops only."""
    A = A.copy()
    b = b.copy()
    m = b.size
    for k in range(m):
        piv = k + int(np.argmax(np.abs(A[k:, k])))
        if A[piv, k] == 0.0:
            raise np.linalg.LinAlgError("singular system")
        if piv != k:
            A[[k, piv]] = A[[piv, k]]
            b[[k, piv]] = b[[piv, k]]
        f = A[k + 1 :, k] / A[k, k]
        A[k + 1 :, k:] -= f[:, None] * A[k, k:][None, :]
        b[k + 1 :] -= f * b[k]
    x = np.zeros(m)
    for k in range(m - 1, -1, -1):
        x[k] = b[k] / A[k, k]
        b[:k] -= A[:k, k] * x[k]
    return x


def _network_jacobian(neurons, Z, theta):
    """Output of the pruned network and its Jacobian w.r.t. all coefficients."""
    n, p = Z.shape
    values = [Z[:, j] for j in range(p)]
    for k, nr in enumerate(neurons):
        a, b = nr.inputs
        values.append(eval_neuron(theta[N_TERMS * k : N_TERMS * (k + 1)], values[a], values[b]))
    J = np.zeros((n, theta.size))
    grad = [np.zeros(n) for _ in values]
    grad[-1] = np.ones(n)
    for k in range(len(neurons) - 1, -1, -1):
        a, b = neurons[k].inputs
        u, v = values[a], values[b]
        c = theta[N_TERMS * k : N_TERMS * (k + 1)]
        g = grad[p + k]
        J[:, N_TERMS * k : N_TERMS * (k + 1)] = g[:, None] * np.column_stack(
            [np.ones(n), u, v, u * v, u * u, v * v]
        )
        grad[a] = grad[a] + g * (c[1] + c[3] * v + 2.0 * c[4] * u)
        grad[b] = grad[b] + g * (c[2] + c[3] * u + 2.0 * c[5] * v)
    return values[-1], J


def _sse(r) -> float:
    return math.fsum((r * r).tolist())


def _refine(neurons, Z, t, max_iter=200, tol=1e-12):
    """Levenberg-Marquardt on the training SSE of the whole pruned network.

    Hand-rolled so that every reduction runs in a fixed order: library
    solvers route through vector kernels whose rounding can depend on
    memory alignment, which broke run-to-run reproducibility.
    """
    theta = np.concatenate([nr.coef for nr in neurons])
    out, J = _network_jacobian(neurons, Z, theta)
    r = out - t
    cost = cost0 = _sse(r)
    if cost0 == 0.0:
        return neurons
    lam = 1e-3
    for _ in range(max_iter):
        A = (J[:, :, None] * J[:, None, :]).sum(axis=0)
        g = (J * r[:, None]).sum(axis=0)
        diag = np.maximum(np.diag(A).copy(), 1e-12)
        improved = False
        while lam < 1e12:
            try:
                step = _solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = theta + step
            out_c, J_c = _network_jacobian(neurons, Z, cand)
            r_c = out_c - t
            cost_c = _sse(r_c)
            if np.isfinite(cost_c) and cost_c < cost:
                improved = True
                break
            lam *= 10.0
        if not improved:
            break
        rel = (cost - cost_c) / cost
        theta, J, r, cost = cand, J_c, r_c, cost_c
        lam = max(lam / 10.0, 1e-15)
        if rel < tol or cost == 0.0:
            break
    if not np.all(np.isfinite(theta)) or cost >= cost0:
        return neurons
    return tuple(
        PolyNeuron(nr.inputs, theta[N_TERMS * k : N_TERMS * (k + 1)].copy(), nr.gcv_score)
        for k, nr in enumerate(neurons)
    )


def _with_fitted(net: GmdhNetwork, X) -> GmdhNetwork:
    object.__setattr__(net, "fitted", net.predict(X))
    return net


def predict_gmdh(model: GmdhNetwork, X) -> np.ndarray:
    return model.predict(X)
