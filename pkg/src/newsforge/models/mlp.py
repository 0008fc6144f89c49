"""Single-hidden-layer perceptron trained by momentum backpropagation.

Several candidate networks with different hidden sizes are trained from
independent seeds; the ones with the lowest error on a chronological
validation tail are retained and the best of them is used for prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from newsforge import DataError
from newsforge.ingest import ScalingSpec, fit_scaling


@dataclass(frozen=True)
class MlpParams:
    hidden_units: int = 4
    max_hidden_units: int = 13
    candidates_to_train: int = 20
    candidates_to_retain: int = 5
    learning_rate: float = 0.1
    momentum: float = 0.1
    cycles: int = 200
    validation_fraction: float = 0.2
    init_range: float = 0.5
    ensemble: bool = False

    def __post_init__(self):
        if not 1 <= self.hidden_units <= self.max_hidden_units:
            raise ValueError("need 1 <= hidden_units <= max_hidden_units")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 <= self.momentum <= 1:
            raise ValueError("momentum must lie in [0, 1]")
        if not 1 <= self.candidates_to_retain <= self.candidates_to_train:
            raise ValueError("need 1 <= candidates_to_retain <= candidates_to_train")
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")


@dataclass(eq=False)
class Network:
    """tanh hidden layer, linear output; operates in scaled space."""

    W1: np.ndarray  # (p, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h,)
    b2: float

    @property
    def params(self):
        return [self.W1, self.b1, self.w2, np.atleast_1d(self.b2)]

    def forward(self, X) -> np.ndarray:
        return np.tanh(X @ self.W1 + self.b1) @ self.w2 + self.b2

    def copy(self) -> "Network":
        return Network(self.W1.copy(), self.b1.copy(), self.w2.copy(), float(self.b2))

    def to_dict(self) -> dict:
        return {"W1": self.W1.tolist(), "b1": self.b1.tolist(), "w2": self.w2.tolist(), "b2": self.b2}

    @classmethod
    def from_dict(cls, d) -> "Network":
        W1 = np.array(d["W1"], dtype=float)
        return cls(W1.reshape(-1, len(d["b1"])), np.array(d["b1"], dtype=float),
                   np.array(d["w2"], dtype=float), float(d["b2"]))


def sse(net: Network, X, y) -> float:
    r = net.forward(X) - y
    return float(r @ r)


def loss_gradient(net: Network, X, y):
    """Gradient of ``0.5 * SSE`` w.r.t. ``(W1, b1, w2, b2)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.W1.shape[0] or X.shape[0] != y.shape[0]:
        raise DataError("input shapes do not match the network")
    H = np.tanh(X @ net.W1 + net.b1)
    r = H @ net.w2 + net.b2 - y
    g_w2 = H.T @ r
    g_b2 = float(r.sum())
    delta = np.outer(r, net.w2) * (1.0 - H**2)
    return X.T @ delta, delta.sum(axis=0), g_w2, g_b2


def init_network(p: int, hidden: int, rng, init_range: float = 0.5) -> Network:
    u = lambda *shape: rng.uniform(-init_range, init_range, size=shape)
    return Network(u(p, hidden), u(hidden), u(hidden), float(u(1)[0]))


def train_network(net: Network, X, y, learning_rate, momentum, cycles):
    """Full-batch momentum descent on the mean per-row gradient.

    Returns the trained network and the training SSE after each cycle.
    """
    net = net.copy()
    n = X.shape[0]
    vel = [np.zeros_like(p) for p in net.params]
    trace = []
    for _ in range(cycles):
        grads = loss_gradient(net, X, y)
        params = [net.W1, net.b1, net.w2, np.array([net.b2])]
        for k, (prm, g) in enumerate(zip(params, grads)):
            vel[k] = momentum * vel[k] - learning_rate * np.asarray(g) / n
            prm += vel[k]
        net.b2 = float(params[3][0])
        trace.append(sse(net, X, y))
    return net, trace


@dataclass(frozen=True, eq=False)
class MlpModel:
    networks: tuple[Network, ...]
    x_scaling: ScalingSpec
    y_scaling: ScalingSpec
    validation_sse: tuple[float, ...]
    candidate_validation_sse: tuple[float, ...] = ()
    loss_trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def n_features(self) -> int:
        return self.networks[0].W1.shape[0]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {X.shape[1]}")
        Z = self.x_scaling.apply(X)
        out = np.mean([net.forward(Z) for net in self.networks], axis=0)
        return self.y_scaling.invert(out)

    def to_dict(self) -> dict:
        return {
            "model": "mlp",
            "networks": [n.to_dict() for n in self.networks],
            "x_scaling": self.x_scaling.to_dict(),
            "y_scaling": self.y_scaling.to_dict(),
            "validation_sse": list(self.validation_sse),
            "candidate_validation_sse": list(self.candidate_validation_sse),
        }

    @classmethod
    def from_dict(cls, d) -> "MlpModel":
        return cls(
            tuple(Network.from_dict(n) for n in d["networks"]),
            ScalingSpec.from_dict(d["x_scaling"]),
            ScalingSpec.from_dict(d["y_scaling"]),
            tuple(d["validation_sse"]),
            tuple(d.get("candidate_validation_sse", ())),
        )


def fit_mlp(X, y, params: MlpParams = MlpParams(), seed: int = 0) -> MlpModel:
    """Train ``candidates_to_train`` networks and keep the best by validation SSE.

    Candidate 0 uses ``hidden_units``; the others draw a hidden size
    uniformly from ``1..max_hidden_units``. Each candidate has its own
    generator spawned from ``seed``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError("X must be 2-D with one row per target")
    n, p = X.shape
    if n < 3:
        raise DataError(f"MLP needs at least 3 rows, got {n}")
    xs = fit_scaling(X, "minmax", 0.0, 1.0)
    ys = fit_scaling(y, "minmax", 0.0, 1.0)
    Z, t = xs.apply(X), ys.apply(y)
    n_val = min(n - 2, max(1, int(round(params.validation_fraction * n))))
    Zt, tt, Zv, tv = Z[:-n_val], t[:-n_val], Z[-n_val:], t[-n_val:]

    results = []
    for c, ss in enumerate(np.random.SeedSequence(seed).spawn(params.candidates_to_train)):
        rng = np.random.default_rng(ss)
        hidden = params.hidden_units if c == 0 else int(rng.integers(1, params.max_hidden_units + 1))
        net0 = init_network(p, hidden, rng, params.init_range)
        net, trace = train_network(net0, Zt, tt, params.learning_rate, params.momentum, params.cycles)
        vsse = sse(net, Zv, tv)
        if not np.isfinite(vsse):
            vsse = np.inf
        results.append((vsse, c, net, trace))

    ranked = sorted(results, key=lambda r: (r[0], r[1]))[: params.candidates_to_retain]
    keep = ranked if params.ensemble else ranked[:1]
    return MlpModel(
        networks=tuple(r[2] for r in keep),
        x_scaling=xs,
        y_scaling=ys,
        validation_sse=tuple(r[0] for r in ranked),
        candidate_validation_sse=tuple(r[0] for r in results),
        loss_trace=tuple(ranked[0][3]),
    )


def predict_mlp(model: MlpModel, X) -> np.ndarray:
    return model.predict(X)
