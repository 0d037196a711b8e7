"""Trainable readouts: least squares for regression, sigmoid layers for classes.

The classifiers have four independent sigmoid outputs trained with mean
binary cross-entropy by plain gradient descent. The conv+FC variant puts one
valid 2-D convolution (kernel spanning every device row, one output channel,
no activation) in front of the same FC layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DivergenceError, SingularFitError

N_CLASSES = 4


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float)


# --- linear regression ------------------------------------------------------

@dataclass
class LinearReadout:
    weights: np.ndarray
    intercept: float
    ridge_used: bool = False

    @property
    def n_params(self) -> int:
        return len(self.weights) + 1

    def to_dict(self) -> dict:
        return {"architecture": {"kind": "linear", "inputs": len(self.weights)},
                "parameters": {"weights": self.weights.tolist(), "intercept": self.intercept},
                "n_params": self.n_params, "training": {"ridge_fallback": self.ridge_used}}


def train_linear(states, targets, ridge: float = 1e-10, columns=None) -> LinearReadout:
    """Ordinary least squares with intercept via the normal equations.

    Columns are standardized first for conditioning. If the normal matrix is
    numerically singular a ridge penalty (relative to its mean diagonal) is
    added to the slope block only.
    """
    X = _as_array(states)
    y = np.asarray(targets, dtype=float)
    columns = columns or getattr(states, "columns", None) or [str(i) for i in range(X.shape[1])]
    n, m = X.shape
    if y.shape != (n,):
        raise ValueError(f"targets shape {y.shape} does not match {n} rows")
    if n < m + 1:
        raise ValueError(f"need at least {m + 1} rows for {m} columns plus intercept, got {n}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite training data")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    flat = np.flatnonzero(sd <= 1e-13 * np.maximum(np.abs(mu), np.finfo(float).tiny))
    if flat.size:
        raise SingularFitError("constant columns are collinear with the intercept",
                               [columns[i] for i in flat])
    A = np.column_stack([np.ones(n), (X - mu) / sd])
    G = A.T @ A
    rhs = A.T @ y
    eig = np.linalg.eigvalsh(G)
    used_ridge = eig[0] <= 1e-12 * eig[-1]
    if used_ridge:
        G = G.copy()
        G[1:, 1:] += ridge * np.trace(G) / len(G) * np.eye(m)
        eig_r, vecs = np.linalg.eigh(G)
        if eig_r[0] <= 1e-15 * eig_r[-1]:
            bad = np.flatnonzero(np.abs(vecs[1:, 0]) > 0.1)
            raise SingularFitError("normal equations singular after ridge fallback",
                                   [columns[i] for i in bad])
    L = np.linalg.cholesky(G)
    w = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    slopes = w[1:] / sd
    return LinearReadout(slopes, float(w[0] - slopes @ mu), bool(used_ridge))


def predict_linear(model: LinearReadout, states) -> np.ndarray:
    X = _as_array(states)
    if X.ndim != 2 or X.shape[1] != len(model.weights):
        raise ValueError(f"expected {len(model.weights)} columns, got shape {X.shape}")
    return X @ model.weights + model.intercept


# --- architectures ------------------------------------------------------------

@dataclass(frozen=True)
class FcArch:
    nm: int

    @property
    def n_params(self) -> int:
        return N_CLASSES * self.nm + N_CLASSES


@dataclass(frozen=True)
class ConvFcArch:
    m: int
    n: int
    f: int

    def __post_init__(self):
        if not 1 <= self.f <= self.n:
            raise ValueError(f"kernel length f={self.f} must be in [1, n={self.n}]")

    @property
    def conv_len(self) -> int:
        return self.n - self.f + 1

    @property
    def n_params(self) -> int:
        return N_CLASSES * self.conv_len + N_CLASSES + self.m * self.f + 1


def param_count(arch: FcArch | ConvFcArch) -> int:
    return arch.n_params


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 2000
    seed: int = 0
    init_scale: float = 0.1
    batch_size: int | None = None
    early_stop_tol: float = 1e-7
    early_stop_window: int = 50

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


# --- models -------------------------------------------------------------------

@dataclass
class FcReadout:
    w: np.ndarray  # (4, nm)
    b: np.ndarray  # (4,)
    meta: dict = field(default_factory=dict)

    @property
    def arch(self) -> FcArch:
        return FcArch(self.w.shape[1])

    @property
    def n_params(self) -> int:
        return self.w.size + self.b.size

    def logits(self, X) -> np.ndarray:
        X = _as_array(X)
        if X.ndim != 2 or X.shape[1] != self.w.shape[1]:
            raise ValueError(f"expected (P, {self.w.shape[1]}) features, got {X.shape}")
        return X @ self.w.T + self.b

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w.ravel(), self.b])

    def with_flat(self, theta) -> "FcReadout":
        k = self.w.size
        return FcReadout(np.array(theta[:k]).reshape(self.w.shape), np.array(theta[k:]), dict(self.meta))

    def grad(self, X, Y):
        """Mean BCE loss and flat gradient."""
        X = _as_array(X)
        z = self.logits(X)
        loss = _bce(z, Y)
        dz = _dbce(z, Y)
        return loss, np.concatenate([(dz.T @ X).ravel(), dz.sum(axis=0)])


@dataclass
class ConvFcReadout:
    kernel: np.ndarray  # (m, f)
    kernel_bias: float
    w: np.ndarray  # (4, n - f + 1)
    b: np.ndarray  # (4,)
    meta: dict = field(default_factory=dict)

    @property
    def arch(self) -> ConvFcArch:
        m, f = self.kernel.shape
        return ConvFcArch(m, self.w.shape[1] + f - 1, f)

    @property
    def n_params(self) -> int:
        return self.kernel.size + 1 + self.w.size + self.b.size

    def _windows(self, X):
        X = _as_array(X)
        m, f = self.kernel.shape
        if X.ndim != 3 or X.shape[1] != m or X.shape[2] != self.arch.n:
            raise ValueError(f"expected (P, {m}, {self.arch.n}) features, got {X.shape}")
        return sliding_window_view(X, f, axis=2)  # (P, m, L, f)

    def hidden(self, X) -> np.ndarray:
        return np.einsum("pmlf,mf->pl", self._windows(X), self.kernel) + self.kernel_bias

    def logits(self, X) -> np.ndarray:
        return self.hidden(X) @ self.w.T + self.b

    def flat(self) -> np.ndarray:
        return np.concatenate([self.kernel.ravel(), [self.kernel_bias], self.w.ravel(), self.b])

    def with_flat(self, theta) -> "ConvFcReadout":
        theta = np.asarray(theta, dtype=float)
        k, w = self.kernel.size, self.w.size
        return ConvFcReadout(theta[:k].reshape(self.kernel.shape), float(theta[k]),
                             theta[k + 1:k + 1 + w].reshape(self.w.shape), theta[k + 1 + w:].copy(),
                             dict(self.meta))

    def grad(self, X, Y):
        win = self._windows(X)
        h = np.einsum("pmlf,mf->pl", win, self.kernel) + self.kernel_bias
        z = h @ self.w.T + self.b
        loss = _bce(z, Y)
        dz = _dbce(z, Y)
        dh = dz @ self.w
        gk = np.einsum("pl,pmlf->mf", dh, win)
        return loss, np.concatenate([gk.ravel(), [dh.sum()], (dz.T @ h).ravel(), dz.sum(axis=0)])


def _bce(z, Y) -> float:
    # mean over samples and outputs of softplus(z) - y*z, i.e. BCE on sigmoid(z)
    return float(np.mean(np.logaddexp(0.0, z) - Y * z))


def _dbce(z, Y) -> np.ndarray:
    return (sigmoid(z) - Y) / z.size


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def one_hot(labels, n_classes: int = N_CLASSES) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape[1] != n_classes or not np.all(labels.sum(axis=1) == 1):
            raise ValueError("labels must be one-hot rows")
        return labels.astype(float)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("class index out of range")
    return np.eye(n_classes)[labels]


def _uniform(rng, scale, shape):
    return rng.uniform(-scale, scale, size=shape)


def _descend(model, X, Y, cfg: TrainConfig):
    """Gradient descent on mean BCE; returns (model, loss trace)."""
    # overflow shows up as a non-finite loss and is reported as DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        return _descend_loop(model, X, Y, cfg)


def _descend_loop(model, X, Y, cfg: TrainConfig):
    rng = np.random.default_rng([cfg.seed, 1])
    theta = model.flat()
    losses = []
    n = len(Y)
    for epoch in range(cfg.epochs):
        if cfg.batch_size is None or cfg.batch_size >= n:
            loss, g = model.with_flat(theta).grad(X, Y)
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            theta = theta - cfg.learning_rate * g
        else:
            loss = model.with_flat(theta).grad(X, Y)[0]
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            order = rng.permutation(n)
            for s in range(0, n, cfg.batch_size):
                sel = order[s:s + cfg.batch_size]
                theta = theta - cfg.learning_rate * model.with_flat(theta).grad(X[sel], Y[sel])[1]
        losses.append(loss)
        w = cfg.early_stop_window
        if len(losses) > w and losses[-1 - w] - losses[-1] < cfg.early_stop_tol:
            break
    final = model.with_flat(theta)
    final_loss = final.grad(X, Y)[0]
    if not np.isfinite(final_loss):
        raise DivergenceError(len(losses))
    final.meta = {"seed": cfg.seed, "epochs_run": len(losses), "final_loss": final_loss,
                  "learning_rate": cfg.learning_rate, "batch_size": cfg.batch_size}
    return final, np.asarray(losses)


def init_fc(nm: int, cfg: TrainConfig) -> FcReadout:
    rng = np.random.default_rng([cfg.seed, 0])
    return FcReadout(_uniform(rng, cfg.init_scale, (N_CLASSES, nm)), _uniform(rng, cfg.init_scale, N_CLASSES))


def init_convfc(m: int, n: int, f: int, cfg: TrainConfig) -> ConvFcReadout:
    arch = ConvFcArch(m, n, f)
    rng = np.random.default_rng([cfg.seed, 0])
    return ConvFcReadout(_uniform(rng, cfg.init_scale, (m, f)), float(_uniform(rng, cfg.init_scale, ())),
                         _uniform(rng, cfg.init_scale, (N_CLASSES, arch.conv_len)),
                         _uniform(rng, cfg.init_scale, N_CLASSES))


def train_fc(features, labels, cfg: TrainConfig = TrainConfig()):
    """Train the FC-sigmoid readout on flattened (P, n*m) features."""
    X = _as_array(features)
    if X.ndim == 3:
        X = X.reshape(len(X), -1)
    Y = one_hot(labels)
    if len(X) != len(Y):
        raise ValueError("features and labels disagree on the number of patterns")
    return _descend(init_fc(X.shape[1], cfg), X, Y, cfg)


def train_convfc(features, labels, kernel_shape: tuple[int, int], cfg: TrainConfig = TrainConfig()):
    """Train conv+FC on (P, m, n) feature blocks with a (m, f) kernel."""
    X = _as_array(features)
    if X.ndim != 3:
        raise ValueError("conv+FC expects (P, m, n) feature blocks")
    km, f = kernel_shape
    if km != X.shape[1]:
        raise ValueError(f"kernel rows {km} must equal the device count {X.shape[1]}")
    if f > X.shape[2]:
        raise ValueError(f"kernel length {f} exceeds the {X.shape[2]} nodes")
    Y = one_hot(labels)
    if len(X) != len(Y):
        raise ValueError("features and labels disagree on the number of patterns")
    return _descend(init_convfc(X.shape[1], X.shape[2], f, cfg), X, Y, cfg)


def scores(model, features) -> np.ndarray:
    return sigmoid(model.logits(_prep(model, features)))


def classify(model, features) -> np.ndarray:
    """Argmax over the four outputs; ties go to the lowest class index.

    The argmax is taken on pre-activations, which orders the same way as the
    sigmoid outputs but cannot saturate into artificial ties.
    """
    return np.argmax(model.logits(_prep(model, features)), axis=1)


def _prep(model, features):
    X = _as_array(features)
    if isinstance(model, FcReadout) and X.ndim == 3:
        X = X.reshape(len(X), -1)
    if isinstance(model, FcReadout) and X.ndim == 1:
        X = X[None, :]
    return X


# --- serialization --------------------------------------------------------------

def model_to_dict(model) -> dict:
    if isinstance(model, LinearReadout):
        return model.to_dict()
    if isinstance(model, FcReadout):
        arch = {"kind": "fc", "nm": model.arch.nm}
        params = {"w": model.w.ravel().tolist(), "b": model.b.tolist()}
    elif isinstance(model, ConvFcReadout):
        a = model.arch
        arch = {"kind": "convfc", "m": a.m, "n": a.n, "f": a.f}
        params = {"kernel": model.kernel.ravel().tolist(), "kernel_bias": model.kernel_bias,
                  "w": model.w.ravel().tolist(), "b": model.b.tolist()}
    else:
        raise TypeError(f"unsupported model {type(model).__name__}")
    return {"architecture": arch, "parameters": params, "n_params": model.n_params, "training": model.meta}


def model_from_dict(d: dict):
    arch, p = d["architecture"], d["parameters"]
    kind = arch["kind"]
    if kind == "linear":
        return LinearReadout(np.asarray(p["weights"], float), float(p["intercept"]),
                             bool(d.get("training", {}).get("ridge_fallback", False)))
    if kind == "fc":
        return FcReadout(np.asarray(p["w"], float).reshape(N_CLASSES, arch["nm"]), np.asarray(p["b"], float),
                         dict(d.get("training", {})))
    if kind == "convfc":
        a = ConvFcArch(arch["m"], arch["n"], arch["f"])
        return ConvFcReadout(np.asarray(p["kernel"], float).reshape(a.m, a.f), float(p["kernel_bias"]),
                             np.asarray(p["w"], float).reshape(N_CLASSES, a.conv_len), np.asarray(p["b"], float),
                             dict(d.get("training", {})))
    raise ValueError(f"unknown architecture kind {kind!r}")


def model_to_json(model) -> str:
    return json.dumps(model_to_dict(model), indent=2, sort_keys=True)


def model_from_json(text: str):
    return model_from_dict(json.loads(text))
