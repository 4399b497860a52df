"""Two-layer LSTM classifier with dropout and a softmax head, trained with Adam.

Inputs of shape ``(N, d)`` are read as length-1 sequences ``(N, 1, d)``;
``(N, T, d)`` sequences work too.  Only the last hidden state of the second
layer feeds the dense output layer.  Gates are stored in i, f, g, o order in
one ``(d_in, 4h)`` kernel, one ``(h, 4h)`` recurrent kernel and one ``4h`` bias.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

LOSS_CLIP = 1e-15


@dataclass(frozen=True)
class LstmHyper:
    units: Tuple[int, int] = (128, 64)
    dropout: float = 0.5
    epochs: int = 10
    batch_size: int = 64
    val_split: float = 0.1
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    seed: int = 0


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def lstm_param_count(d_in: int, h: int) -> int:
    return 4 * (h * (d_in + h) + h)


def lstm_forward(x, kernel, recurrent, bias):
    """Run one LSTM layer over ``x`` of shape ``(B, T, d_in)``; zero initial state."""
    B, T, _ = x.shape
    h_dim = recurrent.shape[0]
    h = np.zeros((B, h_dim))
    c = np.zeros((B, h_dim))
    hs = np.empty((B, T, h_dim))
    steps = []
    for t in range(T):
        z = x[:, t] @ kernel + h @ recurrent + bias
        i = _sigmoid(z[:, :h_dim])
        f = _sigmoid(z[:, h_dim:2 * h_dim])
        g = np.tanh(z[:, 2 * h_dim:3 * h_dim])
        o = _sigmoid(z[:, 3 * h_dim:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        steps.append((i, f, g, o, c_prev, h_prev, tc))
    return hs, steps


def lstm_backward(dhs, x, kernel, recurrent, steps):
    """Backpropagation through time.  Returns ``(dx, dkernel, drecurrent, dbias)``."""
    B, T, _ = x.shape
    h_dim = recurrent.shape[0]
    dx = np.zeros_like(x)
    dK = np.zeros_like(kernel)
    dR = np.zeros_like(recurrent)
    db = np.zeros(4 * h_dim)
    dh_next = np.zeros((B, h_dim))
    dc_next = np.zeros((B, h_dim))
    for t in reversed(range(T)):
        i, f, g, o, c_prev, h_prev, tc = steps[t]
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        dK += x[:, t].T @ dz
        dR += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ kernel.T
        dh_next = dz @ recurrent.T
        dc_next = dc * f
    return dx, dK, dR, db


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(proba, y) -> float:
    p = np.maximum(proba[np.arange(len(y)), y], LOSS_CLIP)
    return float(-np.mean(np.log(p)))


@dataclass
class LstmModel:
    n_features: int
    n_classes: int
    hyper: LstmHyper = LstmHyper()
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    history: List[dict] = field(default_factory=list)

    PARAM_NAMES = ("lstm1/kernel", "lstm1/recurrent", "lstm1/bias",
                   "lstm2/kernel", "lstm2/recurrent", "lstm2/bias",
                   "dense/kernel", "dense/bias")

    @classmethod
    def init(cls, n_features: int, n_classes: int, hyper: LstmHyper = LstmHyper(),
             rng: Optional[np.random.Generator] = None) -> "LstmModel":
        """Glorot-uniform kernels, zero biases except a forget-gate bias of 1."""
        if rng is None:
            rng = np.random.default_rng(hyper.seed)
        params = {}
        d_in = n_features
        for layer, h in zip(("lstm1", "lstm2"), hyper.units):
            params[f"{layer}/kernel"] = _glorot(rng, d_in, 4 * h)
            params[f"{layer}/recurrent"] = _glorot(rng, h, 4 * h)
            bias = np.zeros(4 * h)
            bias[h:2 * h] = 1.0
            params[f"{layer}/bias"] = bias
            d_in = h
        params["dense/kernel"] = _glorot(rng, d_in, n_classes)
        params["dense/bias"] = np.zeros(n_classes)
        return cls(n_features, n_classes, hyper, params)

    def param_counts(self) -> Dict[str, int]:
        out = {}
        for layer in ("lstm1", "lstm2", "dense"):
            out[layer] = sum(v.size for k, v in self.params.items() if k.startswith(layer + "/"))
        return out

    def _as_sequence(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[:, None, :]
        if X.ndim != 3 or X.shape[2] != self.n_features:
            raise ValueError(f"expected inputs with {self.n_features} features, got shape {X.shape}")
        return X

    def dropout_mask(self, rng, batch: int) -> np.ndarray:
        keep = 1.0 - self.hyper.dropout
        return (rng.random((batch, self.hyper.units[1])) < keep) / keep

    def forward(self, X, training: bool = False, rng=None, mask=None):
        """Class probabilities; returns ``(proba, cache)``.

        With ``training`` set, inverted dropout is applied to the second
        layer's output, using ``mask`` if given, else one drawn from ``rng``.
        """
        p = self.params
        x = self._as_sequence(X)
        h1, s1 = lstm_forward(x, p["lstm1/kernel"], p["lstm1/recurrent"], p["lstm1/bias"])
        h2, s2 = lstm_forward(h1, p["lstm2/kernel"], p["lstm2/recurrent"], p["lstm2/bias"])
        last = h2[:, -1]
        if training:
            if mask is None:
                mask = self.dropout_mask(rng, last.shape[0])
            dropped = last * mask
        else:
            mask, dropped = None, last
        proba = softmax(dropped @ p["dense/kernel"] + p["dense/bias"])
        return proba, (x, h1, s1, h2, s2, mask, dropped)

    def loss_and_grads(self, X, y, training: bool = False, rng=None, mask=None):
        """Mean cross-entropy and its gradient w.r.t. every parameter."""
        y = np.asarray(y, dtype=np.int64)
        p = self.params
        proba, (x, h1, s1, h2, s2, mask, dropped) = self.forward(X, training, rng, mask)
        B = x.shape[0]
        loss = cross_entropy(proba, y)
        dlogits = proba.copy()
        dlogits[np.arange(B), y] -= 1.0
        dlogits /= B
        grads = {"dense/kernel": dropped.T @ dlogits, "dense/bias": dlogits.sum(axis=0)}
        dlast = dlogits @ p["dense/kernel"].T
        if mask is not None:
            dlast = dlast * mask
        dh2 = np.zeros_like(h2)
        dh2[:, -1] = dlast
        dh1, dK, dR, db = lstm_backward(dh2, h1, p["lstm2/kernel"], p["lstm2/recurrent"], s2)
        grads.update({"lstm2/kernel": dK, "lstm2/recurrent": dR, "lstm2/bias": db})
        _, dK, dR, db = lstm_backward(dh1, x, p["lstm1/kernel"], p["lstm1/recurrent"], s1)
        grads.update({"lstm1/kernel": dK, "lstm1/recurrent": dR, "lstm1/bias": db})
        return loss, grads, proba

    def predict_proba(self, X) -> np.ndarray:
        return self.forward(X, training=False)[0]

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params.values())

    # -- persistence ---------------------------------------------------------

    def save(self, directory, meta=None) -> None:
        """``manifest.json`` + ``weights.bin`` (little-endian float64, row-major)
        + ``history.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        tensors, offset = [], 0
        with open(directory / "weights.bin", "wb") as fh:
            for name in self.PARAM_NAMES:
                arr = np.ascontiguousarray(self.params[name], dtype="<f8")
                fh.write(arr.tobytes(order="C"))
                tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
                offset += arr.nbytes
        manifest = {
            "meta": meta or {},
            "format": "float64-le-row-major",
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "hyper": asdict(self.hyper),
            "tensors": tensors,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        (directory / "history.json").write_text(json.dumps(self.history, indent=2) + "\n")

    @classmethod
    def load(cls, directory) -> "LstmModel":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        raw = (directory / "weights.bin").read_bytes()
        hyper_kw = manifest["hyper"]
        hyper_kw["units"] = tuple(hyper_kw["units"])
        params = {}
        for t in manifest["tensors"]:
            count = int(np.prod(t["shape"]))
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=t["offset"])
            params[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
        history = []
        if (directory / "history.json").exists():
            history = json.loads((directory / "history.json").read_text())
        return cls(manifest["n_features"], manifest["n_classes"], LstmHyper(**hyper_kw), params, history)


class Adam:
    """Adam with the bias correction folded into the step size."""

    def __init__(self, params: Dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-7):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        lr_t = self.lr * np.sqrt(1.0 - self.beta2**self.t) / (1.0 - self.beta1**self.t)
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= lr_t * m / (np.sqrt(v) + self.eps)


def fit(X, y, n_classes: Optional[int] = None, hyper: LstmHyper = LstmHyper(),
        model: Optional[LstmModel] = None) -> LstmModel:
    """Train on ``(X, y)``; the last ``val_split`` of a seeded shuffle is held out.

    ``model.history`` gets one entry per epoch with train/val loss and accuracy.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    split_at = int(n * (1.0 - hyper.val_split))
    if n < 10 or split_at < 1 or split_at >= n:
        raise ValueError(f"need at least 10 samples for a validation split of {hyper.val_split}, got {n}")
    C = int(n_classes if n_classes is not None else y.max() + 1)
    rng = np.random.default_rng(hyper.seed)
    if model is None:
        model = LstmModel.init(X.shape[1], C, hyper, rng)
    perm = rng.permutation(n)
    X_tr, y_tr = X[perm[:split_at]], y[perm[:split_at]]
    X_val, y_val = X[perm[split_at:]], y[perm[split_at:]]
    opt = Adam(model.params, hyper.lr, hyper.beta1, hyper.beta2, hyper.eps)
    model.history = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(split_at)
        loss_sum, correct = 0.0, 0
        for start in range(0, split_at, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            loss, grads, proba = model.loss_and_grads(X_tr[idx], y_tr[idx], training=True, rng=rng)
            opt.step(model.params, grads)
            loss_sum += loss * len(idx)
            correct += int((np.argmax(proba, axis=1) == y_tr[idx]).sum())
        val_proba = model.predict_proba(X_val)
        model.history.append({
            "epoch": epoch + 1,
            "loss": loss_sum / split_at,
            "accuracy": correct / split_at,
            "val_loss": cross_entropy(val_proba, y_val),
            "val_accuracy": float(np.mean(np.argmax(val_proba, axis=1) == y_val)),
        })
    return model
