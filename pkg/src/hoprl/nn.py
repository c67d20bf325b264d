"""Small dense-network engine: tanh hidden layers, exact backprop, Adam."""

from __future__ import annotations

import json

import numpy as np

VERSION_TAG = "hoprl-0.1.0"


class ShapeError(ValueError):
    pass


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class DenseNet:
    """Fully connected net, f64 weights, tanh hidden, linear or sigmoid head."""

    def __init__(self, layer_dims, output_activation: str = "linear",
                 rng: np.random.Generator | None = None):
        if len(layer_dims) < 2:
            raise ShapeError("need at least input and output dims")
        if output_activation not in ("linear", "sigmoid"):
            raise ShapeError(f"unknown output activation {output_activation!r}")
        self.layer_dims = list(int(d) for d in layer_dims)
        self.output_activation = output_activation
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = rng or np.random.default_rng(0)
        for d_in, d_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            bound = 1.0 / np.sqrt(d_in)
            self.weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
            self.biases.append(np.zeros(d_out))

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def clone(self) -> "DenseNet":
        other = DenseNet.__new__(DenseNet)
        other.layer_dims = list(self.layer_dims)
        other.output_activation = self.output_activation
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def _check_input(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.layer_dims[0]:
            raise ShapeError(
                f"input shape {x.shape} incompatible with "
                f"input dim {self.layer_dims[0]}")
        return x, single

    def forward(self, x: np.ndarray) -> np.ndarray:
        x, single = self._check_input(x)
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                h = np.tanh(z)
            elif self.output_activation == "sigmoid":
                h = _sigmoid(z)
            else:
                h = z
        return h[0] if single else h

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping layer activations for backprop."""
        x, single = self._check_input(x)
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                h = np.tanh(z)
            elif self.output_activation == "sigmoid":
                h = _sigmoid(z)
            else:
                h = z
            acts.append(h)
        out = acts[-1][0] if single else acts[-1]
        return out, (acts, single)

    def backward(self, cache, upstream: np.ndarray):
        """Exact gradients of sum(upstream * output) w.r.t. every parameter.

        Returns (grads, d_input) where grads matches parameters() order.
        """
        acts, single = cache
        g = np.asarray(upstream, dtype=float)
        if single:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise ShapeError(
                f"upstream shape {g.shape} != output shape {acts[-1].shape}")
        if self.output_activation == "sigmoid":
            out = acts[-1]
            dz = g * out * (1.0 - out)
        else:
            dz = g
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            h_prev = acts[i]
            grads.append(np.sum(dz, axis=0))          # bias
            grads.append(h_prev.T @ dz)               # weight
            dh = dz @ self.weights[i].T
            if i > 0:
                dz = dh * (1.0 - acts[i] * acts[i])   # tanh'
        grads.reverse()
        d_input = dh[0] if single else dh
        return grads, d_input


class AdamState:
    def __init__(self, params: list[np.ndarray], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adam_update(params: list[np.ndarray], grads: list[np.ndarray],
                adam: AdamState) -> None:
    """One bias-corrected Adam step, in place, minimizing the loss."""
    if len(params) != len(grads) or len(params) != len(adam.m):
        raise ShapeError("parameter/gradient/moment count mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != param {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    adam.step_count += 1
    t = adam.step_count
    bc1 = 1.0 - adam.beta1 ** t
    bc2 = 1.0 - adam.beta2 ** t
    for p, g, m, v in zip(params, grads, adam.m, adam.v):
        m *= adam.beta1
        m += (1.0 - adam.beta1) * g
        v *= adam.beta2
        v += (1.0 - adam.beta2) * g * g
        p -= adam.lr * (m / bc1) / (np.sqrt(v / bc2) + adam.eps)


def adam_step(net: DenseNet, grads: list[np.ndarray],
              adam: AdamState) -> DenseNet:
    adam_update(net.parameters(), grads, adam)
    return net


def net_to_dict(net: DenseNet) -> dict:
    return {
        "layer_dims": net.layer_dims,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "hidden_activation": "tanh",
        "output_activation": net.output_activation,
    }


def net_from_dict(data: dict) -> DenseNet:
    net = DenseNet(data["layer_dims"], data["output_activation"])
    net.weights = [np.asarray(w, dtype=float) for w in data["weights"]]
    net.biases = [np.asarray(b, dtype=float) for b in data["biases"]]
    for w, b, d_in, d_out in zip(net.weights, net.biases,
                                 net.layer_dims[:-1], net.layer_dims[1:]):
        if w.shape != (d_in, d_out) or b.shape != (d_out,):
            raise ShapeError("checkpoint weight shapes do not match layer_dims")
    return net


def save_checkpoint(path: str, net: DenseNet, norm_stats=None,
                    extra: dict | None = None, meta: dict | None = None) -> None:
    doc = net_to_dict(net)
    doc["norm_stats"] = norm_stats.to_dict() if norm_stats is not None else None
    doc["extra"] = {k: np.asarray(v).tolist() for k, v in (extra or {}).items()}
    doc["meta"] = {"version": VERSION_TAG, "seed": None, **(meta or {})}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    doc["net"] = net_from_dict(doc)
    return doc
