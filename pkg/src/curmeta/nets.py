"""Small fully-connected classifier nets with exact gradients and Hessian-vector products.

All arithmetic is float64.  Model parameters live in a single flat vector whose
layout is fixed by the architecture: for each layer, the weight matrix
(row-major, shape fan_in x fan_out) followed by the bias vector.  Everything in
this module is a pure function of its inputs; there is no hidden state, so
callers may evaluate concurrently without synchronization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh")

# Flat float64 parameter vector; length is Architecture.param_count.
ParamVector = np.ndarray


@dataclass(frozen=True)
class Architecture:
    """Widths (input, hidden..., output) of a fully-connected classifier.

    The output layer produces raw logits (no activation); hidden layers use
    ``activation``.  At least one hidden layer and an output width of at least
    2 are required.
    """

    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError(
                f"need (input, hidden..., output) with at least one hidden layer, got {widths}"
            )
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if widths[-1] < 2:
            raise ValueError(f"output width must be >= 2, got {widths[-1]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def param_count(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_widths[:-1], self.layer_widths[1:]))

    def unpack(self, params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
        """Split a flat parameter vector into per-layer (W, b) views."""
        params = _check_params(self, params)
        layers = []
        offset = 0
        for fan_in, fan_out in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            w = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = params[offset : offset + fan_out]
            offset += fan_out
            layers.append((w, b))
        return layers


@dataclass(frozen=True)
class Batch:
    """A labelled sample batch: inputs (n x d) and binary labels (n,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2:
            raise ValueError(f"inputs must be a 2-D matrix, got shape {inputs.shape}")
        if inputs.shape[0] < 1:
            raise ValueError("batch must contain at least one sample")
        if labels.shape != (inputs.shape[0],):
            raise ValueError(
                f"labels shape {labels.shape} does not match {inputs.shape[0]} samples"
            )
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]


def init_params(arch: Architecture, rng: np.random.Generator) -> ParamVector:
    """Seeded per-layer uniform initialization with scale 1/sqrt(fan_in)."""
    chunks = []
    for fan_in, fan_out in zip(arch.layer_widths[:-1], arch.layer_widths[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-scale, scale, size=fan_in * fan_out))
        chunks.append(rng.uniform(-scale, scale, size=fan_out))
    return np.concatenate(chunks)


def _check_params(arch: Architecture, params: ParamVector) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (arch.param_count,):
        raise ValueError(
            f"parameter vector has shape {params.shape}, architecture needs ({arch.param_count},)"
        )
    return params


def _check_inputs(arch: Architecture, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != arch.input_dim:
        raise ValueError(
            f"inputs must have shape (n, {arch.input_dim}), got {inputs.shape}"
        )
    return inputs


def _activate(arch: Architecture, z: np.ndarray) -> np.ndarray:
    if arch.activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_deriv(arch: Architecture, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # relu derivative at exactly 0 is taken as 0 so repeated runs are reproducible
    if arch.activation == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _forward_trace(arch, params, inputs):
    """Forward pass keeping pre-activations and activations for backprop."""
    layers = arch.unpack(params)
    acts = [inputs]  # a_0 .. a_{L-1}
    zs = []  # z_1 .. z_L
    a = inputs
    for i, (w, b) in enumerate(layers):
        z = a @ w + b
        zs.append(z)
        if i < len(layers) - 1:
            a = _activate(arch, z)
            acts.append(a)
    return layers, acts, zs


def forward(arch: Architecture, params: ParamVector, inputs: np.ndarray) -> np.ndarray:
    """Logits (n x output_dim) of the net at ``params`` on ``inputs``."""
    inputs = _check_inputs(arch, inputs)
    _, _, zs = _forward_trace(arch, params, inputs)
    return zs[-1]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log softmax probability of the true class.

    Uses the log-sum-exp form so saturated logits (magnitude up to ~1e4) never
    overflow.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ValueError(f"logits must be a 2-D matrix, got shape {logits.shape}")
    n = logits.shape[0]
    if n < 1:
        raise ValueError("cannot take cross-entropy of an empty batch")
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n} logit rows")
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(n), labels]))


def batch_loss(arch: Architecture, params: ParamVector, batch: Batch) -> float:
    """Cross-entropy of the net on a batch."""
    return cross_entropy(forward(arch, params, batch.inputs), batch.labels)


def grad(arch: Architecture, params: ParamVector, batch: Batch) -> ParamVector:
    """Exact reverse-mode gradient of the batch cross-entropy w.r.t. params."""
    inputs = _check_inputs(arch, batch.inputs)
    layers, acts, zs = _forward_trace(arch, params, inputs)
    n = inputs.shape[0]

    delta = softmax(zs[-1])
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n

    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw = acts[i].T @ delta
        gb = delta.sum(axis=0)
        grads[i] = (gw, gb)
        if i > 0:
            d = _activation_deriv(arch, zs[i - 1], acts[i])
            delta = (delta @ w.T) * d
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def hessian_vector_product(
    arch: Architecture, params: ParamVector, batch: Batch, v: ParamVector
) -> ParamVector:
    """Exact H @ v for the Hessian H of the batch cross-entropy at ``params``.

    Forward-over-reverse: a tangent in direction ``v`` is propagated through
    the forward pass and then through backprop, which differentiates the
    gradient computation itself (no finite differencing anywhere).
    """
    inputs = _check_inputs(arch, batch.inputs)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (arch.param_count,):
        raise ValueError(f"direction vector has shape {v.shape}, need ({arch.param_count},)")
    layers, acts, zs = _forward_trace(arch, params, inputs)
    vlayers = arch.unpack(v)
    n = inputs.shape[0]
    n_layers = len(layers)

    # Tangent forward pass: r_acts[i] is the directional derivative of acts[i].
    r_acts = [np.zeros_like(inputs)]
    r_zs = []
    for i, ((w, _), (vw, vb)) in enumerate(zip(layers, vlayers)):
        rz = r_acts[i] @ w + acts[i] @ vw + vb
        r_zs.append(rz)
        if i < n_layers - 1:
            d = _activation_deriv(arch, zs[i], acts[i + 1])
            r_acts.append(d * rz)

    p = softmax(zs[-1])
    rz = r_zs[-1]
    rp = p * (rz - (p * rz).sum(axis=1, keepdims=True))

    delta = p.copy()
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n
    r_delta = rp / n

    hv = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        w, _ = layers[i]
        vw, _ = vlayers[i]
        r_gw = r_acts[i].T @ delta + acts[i].T @ r_delta
        r_gb = r_delta.sum(axis=0)
        hv[i] = (r_gw, r_gb)
        if i > 0:
            d = _activation_deriv(arch, zs[i - 1], acts[i])
            s = delta @ w.T
            r_s = r_delta @ w.T + delta @ vw.T
            new_delta = s * d
            new_r_delta = r_s * d
            if arch.activation == "tanh":
                # d = 1 - a^2, so the tangent of d is -2 a r_a
                new_r_delta = new_r_delta + s * (-2.0 * acts[i] * r_acts[i])
            delta, r_delta = new_delta, new_r_delta
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in hv])
