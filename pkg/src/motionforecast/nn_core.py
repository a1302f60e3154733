"""Minimal dense-network stack with analytic backpropagation.

Layers, Gaussian heads, the reparameterization transform, KL and
log-density primitives, Adam, deterministic initialization, and a
finite-difference gradient oracle. Everything is float64; batched
operations take (B, dim) arrays and reduce in a fixed order so training
runs are bit-reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch

VAR_FLOOR = 1e-6
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

LOG_TWO_PI = float(np.log(2.0 * np.pi))


def derive_rng(seed: int, *labels) -> np.random.Generator:
    """Deterministic PCG64 stream keyed by a seed and purpose labels.

    Each label is hashed with SHA-256 and folded into the seed sequence,
    so streams for different purposes (limb training, evaluation, data
    generation, ...) are independent yet fully reproducible from the one
    user-facing seed.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for label in labels:
        digest = hashlib.sha256(str(label).encode("utf-8")).digest()
        entropy.append(int.from_bytes(digest[:8], "little"))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GaussianVector:
    """Mean and diagonal variance over a flat vector."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mean.shape != self.var.shape:
            raise ShapeMismatch(
                f"mean shape {self.mean.shape} != var shape {self.var.shape}"
            )
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.var))):
            raise ValueError("GaussianVector entries must be finite")
        if np.any(self.var <= 0.0):
            raise ValueError("GaussianVector variance must be strictly positive")

    def __len__(self) -> int:
        return self.mean.shape[-1]


@dataclass
class DenseLayer:
    """Fully connected layer y = act(W x + b), act in {tanh, identity}."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeMismatch(
                f"inconsistent layer shapes {self.weights.shape} / {self.biases.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


def dense_forward(layer: DenseLayer, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Forward pass; cache holds what backward needs (input, activations)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ShapeMismatch(
            f"input dim {x.shape[-1]} != layer in-dim {layer.in_dim}"
        )
    pre = x @ layer.weights.T + layer.biases
    if layer.activation == "tanh":
        out = np.tanh(pre)
    else:
        out = pre
    return out, {"x": x, "out": out}


def dense_backward(
    layer: DenseLayer, cache: dict, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward pass: returns (grad_weights, grad_biases, grad_input).

    Gradients are summed over the batch axis; the caller owns any
    batch-mean scaling (apply it to grad_out).
    """
    x, out = cache["x"], cache["out"]
    if layer.activation == "tanh":
        g = grad_out * (1.0 - out * out)
    else:
        g = grad_out
    if g.ndim == 1:
        grad_w = np.outer(g, x)
        grad_b = g.copy()
    else:
        grad_w = g.T @ x
        grad_b = g.sum(axis=0)
    grad_x = g @ layer.weights
    return grad_w, grad_b, grad_x


@dataclass
class GaussianHead:
    """Two identity layers producing (mean, var) with var = softplus + floor."""

    mean_layer: DenseLayer
    raw_var_layer: DenseLayer
    var_floor: float = VAR_FLOOR

    @property
    def in_dim(self) -> int:
        return self.mean_layer.in_dim

    @property
    def out_dim(self) -> int:
        return self.mean_layer.out_dim


def head_forward(
    head: GaussianHead, h: np.ndarray
) -> tuple[np.ndarray, np.ndarray, dict]:
    mean, mean_cache = dense_forward(head.mean_layer, h)
    raw, raw_cache = dense_forward(head.raw_var_layer, h)
    var = softplus(raw) + head.var_floor
    return mean, var, {"mean": mean_cache, "raw": raw_cache, "raw_out": raw}


def head_backward(
    head: GaussianHead, cache: dict, grad_mean: np.ndarray, grad_var: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (gw_mean, gb_mean, gw_raw, gb_raw, grad_h)."""
    grad_raw = grad_var * sigmoid(cache["raw_out"])
    gw_m, gb_m, gh_m = dense_backward(head.mean_layer, cache["mean"], grad_mean)
    gw_r, gb_r, gh_r = dense_backward(head.raw_var_layer, cache["raw"], grad_raw)
    return gw_m, gb_m, gw_r, gb_r, gh_m + gh_r


def reparameterize(g: GaussianVector, eps: np.ndarray) -> np.ndarray:
    """sample = mean + sqrt(var) * eps."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != g.mean.shape:
        raise ShapeMismatch(f"eps shape {eps.shape} != mean shape {g.mean.shape}")
    return g.mean + np.sqrt(g.var) * eps


def kl_std_normal(g: GaussianVector) -> float:
    """KL divergence from N(mean, diag(var)) to N(0, I), always >= 0."""
    return float(kl_std_normal_terms(g.mean, g.var))


def kl_std_normal_terms(mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Per-row KL to N(0, I); accepts (d,) or (B, d) arrays."""
    return 0.5 * np.sum(var + mean * mean - 1.0 - np.log(var), axis=-1)


def gaussian_log_pdf(x: np.ndarray, g: GaussianVector) -> float:
    """Log density of x under a diagonal Gaussian."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != g.mean.shape:
        raise ShapeMismatch(f"x shape {x.shape} != mean shape {g.mean.shape}")
    return float(gaussian_log_pdf_terms(x, g.mean, g.var))


def gaussian_log_pdf_terms(
    x: np.ndarray, mean: np.ndarray, var: np.ndarray
) -> np.ndarray:
    """Per-row diagonal-Gaussian log density; accepts (d,) or (B, d)."""
    diff = x - mean
    return np.sum(
        -0.5 * (LOG_TWO_PI + np.log(var)) - diff * diff / (2.0 * var), axis=-1
    )


def init_dense(
    n_out: int, n_in: int, activation: str, rng: np.random.Generator
) -> DenseLayer:
    """Glorot-uniform weights, zero biases."""
    if n_out < 1 or n_in < 1:
        raise ValueError("layer dims must be positive")
    limit = np.sqrt(6.0 / (n_in + n_out))
    weights = rng.uniform(-limit, limit, size=(n_out, n_in))
    return DenseLayer(
        weights=weights, biases=np.zeros(n_out), activation=activation
    )


def init_head(
    n_in: int, n_out: int, rng: np.random.Generator, var_floor: float = VAR_FLOOR
) -> GaussianHead:
    return GaussianHead(
        mean_layer=init_dense(n_out, n_in, "identity", rng),
        raw_var_layer=init_dense(n_out, n_in, "identity", rng),
        var_floor=var_floor,
    )


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters."""

    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 0.001
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def adam_init(
    params: list[np.ndarray],
    lr: float = 0.001,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> AdamState:
    return AdamState(
        step=0,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("param/grad/state lists have different lengths")
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatch(f"param shape {p.shape} != grad shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or inf")
        m_t = state.beta1 * m + (1.0 - state.beta1) * g
        v_t = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m_t / (1.0 - state.beta1**t)
        v_hat = v_t / (1.0 - state.beta2**t)
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m_t)
        new_v.append(v_t)
    return new_params, AdamState(
        step=t,
        m=new_m,
        v=new_v,
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
    )


def finite_diff_grad(loss_fn, params: list[np.ndarray], h: float = 1e-5):
    """Central-difference gradient estimate, one coordinate at a time."""
    if h <= 0:
        raise ValueError("h must be positive")
    grads = []
    work = [p.copy() for p in params]
    for k, p in enumerate(work):
        grad = np.zeros_like(p)
        flat_p = p.reshape(-1)
        flat_g = grad.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            up = loss_fn(work)
            flat_p[i] = orig - h
            down = loss_fn(work)
            flat_p[i] = orig
            flat_g[i] = (up - down) / (2.0 * h)
        grads.append(grad)
    return grads
