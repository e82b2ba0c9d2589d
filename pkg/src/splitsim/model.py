"""Small dense split networks with hand-written forward and backward passes.

No autodiff framework: each layer is a linear map plus an elementwise
activation, and gradients are computed by explicit chain rule. This keeps
every operation bitwise deterministic and dependency-free.

Parameter layout: layers are packed in order into one flat float64 vector,
each layer as row-major weights (in_dim x out_dim) followed by the bias
(out_dim) when biases are enabled. The split point divides the flat vector
into a client part (layers before the cut) and a server part (the rest).

Loss convention: losses are batch means, so the activation-gradient feedback
is the gradient of the mean loss with respect to the cut activation matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import prng
from .errors import DimensionMismatchError, NumericalError

ACTIVATIONS = ("identity", "tanh", "relu")
LOSSES = ("squared_error", "softmax_cross_entropy")


@dataclass(frozen=True)
class SplitModelConfig:
    """Geometry and semantics of one split network.

    layer_dims includes the input width, so a network with n layers has
    n + 1 entries. Layers [0, cut_index) live on the client; the cut
    activation has width layer_dims[cut_index]. The final layer is always
    linear; every other layer applies the configured activation.
    """

    layer_dims: tuple
    activation: str = "tanh"
    cut_index: int = 1
    loss: str = "squared_error"
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2:
            raise ValueError("layer_dims needs at least input and output widths")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError("all layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if not 0 < self.cut_index < self.n_layers:
            raise ValueError(
                f"cut_index must lie strictly inside [0, {self.n_layers}]"
            )

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def n_in(self) -> int:
        return self.layer_dims[0]

    @property
    def n_out(self) -> int:
        return self.layer_dims[-1]

    @property
    def cut_width(self) -> int:
        return self.layer_dims[self.cut_index]

    def layer_param_count(self, i: int) -> int:
        n = self.layer_dims[i] * self.layer_dims[i + 1]
        if self.bias:
            n += self.layer_dims[i + 1]
        return n

    @property
    def d_c(self) -> int:
        return sum(self.layer_param_count(i) for i in range(self.cut_index))

    @property
    def d_s(self) -> int:
        return sum(self.layer_param_count(i) for i in range(self.cut_index, self.n_layers))

    @property
    def d(self) -> int:
        return self.d_c + self.d_s


@dataclass
class Batch:
    """One minibatch: inputs (B x n_in) and labels.

    Labels are class indices (B,) for softmax_cross_entropy and float
    targets (B x n_out) for squared_error.
    """

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise DimensionMismatchError("batch inputs must be a non-empty 2-D matrix")
        labels = np.asarray(self.labels)
        if np.issubdtype(labels.dtype, np.integer):
            self.labels = labels.astype(np.int64)
        else:
            self.labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
            if self.labels.shape[0] == 1 and self.inputs.shape[0] != 1:
                self.labels = self.labels.T
        if self.labels.shape[0] != self.inputs.shape[0]:
            raise DimensionMismatchError("batch inputs and labels disagree on size")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def _inputs_of(batch) -> np.ndarray:
    return batch.inputs if isinstance(batch, Batch) else np.asarray(batch, dtype=np.float64)


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "identity":
        return x
    if name == "tanh":
        return np.tanh(x)
    return np.maximum(x, 0.0)


def _act_deriv(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(pre)
    if name == "tanh":
        t = np.tanh(pre)
        return 1.0 - t * t
    # relu subgradient at 0 is defined as 0
    return (pre > 0.0).astype(np.float64)


def _unpack(theta: np.ndarray, cfg: SplitModelConfig, lo: int, hi: int):
    """Views of (W, b) for layers lo..hi-1 out of a flat vector."""
    expected = sum(cfg.layer_param_count(i) for i in range(lo, hi))
    if theta.ndim != 1 or theta.shape[0] != expected:
        raise DimensionMismatchError(
            f"parameter vector has length {theta.shape}, expected ({expected},)"
        )
    params = []
    off = 0
    for i in range(lo, hi):
        ni, no = cfg.layer_dims[i], cfg.layer_dims[i + 1]
        w = theta[off:off + ni * no].reshape(ni, no)
        off += ni * no
        b = None
        if cfg.bias:
            b = theta[off:off + no]
            off += no
        params.append((w, b))
    return params


def _pack_grads(grads) -> np.ndarray:
    flat = []
    for gw, gb in grads:
        flat.append(gw.ravel())
        if gb is not None:
            flat.append(gb)
    return np.concatenate(flat) if flat else np.zeros(0)


# -----------------------------------------------------------------------------
# Forward passes
# -----------------------------------------------------------------------------

def client_forward(theta_c: np.ndarray, batch, cfg: SplitModelConfig) -> np.ndarray:
    """Cut-layer activation (B x D) for the client half. Pure and deterministic."""
    x = _inputs_of(batch)
    if x.shape[1] != cfg.n_in:
        raise DimensionMismatchError(
            f"inputs have width {x.shape[1]}, model expects {cfg.n_in}"
        )
    theta_c = np.asarray(theta_c, dtype=np.float64)
    h = x
    for w, b in _unpack(theta_c, cfg, 0, cfg.cut_index):
        h = h @ w
        if b is not None:
            h = h + b
        h = _act(cfg.activation, h)
    return h


def client_forward_multi(thetas: np.ndarray, batch, cfg: SplitModelConfig) -> np.ndarray:
    """Client forward over a stack of parameter vectors.

    thetas is (n, d_c); returns (n, B, D). Used by Monte Carlo diagnostics
    where thousands of perturbed forwards are needed at once.
    """
    x = _inputs_of(batch)
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 2 or thetas.shape[1] != cfg.d_c:
        raise DimensionMismatchError(f"thetas must be (n, {cfg.d_c})")
    n = thetas.shape[0]
    h = None
    off = 0
    for i in range(cfg.cut_index):
        ni, no = cfg.layer_dims[i], cfg.layer_dims[i + 1]
        w = thetas[:, off:off + ni * no].reshape(n, ni, no)
        off += ni * no
        if h is None:
            h = np.einsum("bi,nio->nbo", x, w)
        else:
            h = np.einsum("nbi,nio->nbo", h, w)
        if cfg.bias:
            h = h + thetas[:, off:off + no][:, None, :]
            off += no
        h = _act(cfg.activation, h)
    return h


def _server_forward_cached(theta_s, z, cfg):
    params = _unpack(np.asarray(theta_s, dtype=np.float64), cfg, cfg.cut_index, cfg.n_layers)
    hs = [np.asarray(z, dtype=np.float64)]
    pres = []
    for k, (w, b) in enumerate(params):
        pre = hs[-1] @ w
        if b is not None:
            pre = pre + b
        if not np.all(np.isfinite(pre)):
            raise NumericalError(f"non-finite values after server layer {cfg.cut_index + k}")
        pres.append(pre)
        last = k == len(params) - 1
        hs.append(pre if last else _act(cfg.activation, pre))
    return params, hs, pres


def _loss_and_grad(y_hat: np.ndarray, labels, cfg: SplitModelConfig):
    """Batch-mean loss and its gradient w.r.t. the network output."""
    b = y_hat.shape[0]
    if cfg.loss == "squared_error":
        y = np.asarray(labels, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape != y_hat.shape:
            raise DimensionMismatchError(
                f"labels {y.shape} do not match outputs {y_hat.shape}"
            )
        diff = y_hat - y
        loss = float(np.sum(diff * diff) / b)
        return loss, 2.0 * diff / b
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != b:
        raise DimensionMismatchError("class labels must be a (B,) index vector")
    shifted = y_hat - y_hat.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(b), y]))
    probs = np.exp(shifted - log_z[:, None])
    grad = probs
    grad[np.arange(b), y] -= 1.0
    return loss, grad / b


def server_loss(theta_s: np.ndarray, z: np.ndarray, labels, cfg: SplitModelConfig) -> float:
    """Forward-only batch-mean loss of the server half on a given activation."""
    _, hs, _ = _server_forward_cached(theta_s, z, cfg)
    loss, _ = _loss_and_grad(hs[-1], labels, cfg)
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss at the output layer")
    return loss


def server_forward_backward(theta_s: np.ndarray, z: np.ndarray, labels, cfg: SplitModelConfig):
    """One backward pass producing (loss, server gradient, activation feedback).

    Returns the batch-mean loss, the gradient of that loss w.r.t. the flat
    server parameters, and lambda = gradient w.r.t. the cut activation
    (B x D, scaled by the same batch-mean convention).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != cfg.cut_width:
        raise DimensionMismatchError(
            f"activation has shape {z.shape}, expected (B, {cfg.cut_width})"
        )
    params, hs, pres = _server_forward_cached(theta_s, z, cfg)
    loss, delta = _loss_and_grad(hs[-1], labels, cfg)
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss at the output layer")
    grads = [None] * len(params)
    for k in range(len(params) - 1, -1, -1):
        w, b = params[k]
        gw = hs[k].T @ delta
        gb = delta.sum(axis=0) if b is not None else None
        grads[k] = (gw, gb)
        delta = delta @ w.T
        if k > 0:
            delta = delta * _act_deriv(cfg.activation, pres[k - 1])
    lam = delta
    return loss, _pack_grads(grads), lam


def full_loss(theta: np.ndarray, batch, cfg: SplitModelConfig) -> float:
    """Composite batch-mean loss of client forward followed by server forward."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (cfg.d,):
        raise DimensionMismatchError(f"theta has shape {theta.shape}, expected ({cfg.d},)")
    z = client_forward(theta[: cfg.d_c], batch, cfg)
    labels = batch.labels if isinstance(batch, Batch) else None
    if labels is None:
        raise DimensionMismatchError("full_loss requires a Batch with labels")
    return server_loss(theta[cfg.d_c:], z, labels, cfg)


# -----------------------------------------------------------------------------
# Client-side backward (diagnostics and the first-order baseline)
# -----------------------------------------------------------------------------

def client_backward_from_lambda(theta_c: np.ndarray, batch, lam: np.ndarray,
                                cfg: SplitModelConfig) -> np.ndarray:
    """Chain-rule product of the client Jacobian with activation feedback.

    Backpropagates lam (B x D) through the client layers, returning the
    gradient w.r.t. the flat client parameters.
    """
    x = _inputs_of(batch)
    theta_c = np.asarray(theta_c, dtype=np.float64)
    params = _unpack(theta_c, cfg, 0, cfg.cut_index)
    hs = [x]
    pres = []
    for w, b in params:
        pre = hs[-1] @ w
        if b is not None:
            pre = pre + b
        pres.append(pre)
        hs.append(_act(cfg.activation, pre))
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != hs[-1].shape:
        raise DimensionMismatchError(
            f"lambda has shape {lam.shape}, expected {hs[-1].shape}"
        )
    delta = lam
    grads = [None] * len(params)
    for k in range(len(params) - 1, -1, -1):
        w, b = params[k]
        delta = delta * _act_deriv(cfg.activation, pres[k])
        gw = hs[k].T @ delta
        gb = delta.sum(axis=0) if b is not None else None
        grads[k] = (gw, gb)
        delta = delta @ w.T
    return _pack_grads(grads)


def analytic_client_gradient(theta: np.ndarray, batch: Batch, cfg: SplitModelConfig) -> np.ndarray:
    """Exact gradient of the composite loss w.r.t. client parameters.

    Diagnostics-only oracle: the zeroth-order client path never calls this.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (cfg.d,):
        raise DimensionMismatchError(f"theta has shape {theta.shape}, expected ({cfg.d},)")
    z = client_forward(theta[: cfg.d_c], batch, cfg)
    _, _, lam = server_forward_backward(theta[cfg.d_c:], z, batch.labels, cfg)
    return client_backward_from_lambda(theta[: cfg.d_c], batch, lam, cfg)


def client_jacobian(theta_c: np.ndarray, batch, cfg: SplitModelConfig) -> np.ndarray:
    """Dense Jacobian of the stacked cut activation w.r.t. client parameters.

    Returns (B, D, d_c); row (b, k) is the gradient of z[b, k]. Desk-scale
    only, used to measure regularity constants.
    """
    x = _inputs_of(batch)
    b_sz = x.shape[0]
    d = cfg.cut_width
    jac = np.zeros((b_sz, d, cfg.d_c))
    for b in range(b_sz):
        for k in range(d):
            unit = np.zeros((b_sz, d))
            unit[b, k] = 1.0
            jac[b, k] = client_backward_from_lambda(theta_c, x, unit, cfg)
    return jac


# -----------------------------------------------------------------------------
# Initialization and evaluation
# -----------------------------------------------------------------------------

def init_params(cfg: SplitModelConfig, seed: int) -> np.ndarray:
    """Deterministic init: weights N(0, 1/fan_in), biases zero."""
    chunks = []
    for i in range(cfg.n_layers):
        ni, no = cfg.layer_dims[i], cfg.layer_dims[i + 1]
        w = prng.gaussian_vector(prng.derive_stream(seed, prng.STREAM_INIT, i), ni * no)
        chunks.append(w / np.sqrt(ni))
        if cfg.bias:
            chunks.append(np.zeros(no))
    return np.concatenate(chunks)


def evaluate_model(theta: np.ndarray, batch: Batch, cfg: SplitModelConfig):
    """(loss, accuracy) of the full model; accuracy is None for regression."""
    theta = np.asarray(theta, dtype=np.float64)
    z = client_forward(theta[: cfg.d_c], batch, cfg)
    _, hs, _ = _server_forward_cached(theta[cfg.d_c:], z, cfg)
    loss, _ = _loss_and_grad(hs[-1], batch.labels, cfg)
    acc = None
    if cfg.loss == "softmax_cross_entropy":
        acc = float(np.mean(hs[-1].argmax(axis=1) == batch.labels))
    return loss, acc
