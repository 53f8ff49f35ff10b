"""Hand-differentiated 1-D convolutional classifier.

Tensors are float64 numpy arrays laid out (batch, length, channels) for the
convolutional part and (batch, features) after flattening. Every forward op
returns its output together with the cache its backward op needs.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union
import logging
import math

import numpy as np

from src.errors import InvalidParameterError, NonFiniteError, ShapeError
from src.models.base import Mode, ModelConfig

logger = logging.getLogger("src.nncore")

ParamStore = Dict[str, np.ndarray]

LAYER_NAMES = ("conv1", "conv2", "dense1", "dense_out")
CE_EPS = 1e-12


def _as_mode(mode: Union[Mode, str]) -> Mode:
    try:
        return Mode(mode)
    except ValueError:
        raise InvalidParameterError(f"Unknown mode '{mode}'") from None


def _check_finite(where: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(where, f"{int(np.count_nonzero(~np.isfinite(x)))} bad values")


# Convolution

@dataclass
class ConvCache:
    cols: np.ndarray
    w: np.ndarray
    x_shape: Tuple[int, int, int]


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, ConvCache]:
    """Valid, stride-1 convolution: out[n,t,f] = b[f] + sum_{c,j} x[n,t+j,c] * w[f,c,j]."""
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects x (N,L,C) and w (F,C,K), got {x.shape} and {w.shape}")
    n, length, channels = x.shape
    filters, w_channels, kernel = w.shape
    if w_channels != channels:
        raise ShapeError(f"conv1d input has {channels} channels, kernel expects {w_channels}")
    if b.shape != (filters,):
        raise ShapeError(f"conv1d bias shape {b.shape} does not match {filters} filters")
    if length < kernel:
        raise ShapeError(f"conv1d input length {length} shorter than kernel {kernel}")

    out_len = length - kernel + 1
    # (N, T, C, K) windows flattened to im2col rows
    windows = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=1)
    cols = windows.reshape(n * out_len, channels * kernel)
    out = cols @ w.reshape(filters, channels * kernel).T + b
    return out.reshape(n, out_len, filters), ConvCache(cols=cols, w=w, x_shape=x.shape)


def conv1d_backward(
    cache: ConvCache, grad_out: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact adjoint of conv1d_forward: (grad_x, grad_w, grad_b)."""
    n, length, channels = cache.x_shape
    filters, _, kernel = cache.w.shape
    out_len = length - kernel + 1
    if grad_out.shape != (n, out_len, filters):
        raise ShapeError(f"conv1d grad shape {grad_out.shape}, expected {(n, out_len, filters)}")

    g2d = grad_out.reshape(n * out_len, filters)
    grad_w = (g2d.T @ cache.cols).reshape(filters, channels, kernel)
    grad_b = g2d.sum(axis=0)
    grad_cols = (g2d @ cache.w.reshape(filters, channels * kernel)).reshape(
        n, out_len, channels, kernel)
    grad_x = np.zeros(cache.x_shape, dtype=np.float64)
    for j in range(kernel):
        grad_x[:, j:j + out_len, :] += grad_cols[:, :, :, j]
    return grad_x, grad_w, grad_b


# Activations

def relu(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """max(0, x); the cache is the positive mask."""
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(cache: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if cache.shape != grad_out.shape:
        raise ShapeError(f"relu grad shape {grad_out.shape}, expected {cache.shape}")
    return np.where(cache, grad_out, 0.0)


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, one_hot: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and the fused softmax+CE logit gradient."""
    if probs.shape != one_hot.shape:
        raise ShapeError(f"probs shape {probs.shape} does not match targets {one_hot.shape}")
    batch = probs.shape[0]
    p_true = np.sum(probs * one_hot, axis=1)
    loss = float(-np.sum(np.log(p_true + CE_EPS)) / batch)
    return loss, (probs - one_hot) / batch


# Pooling

@dataclass
class PoolCache:
    argmax: np.ndarray
    x_shape: Tuple[int, int, int]
    pool: int


def maxpool1d_forward(x: np.ndarray, pool: int = 2) -> Tuple[np.ndarray, PoolCache]:
    """Non-overlapping max pooling; a trailing partial window is dropped.

    ``cache.argmax`` holds the winning offset inside each window (first on ties).
    """
    if pool < 1:
        raise InvalidParameterError(f"pool size must be >= 1, got {pool}")
    n, length, channels = x.shape
    if length < pool:
        raise ShapeError(f"maxpool input length {length} shorter than pool {pool}")
    out_len = length // pool
    windows = x[:, :out_len * pool, :].reshape(n, out_len, pool, channels)
    argmax = windows.argmax(axis=2)
    out = np.take_along_axis(windows, argmax[:, :, None, :], axis=2)[:, :, 0, :]
    return out, PoolCache(argmax=argmax, x_shape=x.shape, pool=pool)


def maxpool1d_backward(cache: PoolCache, grad_out: np.ndarray) -> np.ndarray:
    n, length, channels = cache.x_shape
    out_len = length // cache.pool
    if grad_out.shape != (n, out_len, channels):
        raise ShapeError(f"maxpool grad shape {grad_out.shape}, expected {(n, out_len, channels)}")
    routed = np.zeros((n, out_len, cache.pool, channels), dtype=np.float64)
    np.put_along_axis(routed, cache.argmax[:, :, None, :], grad_out[:, :, None, :], axis=2)
    grad_x = np.zeros(cache.x_shape, dtype=np.float64)
    grad_x[:, :out_len * cache.pool, :] = routed.reshape(n, out_len * cache.pool, channels)
    return grad_x


# Dropout

def dropout(
    x: np.ndarray,
    rate: float,
    mode: Union[Mode, str],
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Inverted dropout. The returned mask already carries the 1/(1-rate) scale."""
    if not 0.0 <= rate < 1.0:
        raise InvalidParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if _as_mode(mode) is Mode.INFER or rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise InvalidParameterError("train-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * mask


# Reshape and dense

def flatten(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def unflatten(x: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    return x.reshape(shape)


@dataclass
class DenseCache:
    x: np.ndarray
    w: np.ndarray


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, DenseCache]:
    """out = x @ w.T + b with w shaped (out, in)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(
            f"dense expects x (N,{w.shape[1] if w.ndim == 2 else '?'}), "
            f"got x {x.shape}, w {w.shape}, b {b.shape}"
        )
    return x @ w.T + b, DenseCache(x=x, w=w)


def dense_backward(
    cache: DenseCache, grad_out: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if grad_out.shape != (cache.x.shape[0], cache.w.shape[0]):
        raise ShapeError(f"dense grad shape {grad_out.shape} does not match output")
    return grad_out @ cache.w, grad_out.T @ cache.x, grad_out.sum(axis=0)


# Model

@dataclass
class ForwardCache:
    """Per-layer state saved by model_forward for model_backward."""
    conv1: Optional[ConvCache] = None
    relu1: Optional[np.ndarray] = None
    pool1: Optional[PoolCache] = None
    drop1: Optional[np.ndarray] = None
    conv2: Optional[ConvCache] = None
    relu2: Optional[np.ndarray] = None
    pool2: Optional[PoolCache] = None
    drop2: Optional[np.ndarray] = None
    flat_shape: Tuple[int, ...] = ()
    dense1: Optional[DenseCache] = None
    relu3: Optional[np.ndarray] = None
    drop3: Optional[np.ndarray] = None
    dense_out: Optional[DenseCache] = None
    probs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def output_length(cfg: ModelConfig) -> int:
    """Width of the flattened feature vector feeding dense1."""
    if cfg.input_len is None:
        raise ShapeError("ModelConfig has no input_len")
    lengths = cfg.stage_lengths()
    if min(lengths) < 1:
        raise ShapeError(f"input_len={cfg.input_len} too small, stage lengths {lengths}")
    return lengths[3] * cfg.conv2_filters


def param_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    flat = output_length(cfg)
    return {
        "conv1.weight": (cfg.conv1_filters, cfg.input_channels, cfg.conv1_kernel),
        "conv1.bias": (cfg.conv1_filters,),
        "conv2.weight": (cfg.conv2_filters, cfg.conv1_filters, cfg.conv2_kernel),
        "conv2.bias": (cfg.conv2_filters,),
        "dense1.weight": (cfg.dense_units, flat),
        "dense1.bias": (cfg.dense_units,),
        "dense_out.weight": (cfg.num_classes, cfg.dense_units),
        "dense_out.bias": (cfg.num_classes,),
    }


def init_params(cfg: ModelConfig, seed: int) -> ParamStore:
    """He-uniform for ReLU-fed layers, Glorot-uniform for the output, zero biases."""
    rng = np.random.default_rng(seed)
    params: ParamStore = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=np.float64)
            continue
        fan_in = int(np.prod(shape[1:]))
        if name.startswith("dense_out"):
            bound = math.sqrt(6.0 / (fan_in + shape[0]))
        else:
            bound = math.sqrt(6.0 / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def copy_params(params: ParamStore) -> ParamStore:
    return {name: value.copy() for name, value in params.items()}


def model_forward(
    cfg: ModelConfig,
    params: ParamStore,
    x: np.ndarray,
    mode: Union[Mode, str] = Mode.INFER,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, ForwardCache]:
    """conv-relu-pool-drop x2, flatten, dense-relu-drop, dense-softmax."""
    mode = _as_mode(mode)
    output_length(cfg)
    expected = (cfg.input_len, cfg.input_channels)
    if x.ndim != 3 or x.shape[1:] != expected:
        raise ShapeError(f"model input shape {x.shape}, expected (batch, {expected[0]}, {expected[1]})")

    cache = ForwardCache()
    h, cache.conv1 = conv1d_forward(x, params["conv1.weight"], params["conv1.bias"])
    h, cache.relu1 = relu(h)
    h, cache.pool1 = maxpool1d_forward(h, cfg.pool_size)
    h, cache.drop1 = dropout(h, cfg.drop1, mode, rng)
    _check_finite("conv1", h)

    h, cache.conv2 = conv1d_forward(h, params["conv2.weight"], params["conv2.bias"])
    h, cache.relu2 = relu(h)
    h, cache.pool2 = maxpool1d_forward(h, cfg.pool_size)
    h, cache.drop2 = dropout(h, cfg.drop2, mode, rng)
    _check_finite("conv2", h)

    cache.flat_shape = h.shape
    h = flatten(h)
    h, cache.dense1 = dense_forward(h, params["dense1.weight"], params["dense1.bias"])
    h, cache.relu3 = relu(h)
    h, cache.drop3 = dropout(h, cfg.drop3, mode, rng)
    _check_finite("dense1", h)

    logits, cache.dense_out = dense_forward(h, params["dense_out.weight"], params["dense_out.bias"])
    _check_finite("dense_out", logits)
    cache.probs = softmax(logits)
    return cache.probs, cache


def model_backward(cache: ForwardCache, one_hot: np.ndarray) -> Tuple[float, ParamStore]:
    """Loss and gradients for every parameter, from a model_forward cache."""
    loss, g = cross_entropy(cache.probs, one_hot)
    grads: ParamStore = {}

    g, grads["dense_out.weight"], grads["dense_out.bias"] = dense_backward(cache.dense_out, g)
    g = dropout_backward(cache.drop3, g)
    g = relu_backward(cache.relu3, g)
    g, grads["dense1.weight"], grads["dense1.bias"] = dense_backward(cache.dense1, g)
    g = unflatten(g, cache.flat_shape)

    g = dropout_backward(cache.drop2, g)
    g = maxpool1d_backward(cache.pool2, g)
    g = relu_backward(cache.relu2, g)
    g, grads["conv2.weight"], grads["conv2.bias"] = conv1d_backward(cache.conv2, g)

    g = dropout_backward(cache.drop1, g)
    g = maxpool1d_backward(cache.pool1, g)
    g = relu_backward(cache.relu1, g)
    _, grads["conv1.weight"], grads["conv1.bias"] = conv1d_backward(cache.conv1, g)
    return loss, grads


def predict_proba(
    cfg: ModelConfig, params: ParamStore, x: np.ndarray, batch_size: int = 256
) -> np.ndarray:
    """Inference-mode class probabilities in fixed-size chunks."""
    if x.shape[0] == 0:
        return np.zeros((0, cfg.num_classes), dtype=np.float64)
    chunks = [
        model_forward(cfg, params, x[start:start + batch_size], Mode.INFER)[0]
        for start in range(0, x.shape[0], batch_size)
    ]
    return np.concatenate(chunks, axis=0)
