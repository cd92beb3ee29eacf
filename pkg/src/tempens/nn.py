"""The two-conv network with hand-written forward and backward passes.

conv3x3(1->16) -> ReLU -> maxpool2 -> dropout -> conv3x3(16->32) -> ReLU ->
maxpool2 -> dropout -> flatten -> dense(->10) -> softmax

Every layer with weights is weight-normalized: w = g * v / ||v||, the norm taken
per output unit over all of its input dimensions.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CacheMismatch, NonFiniteActivation

LAYERS = ("conv1", "conv2", "dense")


@dataclass(frozen=True)
class NetworkConfig:
    conv1_maps: int = 16
    conv2_maps: int = 32
    kernel: int = 3
    pool: int = 2
    dropout_rate: float = 0.5
    num_classes: int = 10
    weight_norm: bool = True
    input_shape: tuple = (1, 28, 28)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        sizes = (self.conv1_maps, self.conv2_maps, self.kernel, self.pool, self.num_classes, *self.input_shape)
        if min(sizes) < 1:
            raise ValueError("all layer sizes must be positive")
        if self.kernel % 2 == 0:
            raise ValueError("same-padding convolution needs an odd kernel")
        side = self.input_shape[1]
        if side % (self.pool * self.pool) or self.input_shape[1] != self.input_shape[2]:
            raise ValueError(f"input side {side} must be square and divisible by pool^2")

    @property
    def padding(self) -> int:
        return self.kernel // 2

    @property
    def flatten_size(self) -> int:
        side = self.input_shape[1] // (self.pool * self.pool)
        return self.conv2_maps * side * side

    def weight_shapes(self) -> dict[str, tuple]:
        k = self.kernel
        return {
            "conv1": (self.conv1_maps, self.input_shape[0], k, k),
            "conv2": (self.conv2_maps, self.conv1_maps, k, k),
            "dense": (self.num_classes, self.flatten_size),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d


def count_parameters(cfg: NetworkConfig, include_scales: bool = False) -> int:
    """Weights plus biases; ``include_scales`` adds the weight-norm gains."""
    total = 0
    for shape in cfg.weight_shapes().values():
        total += int(np.prod(shape)) + shape[0]
        if include_scales and cfg.weight_norm:
            total += shape[0]
    return total


def _row_norms(v):
    return np.sqrt((v.reshape(len(v), -1) ** 2).sum(axis=1))


def effective_weight(params: dict, layer: str) -> np.ndarray:
    if f"{layer}.w" in params:
        return params[f"{layer}.w"]
    v, g = params[f"{layer}.v"], params[f"{layer}.g"]
    scale = g / _row_norms(v)
    return v * scale.reshape((-1,) + (1,) * (v.ndim - 1))


def weight_norm_grads(v, g, dw):
    """Chain rule from dL/dw to (dL/dv, dL/dg) for w = g v / ||v||."""
    norms = _row_norms(v)
    flat_v = v.reshape(len(v), -1)
    flat_dw = dw.reshape(len(v), -1)
    dg = (flat_dw * flat_v).sum(axis=1) / norms
    dv = (g / norms)[:, None] * flat_dw - (g * dg / norms**2)[:, None] * flat_v
    return dv.reshape(v.shape), dg


def init_network(cfg: NetworkConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    params = {}
    for layer, shape in cfg.weight_shapes().items():
        fan_in = int(np.prod(shape[1:]))
        v = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
        if cfg.weight_norm:
            params[f"{layer}.v"] = v
            params[f"{layer}.g"] = _row_norms(v).astype(dtype)
        else:
            params[f"{layer}.w"] = v
        params[f"{layer}.b"] = np.zeros(shape[0], dtype=dtype)
    return params


def cast_params(params: dict, dtype) -> dict:
    return {k: np.asarray(p, dtype=dtype).copy() for k, p in params.items()}


# -- primitive layers ---------------------------------------------------------

def _windows(x, k, pad):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return sliding_window_view(xp, (k, k), axis=(2, 3))  # [B, C, H, W, k, k]


def conv2d(x, w, b, pad):
    """Stride-1 cross-correlation with zero padding. x [B,C,H,W], w [O,C,k,k]."""
    win = _windows(x, w.shape[-1], pad)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # [B, H, W, O]
    out = out.transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x, w, dout, pad, need_input_grad=True):
    win = _windows(x, w.shape[-1], pad)
    dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))  # [O, C, k, k]
    db = dout.sum(axis=(0, 2, 3))
    dx = None
    if need_input_grad:
        # gradient wrt input is a correlation of dout with the flipped, transposed kernel
        w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx = conv2d(dout, w_t, None, pad)
    return dx, dw, db


def maxpool(x, p):
    """Non-overlapping p x p max pooling. Returns output and per-window argmax."""
    B, C, H, W = x.shape
    r = x.reshape(B, C, H // p, p, W // p, p).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // p, W // p, p * p)
    arg = r.argmax(axis=-1)
    out = np.take_along_axis(r, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(dout, arg, p):
    B, C, h, w = dout.shape
    d = np.zeros((B, C, h, w, p * p), dtype=dout.dtype)
    np.put_along_axis(d, arg[..., None], dout[..., None], axis=-1)
    return d.reshape(B, C, h, w, p, p).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h * p, w * p)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs, dprobs):
    return probs * (dprobs - (dprobs * probs).sum(axis=1, keepdims=True))


def _check(a, layer):
    if not np.isfinite(a).all():
        raise NonFiniteActivation(layer)
    return a


def dropout(a, rate, rng, train):
    if not train or rate == 0:
        return a, None
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / a.dtype.type(1.0 - rate)
    return a * keep, keep


# -- network ------------------------------------------------------------------

def forward(params: dict, x: np.ndarray, cfg: NetworkConfig, mode: str = "eval",
            rng: np.random.Generator | None = None):
    """Run the network; returns ``(probs, cache)`` where cache is None in eval mode."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    if train and rng is None and cfg.dropout_rate > 0:
        raise ValueError("train-mode forward needs an rng for dropout")
    dtype = params["conv1.b"].dtype
    x = _check(np.asarray(x, dtype=dtype), "input")
    pad, p = cfg.padding, cfg.pool
    w1, w2, w3 = (effective_weight(params, name) for name in LAYERS)

    h1 = _check(conv2d(x, w1, params["conv1.b"], pad), "conv1")
    r1 = np.maximum(h1, 0)
    p1, arg1 = maxpool(r1, p)
    d1, keep1 = dropout(p1, cfg.dropout_rate, rng, train)

    h2 = _check(conv2d(d1, w2, params["conv2.b"], pad), "conv2")
    r2 = np.maximum(h2, 0)
    p2, arg2 = maxpool(r2, p)
    d2, keep2 = dropout(p2, cfg.dropout_rate, rng, train)

    flat = d2.reshape(len(x), -1)
    logits = _check(flat @ w3.T + params["dense.b"], "dense")
    probs = _check(softmax(logits), "softmax")
    if not train:
        return probs, None
    cache = {
        "x": x, "h1": h1, "arg1": arg1, "keep1": keep1, "d1": d1,
        "h2": h2, "arg2": arg2, "keep2": keep2, "flat": flat, "probs": probs,
        "weights": (w1, w2, w3), "shapes": {k: v.shape for k, v in params.items()},
    }
    return probs, cache


def backward(params: dict, cache: dict | None, grad: np.ndarray, cfg: NetworkConfig,
             wrt: str = "probs") -> dict:
    """Parameter gradients given dLoss/dprobs (``wrt="probs"``) or dLoss/dlogits."""
    if cache is None:
        raise CacheMismatch("backward needs the cache of a train-mode forward")
    if cache["shapes"] != {k: v.shape for k, v in params.items()}:
        raise CacheMismatch("cache was produced with differently shaped parameters")
    if grad.shape != cache["probs"].shape:
        raise CacheMismatch(f"upstream gradient {grad.shape} vs cached output {cache['probs'].shape}")
    pad, p = cfg.padding, cfg.pool
    w1, w2, w3 = cache["weights"]
    dlogits = softmax_backward(cache["probs"], grad) if wrt == "probs" else grad

    dw3 = dlogits.T @ cache["flat"]
    db3 = dlogits.sum(axis=0)
    dd2 = (dlogits @ w3).reshape(cache["h2"].shape[0], cfg.conv2_maps, *cache["arg2"].shape[2:])
    if cache["keep2"] is not None:
        dd2 = dd2 * cache["keep2"]
    dr2 = maxpool_backward(dd2, cache["arg2"], p)
    dh2 = dr2 * (cache["h2"] > 0)
    dd1, dw2, db2 = conv2d_backward(cache["d1"], w2, dh2, pad)
    if cache["keep1"] is not None:
        dd1 = dd1 * cache["keep1"]
    dr1 = maxpool_backward(dd1, cache["arg1"], p)
    dh1 = dr1 * (cache["h1"] > 0)
    _, dw1, db1 = conv2d_backward(cache["x"], w1, dh1, pad, need_input_grad=False)

    grads = {}
    for layer, dw, db in (("conv1", dw1, db1), ("conv2", dw2, db2), ("dense", dw3, db3)):
        if cfg.weight_norm:
            grads[f"{layer}.v"], grads[f"{layer}.g"] = weight_norm_grads(
                params[f"{layer}.v"], params[f"{layer}.g"], dw)
        else:
            grads[f"{layer}.w"] = dw
        grads[f"{layer}.b"] = db
    return grads


def predict(params: dict, images: np.ndarray, cfg: NetworkConfig, batch_size: int = 500) -> np.ndarray:
    """Eval-mode probabilities for a whole array, in batches."""
    out = [forward(params, images[i:i + batch_size], cfg, "eval")[0]
           for i in range(0, len(images), batch_size)]
    if not out:
        return np.zeros((0, cfg.num_classes))
    return np.concatenate(out)
