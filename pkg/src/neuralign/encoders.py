"""Neural-signal encoders with forward and analytic backward passes.

Two architectures:

* EEGProject -- the signal is flattened and sent through a linear layer,
  then a residual bottleneck (linear, GELU, dropout) whose output is added
  back before a final LayerNorm.
* TSConv -- temporal convolution (40 filters, kernel 1x25), average
  pooling (1x51, stride 1x5), spatial convolution (kernel Cx1) collapsing
  the channel axis, then the same residual linear block as EEGProject
  projecting the flattened features.

Parameters are plain numpy arrays grouped in dataclasses; `param_dict`
exposes them by name for the optimizer, which updates them in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import Rng

TEMPORAL_FILTERS = 40
TEMPORAL_KERNEL = 25
POOL_WINDOW = 51
POOL_STRIDE = 5


def glorot_normal(rng: Rng, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return (rng.normal(shape, dtype=np.float64) * std).astype(dtype)


@dataclass
class EEGProjectParams:
    W0: np.ndarray
    b0: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    dropout_p: float = 0.3

    def param_dict(self) -> dict[str, np.ndarray]:
        return {"W0": self.W0, "b0": self.b0, "W1": self.W1, "b1": self.b1,
                "gamma": self.gamma, "beta": self.beta}

    @property
    def in_features(self) -> int:
        return self.W0.shape[0]

    @property
    def dim(self) -> int:
        return self.W0.shape[1]


@dataclass
class TSConvParams:
    k_temporal: np.ndarray
    b_temporal: np.ndarray
    k_spatial: np.ndarray
    b_spatial: np.ndarray
    W_proj: np.ndarray
    b_proj: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    dropout_p: float = 0.3

    def param_dict(self) -> dict[str, np.ndarray]:
        return {
            "k_temporal": self.k_temporal, "b_temporal": self.b_temporal,
            "k_spatial": self.k_spatial, "b_spatial": self.b_spatial,
            "W_proj": self.W_proj, "b_proj": self.b_proj,
            "W1": self.W1, "b1": self.b1, "gamma": self.gamma, "beta": self.beta,
        }

    @property
    def dim(self) -> int:
        return self.W_proj.shape[1]


def tsconv_flat_features(channels: int, time_points: int) -> int:
    """Flattened feature count after the conv/pool/conv stack."""
    if time_points < TEMPORAL_KERNEL + POOL_WINDOW - 1:
        raise ValueError(
            f"time axis too short: need T >= {TEMPORAL_KERNEL + POOL_WINDOW - 1}, "
            f"got {time_points}"
        )
    t_conv = time_points - TEMPORAL_KERNEL + 1
    t_pool = (t_conv - POOL_WINDOW) // POOL_STRIDE + 1
    return TEMPORAL_FILTERS * t_pool


def init_params(arch: str, channels: int, time_points: int, dim: int,
                rng: Rng, dropout_p: float = 0.3, dtype=np.float32):
    """Glorot-normal weights, zero biases, unit gamma; sampling order fixed."""
    if arch == "eegproject":
        ct = channels * time_points
        return EEGProjectParams(
            W0=glorot_normal(rng, (ct, dim), ct, dim, dtype),
            b0=np.zeros(dim, dtype=dtype),
            W1=glorot_normal(rng, (dim, dim), dim, dim, dtype),
            b1=np.zeros(dim, dtype=dtype),
            gamma=np.ones(dim, dtype=dtype),
            beta=np.zeros(dim, dtype=dtype),
            dropout_p=dropout_p,
        )
    if arch == "tsconv":
        flat = tsconv_flat_features(channels, time_points)
        kt_shape = (TEMPORAL_FILTERS, 1, 1, TEMPORAL_KERNEL)
        ks_shape = (TEMPORAL_FILTERS, TEMPORAL_FILTERS, channels, 1)
        return TSConvParams(
            k_temporal=glorot_normal(
                rng, kt_shape, TEMPORAL_KERNEL, TEMPORAL_FILTERS * TEMPORAL_KERNEL, dtype
            ),
            b_temporal=np.zeros(TEMPORAL_FILTERS, dtype=dtype),
            k_spatial=glorot_normal(
                rng, ks_shape, TEMPORAL_FILTERS * channels, TEMPORAL_FILTERS * channels, dtype
            ),
            b_spatial=np.zeros(TEMPORAL_FILTERS, dtype=dtype),
            W_proj=glorot_normal(rng, (flat, dim), flat, dim, dtype),
            b_proj=np.zeros(dim, dtype=dtype),
            W1=glorot_normal(rng, (dim, dim), dim, dim, dtype),
            b1=np.zeros(dim, dtype=dtype),
            gamma=np.ones(dim, dtype=dtype),
            beta=np.zeros(dim, dtype=dtype),
            dropout_p=dropout_p,
        )
    raise ValueError(f"unknown encoder arch {arch!r}")


def _residual_block_forward(h, W1, b1, gamma, beta, dropout_p, mode, rng):
    """r = Dropout(GELU(h @ W1 + b1)); z = LayerNorm(h + r)."""
    a = T.matmul(h, W1) + b1
    g = T.gelu(a)
    if mode == "train" and dropout_p > 0:
        mask = T.dropout_mask(rng, g.shape, dropout_p, dtype=g.dtype)
    else:
        mask = None
    r = g if mask is None else g * mask
    z, ln_cache = T.layer_norm(h + r, gamma, beta)
    return z, (h, a, mask, ln_cache)


def _residual_block_backward(cache, W1, grad_z):
    h, a, mask, ln_cache = cache
    ds, dgamma, dbeta = T.layer_norm_backward(ln_cache, grad_z)
    dr = ds if mask is None else ds * mask
    da = T.gelu_backward(a, dr)
    dW1 = T.matmul(h.T, da)
    db1 = da.sum(axis=0)
    dh = ds + T.matmul(da, W1.T)
    return dh, {"W1": dW1, "b1": db1, "gamma": dgamma, "beta": dbeta}


def eegproject_forward(params: EEGProjectParams, x: np.ndarray,
                       mode: str = "eval", rng: Rng | None = None):
    """Flatten, project, residual bottleneck, LayerNorm. Returns (z, cache)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode requires an Rng for dropout")
    m = x.shape[0]
    f = x.reshape(m, -1)
    if f.shape[1] != params.in_features:
        raise ValueError(
            f"input flattens to {f.shape[1]} features, expected {params.in_features}"
        )
    h = T.matmul(f, params.W0) + params.b0
    z, block = _residual_block_forward(
        h, params.W1, params.b1, params.gamma, params.beta,
        params.dropout_p, mode, rng,
    )
    return z, (x.shape, f, block)


def eegproject_backward(params: EEGProjectParams, cache, grad_z: np.ndarray):
    """Exact gradients of the forward composition. Returns (grads, grad_x)."""
    x_shape, f, block = cache
    if grad_z.shape != (f.shape[0], params.dim):
        raise ValueError("stale cache: gradient shape does not match forward pass")
    dh, grads = _residual_block_backward(block, params.W1, grad_z)
    grads["W0"] = T.matmul(f.T, dh)
    grads["b0"] = dh.sum(axis=0)
    grad_x = T.matmul(dh, params.W0.T).reshape(x_shape)
    return grads, grad_x


def tsconv_forward(params: TSConvParams, x: np.ndarray,
                   mode: str = "eval", rng: Rng | None = None):
    """Temporal conv, avg pool, spatial conv, flatten, residual block."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode requires an Rng for dropout")
    in_shape = x.shape
    if x.ndim == 3:
        x = x[:, None, :, :]
    m = x.shape[0]
    t1 = T.conv2d(x, params.k_temporal, params.b_temporal)
    p1 = T.avgpool2d(t1, (1, POOL_WINDOW), (1, POOL_STRIDE))
    s1 = T.conv2d(p1, params.k_spatial, params.b_spatial)
    flat = s1.reshape(m, -1)
    h = T.matmul(flat, params.W_proj) + params.b_proj
    z, block = _residual_block_forward(
        h, params.W1, params.b1, params.gamma, params.beta,
        params.dropout_p, mode, rng,
    )
    return z, (in_shape, x, t1, p1, s1, flat, block)


def tsconv_backward(params: TSConvParams, cache, grad_z: np.ndarray):
    in_shape, x, t1, p1, s1, flat, block = cache
    if grad_z.shape != (flat.shape[0], params.dim):
        raise ValueError("stale cache: gradient shape does not match forward pass")
    dh, grads = _residual_block_backward(block, params.W1, grad_z)
    grads["W_proj"] = T.matmul(flat.T, dh)
    grads["b_proj"] = dh.sum(axis=0)
    dflat = T.matmul(dh, params.W_proj.T)
    ds1 = dflat.reshape(s1.shape)
    dp1, dk_spatial, db_spatial = T.conv2d_backward(p1, params.k_spatial, ds1)
    dt1 = T.avgpool2d_backward(t1.shape, (1, POOL_WINDOW), (1, POOL_STRIDE), dp1)
    dx, dk_temporal, db_temporal = T.conv2d_backward(x, params.k_temporal, dt1)
    grads.update(
        k_spatial=dk_spatial, b_spatial=db_spatial,
        k_temporal=dk_temporal, b_temporal=db_temporal,
    )
    return grads, dx.reshape(in_shape)


FORWARD = {"eegproject": eegproject_forward, "tsconv": tsconv_forward}
BACKWARD = {"eegproject": eegproject_backward, "tsconv": tsconv_backward}
