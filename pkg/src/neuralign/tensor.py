"""Dense numeric primitives with exact analytic gradients.

Arrays are plain contiguous numpy ndarrays (row-major). Training runs in
float32; gradient-check suites pass float64 arrays through the same code
paths. Every op validates shapes up front and checks its output for
NaN/Inf, which is treated as an error state rather than propagated.

Reductions use a fixed accumulation order (fixed loop nesting over kernel
offsets; BLAS matmul with a fixed thread count), so seeded runs are
bit-reproducible. Ops are pure functions of their inputs and are safe to
call concurrently.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

INV_SQRT2 = 0.7071067811865476
INV_SQRT_2PI = 0.3989422804014327


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values produced by {where}")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a @ b with explicit shape validation."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul")


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian-CDF GELU: x * Phi(x), erf-based (no tanh approximation)."""
    return check_finite(0.5 * x * (1.0 + erf(x * INV_SQRT2)), "gelu")


def gelu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """d/dx [x * Phi(x)] = Phi(x) + x * phi(x), times the upstream gradient."""
    phi = np.exp(-0.5 * x * x) * INV_SQRT_2PI
    cdf = 0.5 * (1.0 + erf(x * INV_SQRT2))
    return check_finite((cdf + x * phi) * grad_out, "gelu_backward")


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    """Per-row standardization (population variance + eps) then affine map.

    Returns (out, cache); pass the cache to `layer_norm_backward`.
    """
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError(f"layer_norm expects rows of width >= 2, got shape {x.shape}")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mean = x.mean(axis=1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    check_finite(out, "layer_norm")
    return out, (xhat, inv_std, gamma)


def layer_norm_backward(cache, grad_out: np.ndarray):
    """Gradients w.r.t. (x, gamma, beta) for `layer_norm`."""
    xhat, inv_std, gamma = cache
    d = xhat.shape[1]
    dgamma = (grad_out * xhat).sum(axis=0)
    dbeta = grad_out.sum(axis=0)
    dxhat = grad_out * gamma
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=1, keepdims=True) / d
    )
    return check_finite(dx, "layer_norm_backward"), dgamma, dbeta


def conv2d(x: np.ndarray, k: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Valid-padding stride-1 cross-correlation (no kernel flip).

    x: (N, Cin, H, W); k: (Cout, Cin, kh, kw); bias: (Cout,) or None.
    Output spatial dims are (H - kh + 1, W - kw + 1).
    """
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = k.shape
    if kcin != cin:
        raise ValueError(f"conv2d channel mismatch: input {cin}, kernel {kcin}")
    if kh > h or kw > w:
        raise ValueError(f"conv2d kernel ({kh},{kw}) larger than input ({h},{w})")
    ho, wo = h - kh + 1, w - kw + 1
    out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            out += np.einsum(
                "ncij,oc->noij", x[:, :, a : a + ho, b : b + wo], k[:, :, a, b],
                optimize=True,
            )
    if bias is not None:
        out += bias.reshape(1, cout, 1, 1)
    return check_finite(out, "conv2d")


def conv2d_backward(x: np.ndarray, k: np.ndarray, grad_out: np.ndarray):
    """Gradients w.r.t. (x, k, bias) for `conv2d`."""
    n, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    ho, wo = h - kh + 1, w - kw + 1
    dx = np.zeros_like(x)
    dk = np.zeros_like(k)
    for a in range(kh):
        for b in range(kw):
            patch = x[:, :, a : a + ho, b : b + wo]
            dk[:, :, a, b] = np.einsum("noij,ncij->oc", grad_out, patch, optimize=True)
            dx[:, :, a : a + ho, b : b + wo] += np.einsum(
                "noij,oc->ncij", grad_out, k[:, :, a, b], optimize=True
            )
    dbias = grad_out.sum(axis=(0, 2, 3))
    return check_finite(dx, "conv2d_backward"), dk, dbias


def avgpool2d(x: np.ndarray, window: tuple[int, int], stride: tuple[int, int]) -> np.ndarray:
    """Window mean with floor semantics: trailing partial windows are dropped."""
    n, c, h, w = x.shape
    ph, pw = window
    sh, sw = stride
    if ph > h or pw > w:
        raise ValueError(f"avgpool2d window ({ph},{pw}) larger than input ({h},{w})")
    ho = (h - ph) // sh + 1
    wo = (w - pw) // sw + 1
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for a in range(ph):
        for b in range(pw):
            out += x[:, :, a : a + sh * ho : sh, b : b + sw * wo : sw]
    out /= ph * pw
    return check_finite(out, "avgpool2d")


def avgpool2d_backward(
    x_shape: tuple[int, ...], window: tuple[int, int], stride: tuple[int, int],
    grad_out: np.ndarray,
) -> np.ndarray:
    """Distribute each output gradient uniformly over its source window."""
    ph, pw = window
    sh, sw = stride
    _, _, ho, wo = grad_out.shape
    dx = np.zeros(x_shape, dtype=grad_out.dtype)
    g = grad_out / (ph * pw)
    for a in range(ph):
        for b in range(pw):
            dx[:, :, a : a + sh * ho : sh, b : b + sw * wo : sw] += g
    return check_finite(dx, "avgpool2d_backward")


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax, numerically stabilized; rows sum to 1."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return check_finite(e / e.sum(axis=1, keepdims=True), "softmax_rows")


def l2_normalize(x: np.ndarray):
    """Normalize rows to unit L2 norm. Returns (normalized, norms).

    A zero-norm row has no direction and is rejected.
    """
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    if not np.all(norms > 0):
        raise ValueError("l2_normalize: zero-norm row")
    return check_finite(x / norms, "l2_normalize"), norms


def l2_normalize_backward(xn: np.ndarray, norms: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward of row normalization: project out the radial component."""
    radial = (grad_out * xn).sum(axis=1, keepdims=True)
    return check_finite((grad_out - xn * radial) / norms, "l2_normalize_backward")


def dropout_mask(rng, shape, p: float, dtype=np.float32) -> np.ndarray:
    """Inverted-dropout mask: zero with probability p, else 1/(1-p).

    Multiplying by the mask preserves expectation. p=0 yields all ones.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.uniform(shape, dtype=np.float64) >= p
    return (keep / (1.0 - p)).astype(dtype)
