"""Dense-tensor layer primitives with explicit forward and backward passes.

Every operation is a pure function of its arguments: nothing is mutated,
batch normalization returns an updated state object instead of touching the
one it was given. All arithmetic is float64. Convolution is plain
cross-correlation (no kernel flip); sliding windows are gathered once and
reduced with a single BLAS matmul, which keeps desk-scale training fast
without leaving numpy.

Spatial operations accept either a single sample (``[C, *spatial]``) or a
batch with a leading axis (``[N, C, *spatial]``); the output matches the
input's batching.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteError, ShapeError

DTYPE = np.float64


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} produced non-finite values")
    return arr


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a convolution: kernel extents, stride and zero padding
    per spatial axis, plus channel counts. Works for 2 or 3 spatial axes."""

    kernel: tuple[int, ...]
    stride: tuple[int, ...]
    padding: tuple[int, ...]
    in_channels: int
    out_channels: int

    def __post_init__(self):
        nd = len(self.kernel)
        if len(self.stride) != nd or len(self.padding) != nd:
            raise ShapeError("kernel/stride/padding must have equal rank")
        if any(k < 1 for k in self.kernel) or any(s < 1 for s in self.stride):
            raise ShapeError("kernel and stride extents must be positive")
        if any(p < 0 for p in self.padding):
            raise ShapeError("padding must be nonnegative")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be positive")

    @property
    def ndim(self) -> int:
        return len(self.kernel)

    def out_extents(self, in_extents: tuple[int, ...]) -> tuple[int, ...]:
        """Output extent per axis: floor((in + 2*pad - kernel)/stride) + 1."""
        if len(in_extents) != self.ndim:
            raise ShapeError("input rank does not match spec")
        out = []
        for n, k, s, p in zip(in_extents, self.kernel, self.stride, self.padding):
            ext = (n + 2 * p - k) // s + 1
            if ext < 1:
                raise ShapeError(
                    f"nonpositive output extent for input {n}, kernel {k}, "
                    f"stride {s}, pad {p}"
                )
            out.append(ext)
        return tuple(out)

    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels, *self.kernel)


@dataclass
class LayerGrads:
    """Gradients of a layer: w.r.t. its input plus named parameter grads."""

    input_grad: np.ndarray
    param_grads: dict[str, np.ndarray] = field(default_factory=dict)


def _with_batch(x: np.ndarray, spatial_ndim: int) -> tuple[np.ndarray, bool]:
    """Promote an unbatched [C, *spatial] array to [1, C, *spatial]."""
    if x.ndim == spatial_ndim + 1:
        return x[None], True
    if x.ndim == spatial_ndim + 2:
        return x, False
    raise ShapeError(f"expected {spatial_ndim + 1} or {spatial_ndim + 2} axes, got {x.ndim}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_windows(x: np.ndarray, spec: ConvSpec) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad and gather strided sliding windows.

    Returns (padded input, windows[N, C, *out_spatial, *kernel]).
    """
    nd = spec.ndim
    pad = [(0, 0), (0, 0)] + [(p, p) for p in spec.padding]
    xp = np.pad(x, pad) if any(spec.padding) else x
    win = sliding_window_view(xp, spec.kernel, axis=tuple(range(2, 2 + nd)))
    slicer = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in spec.stride)
    return xp, win[slicer]


def _im2col(win: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Flatten windows to a [N * prod(out_spatial), C_in * prod(kernel)] matrix."""
    nd = spec.ndim
    order = (0, *range(2, 2 + nd), 1, *range(2 + nd, 2 + 2 * nd))
    cols = win.transpose(order)
    return cols.reshape(-1, spec.in_channels * int(np.prod(spec.kernel)))


def _conv_forward(x, weights, bias, spec, return_cols=False):
    n = x.shape[0]
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if weights.shape != spec.weight_shape():
        raise ShapeError(f"weights {weights.shape} do not match spec {spec.weight_shape()}")
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"bias {bias.shape} must be ({spec.out_channels},)")
    out_sp = spec.out_extents(x.shape[2:])
    _, win = _conv_windows(x, spec)
    cols = _im2col(win, spec)
    out = cols @ weights.reshape(spec.out_channels, -1).T
    out += bias
    out = out.reshape(n, *out_sp, spec.out_channels)
    out = np.ascontiguousarray(np.moveaxis(out, -1, 1))
    check_finite("conv forward", out)
    return (out, cols) if return_cols else out


def _conv_backward(x, weights, spec, output_grad, cols=None):
    n = x.shape[0]
    out_sp = spec.out_extents(x.shape[2:])
    if output_grad.shape != (n, spec.out_channels, *out_sp):
        raise ShapeError(
            f"output_grad {output_grad.shape} does not match forward output "
            f"{(n, spec.out_channels, *out_sp)}"
        )
    if cols is None:
        _, win = _conv_windows(x, spec)
        cols = _im2col(win, spec)
    gmat = np.moveaxis(output_grad, 1, -1).reshape(-1, spec.out_channels)
    d_weights = (gmat.T @ cols).reshape(weights.shape)
    d_bias = gmat.sum(axis=0)

    # Scatter input grads one kernel offset at a time (windows overlap).
    wmat = weights.reshape(spec.out_channels, -1)
    tmp = (gmat @ wmat).reshape(n, *out_sp, spec.in_channels, *spec.kernel)
    pad = [(0, 0), (0, 0)] + [(p, p) for p in spec.padding]
    gx_pad = np.zeros((n, spec.in_channels) + tuple(e + 2 * p for e, p in zip(x.shape[2:], spec.padding)))
    nd = spec.ndim
    for offset in np.ndindex(*spec.kernel):
        dest = tuple(
            slice(o, o + s * e, s) for o, s, e in zip(offset, spec.stride, out_sp)
        )
        src = (slice(None),) + (slice(None),) * nd + (slice(None),) + offset
        gx_pad[(slice(None), slice(None)) + dest] += np.moveaxis(tmp[src], -1, 1)
    unpad = tuple(slice(p, p + e) for p, e in zip(spec.padding, x.shape[2:]))
    input_grad = gx_pad[(slice(None), slice(None)) + unpad]
    return LayerGrads(input_grad, {"weights": d_weights, "bias": d_bias})


def conv2d_forward(x, weights, bias, spec: ConvSpec) -> np.ndarray:
    """Cross-correlate ``x`` [C,H,W] (or [N,C,H,W]) with ``weights``
    [C_out,C_in,kh,kw], add per-channel bias."""
    if spec.ndim != 2:
        raise ShapeError("conv2d requires a 2-axis ConvSpec")
    xb, squeeze = _with_batch(x, 2)
    out = _conv_forward(xb, weights, bias, spec)
    return out[0] if squeeze else out


def conv2d_backward(x, weights, spec: ConvSpec, output_grad) -> LayerGrads:
    """Gradients of conv2d_forward w.r.t. input, weights and bias."""
    if spec.ndim != 2:
        raise ShapeError("conv2d requires a 2-axis ConvSpec")
    xb, squeeze = _with_batch(x, 2)
    gb, _ = _with_batch(output_grad, 2)
    grads = _conv_backward(xb, weights, spec, gb)
    if squeeze:
        grads.input_grad = grads.input_grad[0]
    return grads


def conv3d_forward(x, weights, bias, spec: ConvSpec) -> np.ndarray:
    """3D cross-correlation over [C,D,H,W] (or batched) inputs."""
    if spec.ndim != 3:
        raise ShapeError("conv3d requires a 3-axis ConvSpec")
    xb, squeeze = _with_batch(x, 3)
    out = _conv_forward(xb, weights, bias, spec)
    return out[0] if squeeze else out


def conv3d_backward(x, weights, spec: ConvSpec, output_grad) -> LayerGrads:
    if spec.ndim != 3:
        raise ShapeError("conv3d requires a 3-axis ConvSpec")
    xb, squeeze = _with_batch(x, 3)
    gb, _ = _with_batch(output_grad, 3)
    grads = _conv_backward(xb, weights, spec, gb)
    if squeeze:
        grads.input_grad = grads.input_grad[0]
    return grads


# ---------------------------------------------------------------------------
# activation
# ---------------------------------------------------------------------------

def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"leaky ReLU slope must lie in (0, 1), got {alpha}")


def leaky_relu_forward(x: np.ndarray, alpha: float) -> np.ndarray:
    """Elementwise x if x > 0 else alpha * x."""
    _check_alpha(alpha)
    return check_finite("leaky_relu", np.where(x > 0, x, alpha * x))


def leaky_relu_backward(x: np.ndarray, alpha: float, output_grad: np.ndarray) -> np.ndarray:
    """Slope 1 where x > 0, alpha where x <= 0 (boundary follows the
    forward branch assignment)."""
    _check_alpha(alpha)
    if x.shape != output_grad.shape:
        raise ShapeError("output_grad shape must match input")
    return output_grad * np.where(x > 0, 1.0, alpha)


# ---------------------------------------------------------------------------
# pooling (unpadded; callers pad explicitly when they need it)
# ---------------------------------------------------------------------------

def _pool_args(window, stride):
    kh, kw = (window, window) if np.isscalar(window) else tuple(window)
    sh, sw = (stride, stride) if np.isscalar(stride) else tuple(stride)
    if kh < 1 or kw < 1 or sh < 1 or sw < 1:
        raise ShapeError("pool window and stride must be positive")
    return kh, kw, sh, sw


def _pool_windows(x, window, stride):
    kh, kw, sh, sw = _pool_args(window, stride)
    if x.shape[-2] < kh or x.shape[-1] < kw:
        raise ShapeError(f"pool window {(kh, kw)} larger than input {x.shape[-2:]}")
    win = sliding_window_view(x, (kh, kw), axis=(-2, -1))
    return win[..., ::sh, ::sw, :, :]


def avg_pool2d(x, window, stride) -> np.ndarray:
    """Mean over each window; windows never read outside the input."""
    return check_finite("avg_pool2d", _pool_windows(x, window, stride).mean(axis=(-2, -1)))


def max_pool2d(x, window, stride) -> np.ndarray:
    """Max over each window."""
    return check_finite("max_pool2d", _pool_windows(x, window, stride).max(axis=(-2, -1)))


def pool2d_backward(x, window, stride, output_grad, mode: str) -> np.ndarray:
    """Input gradient of avg/max pooling.

    avg distributes grad/(K*L) to every window member; max routes the whole
    grad to the window argmax (first in row-major order on ties).
    """
    kh, kw, sh, sw = _pool_args(window, stride)
    xb, squeeze = _with_batch(x, 2)
    gb, _ = _with_batch(output_grad, 2)
    n, c, h, w = xb.shape
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    if gb.shape != (n, c, oh, ow):
        raise ShapeError(f"output_grad {gb.shape} does not match pool output {(n, c, oh, ow)}")
    gx = np.zeros_like(xb)
    if mode == "avg":
        g = gb / (kh * kw)
        for m in range(kh):
            for l in range(kw):
                gx[:, :, m : m + sh * oh : sh, l : l + sw * ow : sw] += g
    elif mode == "max":
        win = _pool_windows(xb, window, stride).reshape(n, c, oh, ow, kh * kw)
        arg = win.argmax(axis=-1)  # first max in row-major window order
        ni, ci, oi, oj = np.indices((n, c, oh, ow))
        rows = oi * sh + arg // kw
        cols = oj * sw + arg % kw
        np.add.at(gx, (ni, ci, rows, cols), gb)
    else:
        raise ValueError(f"unknown pool mode {mode!r}")
    return gx[0] if squeeze else gx


def pad_spatial(x: np.ndarray, pad: int | tuple[int, int]) -> np.ndarray:
    """Zero-pad the last two axes; gradient of this is unpad_spatial_grad."""
    ph, pw = (pad, pad) if np.isscalar(pad) else tuple(pad)
    width = [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)]
    return np.pad(x, width)


def unpad_spatial_grad(grad: np.ndarray, pad: int | tuple[int, int]) -> np.ndarray:
    ph, pw = (pad, pad) if np.isscalar(pad) else tuple(pad)
    h, w = grad.shape[-2], grad.shape[-1]
    return grad[..., ph : h - ph, pw : w - pw]


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class BnState:
    """Per-channel running statistics used in eval mode."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def initial(cls, channels: int) -> "BnState":
        return cls(np.zeros(channels), np.ones(channels))

    def copy(self) -> "BnState":
        return BnState(self.mean.copy(), self.var.copy())


def batchnorm2d_forward(x, scale, shift, state: BnState, mode: str):
    """Per-channel batch normalization over [N, C, H, W].

    Train mode normalizes with batch statistics and returns an updated
    running-stats state (momentum 0.1); eval mode normalizes with the
    running stats. Returns (out, new_state, cache) where cache feeds
    batchnorm2d_backward.
    """
    if x.ndim != 4:
        raise ShapeError("batchnorm2d expects [N, C, H, W]")
    n, c, h, w = x.shape
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError("scale/shift must have one entry per channel")
    if mode == "train":
        m = n * h * w
        if m < 2:
            raise ShapeError("train-mode batchnorm needs N*H*W >= 2")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        new_state = BnState(
            (1 - BN_MOMENTUM) * state.mean + BN_MOMENTUM * mean,
            (1 - BN_MOMENTUM) * state.var + BN_MOMENTUM * var,
        )
    elif mode == "eval":
        mean, var = state.mean, state.var
        new_state = state
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[:, None, None]) * inv_std[:, None, None]
    out = scale[:, None, None] * xhat + shift[:, None, None]
    check_finite("batchnorm2d", out)
    cache = {"xhat": xhat, "inv_std": inv_std, "scale": scale, "mode": mode}
    return out, new_state, cache


def batchnorm2d_backward(cache, output_grad) -> LayerGrads:
    xhat, inv_std, scale = cache["xhat"], cache["inv_std"], cache["scale"]
    if output_grad.shape != xhat.shape:
        raise ShapeError("output_grad shape must match forward input")
    d_scale = (output_grad * xhat).sum(axis=(0, 2, 3))
    d_shift = output_grad.sum(axis=(0, 2, 3))
    dxhat = output_grad * scale[:, None, None]
    if cache["mode"] == "train":
        n, c, h, w = xhat.shape
        m = n * h * w
        sum_d = dxhat.sum(axis=(0, 2, 3))
        sum_dx = (dxhat * xhat).sum(axis=(0, 2, 3))
        input_grad = (inv_std[:, None, None] / m) * (
            m * dxhat - sum_d[:, None, None] - xhat * sum_dx[:, None, None]
        )
    else:
        input_grad = dxhat * inv_std[:, None, None]
    return LayerGrads(input_grad, {"scale": d_scale, "shift": d_shift})


# ---------------------------------------------------------------------------
# concat / linear / residual / global pooling
# ---------------------------------------------------------------------------

def concat_channels(parts: list[np.ndarray]) -> np.ndarray:
    """Concatenate feature maps along the channel axis (axis -3)."""
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    spatial = parts[0].shape[-2:]
    lead = parts[0].shape[:-3]
    for p in parts[1:]:
        if p.shape[-2:] != spatial or p.shape[:-3] != lead:
            raise ShapeError(f"spatial/batch mismatch in concat: {p.shape} vs {parts[0].shape}")
    return np.concatenate(parts, axis=-3)


def concat_channels_backward(output_grad: np.ndarray, channel_sizes: list[int]) -> list[np.ndarray]:
    if sum(channel_sizes) != output_grad.shape[-3]:
        raise ShapeError("channel sizes do not sum to grad channels")
    splits = np.cumsum(channel_sizes)[:-1]
    return np.split(output_grad, splits, axis=-3)


def linear_forward(x, weights, bias) -> np.ndarray:
    """Affine map [N, F] @ [F, G] + [G]."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"linear shapes incompatible: {x.shape} @ {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError("bias must match output width")
    return check_finite("linear", x @ weights + bias)


def linear_backward(x, weights, output_grad) -> LayerGrads:
    if output_grad.shape != (x.shape[0], weights.shape[1]):
        raise ShapeError("output_grad shape mismatch in linear backward")
    return LayerGrads(
        output_grad @ weights.T,
        {"weights": x.T @ output_grad, "bias": output_grad.sum(axis=0)},
    )


def residual_add(fx, x, proj_weights) -> np.ndarray:
    """fx + W*x where W is a bias-free 1x1 convolution projecting channels."""
    c1, c2 = proj_weights.shape[0], proj_weights.shape[1]
    if proj_weights.shape != (c1, c2, 1, 1):
        raise ShapeError("projection must be a 1x1 kernel")
    spec = ConvSpec((1, 1), (1, 1), (0, 0), c2, c1)
    projected = conv2d_forward(x, proj_weights, np.zeros(c1), spec)
    if projected.shape != fx.shape:
        raise ShapeError(f"residual shapes differ: {fx.shape} vs {projected.shape}")
    return fx + projected


def residual_add_backward(x, proj_weights, output_grad):
    """Returns (grad_fx, grad_x, grad_proj). grad_fx is output_grad itself."""
    c1, c2 = proj_weights.shape[0], proj_weights.shape[1]
    spec = ConvSpec((1, 1), (1, 1), (0, 0), c2, c1)
    g = conv2d_backward(x, proj_weights, spec, output_grad)
    return output_grad, g.input_grad, g.param_grads["weights"]


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """[N, C, H, W] -> [N, C] spatial mean."""
    if x.ndim != 4:
        raise ShapeError("global_avg_pool expects [N, C, H, W]")
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(x_shape: tuple[int, ...], output_grad: np.ndarray) -> np.ndarray:
    n, c, h, w = x_shape
    if output_grad.shape != (n, c):
        raise ShapeError("output_grad must be [N, C]")
    return np.broadcast_to(output_grad[:, :, None, None] / (h * w), x_shape).copy()
