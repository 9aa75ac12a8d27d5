"""From-scratch tensor layers with exact forward/backward passes.

Tensors are plain numpy arrays shaped (batch, channels, *spatial) for
spatial dimension d in {2, 3}.  All convolution kinds use 3^d kernels and
zero padding 1; stride-2 convolutions and their transposed counterparts act
as learned pooling/unpooling.  Backward passes are exact adjoints of the
forward maps (finite-difference checkable in float64).

Convolutions are evaluated per kernel offset: for each of the 3^d offsets,
a strided view of the (padded) input is contracted with the corresponding
weight slice via BLAS.  The same slicing drives the scatter in the input
gradient / transposed convolution, so no im2col buffer is materialized.
"""

from __future__ import annotations

from itertools import product

import numpy as np

KERNEL = 3
PAD = 1


def _conv_out_size(n: int, stride: int) -> int:
    return (n + 2 * PAD - KERNEL) // stride + 1


def _offset_slices(offset, stride, out_spatial):
    """Slices into a padded array selecting input positions for one kernel offset."""
    return tuple(
        slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, out_spatial)
    )


def _pad_spatial(x: np.ndarray) -> np.ndarray:
    d = x.ndim - 2
    return np.pad(x, [(0, 0), (0, 0)] + [(PAD, PAD)] * d)


def corr_forward(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """Cross-correlation of (B, Cin, *S) with (Cout, Cin, *3^d), zero pad 1."""
    d = x.ndim - 2
    b, cin = x.shape[:2]
    cout = w.shape[0]
    out_spatial = tuple(_conv_out_size(n, stride) for n in x.shape[2:])
    p = int(np.prod(out_spatial))
    xp = _pad_spatial(x)
    strides = (stride,) * d
    y = np.zeros((b, p, cout), dtype=x.dtype)
    for off in product(range(KERNEL), repeat=d):
        view = xp[(slice(None), slice(None)) + _offset_slices(off, strides, out_spatial)]
        flat = view.reshape(b, cin, p).transpose(0, 2, 1)
        y += flat @ w[(slice(None), slice(None)) + off].T
    return y.transpose(0, 2, 1).reshape((b, cout) + out_spatial)


def corr_input_grad(gy: np.ndarray, w: np.ndarray, stride: int,
                    in_spatial) -> np.ndarray:
    """Adjoint of corr_forward w.r.t. its input; also the transposed-conv forward."""
    d = gy.ndim - 2
    b = gy.shape[0]
    cin = w.shape[1]
    out_spatial = gy.shape[2:]
    p = int(np.prod(out_spatial))
    gy_flat = gy.reshape(b, gy.shape[1], p).transpose(0, 2, 1)
    gxp = np.zeros((b, cin) + tuple(n + 2 * PAD for n in in_spatial), dtype=gy.dtype)
    strides = (stride,) * d
    for off in product(range(KERNEL), repeat=d):
        g = gy_flat @ w[(slice(None), slice(None)) + off]  # (B, P, Cin)
        view = g.transpose(0, 2, 1).reshape((b, cin) + tuple(out_spatial))
        gxp[(slice(None), slice(None)) + _offset_slices(off, strides, out_spatial)] += view
    center = tuple(slice(PAD, PAD + n) for n in in_spatial)
    return gxp[(slice(None), slice(None)) + center]


def corr_weight_grad(x: np.ndarray, gy: np.ndarray, stride: int,
                     kshape) -> np.ndarray:
    """Adjoint of corr_forward w.r.t. the weight."""
    d = x.ndim - 2
    b, cin = x.shape[:2]
    cout = gy.shape[1]
    out_spatial = gy.shape[2:]
    p = int(np.prod(out_spatial))
    xp = _pad_spatial(x)
    gy_flat = gy.reshape(b, cout, p).transpose(0, 2, 1).reshape(b * p, cout)
    gw = np.zeros((cout, cin) + tuple(kshape), dtype=x.dtype)
    strides = (stride,) * d
    for off in product(range(KERNEL), repeat=d):
        view = xp[(slice(None), slice(None)) + _offset_slices(off, strides, out_spatial)]
        flat = view.reshape(b, cin, p).transpose(0, 2, 1).reshape(b * p, cin)
        gw[(slice(None), slice(None)) + off] = gy_flat.T @ flat
    return gw


def _init_uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape).astype(dtype)


class Conv:
    """3^d cross-correlation, zero pad 1, stride 1 or 2 ("conv" / "conv_stride2")."""

    def __init__(self, cin: int, cout: int, dim: int, stride: int = 1, *,
                 rng: np.random.Generator, dtype=np.float64):
        self.cin, self.cout, self.dim, self.stride = cin, cout, dim, stride
        fan_in = cin * KERNEL**dim
        self.weight = _init_uniform(rng, (cout, cin) + (KERNEL,) * dim, fan_in, dtype)
        self.bias = _init_uniform(rng, (cout,), fan_in, dtype)

    @property
    def kind(self) -> str:
        return "conv" if self.stride == 1 else "conv_stride2"

    def forward(self, x: np.ndarray):
        if x.shape[1] != self.cin:
            raise ValueError(f"expected {self.cin} input channels, got {x.shape[1]}")
        y = corr_forward(x, self.weight, self.stride)
        y += self.bias.reshape((1, self.cout) + (1,) * self.dim)
        return y, x

    def backward(self, cache, gy: np.ndarray):
        x = cache
        gx = corr_input_grad(gy, self.weight, self.stride, x.shape[2:])
        gw = corr_weight_grad(x, gy, self.stride, self.weight.shape[2:])
        gb = gy.sum(axis=(0,) + tuple(range(2, gy.ndim)))
        return gx, {"weight": gw, "bias": gb}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


class Deconv:
    """Transposed stride-2 convolution restoring a caller-supplied extent."""

    def __init__(self, cin: int, cout: int, dim: int, *,
                 rng: np.random.Generator, dtype=np.float64):
        self.cin, self.cout, self.dim = cin, cout, dim
        self.stride = 2
        fan_in = cin * KERNEL**dim
        # stored as the weight of the underlying stride-2 correlation
        # mapping (out extent, cout channels) -> (in extent, cin channels)
        self.weight = _init_uniform(rng, (cin, cout) + (KERNEL,) * dim, fan_in, dtype)
        self.bias = _init_uniform(rng, (cout,), fan_in, dtype)

    kind = "deconv_stride2"

    def forward(self, x: np.ndarray, out_spatial):
        if x.shape[1] != self.cin:
            raise ValueError(f"expected {self.cin} input channels, got {x.shape[1]}")
        expected = tuple(_conv_out_size(n, 2) for n in out_spatial)
        if x.shape[2:] != expected:
            raise ValueError(
                f"input extent {x.shape[2:]} cannot restore {tuple(out_spatial)}"
            )
        y = corr_input_grad(x, self.weight, 2, tuple(out_spatial))
        y += self.bias.reshape((1, self.cout) + (1,) * self.dim)
        return y, (x, tuple(out_spatial))

    def backward(self, cache, gy: np.ndarray):
        x, _ = cache
        gx = corr_forward(gy, self.weight, 2)
        gw = corr_weight_grad(gy, x, 2, self.weight.shape[2:])
        gb = gy.sum(axis=(0,) + tuple(range(2, gy.ndim)))
        return gx, {"weight": gw, "bias": gb}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


class PReLU:
    """x if x > 0 else slope * x, one learnable slope per channel (init 0.25)."""

    kind = "prelu"

    def __init__(self, channels: int, *, dtype=np.float64, init: float = 0.25):
        self.channels = channels
        self.slope = np.full(channels, init, dtype=dtype)

    def _slope_col(self, ndim):
        return self.slope.reshape((1, self.channels) + (1,) * (ndim - 2))

    def forward(self, x: np.ndarray):
        y = np.where(x > 0, x, self._slope_col(x.ndim) * x)
        return y.astype(x.dtype, copy=False), x

    def backward(self, cache, gy: np.ndarray):
        x = cache
        neg = x <= 0
        gx = gy * np.where(neg, self._slope_col(x.ndim), 1.0).astype(gy.dtype)
        gslope = (gy * x * neg).sum(axis=(0,) + tuple(range(2, x.ndim)))
        return gx, {"slope": gslope}

    def params(self):
        return {"slope": self.slope}


class Dropout:
    """Inverted dropout; active in train/mc_dropout modes, identity in eval."""

    kind = "dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x: np.ndarray, mode: str, rng: np.random.Generator | None):
        if mode == "eval" or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("dropout in train/mc_dropout mode needs an RNG")
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) >= self.rate).astype(x.dtype) / keep
        return x * mask, mask

    def backward(self, cache, gy: np.ndarray):
        if cache is None:
            return gy, {}
        return gy * cache, {}

    def params(self):
        return {}
