"""Neural layers shared by both forecasting models.

All layers preserve variate independence: convolution kernels have extent 1
in the variate dimension and attention runs along time separately per
variate, with weights shared across variates. Layers are immutable during a
forward/backward pass; parameter updates require exclusive access.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import DegenerateWeightError, ShapeError
from .tensor import Tensor


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """He-uniform draw: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def kaiming_target_std(fan_in: int) -> float:
    """Std of the He-uniform distribution above: sqrt(2/fan_in)."""
    return math.sqrt(2.0 / fan_in)


class WeightNormConv:
    """Time-axis convolution with weight-normalized kernels.

    Trainable parameters are the direction tensor v (Cout,Cin,k,1), the
    per-channel magnitude g (Cout,) and the bias (Cout,). The effective
    kernel is g * v / ||v|| with the Euclidean norm taken per output channel
    over all remaining axes, so the per-channel norm of the effective kernel
    equals |g| exactly. At init g = ||v||, making the effective kernel equal
    the freshly drawn v.
    """

    def __init__(self, cin: int, cout: int, k: int, stride_t: int = 1, pad_t: int = 0, *,
                 rng: np.random.Generator):
        v = kaiming_uniform(rng, (cout, cin, k, 1), fan_in=cin * k)
        self.v = Tensor(v, requires_grad=True)
        self.g = Tensor(np.sqrt((v * v).sum(axis=(1, 2, 3))), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)
        self.stride_t = stride_t
        self.pad_t = pad_t

    def parameters(self) -> list[Tensor]:
        return [self.v, self.g, self.bias]

    def effective_weight(self) -> Tensor:
        """g * v / ||v|| per output channel; gradients flow into v and g."""
        norms_sq = T.tensor_sum(T.mul(self.v, self.v), axis=(1, 2, 3), keepdims=True)
        if np.any(norms_sq.data == 0.0):
            raise DegenerateWeightError("weight-normalized channel has zero direction norm")
        unit = T.div(self.v, T.sqrt(norms_sq))
        cout = self.v.shape[0]
        return T.mul(unit, T.reshape(self.g, (cout, 1, 1, 1)))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d_time(x, self.effective_weight(), self.bias,
                             stride_t=self.stride_t, pad_t=self.pad_t)


class PlainConv:
    """Un-normalized 1x1 time convolution (embeddings and projection heads)."""

    def __init__(self, cin: int, cout: int, *, rng: np.random.Generator):
        self.weight = Tensor(kaiming_uniform(rng, (cout, cin, 1, 1), fan_in=cin),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d_time(x, self.weight, self.bias, stride_t=1, pad_t=0)


class ValueEmbedding:
    """Scalar-to-D-channel affine map: a 1x1 conv on (B,1,L,V).

    No cross-time or cross-variate mixing; each (t, v) element is embedded
    independently.
    """

    def __init__(self, embed_dim: int, *, rng: np.random.Generator):
        self.conv = PlainConv(1, embed_dim, rng=rng)

    def parameters(self) -> list[Tensor]:
        return self.conv.parameters()

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"value embedding expects (B, 1, L, V), got {x.shape}")
        return self.conv.forward(x)


class LinearHead:
    """Per-variate linear projection with weights shared across variates.

    y[b, :, v] = weight @ features[b, :, v] + bias, realized as a 1x1 conv
    over the feature channel.
    """

    def __init__(self, in_len: int, out_len: int, *, rng: np.random.Generator):
        self.weight = Tensor(kaiming_uniform(rng, (out_len, in_len), fan_in=in_len),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_len), requires_grad=True)
        self.in_len = in_len
        self.out_len = out_len

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def forward(self, features: Tensor) -> Tensor:
        if features.data.ndim != 3 or features.shape[1] != self.in_len:
            raise ShapeError(
                f"linear head expects (B, {self.in_len}, V), got {features.shape}"
            )
        batch, _, variates = features.shape
        x4 = T.reshape(features, (batch, self.in_len, 1, variates))
        w4 = T.reshape(self.weight, (self.out_len, self.in_len, 1, 1))
        y4 = T.conv2d_time(x4, w4, self.bias, stride_t=1, pad_t=0)
        return T.reshape(y4, (batch, self.out_len, variates))


class MultiHeadAttention:
    """Canonical scaled dot-product attention along the time axis.

    Four square projection matrices (d x d); heads split the embedding into
    d/h slices, attention weights are softmax(Q K^T / sqrt(d/h)), and the
    concatenated head outputs pass through the output projection. Projections
    carry no bias.
    """

    def __init__(self, d: int, heads: int = 1, *, rng: np.random.Generator):
        if d % heads != 0:
            raise ShapeError(f"embedding dim {d} not divisible by head count {heads}")
        self.d = d
        self.heads = heads
        self.w_q = Tensor(kaiming_uniform(rng, (d, d), fan_in=d), requires_grad=True)
        self.w_k = Tensor(kaiming_uniform(rng, (d, d), fan_in=d), requires_grad=True)
        self.w_v = Tensor(kaiming_uniform(rng, (d, d), fan_in=d), requires_grad=True)
        self.w_o = Tensor(kaiming_uniform(rng, (d, d), fan_in=d), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.w_q, self.w_k, self.w_v, self.w_o]

    def forward(self, x: Tensor) -> Tensor:
        """Attend over (N, L, d) sequences; rows are time positions."""
        if x.data.ndim != 3 or x.shape[2] != self.d:
            raise ShapeError(f"attention expects (N, L, {self.d}), got {x.shape}")
        n, length, d = x.shape
        h, dh = self.heads, self.d // self.heads

        def split_heads(t: Tensor) -> Tensor:
            return T.transpose(T.reshape(t, (n, length, h, dh)), (0, 2, 1, 3))

        q = split_heads(T.matmul(x, self.w_q))
        k = split_heads(T.matmul(x, self.w_k))
        v = split_heads(T.matmul(x, self.w_v))
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        attn = T.softmax_lastdim(scores)
        ctx = T.matmul(attn, v)
        merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (n, length, d))
        return T.matmul(merged, self.w_o)

    def forward_per_variate(self, x: Tensor) -> Tensor:
        """Apply attention along time independently per variate of (B,D,L,V)."""
        batch, d, length, variates = x.shape
        seq = T.reshape(T.transpose(x, (0, 3, 2, 1)), (batch * variates, length, d))
        out = self.forward(seq)
        return T.transpose(T.reshape(out, (batch, variates, length, d)), (0, 3, 2, 1))
