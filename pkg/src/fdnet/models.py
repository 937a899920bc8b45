"""Forecasting models built on focal decomposition.

Both models share one skeleton per branch: 1x1 value embedding, a stack of
feature-extraction blocks, a per-variate channel-major flatten, and a linear
head shared across variates; branch predictions are summed in branch order
(oldest first). No parameter is shared across branches, so each branch's
output depends only on its own temporal slice, and every layer keeps
variates independent.

The plain block keeps temporal length; the downsampling block halves it
(L -> floor((L-1)/2) + 1) via a strided conv with a max-pool skip, and mixes
time positions per variate through canonical attention.

Parameters are read-only during forward; batched inference over distinct
graphs is safe, and the branch sum always reduces oldest-to-newest.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import NumericError, SequenceTooShortError, ShapeError
from .focal import FocalPlan, make_focal_plan, slice_input
from .layers import LinearHead, MultiHeadAttention, ValueEmbedding, WeightNormConv
from .tensor import Tensor

_PARAM_DOMAIN = 0
_DROPOUT_DOMAIN = 1


def _rng_stream(seed: int, domain: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, domain, index]))


class _StreamAllocator:
    """Hands out named, independent generator streams in construction order."""

    def __init__(self, seed: int, domain: int):
        self._seed = seed
        self._domain = domain
        self._index = 0

    def next(self) -> np.random.Generator:
        rng = _rng_stream(self._seed, self._domain, self._index)
        self._index += 1
        return rng


def halved_length(length: int) -> int:
    """Temporal length after one stride-2, kernel-3, pad-1 stage."""
    return (length - 1) // 2 + 1


def stack_output_length(length: int, depth: int) -> int:
    """Length after `depth` downsampling blocks."""
    for _ in range(depth):
        length = halved_length(length)
    return length


class DFEInitialBlock:
    """Four weight-normalized convs (1x1, 3x1, 1x1, 3x1) with two residuals.

    Each 3x1 conv output adds the activation that entered the preceding 1x1
    conv, then dropout and GELU. Channel count and temporal length are
    preserved; the receptive field grows by 2 per block.
    """

    def __init__(self, d: int, dropout_p: float, params: _StreamAllocator,
                 drops: _StreamAllocator):
        self.conv1 = WeightNormConv(d, d, 1, rng=params.next())
        self.conv2 = WeightNormConv(d, d, 3, pad_t=1, rng=params.next())
        self.conv3 = WeightNormConv(d, d, 1, rng=params.next())
        self.conv4 = WeightNormConv(d, d, 3, pad_t=1, rng=params.next())
        self.dropout_p = dropout_p
        self._drop_rngs = [drops.next() for _ in range(4)]

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for tag, conv in (("conv1", self.conv1), ("conv2", self.conv2),
                          ("conv3", self.conv3), ("conv4", self.conv4)):
            out[f"{prefix}.{tag}.v"] = conv.v
            out[f"{prefix}.{tag}.g"] = conv.g
            out[f"{prefix}.{tag}.bias"] = conv.bias
        return out

    def _drop(self, x: Tensor, site: int, mode: str) -> Tensor:
        return T.dropout(x, self.dropout_p, mode, self._drop_rngs[site])

    def forward(self, x: Tensor, mode: str) -> Tensor:
        h1 = T.gelu(self._drop(self.conv1.forward(x), 0, mode))
        h2 = T.gelu(self._drop(T.add(self.conv2.forward(h1), x), 1, mode))
        h3 = T.gelu(self._drop(self.conv3.forward(h2), 2, mode))
        return T.gelu(self._drop(T.add(self.conv4.forward(h3), h2), 3, mode))


class DFEICOMBlock:
    """Attention + downsampling block: halves temporal length.

    a = gelu(drop(x + WNConv1x1(attention(x))));
    b = gelu(drop(WNConv3x1-stride2(a)));
    c = gelu(drop(WNConv3x1(b)));
    out = c + maxpool3x1-stride2(x).
    Both halving paths share the floor((L-1)/2)+1 length rule, so the final
    add is always shape-consistent.
    """

    def __init__(self, d: int, heads: int, dropout_p: float, params: _StreamAllocator,
                 drops: _StreamAllocator):
        self.attn = MultiHeadAttention(d, heads, rng=params.next())
        self.conv_mix = WeightNormConv(d, d, 1, rng=params.next())
        self.conv_down = WeightNormConv(d, d, 3, stride_t=2, pad_t=1, rng=params.next())
        self.conv_post = WeightNormConv(d, d, 3, pad_t=1, rng=params.next())
        self.dropout_p = dropout_p
        self._drop_rngs = [drops.next() for _ in range(3)]

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {
            f"{prefix}.attn.w_q": self.attn.w_q,
            f"{prefix}.attn.w_k": self.attn.w_k,
            f"{prefix}.attn.w_v": self.attn.w_v,
            f"{prefix}.attn.w_o": self.attn.w_o,
        }
        for tag, conv in (("conv_mix", self.conv_mix), ("conv_down", self.conv_down),
                          ("conv_post", self.conv_post)):
            out[f"{prefix}.{tag}.v"] = conv.v
            out[f"{prefix}.{tag}.g"] = conv.g
            out[f"{prefix}.{tag}.bias"] = conv.bias
        return out

    def _drop(self, x: Tensor, site: int, mode: str) -> Tensor:
        return T.dropout(x, self.dropout_p, mode, self._drop_rngs[site])

    def forward(self, x: Tensor, mode: str) -> Tensor:
        if x.shape[2] < 2:
            raise SequenceTooShortError(
                f"downsampling block needs temporal length >= 2, got {x.shape[2]}"
            )
        mixed = self.conv_mix.forward(self.attn.forward_per_variate(x))
        a = T.gelu(self._drop(T.add(x, mixed), 0, mode))
        b = T.gelu(self._drop(self.conv_down.forward(a), 1, mode))
        c = T.gelu(self._drop(self.conv_post.forward(b), 2, mode))
        return T.add(c, T.maxpool_time(x, 3, 2, 1))


class _Branch:
    """One focal branch: embedding, block stack, flatten, linear head."""

    def __init__(self, index: int, length: int, depth: int, variant: str, d: int,
                 l_out: int, heads: int, dropout_p: float,
                 params: _StreamAllocator, drops: _StreamAllocator):
        self.index = index
        self.length = length
        self.depth = depth
        self.embed = ValueEmbedding(d, rng=params.next())
        if variant == "fdnet":
            self.blocks = [DFEInitialBlock(d, dropout_p, params, drops)
                           for _ in range(depth)]
            self.out_length = length
        else:
            self.blocks = []
            current = length
            for _ in range(depth):
                if current < 2:
                    raise SequenceTooShortError(
                        f"branch {index}: length {length} cannot survive {depth} halvings"
                    )
                self.blocks.append(DFEICOMBlock(d, heads, dropout_p, params, drops))
                current = halved_length(current)
            self.out_length = current
        self.head = LinearHead(d * self.out_length, l_out, rng=params.next())

    def named_parameters(self) -> dict[str, Tensor]:
        prefix = f"branch{self.index}"
        out = {
            f"{prefix}.embed.weight": self.embed.conv.weight,
            f"{prefix}.embed.bias": self.embed.conv.bias,
        }
        for j, block in enumerate(self.blocks):
            out.update(block.named_parameters(f"{prefix}.block{j}"))
        out[f"{prefix}.head.weight"] = self.head.weight
        out[f"{prefix}.head.bias"] = self.head.bias
        return out

    def representation(self, x_slice: Tensor, mode: str) -> Tensor:
        """Post-stack, pre-flatten features (B, D, out_length, V)."""
        h = self.embed.forward(x_slice)
        for block in self.blocks:
            h = block.forward(h, mode)
        return h

    def forward(self, x_slice: Tensor, mode: str) -> tuple[Tensor, Tensor]:
        h = self.representation(x_slice, mode)
        batch, d, length, variates = h.shape
        # channel-major flatten: feature index = channel * length + time
        flat = T.reshape(h, (batch, d * length, variates))
        return self.head.forward(flat), h


class _FocalModel:
    """Shared machinery for both model variants."""

    variant = ""

    def __init__(self, plan: FocalPlan, embed_dim: int = 8, l_out: int = 96,
                 seed: int = 4321, heads: int = 1, dropout_p: float = 0.1):
        if plan.variant != self.variant:
            raise ShapeError(f"plan variant {plan.variant!r} does not fit {self.variant!r}")
        self.plan = plan
        self.embed_dim = embed_dim
        self.l_out = l_out
        self.seed = seed
        self.heads = heads
        self.dropout_p = dropout_p
        params = _StreamAllocator(seed, _PARAM_DOMAIN)
        drops = _StreamAllocator(seed, _DROPOUT_DOMAIN)
        self.branches = [
            _Branch(i, length, depth, self.variant, embed_dim, l_out, heads,
                    dropout_p, params, drops)
            for i, (length, depth) in enumerate(zip(plan.lengths, plan.depths))
        ]

    @property
    def config(self) -> dict:
        return {
            "variant": self.variant,
            "l_in": self.plan.l_in,
            "l_out": self.l_out,
            "f": self.plan.f,
            "alpha": self.plan.alpha,
            "n_layers": max(self.plan.depths),
            "embed_dim": self.embed_dim,
            "heads": self.heads,
            "dropout": self.dropout_p,
            "seed": self.seed,
            "plan_lengths": list(self.plan.lengths),
            "plan_depths": list(self.plan.depths),
        }

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for branch in self.branches:
            out.update(branch.named_parameters())
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def _check_input(self, x: Tensor):
        if x.data.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"model expects (B, 1, L_in, V), got {x.shape}")
        if x.shape[2] != self.plan.l_in:
            raise ShapeError(
                f"input length {x.shape[2]} does not match plan length {self.plan.l_in}"
            )
        if not np.isfinite(x.data).all():
            raise NumericError("model input contains non-finite values")

    def forward(self, x: Tensor, mode: str = "eval") -> tuple[Tensor, list[Tensor]]:
        """Predict (B, L_out, V); also return the per-branch predictions."""
        pred, branch_outputs, _ = self._run(x, mode)
        return pred, branch_outputs

    def representations(self, x: Tensor, mode: str = "eval") -> list[Tensor]:
        """Per-branch post-stack features, for export and analysis."""
        _, _, reprs = self._run(x, mode)
        return reprs

    def _run(self, x: Tensor, mode: str):
        self._check_input(x)
        slices = slice_input(x, self.plan)
        outputs, reprs = [], []
        for branch, x_slice in zip(self.branches, slices):
            y, h = branch.forward(x_slice, mode)
            outputs.append(y)
            reprs.append(h)
        pred = outputs[0]
        for y in outputs[1:]:
            pred = T.add(pred, y)
        return pred, outputs, reprs

    def param_count(self) -> dict[str, int]:
        """Exact parameter tallies by group, via tensor enumeration."""
        groups = {"embedding": 0, "blocks": 0, "head": 0}
        for name, tensor in self.named_parameters().items():
            if ".embed." in name:
                groups["embedding"] += tensor.size
            elif ".head." in name:
                groups["head"] += tensor.size
            else:
                groups["blocks"] += tensor.size
        groups["total"] = sum(groups.values())
        return groups


class FDNetModel(_FocalModel):
    """Plain variant: length-preserving conv stacks, deeper toward the present."""

    variant = "fdnet"


class FUNetModel(_FocalModel):
    """Downsampling variant: farther branches pass through more halving blocks."""

    variant = "funet"


def build_model(variant: str, l_in: int, l_out: int, f: int, alpha: float,
                n_layers: int, embed_dim: int, seed: int, heads: int = 1,
                dropout_p: float = 0.1):
    """Construct either model from scalar hyper-parameters."""
    plan = make_focal_plan(l_in, f, alpha, n_layers, variant)
    cls = FDNetModel if variant == "fdnet" else FUNetModel
    return cls(plan, embed_dim=embed_dim, l_out=l_out, seed=seed, heads=heads,
               dropout_p=dropout_p)
