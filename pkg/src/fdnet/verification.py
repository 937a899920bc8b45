"""Gradient-fidelity suite: every differentiable op against central
finite differences, plus composite layers and tiny end-to-end models.

Each check is deterministic (fixed seeds) and declares which ops it covers;
`coverage()` must span the full registered op set. The `corrupt_op` hook
deliberately mis-scales the upstream gradient of one op during the run so a
harness can verify that broken backwards are detected and named.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import LinearHead, MultiHeadAttention, ValueEmbedding, WeightNormConv
from .models import _StreamAllocator, DFEICOMBlock, DFEInitialBlock, build_model
from .tensor import DIFFERENTIABLE_OPS, Tensor

DEFAULT_TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    ops: tuple[str, ...]
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _rand(shape, seed, scale=1.0):
    return np.random.default_rng(seed).normal(size=shape) * scale


def _sq_sum(t: Tensor) -> Tensor:
    return T.tensor_sum(T.mul(t, t))


def _check_elementwise():
    a = Tensor(_rand((3, 4), 10) + 3.0)
    b = Tensor(_rand((3, 4), 11) + 3.0)

    def f():
        y = T.add(T.div(T.mul(T.sub(a, b), T.neg(a)), b), 0.5)
        return _sq_sum(y)

    return T.grad_check(f, [a, b])


def _check_matmul():
    a = Tensor(_rand((3, 4), 12))
    b = Tensor(_rand((4, 2), 13))
    c = Tensor(_rand((2, 3, 4, 5), 14))
    d = Tensor(_rand((2, 3, 5, 2), 15))
    plain = T.grad_check(lambda: _sq_sum(T.matmul(a, b)), [a, b])
    batched = T.grad_check(lambda: _sq_sum(T.matmul(c, d)), [c, d])
    return max(plain, batched)


def _check_conv():
    x = Tensor(_rand((2, 3, 8, 2), 16))
    w3 = Tensor(_rand((4, 3, 3, 1), 17))
    w1 = Tensor(_rand((4, 3, 1, 1), 18))
    b = Tensor(_rand((4,), 19))
    same = T.grad_check(lambda: _sq_sum(T.conv2d_time(x, w3, b, 1, 1)), [x, w3, b])
    strided = T.grad_check(lambda: _sq_sum(T.conv2d_time(x, w3, b, 2, 1)), [x, w3, b])
    pointwise = T.grad_check(lambda: _sq_sum(T.conv2d_time(x, w1, b, 1, 0)), [x, w1, b])
    return max(same, strided, pointwise)


def _check_maxpool():
    # spaced values keep every window's argmax unique: finite differences
    # are only a valid oracle away from the kinks
    vals = np.random.default_rng(20).permutation(
        np.arange(2 * 2 * 9 * 2, dtype=float)
    ).reshape(2, 2, 9, 2) * 0.25
    x = Tensor(vals)
    return T.grad_check(lambda: _sq_sum(T.maxpool_time(x, 3, 2, 1)), x)


def _check_gelu():
    x = Tensor(_rand((5, 4), 21))
    return T.grad_check(lambda: T.tensor_sum(T.gelu(x)), x)


def _check_dropout():
    x = Tensor(_rand((4, 4), 22))

    def f():
        return T.tensor_sum(T.dropout(x, 0.3, "train", np.random.default_rng(99)))

    return T.grad_check(f, x)


def _check_softmax():
    x = Tensor(_rand((3, 5), 23))
    w = _rand((3, 5), 24)
    return T.grad_check(lambda: T.tensor_sum(T.mul(T.softmax_lastdim(x), w)), x)


def _check_shape_ops():
    x = Tensor(_rand((2, 3, 8, 2), 25))
    r = T.grad_check(
        lambda: _sq_sum(T.transpose(T.reshape(x, (2, 3, 16)), (2, 1, 0))), x
    )
    s = T.grad_check(lambda: _sq_sum(T.slice_time(x, 2, 6)), x)
    u = T.grad_check(
        lambda: _sq_sum(T.tensor_sum(x, axis=(0, 2), keepdims=True)), x
    )
    q = Tensor(np.abs(_rand((4,), 26)) + 1.0)
    v = T.grad_check(lambda: T.tensor_sum(T.sqrt(q)), q)
    return max(r, s, u, v)


def _check_wn_conv():
    layer = WeightNormConv(2, 3, 3, pad_t=1, rng=np.random.default_rng(27))
    x = Tensor(_rand((1, 2, 6, 2), 28))
    return T.grad_check(lambda: _sq_sum(layer.forward(x)),
                        [layer.v, layer.g, layer.bias])


def _check_embedding():
    emb = ValueEmbedding(4, rng=np.random.default_rng(29))
    x = Tensor(_rand((1, 1, 6, 2), 30))
    return T.grad_check(lambda: _sq_sum(emb.forward(x)), emb.parameters())


def _check_linear_head():
    head = LinearHead(6, 3, rng=np.random.default_rng(31))
    x = Tensor(_rand((2, 6, 2), 32))
    return T.grad_check(lambda: _sq_sum(head.forward(x)), [head.weight, head.bias, x])


def _check_attention():
    mha = MultiHeadAttention(4, heads=2, rng=np.random.default_rng(33))
    x = Tensor(_rand((2, 3, 4), 34))
    return T.grad_check(lambda: _sq_sum(mha.forward(x)),
                        [mha.w_q, mha.w_k, mha.w_v, mha.w_o])


def _check_dfe_block():
    block = DFEInitialBlock(4, 0.1, _StreamAllocator(35, 0), _StreamAllocator(35, 1))
    x = Tensor(_rand((1, 4, 6, 2), 36))
    params = list(block.named_parameters("b").values())
    return T.grad_check(lambda: _sq_sum(block.forward(x, "eval")), params)


def _check_icom_block():
    block = DFEICOMBlock(4, 1, 0.1, _StreamAllocator(37, 0), _StreamAllocator(37, 1))
    x = Tensor(_rand((1, 4, 6, 2), 38))
    params = list(block.named_parameters("b").values())
    return T.grad_check(lambda: _sq_sum(block.forward(x, "eval")), params)


def _tiny_model_check(variant: str):
    model = build_model(variant, l_in=16, l_out=4, f=2, alpha=0.5, n_layers=2,
                        embed_dim=4, seed=4321)
    x = Tensor(_rand((1, 1, 16, 2), 39))
    target = _rand((1, 4, 2), 40)

    def f():
        pred, _ = model.forward(x, "eval")
        diff = T.sub(pred, target)
        return T.mean_all(T.mul(diff, diff))

    return T.grad_check(f, model.parameters())


_CHECKS: list[tuple[str, tuple[str, ...], object]] = [
    ("elementwise", ("add", "sub", "mul", "div", "neg"), _check_elementwise),
    ("matmul", ("matmul",), _check_matmul),
    ("conv2d_time", ("conv2d_time",), _check_conv),
    ("maxpool_time", ("maxpool_time",), _check_maxpool),
    ("gelu", ("gelu",), _check_gelu),
    ("dropout", ("dropout",), _check_dropout),
    ("softmax_lastdim", ("softmax_lastdim",), _check_softmax),
    ("shape_ops", ("reshape", "transpose", "slice_time", "sum", "sqrt"), _check_shape_ops),
    ("weight_norm_conv", ("conv2d_time", "sqrt", "mul", "div", "sum"), _check_wn_conv),
    ("value_embedding", ("conv2d_time",), _check_embedding),
    ("linear_head", ("conv2d_time", "reshape"), _check_linear_head),
    ("attention", ("matmul", "softmax_lastdim", "reshape", "transpose"), _check_attention),
    ("dfe_block", ("conv2d_time", "gelu", "dropout", "add", "sqrt", "div", "mul", "sum"),
     _check_dfe_block),
    ("icom_block", ("conv2d_time", "maxpool_time", "matmul", "softmax_lastdim",
                    "gelu", "dropout", "add", "reshape", "transpose"),
     _check_icom_block),
    ("fdnet_tiny_end_to_end", ("conv2d_time", "gelu", "dropout", "add", "sub", "mul",
                               "reshape", "slice_time", "sum", "sqrt", "div"),
     lambda: _tiny_model_check("fdnet")),
    ("funet_tiny_end_to_end", ("conv2d_time", "maxpool_time", "matmul",
                               "softmax_lastdim", "transpose", "slice_time"),
     lambda: _tiny_model_check("funet")),
]


def coverage() -> set[str]:
    covered: set[str] = set()
    for _, ops, _ in _CHECKS:
        covered.update(ops)
    return covered


def check_names() -> list[str]:
    return [name for name, _, _ in _CHECKS]


@contextlib.contextmanager
def _corrupted_backward(op_name: str):
    """Mis-scale the upstream gradient flowing through one op by 1%."""
    if op_name not in DIFFERENTIABLE_OPS:
        raise ValueError(f"unknown op {op_name!r}; registered: {DIFFERENTIABLE_OPS}")
    target = T.tensor_sum if op_name == "sum" else getattr(T, op_name)

    def wrapper(*args, **kwargs):
        out = target(*args, **kwargs)
        original = out._backward
        if original is not None:
            def corrupted():
                out.grad = out.grad * 1.01
                original()
            out._backward = corrupted
        return out

    attr = "tensor_sum" if op_name == "sum" else op_name
    setattr(T, attr, wrapper)
    try:
        yield
    finally:
        setattr(T, attr, target)


def run_gradient_checks(corrupt_op: str | None = None,
                        tolerance: float = DEFAULT_TOLERANCE) -> list[CheckResult]:
    """Run every check; with `corrupt_op`, checks covering it should fail.

    Each result reports the ops actually recorded during its run (traced),
    so coverage statements cannot drift from the implementations.
    """
    results = []
    ctx = _corrupted_backward(corrupt_op) if corrupt_op else contextlib.nullcontext()
    with ctx:
        for name, _, fn in _CHECKS:
            T._op_trace = []
            try:
                error = float(fn())
                observed = tuple(sorted(set(T._op_trace)))
            finally:
                T._op_trace = None
            results.append(CheckResult(name=name, ops=observed, error=error,
                                       tolerance=tolerance))
    return results
