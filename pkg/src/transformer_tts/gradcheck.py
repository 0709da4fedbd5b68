"""Central-difference verification of autodiff gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tolerance: float
    per_input: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:g})"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Elementwise ``|a - n| / (max(|a|, |n|) + floor)``, maximised."""
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.abs(analytic), np.abs(numeric)) + floor
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_difference_check(op: Callable[..., Tensor], input_shapes: Sequence[tuple[int, ...]],
                            tolerance: float = 1e-4, seed: int = 0, h: float = 1e-5,
                            name: str | None = None, inputs: Sequence[np.ndarray] | None = None,
                            ) -> GradCheckReport:
    """Compare autodiff against central differences for ``op(*inputs)``.

    The scalar probed is ``sum(op(*inputs) * R)`` with a fixed random ``R`` so
    that every output element contributes with a distinct weight.
    """
    rng = np.random.default_rng(seed)
    if inputs is None:
        arrays = [rng.standard_normal(s) for s in input_shapes]
    else:
        arrays = [np.array(a, dtype=np.float64) for a in inputs]
    probe_shape = op(*[Tensor(a) for a in arrays]).shape
    weights = rng.standard_normal(probe_shape)

    def scalar(vals):
        return float((op(*[Tensor(v) for v in vals]).data * weights).sum())

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*tensors)
    (out * weights).sum().backward()

    errors = []
    for i, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(arrays[i])
        flat = arrays[i].reshape(-1)
        nflat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = scalar(arrays)
            flat[j] = orig - h
            fm = scalar(arrays)
            flat[j] = orig
            nflat[j] = (fp - fm) / (2.0 * h)
        errors.append(relative_error(analytic, numeric))
    return GradCheckReport(name or getattr(op, "__name__", "op"), max(errors, default=0.0),
                           tolerance, errors)


# every differentiable primitive, with input shapes to probe
OP_CASES = {
    "matmul": (lambda a, b: T.matmul(a, b), [(3, 4), (4, 2)]),
    "batched_matmul": (lambda a, b: T.matmul(a, b), [(2, 3, 4), (2, 4, 5)]),
    "softmax": (T.softmax_lastdim, [(8,)]),
    "layer_norm": (lambda x, g, b: T.layer_norm(x, g, b), [(2, 6), (6,), (6,)]),
    "conv1d": (lambda x, k, b: T.conv1d(x, k, b), [(2, 7, 3), (5, 3, 4), (4,)]),
    "affine": (lambda x, w, b: T.affine(x, w, b), [(2, 3, 4), (4, 5), (5,)]),
    "add_broadcast": (lambda a, b: T.add(a, b), [(3, 4), (4,)]),
    "mul_broadcast": (lambda a, b: T.mul(a, b), [(3, 4), (3, 1)]),
    "sub": (lambda a, b: T.sub(a, b), [(3, 4), (3, 4)]),
    "tanh": (T.tanh, [(3, 5)]),
    "sigmoid": (T.sigmoid, [(3, 5)]),
    "exp": (T.exp, [(3, 5)]),
    "relu": (T.relu, [(4, 5)]),
    "log": (lambda a: T.log(T.exp(a) + 1.0), [(3, 4)]),
    "reciprocal": (lambda a: T.reciprocal(T.exp(a)), [(3, 4)]),
    "scale": (lambda a: T.scale(a, -2.5), [(3, 4)]),
    "tsum": (lambda a: T.tsum(a, axis=1), [(3, 4)]),
    "swap_last": (T.swap_last, [(2, 3, 4)]),
    "stack": (lambda a, b: T.stack([a, b], axis=1), [(3, 4), (3, 4)]),
    "dropout_train": (lambda a: T.dropout(a, 0.3, True, np.random.default_rng(0)), [(4, 6)]),
    "concat": (lambda a, b: T.concat([a, b], axis=-1), [(2, 3), (2, 4)]),
    "transpose_reshape": (lambda a: T.reshape(T.transpose(a, (1, 0, 2)), (3, 8)), [(2, 3, 4)]),
    "getitem": (lambda a: a[:, 1:3], [(3, 5)]),
    "mean": (lambda a: T.mean(a, axis=0), [(3, 5)]),
    "batch_norm_train": (
        lambda x, g, b: T.batch_norm_1d(x, g, b, np.zeros(3), np.ones(3), True),
        [(2, 5, 3), (3,), (3,)]),
    "batch_norm_masked": (
        lambda x, g, b: T.batch_norm_1d(x, g, b, np.zeros(3), np.ones(3), True,
                                        np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], bool)),
        [(2, 5, 3), (3,), (3,)]),
    "batch_norm_eval": (
        lambda x, g, b: T.batch_norm_1d(x, g, b, np.full(3, 0.3), np.full(3, 2.0), False),
        [(2, 5, 3), (3,), (3,)]),
    "embedding": (lambda t: T.embedding(t, [1, 3, 1, 0]), [(5, 3)]),
    "masked_mse": (lambda p: T.masked_mse(p, np.ones((2, 4, 3)),
                                          np.array([[1, 1, 0, 0], [1, 1, 1, 1]], bool)),
                   [(2, 4, 3)]),
    "bce_with_logits": (lambda z: T.bce_with_logits(z, np.array([[0, 0, 1.0], [0, 1, 0]]),
                                                    6.5), [(2, 3)]),
}


def check_all_ops(seeds=range(5), tolerance: float = 1e-4) -> list[GradCheckReport]:
    return [finite_difference_check(op, shapes, tolerance, seed=s, name=f"{name}[seed={s}]")
            for name, (op, shapes) in sorted(OP_CASES.items()) for s in seeds]
