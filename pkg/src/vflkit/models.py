"""Per-party model pieces: linear blocks and the split one-hidden-layer MLP.

A LinearBlock holds one party's weight column for (he_)linear and
logistic regression. The split network is two halves: members own
ReLU(X*W1 + b1) embedding layers, the master owns the head that
concatenates member activations and produces the logit. Blocks expose
forward/backward and mutate their own parameters under plain SGD;
protocols move the tensors between parties.

The bias term of the regression models lives on the master only, as an
appended constant column, so no intercept is duplicated across parties.
"""

from __future__ import annotations

import math
from random import Random

from .errors import ProtocolStateError, ShapeError
from .tensor import Tensor, axpy, matmul, transpose


def sigmoid(z: float) -> float:
    """Logistic function, stable for large |z|."""
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def softplus(z: float) -> float:
    """log(1 + exp(z)) without overflow."""
    return math.log1p(math.exp(-abs(z))) + max(z, 0.0)


def relu(t: Tensor) -> Tensor:
    return Tensor(t.rows, t.cols, tuple(v if v > 0.0 else 0.0 for v in t.data))


def relu_mask(pre: Tensor) -> Tensor:
    """Derivative of ReLU at the cached pre-activations (0 at the kink)."""
    return Tensor(pre.rows, pre.cols, tuple(1.0 if v > 0.0 else 0.0 for v in pre.data))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise product of {a.shape} and {b.shape}")
    return Tensor(a.rows, a.cols, tuple(x * y for x, y in zip(a.data, b.data)))


def add_row_bias(t: Tensor, bias: Tensor) -> Tensor:
    """Add a (1 x cols) bias row to every row of t."""
    if bias.rows != 1 or bias.cols != t.cols:
        raise ShapeError(f"bias {bias.shape} does not broadcast over {t.shape}")
    data = []
    for i in range(t.rows):
        base = i * t.cols
        for j in range(t.cols):
            data.append(t.data[base + j] + bias.data[j])
    return Tensor(t.rows, t.cols, tuple(data))


def colsum(t: Tensor) -> Tensor:
    """Column sums as a (1 x cols) tensor, accumulated in row order."""
    ones = Tensor(1, t.rows, (1.0,) * t.rows)
    return matmul(ones, t)


def init_uniform(rows: int, cols: int, fan_in: int, rng: Random) -> Tensor:
    """Row-major uniform draws in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(
        rows, cols, tuple(rng.uniform(-bound, bound) for _ in range(rows * cols))
    )


class LinearBlock:
    """One party's weight column w_k (d_k x 1)."""

    def __init__(self, weights: Tensor) -> None:
        if weights.cols != 1:
            raise ShapeError(f"linear weights must be a column, got {weights.shape}")
        self.weights = weights

    @classmethod
    def init(cls, d: int, rng: Random) -> "LinearBlock":
        return cls(init_uniform(d, 1, d, rng))

    def forward_partial(self, x_batch: Tensor) -> Tensor:
        return matmul(x_batch, self.weights)

    def backward_partial(self, x_batch: Tensor, d: Tensor, lr: float, batch: int) -> None:
        """SGD step: weights -= (lr / batch) * X^T d."""
        grad = matmul(transpose(x_batch), d)
        self.weights = axpy(-lr / batch, grad, self.weights)


class MemberMLP:
    """Member half of the split network: one ReLU layer."""

    def __init__(self, w1: Tensor, b1: Tensor) -> None:
        if b1.rows != 1 or b1.cols != w1.cols:
            raise ShapeError(f"bias {b1.shape} does not fit layer {w1.shape}")
        self.w1 = w1
        self.b1 = b1
        self._cache: tuple[Tensor, Tensor] | None = None

    @classmethod
    def init(cls, d: int, hidden: int, rng: Random) -> "MemberMLP":
        w1 = init_uniform(d, hidden, d, rng)
        b1 = init_uniform(1, hidden, d, rng)
        return cls(w1, b1)

    def forward(self, x_batch: Tensor) -> Tensor:
        pre = add_row_bias(matmul(x_batch, self.w1), self.b1)
        self._cache = (x_batch, pre)
        return relu(pre)

    def backward(self, d_act: Tensor, lr: float, batch: int) -> None:
        if self._cache is None:
            raise ProtocolStateError("member backward without a cached forward pass")
        x_batch, pre = self._cache
        self._cache = None
        d_pre = hadamard(d_act, relu_mask(pre))
        grad_w = matmul(transpose(x_batch), d_pre)
        self.w1 = axpy(-lr / batch, grad_w, self.w1)
        self.b1 = axpy(-lr / batch, colsum(d_pre), self.b1)


class MasterHead:
    """Master half of the split network: linear head over concatenated
    member activations, plus the scalar bias."""

    def __init__(self, w2: Tensor, b2: Tensor) -> None:
        if w2.cols != 1 or b2.shape != (1, 1):
            raise ShapeError(f"head wants column weights and a 1x1 bias, "
                             f"got {w2.shape} and {b2.shape}")
        self.w2 = w2
        self.b2 = b2
        self._cache: Tensor | None = None

    @classmethod
    def init(cls, h_total: int, rng: Random) -> "MasterHead":
        w2 = init_uniform(h_total, 1, h_total, rng)
        b2 = init_uniform(1, 1, h_total, rng)
        return cls(w2, b2)

    def forward(self, acts: Tensor) -> Tensor:
        z = matmul(acts, self.w2)
        bias = self.b2.data[0]
        out = Tensor(z.rows, 1, tuple(v + bias for v in z.data))
        self._cache = acts
        return out

    def backward(self, d_z: Tensor, lr: float, batch: int) -> Tensor:
        """Update head parameters; return dL/d(activations) computed
        against the pre-update weights."""
        if self._cache is None:
            raise ProtocolStateError("head backward without a cached forward pass")
        acts = self._cache
        self._cache = None
        d_acts = matmul(d_z, transpose(self.w2))
        grad_w = matmul(transpose(acts), d_z)
        self.w2 = axpy(-lr / batch, grad_w, self.w2)
        self.b2 = axpy(-lr / batch, colsum(d_z), self.b2)
        return d_acts
