"""Dense 2-D float64 matrices with a fixed evaluation order.

Every reduction accumulates in ascending index order so that results are
bit-identical wherever they are computed (threaded run, separate processes,
different hosts). That rules out BLAS-style blocked or pairwise summation;
at prototyping scale the plain loops are fast enough.

Tensors are immutable after construction and safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import RowSelectError, ShapeError


@dataclass(frozen=True)
class Tensor:
    """Row-major matrix of 64-bit floats. `len(data) == rows * cols`."""

    rows: int
    cols: int
    data: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.rows < 0 or self.cols < 0:
            raise ShapeError(f"negative dimensions: {self.rows}x{self.cols}")
        if len(self.data) != self.rows * self.cols:
            raise ShapeError(
                f"data length {len(self.data)} does not match shape "
                f"{self.rows}x{self.cols}"
            )

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> Tensor:
        n = len(rows)
        m = len(rows[0]) if n else 0
        flat: list[float] = []
        for r in rows:
            if len(r) != m:
                raise ShapeError("ragged rows")
            flat.extend(float(v) for v in r)
        return cls(n, m, tuple(flat))

    @classmethod
    def from_flat(cls, rows: int, cols: int, values: Iterable[float]) -> Tensor:
        return cls(rows, cols, tuple(float(v) for v in values))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> Tensor:
        return cls(rows, cols, (0.0,) * (rows * cols))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def item(self, i: int, j: int) -> float:
        return self.data[i * self.cols + j]

    def row(self, i: int) -> tuple[float, ...]:
        return self.data[i * self.cols : (i + 1) * self.cols]

    def column(self, j: int) -> tuple[float, ...]:
        return self.data[j :: self.cols] if self.cols else ()

    def to_lists(self) -> list[list[float]]:
        return [list(self.row(i)) for i in range(self.rows)]


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b with the inner sum accumulated in ascending k order."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out: list[float] = [0.0] * (a.rows * b.cols)
    ad, bd = a.data, b.data
    bc = b.cols
    for i in range(a.rows):
        arow = ad[i * a.cols : (i + 1) * a.cols]
        base = i * bc
        for j in range(bc):
            acc = 0.0
            for k in range(a.cols):
                acc += arow[k] * bd[k * bc + j]
            out[base + j] = acc
    return Tensor(a.rows, b.cols, tuple(out))


def select_rows(a: Tensor, idx: Sequence[int]) -> Tensor:
    """Rows of `a` picked by `idx`, in order; duplicates allowed."""
    flat: list[float] = []
    for i in idx:
        if not 0 <= i < a.rows:
            raise RowSelectError(f"row index {i} out of range for {a.rows} rows")
        flat.extend(a.row(i))
    return Tensor(len(idx), a.cols, tuple(flat))


def axpy(alpha: float, x: Tensor, y: Tensor) -> Tensor:
    """Elementwise alpha*x + y."""
    if x.shape != y.shape:
        raise ShapeError(f"axpy shape mismatch: {x.shape} vs {y.shape}")
    return Tensor(
        x.rows, x.cols, tuple(alpha * xv + yv for xv, yv in zip(x.data, y.data))
    )


def transpose(a: Tensor) -> Tensor:
    flat: list[float] = []
    for j in range(a.cols):
        flat.extend(a.data[j :: a.cols])
    return Tensor(a.cols, a.rows, tuple(flat))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Horizontal concatenation, left to right."""
    if not parts:
        return Tensor.zeros(0, 0)
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(f"concat_cols row mismatch: {p.rows} vs {rows}")
    flat: list[float] = []
    for i in range(rows):
        for p in parts:
            flat.extend(p.row(i))
    return Tensor(rows, sum(p.cols for p in parts), tuple(flat))
