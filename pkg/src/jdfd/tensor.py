"""Dense arrays with an optional gradient buffer.

Image tensors follow the (N, C, H, W) row-major layout everywhere. A plain
``numpy`` array is the value type of the kernel; ``Tensor`` couples one with
a same-shaped gradient buffer for learnable parameters and inputs under
gradient checks.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = (
            np.zeros_like(self.data) if requires_grad else None
        )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.grad is not None})"
