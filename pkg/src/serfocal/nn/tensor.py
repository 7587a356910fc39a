import numpy as np


class Tensor:
    """A value buffer with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data, requires_grad=True):
        self.data = np.asarray(data)
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.grad is not None)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"
