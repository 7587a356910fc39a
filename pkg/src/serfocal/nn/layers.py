"""Stateful layers wrapping the kernels in ``functional``.

A layer caches what it needs during ``forward`` and accumulates parameter
gradients into ``Tensor.grad`` during ``backward``. One forward, one
backward; layers are not re-entrant.
"""

import numpy as np

from serfocal.nn import functional as F
from serfocal.nn.tensor import Tensor


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Layer:
    kind = "layer"

    def parameters(self):
        """Trainable tensors, as ``{name: Tensor}``."""
        return {}

    def buffers(self):
        """Non-trainable state, as ``{name: ndarray}``."""
        return {}

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def num_params(self):
        return sum(p.size for p in self.parameters().values())

    def output_shape(self, shape):
        return shape


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, in_ch, out_ch, kernel, stride=1, pad=0, bias=False,
                 rng=None, dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.stride, self.pad, self.kernel = stride, pad, kernel
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(he_normal(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype))
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype)) if bias else None
        self._cache = None

    def parameters(self):
        params = {"weight": self.weight}
        if self.bias is not None:
            params["bias"] = self.bias
        return params

    def forward(self, x, training=False):
        b = None if self.bias is None else self.bias.data
        out, self._cache = F.conv2d_forward(x, self.weight.data, b, self.stride, self.pad)
        return out

    def backward(self, dout):
        dx, dw, db = F.conv2d_backward(dout, self._cache)
        self.weight.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        return dx

    def output_shape(self, shape):
        n, _, h, w = shape
        return (n, self.weight.shape[0],
                F.conv_output_size(h, self.kernel, self.stride, self.pad),
                F.conv_output_size(w, self.kernel, self.stride, self.pad))


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, channels, dtype=np.float32, eps=F.BN_EPS, momentum=F.BN_MOMENTUM):
        self.gamma = Tensor(np.ones(channels, dtype=dtype))
        self.beta = Tensor(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps, self.momentum = eps, momentum
        self._cache = None

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, training=False):
        out, self._cache = F.batchnorm_forward(
            x, self.gamma.data, self.beta.data, self.running_mean, self.running_var,
            training, self.eps, self.momentum)
        return out

    def backward(self, dout):
        dx, dgamma, dbeta = F.batchnorm_backward(dout, self._cache)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        out, self._mask = F.relu_forward(x)
        return out

    def backward(self, dout):
        return F.relu_backward(dout, self._mask)


class MaxPool2d(Layer):
    kind = "maxpool"

    def __init__(self, kernel=3, stride=2, pad=1):
        self.kernel, self.stride, self.pad = kernel, stride, pad

    def forward(self, x, training=False):
        out, self._cache = F.maxpool_forward(x, self.kernel, self.stride, self.pad)
        return out

    def backward(self, dout):
        return F.maxpool_backward(dout, self._cache)

    def output_shape(self, shape):
        n, c, h, w = shape
        return (n, c,
                F.conv_output_size(h, self.kernel, self.stride, self.pad),
                F.conv_output_size(w, self.kernel, self.stride, self.pad))


class GlobalAvgPool(Layer):
    kind = "avgpool"

    def forward(self, x, training=False):
        out, self._shape = F.global_avg_pool_forward(x)
        return out

    def backward(self, dout):
        return F.global_avg_pool_backward(dout, self._shape)

    def output_shape(self, shape):
        return shape[:2]


class Linear(Layer):
    kind = "fc"

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.weight = Tensor(he_normal(rng, (out_features, in_features), in_features, dtype))
        self.bias = Tensor(np.zeros(out_features, dtype=dtype))

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, training=False):
        out, self._cache = F.linear_forward(x, self.weight.data, self.bias.data)
        return out

    def backward(self, dout):
        dx, dw, db = F.linear_backward(dout, self._cache)
        self.weight.grad += dw
        self.bias.grad += db
        return dx

    def output_shape(self, shape):
        return (shape[0], self.weight.shape[0])
