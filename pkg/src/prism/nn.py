"""Parameterized modules, the Adam optimizer, and finite-difference checks."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigurationError, NumericError


class ParamModule:
    """Base for anything holding named parameters with gradient buffers."""

    def __init__(self):
        self._params = {}
        self._children = {}

    def register(self, name, tensor):
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def parameters(self):
        """Flat name -> Tensor map, children prefixed with their name."""
        out = dict(self._params)
        for cname, child in self._children.items():
            for pname, p in child.parameters().items():
                out[f"{cname}.{pname}"] = p
        return out

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def astype(self, dtype):
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


class Linear(ParamModule):
    def __init__(self, in_dim, out_dim, rng, dtype=np.float32, scale=None):
        super().__init__()
        if scale is None:
            scale = 1.0 / np.sqrt(in_dim)
        w = rng.uniform(-scale, scale, size=(in_dim, out_dim)).astype(dtype)
        self.weight = self.register("weight", Tensor(w))
        self.bias = self.register("bias", Tensor(np.zeros(out_dim, dtype=dtype)))

    def __call__(self, x):
        if x.shape[-1] != self.weight.shape[0]:
            raise ConfigurationError(
                f"linear expects input dim {self.weight.shape[0]}, got {x.shape[-1]}"
            )
        flat = x if len(x.shape) == 2 else ag.reshape(x, (-1, x.shape[-1]))
        y = ag.add(ag.matmul(flat, self.weight), self.bias)
        if len(x.shape) != 2:
            y = ag.reshape(y, tuple(x.shape[:-1]) + (self.weight.shape[1],))
        return y


class MLP(ParamModule):
    """ReLU network: Linear -> ReLU -> ... -> Linear."""

    def __init__(self, dims, rng, dtype=np.float32):
        super().__init__()
        self.layers = [
            self.add_child(f"layer{i}", Linear(dims[i], dims[i + 1], rng, dtype))
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ag.relu(x)
        return x


class LayerNorm(ParamModule):
    def __init__(self, dim, dtype=np.float32, eps=1e-8):
        super().__init__()
        self.eps = eps
        self.gain = self.register("gain", Tensor(np.ones(dim, dtype=dtype)))
        self.bias = self.register("bias", Tensor(np.zeros(dim, dtype=dtype)))

    def __call__(self, x):
        return ag.layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(ParamModule):
    def __init__(self, rows, dim, rng, dtype=np.float32, scale=0.02, zero_row0=False):
        super().__init__()
        table = (rng.standard_normal((rows, dim)) * scale).astype(dtype)
        if zero_row0:
            table[0] = 0.0
        self.zero_row0 = zero_row0
        self.table = self.register("table", Tensor(table))

    def __call__(self, indices):
        return ag.take_rows(self.table, indices)


class Adam:
    """Bias-corrected adaptive-moment updates over a ParamModule."""

    def __init__(self, module, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.module = module
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in module.parameters().items()}
        self.v = {k: np.zeros_like(p.data) for k, p in module.parameters().items()}

    def step(self):
        self.step_count += 1
        t = self.step_count
        for name, p in self.module.parameters().items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / (1.0 - self.beta1**t)
            vhat = v / (1.0 - self.beta2**t)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


def grad_check(module, loss_fn, eps=1e-5):
    """Max relative error between analytic gradients and central differences.

    `loss_fn` must be a nullary callable returning a scalar Tensor computed
    from the module's current parameters. The module should be in float64.
    """
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    module.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data):
        raise NumericError("loss is non-finite during gradient check")
    loss.backward()
    analytic = {k: p.grad.copy() for k, p in module.parameters().items()}

    worst = 0.0
    for name, p in module.parameters().items():
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (up - down) / (2.0 * eps)
            a = analytic[name].reshape(-1)[i]
            # the 1e-3 floor turns the comparison into an absolute tolerance
            # of ~1e-8 for near-zero gradients, where central differences
            # carry round-off noise of order 1e-9 for O(1) losses
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            worst = max(worst, err)
    return worst
