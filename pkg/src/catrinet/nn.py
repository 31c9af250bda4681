"""Parameter containers, basic layers and the ADAM optimizer."""

import math

import numpy as np

from .tensor import Parameter, Tensor, concat, layer_norm, sigmoid, tanh


class Module:
    """Owns parameters; discovers them through attributes in definition order."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


def xavier(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)))


class Linear(Module):
    def __init__(self, rng, d_in, d_out, bias=True):
        self.weight = xavier(rng, d_in, d_out)
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)


class LSTMCell(Module):
    """Single LSTM step; gate order input, forget, cell, output."""

    def __init__(self, rng, d_in, d_hidden):
        self.d_hidden = d_hidden
        self.w_x = xavier(rng, d_in, 4 * d_hidden)
        self.w_h = xavier(rng, d_hidden, 4 * d_hidden)
        b = np.zeros(4 * d_hidden)
        b[d_hidden:2 * d_hidden] = 1.0
        self.bias = Parameter(b)

    def zero_state(self, batch):
        z = np.zeros((batch, self.d_hidden))
        return Tensor(z), Tensor(z.copy())

    def __call__(self, x, state, mask=None):
        """One step.  ``mask`` (B,) keeps the previous state where it is 0."""
        h, c = state
        z = x @ self.w_x + h @ self.w_h + self.bias
        n = self.d_hidden
        i = sigmoid(z[..., :n])
        f = sigmoid(z[..., n:2 * n])
        g = tanh(z[..., 2 * n:3 * n])
        o = sigmoid(z[..., 3 * n:])
        c_new = f * c + i * g
        h_new = o * tanh(c_new)
        if mask is not None:
            m = np.broadcast_to(np.asarray(mask, dtype=np.float64)[:, None], h_new.shape)
            keep = 1.0 - m
            h_new = h_new * m + h * keep
            c_new = c_new * m + c * keep
        return h_new, c_new

    def run(self, xs, mask=None):
        """Feed a (B, T, d_in) sequence; return final (h, c)."""
        batch, steps = xs.shape[0], xs.shape[1]
        state = self.zero_state(batch)
        for t in range(steps):
            state = self(xs[:, t, :], state, None if mask is None else mask[:, t])
        return state


def cat(*tensors):
    return concat(tensors, axis=-1)


class Adam:
    def __init__(self, params, lr=4e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
