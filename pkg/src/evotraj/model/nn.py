"""Neural-net building blocks in numpy with hand-written backward passes.

Everything runs in float64. Layers cache what their backward pass needs; call
order must be forward then backward, once per step. Gradients accumulate into
Parameter.grad until zero_grad().
"""

from __future__ import annotations

import math

import numpy as np

DTYPE = np.float64


class Parameter:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)


class Module:
    def parameters(self) -> dict[str, Parameter]:
        """Flat name -> Parameter map, recursing into child modules."""
        out: dict[str, Parameter] = {}
        for name, attr in vars(self).items():
            if isinstance(attr, Parameter):
                out[name] = attr
            elif isinstance(attr, Module):
                for sub, p in attr.parameters().items():
                    out[f"{name}.{sub}"] = p
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        for sub, p in item.parameters().items():
                            out[f"{name}.{i}.{sub}"] = p
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad[...] = 0.0


class Embedding(Module):
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        self.weight = Parameter(rng.normal(0.0, 0.02, size=(vocab_size, dim)))
        self._ids: np.ndarray | None = None

    def forward(self, ids: np.ndarray) -> np.ndarray:
        self._ids = ids
        return self.weight.value[ids]

    def backward(self, grad_out: np.ndarray) -> None:
        np.add.at(self.weight.grad, self._ids, grad_out)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        limit = math.sqrt(6.0 / (d_in + d_out))
        self.weight = Parameter(rng.uniform(-limit, limit, size=(d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        y = x @ self.weight.value
        if self.bias is not None:
            y += self.bias.value
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x2 = self._x.reshape(-1, self._x.shape[-1])
        g2 = grad_out.reshape(-1, grad_out.shape[-1])
        self.weight.grad += x2.T @ g2
        if self.bias is not None:
            self.bias.grad += g2.sum(axis=0)
        return grad_out @ self.weight.value.T


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim))
        self.shift = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._std = np.sqrt(var + self.eps)
        self._xhat = (x - mu) / self._std
        return self.gain.value * self._xhat + self.shift.value

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        xhat, std = self._xhat, self._std
        axes = tuple(range(grad_out.ndim - 1))
        self.gain.grad += (grad_out * xhat).sum(axis=axes)
        self.shift.grad += grad_out.sum(axis=axes)
        dxhat = grad_out * self.gain.value
        return (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        ) / std


class Gelu(Module):
    """tanh-approximation GELU."""

    _C = math.sqrt(2.0 / math.pi)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        self._tanh = np.tanh(self._C * (x + 0.044715 * x**3))
        return 0.5 * x * (1.0 + self._tanh)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x, t = self._x, self._tanh
        du = self._C * (1.0 + 3 * 0.044715 * x**2)
        return grad_out * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du)


def rope_angles(positions: np.ndarray, head_dim: int, base: float = 10_000.0) -> np.ndarray:
    """(len(positions), head_dim/2) rotation angles."""
    inv_freq = base ** (-np.arange(0, head_dim, 2, dtype=DTYPE) / head_dim)
    return positions[:, None].astype(DTYPE) * inv_freq[None, :]


def rope_rotate(x: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate feature pairs of x (..., T, head_dim) by per-position angles."""
    cos, sin = np.cos(angles), np.sin(angles)
    x_even, x_odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = x_even * cos - x_odd * sin
    out[..., 1::2] = x_even * sin + x_odd * cos
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=axis, keepdims=True)
    return shifted


class CausalSelfAttention(Module):
    """Multi-head causal self-attention with rotary position embeddings."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator, rope_base: float = 10_000.0):
        if dim % n_heads != 0:
            raise ValueError("hidden size must divide evenly into heads")
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        if self.head_dim % 2 != 0:
            raise ValueError("head dimension must be even for rotary embeddings")
        self.rope_base = rope_base
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def _split(self, x: np.ndarray) -> np.ndarray:
        b, t, _ = x.shape
        return x.reshape(b, t, self.n_heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        b, h, t, d = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * d)

    def forward(self, x: np.ndarray, positions: np.ndarray | None = None) -> np.ndarray:
        b, t, _ = x.shape
        if positions is None:
            positions = np.arange(t)
        self._angles = rope_angles(positions, self.head_dim, self.rope_base)
        q = self._split(self.wq.forward(x))
        k = self._split(self.wk.forward(x))
        v = self._split(self.wv.forward(x))
        qr = rope_rotate(q, self._angles)
        kr = rope_rotate(k, self._angles)

        scale = 1.0 / math.sqrt(self.head_dim)
        scores = (qr @ kr.transpose(0, 1, 3, 2)) * scale
        causal = np.tril(np.ones((t, t), dtype=bool))
        scores = np.where(causal, scores, -np.inf)
        attn = softmax(scores)
        ctx = attn @ v

        self._qr, self._kr, self._v, self._attn = qr, kr, v, attn
        return self.wo.forward(self._merge(ctx))

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        qr, kr, v, attn = self._qr, self._kr, self._v, self._attn
        scale = 1.0 / math.sqrt(self.head_dim)

        d_ctx = self._split(self.wo.backward(grad_out))
        d_attn = d_ctx @ v.transpose(0, 1, 3, 2)
        d_v = attn.transpose(0, 1, 3, 2) @ d_ctx
        # softmax jacobian; masked entries have attn == 0 so they vanish
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        d_scores *= scale
        d_qr = d_scores @ kr
        d_kr = d_scores.transpose(0, 1, 3, 2) @ qr
        # rotation is orthogonal: transpose = rotation by the negated angle
        d_q = rope_rotate(d_qr, -self._angles)
        d_k = rope_rotate(d_kr, -self._angles)

        dx = self.wq.backward(self._merge(d_q))
        dx += self.wk.backward(self._merge(d_k))
        dx += self.wv.backward(self._merge(d_v))
        return dx


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.up = Linear(dim, hidden, rng)
        self.act = Gelu()
        self.down = Linear(hidden, dim, rng)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.down.forward(self.act.forward(self.up.forward(x)))

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return self.up.backward(self.act.backward(self.down.backward(grad_out)))


class Block(Module):
    """Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, n_heads, rng)
        self.ln2 = LayerNorm(dim)
        self.mlp = FeedForward(dim, 4 * dim, rng)

    def forward(self, x: np.ndarray, positions: np.ndarray | None = None) -> np.ndarray:
        x = x + self.attn.forward(self.ln1.forward(x), positions)
        return x + self.mlp.forward(self.ln2.forward(x))

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        dx = grad_out + self.ln2.backward(self.mlp.backward(grad_out))
        return dx + self.ln1.backward(self.attn.backward(dx))
