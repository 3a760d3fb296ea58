"""Layers built on the tensor engine: convolutions, normalization and the
simplified Restormer block (channel attention + gated depthwise FFN)."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, ShapeError, Tensor


# residual branches start small so stacked blocks stay close to identity
BRANCH_GAIN = 0.1


class Module:
    """Parameter container; parameters are discovered by walking attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen = set()
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name, seen)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str = ""):
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        own = dict(self.named_parameters())
        if strict:
            missing = own.keys() - state.keys()
            extra = state.keys() - own.keys()
            if missing or extra:
                raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for name, p in own.items():
            if name in state:
                value = np.asarray(state[name])
                if value.shape != p.shape:
                    raise ShapeError(f"{name}: checkpoint shape {value.shape} vs model {p.shape}")
                p.data = value.astype(p.dtype)

    def __call__(self, *args, **kw):
        return self.forward(*args, **kw)


def _walk(value, name, seen):
    if isinstance(value, Parameter):
        if id(value) not in seen:
            seen.add(id(value))
            yield name, value
    elif isinstance(value, Module):
        for sub, v in vars(value).items():
            yield from _walk(v, f"{name}/{sub}", seen)
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value, 1):
            yield from _walk(v, f"{name}{i}", seen)


def kaiming(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), size=shape)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kind: str, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False, gain: float = 1.0):
        if kind == "depthwise3x3":
            if cin != cout:
                raise ShapeError("depthwise convolution keeps the channel count")
            shape, fan_in = (3, 3, cin), 9
        elif kind == "k3x3":
            shape, fan_in = (3, 3, cin, cout), 9 * cin
        elif kind == "k1x1":
            shape, fan_in = (cin, cout), cin
        else:
            raise ValueError(f"unknown conv kind {kind!r}")
        self.kind = kind
        self.kernel = Parameter(np.zeros(shape) if zero_init else kaiming(rng, shape, fan_in, gain))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.conv2d(x, self.kernel, self.kind)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-6):
        self.gain = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.eps = eps

    def forward(self, x):
        return T.layer_norm_channels(x, self.gain, self.bias, self.eps)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    return x / T.sqrt(T.sum(T.square(x), axis=axis, keepdims=True) + eps)


def channel_attention(x: Tensor, params: "ChannelAttention", heads: int, temperature: Tensor,
                      return_weights: bool = False):
    """Transposed self-attention: the attention matrix is (C/heads) x (C/heads)
    per head, built from L2-normalized per-channel descriptors over all pixels."""
    x = T.as_tensor(x)
    c = x.shape[-1]
    if c % heads:
        raise ShapeError(f"{heads} heads do not divide {c} channels")
    squeeze = x.ndim == 3
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    b, h, w, _ = x.shape
    ch = c // heads
    qkv = params.qkv_dw(params.qkv(x))

    def split(t):
        # (B, H, W, heads*ch) -> (B, heads, ch, H*W)
        return T.transpose(T.reshape(t, (b, h * w, heads, ch)), (0, 2, 3, 1))

    q = l2_normalize(split(qkv[..., :c]))
    k = l2_normalize(split(qkv[..., c:2 * c]))
    v = split(qkv[..., 2 * c:])
    logits = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * T.reshape(temperature, (1, heads, 1, 1))
    attn = T.softmax(logits, axis=-1)
    out = T.matmul(attn, v)
    out = T.reshape(T.transpose(out, (0, 3, 1, 2)), (b, h, w, c))
    out = params.project_out(out)
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return (out, attn) if return_weights else out


class ChannelAttention(Module):
    def __init__(self, channels: int, heads: int, rng: np.random.Generator):
        if channels % heads:
            raise ShapeError(f"{heads} heads do not divide {channels} channels")
        self.heads = heads
        self.temperature = Parameter(np.ones(heads))
        self.qkv = Conv2d(channels, 3 * channels, "k1x1", rng)
        self.qkv_dw = Conv2d(3 * channels, 3 * channels, "depthwise3x3", rng, bias=False)
        self.project_out = Conv2d(channels, channels, "k1x1", rng, gain=BRANCH_GAIN)

    def forward(self, x):
        return channel_attention(x, self, self.heads, self.temperature)


def gated_ffn(x: Tensor, params: "GatedFFN") -> Tensor:
    """Two parallel 1x1 -> depthwise 3x3 branches; gelu(branch1) * branch2, then 1x1 back."""
    y = params.dw(params.expand(x))
    hidden = y.shape[-1] // 2
    return params.project(T.gelu(y[..., :hidden]) * y[..., hidden:])


class GatedFFN(Module):
    def __init__(self, channels: int, expansion: float, rng: np.random.Generator):
        if expansion < 1:
            raise ValueError("FFN expansion must be >= 1")
        hidden = int(round(channels * expansion))
        self.expand = Conv2d(channels, 2 * hidden, "k1x1", rng)
        self.dw = Conv2d(2 * hidden, 2 * hidden, "depthwise3x3", rng, bias=False)
        self.project = Conv2d(hidden, channels, "k1x1", rng, gain=BRANCH_GAIN)

    def forward(self, x):
        return gated_ffn(x, self)


class RestormerBlock(Module):
    """Pre-normalized channel attention and gated FFN, each with a residual."""

    def __init__(self, channels: int, heads: int, expansion: float, rng: np.random.Generator):
        self.norm1 = LayerNorm(channels)
        self.attn = ChannelAttention(channels, heads, rng)
        self.norm2 = LayerNorm(channels)
        self.ffn = GatedFFN(channels, expansion, rng)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))
