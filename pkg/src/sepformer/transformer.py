"""Transformer building blocks: positional encoding, multi-head attention,
a pre-norm transformer layer with a double residual, and the K-layer stack
with an outer skip connection.

All sequence ops accept either a single sequence [L, D] or a batch
[B, L, D]; parameters are shared across the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .tensor import Tensor


def positional_encoding(seq_len: int, d_model: int, dtype=np.float64) -> Tensor:
    """Sinusoidal position table [seq_len, d_model]; constant, not trained.

    Even columns carry sin(pos / 10000^(2i/d)), odd columns the matching cos.
    """
    if d_model % 2 != 0:
        raise ConfigurationError(f"positional encoding needs even d_model, got {d_model}")
    if seq_len < 1:
        raise ConfigurationError("positional encoding needs seq_len >= 1")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / d_model)
    table = np.empty((seq_len, d_model), dtype=dtype)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return Tensor(table)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


@dataclass
class LinearParams:
    weight: Tensor  # [D_in, D_out]
    bias: Tensor  # [D_out]

    @classmethod
    def init(cls, rng, d_in: int, d_out: int, dtype) -> "LinearParams":
        return cls(
            weight=xavier_uniform(rng, d_in, d_out, (d_in, d_out), dtype),
            bias=Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


@dataclass
class LayerNormParams:
    gain: Tensor  # [D]
    bias: Tensor  # [D]
    eps: float = 1e-8

    @classmethod
    def init(cls, d: int, dtype) -> "LayerNormParams":
        return cls(
            gain=Tensor(np.ones(d, dtype=dtype), requires_grad=True),
            bias=Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.bias", self.bias


@dataclass
class TransformerLayerParams:
    """One pre-norm layer: LN -> MHA, then LN -> FFW with a double residual."""

    norm1: LayerNormParams
    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    wo: LinearParams
    norm2: LayerNormParams
    ff1: LinearParams
    ff2: LinearParams
    n_heads: int

    @classmethod
    def init(cls, rng, d_model: int, n_heads: int, d_ff: int, dtype) -> "TransformerLayerParams":
        if d_model % n_heads != 0:
            raise ConfigurationError(
                f"model width {d_model} not divisible by {n_heads} heads"
            )
        return cls(
            norm1=LayerNormParams.init(d_model, dtype),
            wq=LinearParams.init(rng, d_model, d_model, dtype),
            wk=LinearParams.init(rng, d_model, d_model, dtype),
            wv=LinearParams.init(rng, d_model, d_model, dtype),
            wo=LinearParams.init(rng, d_model, d_model, dtype),
            norm2=LayerNormParams.init(d_model, dtype),
            ff1=LinearParams.init(rng, d_model, d_ff, dtype),
            ff2=LinearParams.init(rng, d_ff, d_model, dtype),
            n_heads=n_heads,
        )

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for name, part in (
            ("norm1", self.norm1),
            ("wq", self.wq),
            ("wk", self.wk),
            ("wv", self.wv),
            ("wo", self.wo),
            ("norm2", self.norm2),
            ("ff1", self.ff1),
            ("ff2", self.ff2),
        ):
            yield from part.named_parameters(f"{prefix}.{name}")


@dataclass
class TransformerStackParams:
    layers: list[TransformerLayerParams]
    use_positional_encoding: bool = True

    @classmethod
    def init(
        cls, rng, n_layers: int, d_model: int, n_heads: int, d_ff: int, dtype,
        use_positional_encoding: bool = True,
    ) -> "TransformerStackParams":
        if n_layers < 1:
            raise ConfigurationError("transformer stack needs at least one layer")
        return cls(
            layers=[
                TransformerLayerParams.init(rng, d_model, n_heads, d_ff, dtype)
                for _ in range(n_layers)
            ],
            use_positional_encoding=use_positional_encoding,
        )

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}.layers.{i}")


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    # [B, L, D] -> [B, H, L, D/H]
    b, l, d = x.shape
    return x.reshape(b, l, n_heads, d // n_heads).permute(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    # [B, H, L, D/H] -> [B, L, D]
    b, h, l, dh = x.shape
    return x.permute(0, 2, 1, 3).reshape(b, l, h * dh)


def multi_head_attention(z: Tensor, params: TransformerLayerParams) -> Tensor:
    """Scaled dot-product attention over the full sequence, no masking."""
    squeeze = z.ndim == 2
    if squeeze:
        z = z.reshape(1, *z.shape)
    d = z.shape[-1]
    h = params.n_heads
    if d % h != 0:
        raise ConfigurationError(f"width {d} not divisible by {h} heads")
    dh = d // h

    q = _split_heads(params.wq(z), h)
    k = _split_heads(params.wk(z), h)
    v = _split_heads(params.wv(z), h)
    scores = (q @ k.permute(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    weights = T.softmax(scores)  # [B, H, L, L], rows sum to 1
    out = params.wo(_merge_heads(weights @ v))
    return out.reshape(*out.shape[1:]) if squeeze else out


def transformer_layer(z: Tensor, params: TransformerLayerParams) -> Tensor:
    """Pre-norm layer whose output residual carries both the attention
    output and the layer input."""
    attn = multi_head_attention(params.norm1(z), params)
    mid = attn + z
    ff = params.ff2(T.relu(params.ff1(params.norm2(mid))))
    return ff + mid


def transformer_stack(z: Tensor, params: TransformerStackParams) -> Tensor:
    """K chained layers applied to (z + positions), plus an outer skip of z.

    The position table is added once, before the first layer, and skipped
    entirely when the stack was built with use_positional_encoding=False.
    """
    seq_len, d = z.shape[-2], z.shape[-1]
    h = params.layers[0].n_heads
    if d % h != 0:
        raise ConfigurationError(f"width {d} not divisible by {h} heads")
    out = z
    if params.use_positional_encoding:
        out = out + positional_encoding(seq_len, d, dtype=z.dtype)
    for layer in params.layers:
        out = transformer_layer(out, layer)
    return out + z
