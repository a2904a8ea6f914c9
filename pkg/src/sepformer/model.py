"""End-to-end separation model: convolutional encoder, dual-path transformer
masking network (chunking, intra/inter stacks, mask head, overlap-add), and
transposed-convolution decoder.

Internally the masking network works time-major ([T', F] and [Nc, C, F]) so
that layer norms, linears, and attention all act on the last axis; the
public operations keep the feature-major [F, T'] encoder layout.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ConfigurationError, DataError, InternalError
from .tensor import Tensor
from .transformer import (
    LayerNormParams,
    LinearParams,
    TransformerStackParams,
    transformer_stack,
    xavier_uniform,
)

CHECKPOINT_MAGIC = b"SEPF"
CHECKPOINT_VERSION = 1


@dataclass
class ChunkedRepresentation:
    """Overlapping chunks of an encoded sequence, plus inversion metadata.

    ``chunks`` is stored [Nc, C, F] (chunk-major) so each chunk is a ready
    attention batch entry; it carries the same content as a [F, C, Nc] view.
    """

    chunks: Tensor  # [Nc, C, F]
    original_len: int  # T' before padding
    padded_len: int  # T'' after zero padding
    hop: int

    @property
    def n_chunks(self) -> int:
        return self.chunks.shape[0]


def chunk(h: Tensor, chunk_size: int) -> ChunkedRepresentation:
    """Split [F, T'] into 50%-overlapping chunks of ``chunk_size`` frames.

    The input is right-padded with zeros to hop*ceil(T'/hop) + hop frames so
    every original frame is covered and the split is exactly invertible.
    """
    if chunk_size < 2 or chunk_size % 2 != 0:
        raise ConfigurationError(f"chunk_size must be even and >= 2, got {chunk_size}")
    if h.ndim != 2:
        raise ConfigurationError(f"chunk expects [F, T'], got shape {h.shape}")
    f, t_len = h.shape
    hop = chunk_size // 2
    padded = hop * int(np.ceil(t_len / hop)) + hop
    ht = h.permute(1, 0)  # [T', F]
    if padded > t_len:
        pad = T.Tensor(np.zeros((padded - t_len, f), dtype=h.dtype))
        ht = T.concat([ht, pad], axis=0)
    windows = T.unfold_rows(ht, chunk_size, hop)  # [Nc, C, F]
    return ChunkedRepresentation(windows, original_len=t_len, padded_len=padded, hop=hop)


def overlap_add(chunked: ChunkedRepresentation) -> Tensor:
    """Invert :func:`chunk`: scatter-add at hop offsets, divide each frame by
    its coverage count, trim the padding. Returns [F, T']."""
    chunks = chunked.chunks
    if chunks.ndim != 3 or chunks.shape[1] != 2 * chunked.hop:
        raise InternalError(
            f"overlap_add metadata inconsistent with chunk tensor {chunks.shape}"
        )
    expected = (chunked.padded_len - chunks.shape[1]) // chunked.hop + 1
    if expected != chunks.shape[0]:
        raise InternalError(
            f"overlap_add expected {expected} chunks, got {chunks.shape[0]}"
        )
    summed = T.fold_rows(chunks, chunked.hop, chunked.padded_len)  # [T'', F]
    coverage = T._scatter_rows(
        np.ones((chunks.shape[0], chunks.shape[1], 1), dtype=chunks.dtype),
        chunked.hop,
        chunked.padded_len,
    )
    out = summed * T.Tensor(1.0 / coverage)
    return out[: chunked.original_len].permute(1, 0)


class SepFormerModel:
    """Complete parameter set with deterministic seeded initialization."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        dtype = config.np_dtype
        f, k = config.n_filters, config.kernel_size

        self.encoder_weight = xavier_uniform(rng, k, f * k, (f, 1, k), dtype)
        self.encoder_bias = Tensor(np.zeros(f, dtype=dtype), requires_grad=True)
        self.input_norm = LayerNormParams.init(f, dtype)
        self.input_proj = LinearParams.init(rng, f, f, dtype)
        self.blocks: list[tuple[TransformerStackParams, TransformerStackParams]] = []
        for _ in range(config.n_repeats):
            intra = TransformerStackParams.init(
                rng, config.n_intra_layers, f, config.n_heads, config.ffn_dim,
                dtype, use_positional_encoding=config.use_positional_encoding,
            )
            inter = TransformerStackParams.init(
                rng, config.n_inter_layers, f, config.n_heads, config.ffn_dim,
                dtype, use_positional_encoding=config.use_positional_encoding,
            )
            self.blocks.append((intra, inter))
        # slope 0.25 per channel is the usual PReLU starting point
        self.prelu_alpha = Tensor(np.full(f, 0.25, dtype=dtype), requires_grad=True)
        self.source_proj = LinearParams.init(rng, f, f * config.n_sources, dtype)
        self.mask_ff1 = LinearParams.init(rng, f, f, dtype)
        self.mask_ff2 = LinearParams.init(rng, f, f, dtype)
        self.decoder_weight = xavier_uniform(rng, f * k, k, (f, 1, k), dtype)

    # -- parameter registry ---------------------------------------------
    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "encoder.weight", self.encoder_weight
        yield "encoder.bias", self.encoder_bias
        yield from self.input_norm.named_parameters("input_norm")
        yield from self.input_proj.named_parameters("input_proj")
        for i, (intra, inter) in enumerate(self.blocks):
            yield from intra.named_parameters(f"blocks.{i}.intra")
            yield from inter.named_parameters(f"blocks.{i}.inter")
        yield "mask_head.prelu_alpha", self.prelu_alpha
        yield from self.source_proj.named_parameters("mask_head.source_proj")
        yield from self.mask_ff1.named_parameters("mask_head.ff1")
        yield from self.mask_ff2.named_parameters("mask_head.ff2")
        yield "decoder.weight", self.decoder_weight

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- forward operations ----------------------------------------------
    def encode(self, x: Tensor) -> Tensor:
        """Waveform [T] -> nonnegative encoding [F, T']."""
        if x.ndim != 1:
            raise ConfigurationError(f"encode expects a 1-D waveform, got {x.shape}")
        frames = x.reshape(1, x.shape[0])
        return T.relu(
            T.conv1d(frames, self.encoder_weight, self.encoder_bias, self.config.stride)
        )

    def sepformer_block(self, chunks: Tensor) -> Tensor:
        """Alternate within-chunk and across-chunk transformer stacks.

        Input/output [Nc, C, F]. Each repeat runs the intra stack over the
        chunk axis, permutes chunk/position, runs the inter stack over the
        chunk index, and permutes back.
        """
        out = chunks
        for intra, inter in self.blocks:
            out = transformer_stack(out, intra)  # sequences of length C
            out = out.permute(1, 0, 2)  # [C, Nc, F]
            out = transformer_stack(out, inter)  # sequences of length Nc
            out = out.permute(1, 0, 2)
        return out

    def masking_forward(self, h: Tensor) -> list[Tensor]:
        """Encoding [F, T'] -> one nonnegative mask [F, T'] per source."""
        cfg = self.config
        ht = h.permute(1, 0)  # [T', F]
        ht = self.input_proj(self.input_norm(ht))
        chunked = chunk(ht.permute(1, 0), cfg.chunk_size)
        mixed = self.sepformer_block(chunked.chunks)
        mixed = T.prelu(mixed, self.prelu_alpha)
        per_source = self.source_proj(mixed)  # [Nc, C, F*Ns]
        masks = []
        for s in range(cfg.n_sources):
            sliced = per_source[:, :, s * cfg.n_filters : (s + 1) * cfg.n_filters]
            folded = overlap_add(
                ChunkedRepresentation(sliced, chunked.original_len, chunked.padded_len, chunked.hop)
            )  # [F, T']
            flat = folded.permute(1, 0)
            mask = T.relu(self.mask_ff2(self.mask_ff1(flat)))
            masks.append(mask.permute(1, 0))
        return masks

    def decode(self, mask: Tensor, h: Tensor) -> Tensor:
        """Masked encoding -> waveform of length (T'-1)*stride + kernel."""
        if mask.shape != h.shape:
            raise ConfigurationError(
                f"mask shape {mask.shape} does not match encoding {h.shape}"
            )
        out = T.conv1d_transpose(mask * h, self.decoder_weight, self.config.stride)
        return out.reshape(out.shape[1])

    def separate(self, x: Tensor) -> list[Tensor]:
        """Mixture waveform [T] -> one estimate [T] per source."""
        t_len = x.shape[0]
        h = self.encode(x)
        masks = self.masking_forward(h)
        outputs = []
        for mask in masks:
            est = self.decode(mask, h)
            if est.shape[0] < t_len:
                pad = T.Tensor(np.zeros(t_len - est.shape[0], dtype=est.dtype))
                est = T.concat([est, pad], axis=0)
            elif est.shape[0] > t_len:
                est = est[:t_len]
            outputs.append(est)
        return outputs


# ---------------------------------------------------------------------------
# Parameter accounting
# ---------------------------------------------------------------------------


def parameter_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Name and shape of every trainable tensor, without allocating them."""
    f, k, ns = config.n_filters, config.kernel_size, config.n_sources
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("encoder.weight", (f, 1, k)),
        ("encoder.bias", (f,)),
        ("input_norm.gain", (f,)),
        ("input_norm.bias", (f,)),
        ("input_proj.weight", (f, f)),
        ("input_proj.bias", (f,)),
    ]

    def layer(prefix: str) -> list[tuple[str, tuple[int, ...]]]:
        d_ff = config.ffn_dim
        out = [(f"{prefix}.norm1.gain", (f,)), (f"{prefix}.norm1.bias", (f,))]
        for lin in ("wq", "wk", "wv", "wo"):
            out += [(f"{prefix}.{lin}.weight", (f, f)), (f"{prefix}.{lin}.bias", (f,))]
        out += [(f"{prefix}.norm2.gain", (f,)), (f"{prefix}.norm2.bias", (f,))]
        out += [(f"{prefix}.ff1.weight", (f, d_ff)), (f"{prefix}.ff1.bias", (d_ff,))]
        out += [(f"{prefix}.ff2.weight", (d_ff, f)), (f"{prefix}.ff2.bias", (f,))]
        return out

    for i in range(config.n_repeats):
        for j in range(config.n_intra_layers):
            shapes += layer(f"blocks.{i}.intra.layers.{j}")
        for j in range(config.n_inter_layers):
            shapes += layer(f"blocks.{i}.inter.layers.{j}")
    shapes += [
        ("mask_head.prelu_alpha", (f,)),
        ("mask_head.source_proj.weight", (f, f * ns)),
        ("mask_head.source_proj.bias", (f * ns,)),
        ("mask_head.ff1.weight", (f, f)),
        ("mask_head.ff1.bias", (f,)),
        ("mask_head.ff2.weight", (f, f)),
        ("mask_head.ff2.bias", (f,)),
        ("decoder.weight", (f, 1, k)),
    ]
    return shapes


def parameter_count(config: ModelConfig) -> int:
    """Total trainable scalars for a configuration."""
    return sum(int(np.prod(shape)) for _, shape in parameter_shapes(config))


def parameter_breakdown(config: ModelConfig) -> dict[str, int]:
    """Per-component parameter totals, grouped by the leading name segments."""
    groups: dict[str, int] = {}
    for name, shape in parameter_shapes(config):
        parts = name.split(".")
        key = ".".join(parts[:3]) if parts[0] == "blocks" else parts[0]
        groups[key] = groups.get(key, 0) + int(np.prod(shape))
    return groups


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------


def save_checkpoint(model: SepFormerModel, path) -> None:
    """Write magic, version, config JSON, and every named parameter as
    (name, shape, float64 little-endian values)."""
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    cfg = model.config.to_json().encode("utf-8")
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    params = list(model.named_parameters())
    blob += struct.pack("<I", len(params))
    for name, p in params:
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", p.ndim)
        blob += struct.pack(f"<{p.ndim}I", *p.shape)
        blob += np.ascontiguousarray(p.data, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> SepFormerModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    view = memoryview(raw)
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"not a model checkpoint (bad magic): {path}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, 8)
    offset = 12
    config = ModelConfig.from_json(bytes(view[offset : offset + cfg_len]).decode("utf-8"))
    offset += cfg_len
    (n_params,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    model = SepFormerModel(config, seed=0)
    registry = dict(model.named_parameters())
    if len(registry) != n_params:
        raise DataError(
            f"checkpoint holds {n_params} tensors, model defines {len(registry)}"
        )
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = bytes(view[offset : offset + name_len]).decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        if name not in registry:
            raise DataError(f"checkpoint tensor {name!r} unknown to this model")
        target = registry[name]
        if tuple(shape) != target.shape:
            raise DataError(
                f"checkpoint tensor {name!r} has shape {tuple(shape)}, expected {target.shape}"
            )
        target.data[...] = values.reshape(shape).astype(config.np_dtype)
    return model
