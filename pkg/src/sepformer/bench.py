"""Forward-pass speed and memory benchmark across encoder strides and input
lengths.

Timing takes the median of repeated runs after warmup; memory is the
high-water mark of live tensor bytes during one forward pass (model
parameters included, since they stay resident). Runs pin the BLAS pools to
one thread by default so medians are stable on shared machines.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import io
import time
from dataclasses import dataclass
from statistics import median
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .config import ModelConfig
from .errors import UsageError
from .model import SepFormerModel
from .tensor import Tensor

BENCH_CSV_HEADER = ["seconds", "stride", "forward_ms", "peak_bytes"]


@dataclass
class BenchRecord:
    input_seconds: float
    stride: int
    chunk_size: int
    forward_ms: float  # median over repeats
    peak_bytes: int  # high-water live tensor bytes of the forward pass

    def __post_init__(self) -> None:
        if self.forward_ms <= 0:
            raise UsageError("forward_ms must be positive")


def _time_forward(model: SepFormerModel, x: np.ndarray, repeats: int, warmup: int):
    tracker = T.memory_tracker()
    times = []
    peak = 0
    with T.no_grad():
        for _ in range(warmup):
            model.separate(Tensor(x))
        for _ in range(repeats):
            tracker.reset_peak()
            start = time.perf_counter()
            model.separate(Tensor(x))
            times.append((time.perf_counter() - start) * 1000.0)
            peak = max(peak, tracker.peak_bytes)
    return median(times), peak


def run_bench(
    base_config: ModelConfig,
    strides: Sequence[int],
    seconds: Sequence[float],
    repeats: int = 5,
    warmup: int = 1,
    seed: int = 0,
    single_thread: bool = True,
) -> list[BenchRecord]:
    """One record per (stride, length) pair, deterministic inputs per seed."""
    if repeats < 5:
        raise UsageError(f"bench needs >= 5 repeats, got {repeats}")
    if warmup < 1:
        raise UsageError(f"bench needs >= 1 warmup run, got {warmup}")
    if not strides or not seconds:
        raise UsageError("bench needs at least one stride and one length")

    limits = threadpool_limits(limits=1) if single_thread else contextlib.nullcontext()
    records = []
    with limits:
        for stride in strides:
            config = dataclasses.replace(base_config, stride=int(stride))
            model = SepFormerModel(config, seed=seed)
            for sec in seconds:
                rng = np.random.default_rng((seed, int(stride), int(1000 * sec)))
                x = rng.standard_normal(int(sec * config.sample_rate)).astype(
                    config.np_dtype
                )
                ms, peak = _time_forward(model, x, repeats, warmup)
                records.append(
                    BenchRecord(
                        input_seconds=float(sec),
                        stride=int(stride),
                        chunk_size=config.chunk_size,
                        forward_ms=ms,
                        peak_bytes=peak,
                    )
                )
    return records


def bench_csv(records: Sequence[BenchRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(BENCH_CSV_HEADER)
    for r in records:
        writer.writerow([f"{r.input_seconds:g}", r.stride, f"{r.forward_ms:.3f}", r.peak_bytes])
    return buf.getvalue()
