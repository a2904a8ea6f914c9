"""Command-line surface: dataset generation, training, separation,
evaluation, parameter inspection, and the stride/length benchmark.

Every command is deterministic given --seed (SEPFORMER_SEED is the
fallback) and fails with a one-line ``error: <Type>: <message>`` on stderr
and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import tensor as T
from .audio import AudioSignal, read_wav, write_wav
from .bench import bench_csv, run_bench
from .config import load_config_file
from .data import (
    MIXTURE_MANIFEST,
    read_bank,
    read_mixtures,
    synth_toy_bank,
    write_bank,
    write_mixtures,
)
from .errors import DataError, SepformerError, UsageError
from .losses import pit_loss, si_snr
from .model import (
    SepFormerModel,
    load_checkpoint,
    parameter_breakdown,
    parameter_count,
)
from .tensor import Tensor
from .training import (
    DynamicMixtures,
    FixedMixtures,
    fixed_training_set,
    train,
    validation_set,
)


def _default_seed() -> int:
    return int(os.environ.get("SEPFORMER_SEED", "0"))


def _add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seed", type=int, default=None,
        help="RNG seed (default: $SEPFORMER_SEED or 0)",
    )


def _resolve_seed(args, fallback: int | None = None) -> int:
    if args.seed is not None:
        return args.seed
    if fallback is not None:
        return fallback
    return _default_seed()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.sources < 1:
        raise UsageError(f"--sources must be >= 1, got {args.sources}")
    if args.seconds <= 0:
        raise UsageError(f"--seconds must be positive, got {args.seconds}")
    seed = _resolve_seed(args)
    length = int(round(args.seconds * args.sample_rate))
    bank = synth_toy_bank(
        args.sources, length, args.sample_rate, rng=np.random.default_rng(seed)
    )
    try:
        write_bank(bank, args.out)
        if args.mixtures > 0:
            if args.sources < args.mix_sources:
                raise UsageError(
                    f"pre-mixing {args.mix_sources} sources needs a bank of at least "
                    f"that many, got {args.sources}"
                )
            samples = fixed_training_set(bank, args.mix_sources, args.mixtures, seed)
            write_mixtures(samples, args.out)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {args.out}: {exc}") from exc
    print(f"wrote {args.sources} sources of {length} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg = load_config_file(
        args.config, train_overrides={"dynamic_mixing": args.dm}
    )
    seed = _resolve_seed(args, fallback=train_cfg.seed)
    train_cfg.seed = seed

    data_dir = Path(args.data)
    bank = read_bank(data_dir)
    if args.dm:
        feed = DynamicMixtures(
            bank, model_cfg.n_sources, train_cfg.steps_per_epoch, seed
        )
    else:
        manifest = data_dir / MIXTURE_MANIFEST
        if not manifest.exists():
            raise DataError(
                f"no {MIXTURE_MANIFEST} in {data_dir}; generate one with "
                "'gen-data --mixtures N' or pass --dm"
            )
        feed = FixedMixtures([s for _, s in read_mixtures(manifest)])
    val = validation_set(bank, model_cfg.n_sources, train_cfg.val_size, seed)

    model = SepFormerModel(model_cfg, seed=seed)
    clock = time.perf_counter
    if args.fixed_clock:
        counter = iter(range(1_000_000_000))
        clock = lambda: float(next(counter))  # noqa: E731
    state = train(
        model, feed, val, train_cfg, out_dir=Path(args.out), clock=clock,
        progress=lambda msg: print(msg, flush=True),
    )
    print(f"done: best val SI-SNRi {state.best_val_si_snri:+.3f} dB "
          f"after {state.epoch} epochs; artifacts in {args.out}")
    return 0


def cmd_separate(args) -> int:
    model = load_checkpoint(args.model)
    signal = read_wav(args.infile)
    if signal.sample_rate != model.config.sample_rate:
        raise DataError(
            f"sample-rate mismatch: input {signal.sample_rate} Hz, model "
            f"{model.config.sample_rate} Hz (no resampling is performed)"
        )
    with T.no_grad():
        estimates = model.separate(Tensor(signal.samples))
    for k, est in enumerate(estimates, start=1):
        out_path = f"{args.out_prefix}_{k}.wav"
        clipped = np.clip(est.data, -1.0, 1.0)
        write_wav(out_path, AudioSignal(clipped, signal.sample_rate))
        print(out_path)
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    entries = read_mixtures(args.manifest)
    n = model.config.n_sources
    print("id,si_snri_db")
    scores = []
    with T.no_grad():
        for sid, sample in entries:
            if sample.n_sources != n:
                raise DataError(
                    f"{sid}: manifest has {sample.n_sources} sources, model expects {n}"
                )
            ests = model.separate(Tensor(sample.mixture.samples))
            result = pit_loss(ests, [s.samples for s in sample.sources])
            gains = [
                result.per_source_si_snr[i]
                - si_snr(sample.mixture.samples, sample.sources[tgt].samples).item()
                for i, tgt in enumerate(result.best_perm)
            ]
            score = float(np.mean(gains))
            scores.append(score)
            print(f"{sid},{score:.4f}")
    print(f"mean,{np.mean(scores):.4f}")
    return 0


def cmd_bench(args) -> int:
    model_cfg, _ = load_config_file(args.config)
    strides = [int(s) for s in args.strides.split(",") if s]
    seconds = [float(s) for s in args.seconds.split(",") if s]
    records = run_bench(
        model_cfg, strides, seconds,
        repeats=args.repeats, warmup=args.warmup,
        seed=_resolve_seed(args), single_thread=not args.multi_thread,
    )
    text = bench_csv(records)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_inspect(args) -> int:
    model_cfg, _ = load_config_file(args.config)
    breakdown = parameter_breakdown(model_cfg)
    total = parameter_count(model_cfg)
    width = max(len(k) for k in breakdown)
    for name, count in breakdown.items():
        print(f"{name:<{width}}  {count:>12,}")
    print(f"{'total':<{width}}  {total:>12,}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sepformer",
        description="Desk-scale dual-path transformer speech separation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a toy source bank (+ optional mixtures)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sources", type=int, required=True, help="number of bank sources")
    p.add_argument("--seconds", type=float, required=True, help="length per source")
    p.add_argument("--sample-rate", type=int, default=8000)
    p.add_argument("--mixtures", type=int, default=0,
                   help="also write this many pre-mixed samples")
    p.add_argument("--mix-sources", type=int, default=2,
                   help="sources per pre-mixed sample (default 2)")
    _add_seed(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--out", required=True, help="output directory for metrics + checkpoint")
    p.add_argument("--dm", action="store_true",
                   help="dynamic mixing with speed perturbation instead of the pre-mixed manifest")
    p.add_argument("--fixed-clock", action="store_true",
                   help="log a deterministic step counter instead of wall time (reproducibility testing)")
    _add_seed(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="separate a WAV file with a trained checkpoint")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--in", dest="infile", required=True, help="input WAV (mono PCM16)")
    p.add_argument("--out-prefix", required=True, help="writes <prefix>_1.wav ... <prefix>_Ns.wav")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("eval", help="mean PIT-aligned SI-SNRi over a mixtures manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="forward speed/memory across strides and input lengths")
    p.add_argument("--config", required=True)
    p.add_argument("--strides", default="1,2,4,8")
    p.add_argument("--seconds", default="1,2,3,4,5")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.add_argument("--multi-thread", action="store_true",
                   help="allow multi-threaded BLAS kernels (timings less stable)")
    _add_seed(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="parameter count and per-component breakdown")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SepformerError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: IOError: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
