"""Synthetic sources, mixture construction, speed perturbation, dynamic
mixing, and manifest I/O for desk-scale experiments.

Mixture recipe: the first source is the 0 dB anchor; every other source is
attenuated by a level drawn uniformly from [0, 5] dB. If the summed mixture
would leave [-1, 1], mixture and sources are rescaled jointly so the sum
invariant survives.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioSignal, read_wav, write_wav
from .errors import DataError, UsageError

GAIN_RANGE_DB = (0.0, 5.0)
SPEED_RANGE = (0.95, 1.05)
TOY_PEAK = 0.7

# disjoint fundamentals (Hz) for toy sources; the first pair is two octaves
# apart so even a coarse filterbank tells them apart
TOY_FUNDAMENTALS = (300.0, 1200.0, 2400.0, 600.0, 3200.0, 900.0, 1800.0, 450.0)


@dataclass
class MixtureSample:
    """A mixture and the post-gain sources that sum to it exactly."""

    mixture: AudioSignal
    sources: list[AudioSignal]

    def __post_init__(self) -> None:
        if len(self.sources) < 2:
            raise DataError("a mixture needs at least two sources")
        lengths = {len(s) for s in self.sources}
        if lengths != {len(self.mixture)}:
            raise DataError(f"source lengths {lengths} differ from mixture {len(self.mixture)}")
        rates = {s.sample_rate for s in self.sources} | {self.mixture.sample_rate}
        if len(rates) != 1:
            raise DataError(f"mixed sample rates in one sample: {sorted(rates)}")
        total = _sum_sources([s.samples for s in self.sources])
        if not np.allclose(self.mixture.samples, total, atol=1e-12, rtol=0):
            raise DataError("mixture is not the sum of its sources")

    @property
    def n_sources(self) -> int:
        return len(self.sources)


@dataclass
class SourceBank:
    """Named single-source signals with unique tags."""

    tags: list[str]
    signals: list[AudioSignal]

    def __post_init__(self) -> None:
        if len(self.tags) != len(self.signals):
            raise DataError("bank tags and signals differ in count")
        if len(set(self.tags)) != len(self.tags):
            raise DataError("bank tags must be unique")
        for tag, sig in zip(self.tags, self.signals):
            if len(sig) == 0:
                raise DataError(f"bank source {tag!r} is empty")

    def __len__(self) -> int:
        return len(self.tags)

    @property
    def sample_rate(self) -> int:
        return self.signals[0].sample_rate


def _sum_sources(arrays: list[np.ndarray]) -> np.ndarray:
    total = arrays[0].copy()
    for a in arrays[1:]:
        total += a
    return total


def make_mixture(sources: list[AudioSignal], rng: np.random.Generator) -> MixtureSample:
    """Mix sources at relative levels drawn uniformly from [0, 5] dB."""
    if len(sources) < 2:
        raise UsageError(f"make_mixture needs >= 2 sources, got {len(sources)}")
    rates = {s.sample_rate for s in sources}
    if len(rates) != 1:
        raise DataError(f"make_mixture got mixed sample rates: {sorted(rates)}")
    length = min(len(s) for s in sources)
    if length == 0:
        raise DataError("make_mixture got an empty source")
    rate = sources[0].sample_rate

    scaled = [sources[0].samples[:length].copy()]
    for src in sources[1:]:
        level_db = rng.uniform(*GAIN_RANGE_DB)
        scaled.append(src.samples[:length] * 10.0 ** (-level_db / 20.0))

    mixture = _sum_sources(scaled)
    peak = np.abs(mixture).max()
    if peak > 1.0:
        k = 1.0 / peak
        scaled = [s * k for s in scaled]
        mixture = _sum_sources(scaled)
    return MixtureSample(
        mixture=AudioSignal(mixture, rate),
        sources=[AudioSignal(s, rate) for s in scaled],
    )


def speed_perturb(signal: AudioSignal, factor: float) -> AudioSignal:
    """Resample-based speed change: length becomes round(T / factor) and the
    pitch shifts with it."""
    if not SPEED_RANGE[0] <= factor <= SPEED_RANGE[1]:
        raise UsageError(f"speed factor {factor} outside {SPEED_RANGE}")
    t_len = len(signal)
    new_len = int(round(t_len / factor))
    positions = np.arange(new_len) * factor
    resampled = np.interp(positions, np.arange(t_len), signal.samples)
    return AudioSignal(resampled, signal.sample_rate)


def dynamic_mix(bank: SourceBank, n_sources: int, rng: np.random.Generator) -> MixtureSample:
    """Draw distinct bank entries, speed-perturb each, and mix them."""
    if len(bank) < n_sources:
        raise UsageError(
            f"dynamic_mix needs {n_sources} distinct sources, bank has {len(bank)}"
        )
    picks = rng.choice(len(bank), size=n_sources, replace=False)
    perturbed = [
        speed_perturb(bank.signals[i], rng.uniform(*SPEED_RANGE)) for i in picks
    ]
    return make_mixture(perturbed, rng)


def synth_toy_bank(
    n_sources: int,
    length: int,
    sample_rate: int = 8000,
    rng: np.random.Generator | None = None,
) -> SourceBank:
    """Distinguishable synthetic sources: harmonic tones at disjoint
    fundamentals with slow amplitude modulation, peak-normalized to 0.7."""
    if n_sources < 1:
        raise UsageError(f"need at least one source, got {n_sources}")
    if n_sources > len(TOY_FUNDAMENTALS):
        raise UsageError(f"toy bank supports up to {len(TOY_FUNDAMENTALS)} sources")
    rng = rng or np.random.default_rng(0)
    t = np.arange(length) / sample_rate
    tags, signals = [], []
    for k in range(n_sources):
        f0 = TOY_FUNDAMENTALS[k]
        if f0 >= 0.45 * sample_rate:
            raise UsageError(f"fundamental {f0} Hz too high for rate {sample_rate}")
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * f0 * t + phase)
        if 2 * f0 < 0.45 * sample_rate:
            wave += 0.35 * np.sin(2 * np.pi * 2 * f0 * t + rng.uniform(0, 2 * np.pi))
        am_rate = rng.uniform(1.5, 5.0)
        wave *= 1.0 + 0.3 * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
        wave *= TOY_PEAK / np.abs(wave).max()
        tags.append(f"s{k:02d}")
        signals.append(AudioSignal(wave, sample_rate))
    return SourceBank(tags, signals)


# ---------------------------------------------------------------------------
# Manifests: line-delimited, tab-separated, paths relative to the manifest
# ---------------------------------------------------------------------------

BANK_MANIFEST = "bank.manifest"
MIXTURE_MANIFEST = "mixtures.manifest"


def write_bank(bank: SourceBank, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for tag, sig in zip(bank.tags, bank.signals):
        rel = f"{tag}.wav"
        write_wav(out_dir / rel, sig)
        lines.append(f"{tag}\t{rel}")
    manifest = out_dir / BANK_MANIFEST
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_bank(manifest_path) -> SourceBank:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / BANK_MANIFEST
    if not manifest_path.exists():
        raise DataError(f"bank manifest not found: {manifest_path}")
    tags, signals = [], []
    for lineno, line in enumerate(manifest_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{manifest_path}:{lineno}: expected 'tag<TAB>path'")
        tags.append(parts[0])
        signals.append(read_wav(manifest_path.parent / parts[1]))
    return SourceBank(tags, signals)


def write_mixtures(samples: list[MixtureSample], out_dir) -> Path:
    """Store pre-mixed samples as per-source WAVs plus a manifest of
    'id<TAB>source paths'; the mixture is reconstructed as their sum."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, sample in enumerate(samples):
        sid = f"mix{i:04d}"
        rels = []
        for k, src in enumerate(sample.sources):
            rel = f"{sid}_src{k}.wav"
            write_wav(out_dir / rel, src)
            rels.append(rel)
        lines.append("\t".join([sid] + rels))
    manifest = out_dir / MIXTURE_MANIFEST
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_mixtures(manifest_path) -> list[tuple[str, MixtureSample]]:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MIXTURE_MANIFEST
    if not manifest_path.exists():
        raise DataError(f"mixture manifest not found: {manifest_path}")
    out = []
    for lineno, line in enumerate(manifest_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise DataError(
                f"{manifest_path}:{lineno}: expected 'id<TAB>src1<TAB>src2...'"
            )
        sid, paths = parts[0], parts[1:]
        sources = [read_wav(manifest_path.parent / p) for p in paths]
        arrays = [s.samples for s in sources]
        total = _sum_sources(arrays)
        peak = np.abs(total).max() if total.size else 0.0
        if peak > 1.0:
            # PCM rounding can nudge the sum past full scale; rescale jointly
            # (the same policy as make_mixture) to keep the sum invariant
            arrays = [a / peak for a in arrays]
            total = _sum_sources(arrays)
        rate = sources[0].sample_rate
        sample = MixtureSample(
            mixture=AudioSignal(total, rate),
            sources=[AudioSignal(a, rate) for a in arrays],
        )
        out.append((sid, sample))
    return out
