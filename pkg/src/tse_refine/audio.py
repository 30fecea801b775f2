"""Waveform container, level/quality metrics, gain scaling, crop/pad, WAV I/O.

All dB quantities use log base 10. Infinite dB values are clamped to the
documented sentinels ``POS_DB_SENTINEL`` / ``NEG_DB_SENTINEL`` so that
downstream comparisons and JSON serialization stay total.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

CANONICAL_SAMPLE_RATE = 16000

# Saturation sentinels standing in for +/- infinity dB.
POS_DB_SENTINEL = 300.0
NEG_DB_SENTINEL = -300.0

_PCM16_FULL_SCALE = 32767.0


@dataclass(frozen=True)
class AudioSignal:
    """Mono waveform with sample rate; samples nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = CANONICAL_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def energy(self) -> float:
        return float(np.sum(self.samples**2))


def _check_compatible(a: AudioSignal, b: AudioSignal) -> None:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if a.sample_rate != b.sample_rate:
        raise ValueError(f"sample rate mismatch: {a.sample_rate} vs {b.sample_rate}")


def snr(estimate: AudioSignal, reference: AudioSignal) -> float:
    """SNR in dB: 10*log10(||ref||^2 / ||ref - est||^2).

    Zero noise saturates to POS_DB_SENTINEL; a zero-energy reference is an error.
    """
    _check_compatible(estimate, reference)
    if len(reference) == 0:
        raise ValueError("empty signals")
    ref_energy = reference.energy()
    if ref_energy == 0.0:
        raise ValueError("SNR undefined for zero-energy reference")
    noise_energy = float(np.sum((reference.samples - estimate.samples) ** 2))
    if noise_energy == 0.0:
        return POS_DB_SENTINEL
    return float(np.clip(10.0 * np.log10(ref_energy / noise_energy),
                         NEG_DB_SENTINEL, POS_DB_SENTINEL))


def si_sdr(estimate: AudioSignal, reference: AudioSignal) -> float:
    """Scale-invariant SDR in dB with the unconstrained reference projection.

    No mean subtraction is applied (``zero_mean`` convention OFF). The optimal
    scale may be negative, so si_sdr(-est, ref) == si_sdr(est, ref).
    """
    _check_compatible(estimate, reference)
    if len(reference) == 0:
        raise ValueError("empty signals")
    ref = reference.samples
    est = estimate.samples
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("SI-SDR undefined for zero-energy reference")
    alpha = float(np.dot(est, ref)) / ref_energy
    target = alpha * ref
    target_energy = float(np.dot(target, target))
    if target_energy == 0.0:
        return NEG_DB_SENTINEL
    residual_energy = float(np.sum((est - target) ** 2))
    if residual_energy == 0.0:
        return POS_DB_SENTINEL
    return float(np.clip(10.0 * np.log10(target_energy / residual_energy),
                         NEG_DB_SENTINEL, POS_DB_SENTINEL))


def dbfs_power(residual: AudioSignal | np.ndarray) -> float:
    """Mean power of a residual in dB full scale: 10*log10(mean(r^2))."""
    r = residual.samples if isinstance(residual, AudioSignal) else np.asarray(residual, dtype=np.float64)
    if len(r) == 0:
        raise ValueError("empty residual")
    mean_power = float(np.mean(r**2))
    if mean_power == 0.0:
        return NEG_DB_SENTINEL
    return float(np.clip(10.0 * np.log10(mean_power), NEG_DB_SENTINEL, POS_DB_SENTINEL))


def scale_to_snr(source: AudioSignal, interference: AudioSignal,
                 target_snr: float) -> AudioSignal:
    """Gain-adjust `interference` so that source-vs-interference SNR is `target_snr` dB."""
    src_energy = source.energy()
    intf_energy = interference.energy()
    if src_energy == 0.0 or intf_energy == 0.0:
        raise ValueError("scale_to_snr requires nonzero-energy inputs")
    gain = np.sqrt(src_energy / (intf_energy * 10.0 ** (target_snr / 10.0)))
    return AudioSignal(interference.samples * gain, interference.sample_rate)


def crop_or_pad(signal: AudioSignal, target_len: int,
                rng: np.random.Generator | None = None) -> AudioSignal:
    """Crop a random contiguous segment or zero-pad with a random head/tail split.

    Placement is drawn from `rng`; pass a seeded generator for reproducibility.
    """
    if target_len <= 0:
        raise ValueError(f"target_len must be positive, got {target_len}")
    if rng is None:
        rng = np.random.default_rng()
    n = len(signal)
    if n == target_len:
        return signal
    if n > target_len:
        offset = int(rng.integers(0, n - target_len + 1))
        return AudioSignal(signal.samples[offset:offset + target_len], signal.sample_rate)
    pad = target_len - n
    head = int(rng.integers(0, pad + 1))
    out = np.zeros(target_len, dtype=np.float64)
    out[head:head + n] = signal.samples
    return AudioSignal(out, signal.sample_rate)


def read_wav(path, expected_rate: int | None = None) -> AudioSignal:
    """Read a 16-bit PCM mono WAV. Mismatched rate or channel count is rejected."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype != np.int16:
        raise ValueError(f"{path}: expected 16-bit PCM, got dtype {data.dtype}")
    if expected_rate is not None and rate != expected_rate:
        raise ValueError(f"{path}: sample rate {rate} != expected {expected_rate}")
    return AudioSignal(data.astype(np.float64) / _PCM16_FULL_SCALE, int(rate))


def write_wav(path, signal: AudioSignal) -> None:
    """Write a 16-bit PCM mono WAV; samples are clipped to [-1, 1]."""
    clipped = np.clip(signal.samples, -1.0, 1.0)
    pcm = np.round(clipped * _PCM16_FULL_SCALE).astype(np.int16)
    wavfile.write(path, signal.sample_rate, pcm)
