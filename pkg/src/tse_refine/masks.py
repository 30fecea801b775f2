"""Edit masks: synthesis from extractor output vs clean reference, windowing,
downsampling to encoder frame rate, agreement metrics, and the mask JSON format.

A mask marks, per audio sample, whether that region should be refined. Synthetic
masks come from five window-level rules comparing the extractor output against
the clean reference; human masks come from annotated regions and share the same
file format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .audio import NEG_DB_SENTINEL, AudioSignal, dbfs_power, snr

DEFAULT_WINDOW_LEN = 4000  # 0.25 s at 16 kHz

MASK_KINDS = ("mean_ae", "max_ae", "dbfs", "dbfs_prob", "global_snr")

_DEFAULT_THRESHOLDS = {
    "mean_ae": 0.03,
    "max_ae": 0.1,
    "dbfs": -40.0,
    "dbfs_prob": -40.0,  # mean of the per-window Gaussian draw
    "global_snr": -5.0,
}


@dataclass(frozen=True)
class EditMask:
    """Per-sample binary mask over a signal."""

    values: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 1:
            raise ValueError(f"mask must be 1-D, got shape {values.shape}")
        if values.size and not np.isin(values, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        values = values.astype(np.uint8)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def any(self) -> bool:
        return bool(self.values.any())


@dataclass(frozen=True)
class MaskingFunctionSpec:
    """Which window rule to apply and with what threshold.

    kind="dbfs_prob" draws an independent threshold ~ N(threshold, threshold_sigma)
    per window from a generator seeded with rng_seed. kind="global_snr" ignores
    window_len and produces a constant mask over the whole signal.
    """

    kind: str
    threshold: float | None = None
    threshold_sigma: float = 3.0
    window_len: int = DEFAULT_WINDOW_LEN
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown masking kind {self.kind!r}; choose from {MASK_KINDS}")
        if self.window_len <= 0:
            raise ValueError("window_len must be positive")
        if self.threshold is None:
            object.__setattr__(self, "threshold", _DEFAULT_THRESHOLDS[self.kind])


def segment_windows(signal: AudioSignal, window_len: int) -> list[np.ndarray]:
    """Split into non-overlapping windows; the final window may be shorter."""
    if window_len <= 0:
        raise ValueError("window_len must be positive")
    samples = signal.samples
    return [samples[i:i + window_len] for i in range(0, len(samples), window_len)]


def _window_stat(kind: str, residual: np.ndarray) -> float:
    if kind == "mean_ae":
        return float(np.mean(np.abs(residual)))
    if kind == "max_ae":
        return float(np.max(np.abs(residual)))
    if kind in ("dbfs", "dbfs_prob"):
        return dbfs_power(residual)
    raise ValueError(f"no window statistic for kind {kind!r}")


def apply_masking_function(tse_out: AudioSignal, clean: AudioSignal,
                           spec: MaskingFunctionSpec) -> EditMask:
    """Synthesize an edit mask by thresholding a per-window dissimilarity.

    A window is marked iff its statistic strictly exceeds the threshold.
    Tail windows use their actual length (no zero padding).
    """
    if len(tse_out) != len(clean):
        raise ValueError(f"length mismatch: {len(tse_out)} vs {len(clean)}")
    if tse_out.sample_rate != clean.sample_rate:
        raise ValueError("sample rate mismatch")
    n = len(clean)
    values = np.zeros(n, dtype=np.uint8)
    if n == 0:
        return EditMask(values, clean.sample_rate)

    if spec.kind == "global_snr":
        g = -snr(tse_out, clean)
        if g > spec.threshold:
            values[:] = 1
        return EditMask(values, clean.sample_rate)

    rng = np.random.default_rng(spec.rng_seed) if spec.kind == "dbfs_prob" else None
    residual = tse_out.samples - clean.samples
    for start in range(0, n, spec.window_len):
        window = residual[start:start + spec.window_len]
        tau = spec.threshold
        if rng is not None:
            tau = float(rng.normal(spec.threshold, spec.threshold_sigma))
        if _window_stat(spec.kind, window) > tau:
            values[start:start + spec.window_len] = 1
    return EditMask(values, clean.sample_rate)


def frame_count(num_samples: int, kernel: int, stride: int) -> int:
    """Output frame count of a strided encoder after right-padding to alignment."""
    if num_samples <= kernel:
        return 1
    return int(np.ceil((num_samples - kernel) / stride)) + 1


def downsample_mask(mask: EditMask, frame_stride: int, frame_count_expected: int,
                    frame_kernel: int | None = None) -> np.ndarray:
    """Average-pool a sample mask to encoder frame rate.

    Frame j covers samples [j*stride, j*stride + kernel), clipped to the mask
    length; its value is the fraction of marked samples in that span. Values
    are fractional in [0, 1], not binarized.
    """
    if frame_kernel is None:
        frame_kernel = 2 * frame_stride
    expected = frame_count(len(mask), frame_kernel, frame_stride)
    if frame_count_expected != expected:
        raise ValueError(
            f"frame_count {frame_count_expected} inconsistent with mask length "
            f"{len(mask)} (expected {expected} for kernel={frame_kernel}, stride={frame_stride})")
    values = mask.values.astype(np.float64)
    out = np.empty(frame_count_expected, dtype=np.float64)
    for j in range(frame_count_expected):
        span = values[j * frame_stride: j * frame_stride + frame_kernel]
        out[j] = float(np.mean(span)) if span.size else 0.0
    return out


def downsample_mask_conv(mask: EditMask, frame_stride: int, frame_count_expected: int,
                         frame_kernel: int | None = None,
                         weights: np.ndarray | None = None,
                         bias: float = 0.0) -> np.ndarray:
    """Strided 1-D convolution alternative to average pooling, same interface.

    Default weights reproduce average pooling exactly; learned weights can be
    passed in. Spans are clipped to the mask length and renormalized like the
    pooling path.
    """
    if frame_kernel is None:
        frame_kernel = 2 * frame_stride
    if weights is None:
        weights = np.full(frame_kernel, 1.0 / frame_kernel)
    expected = frame_count(len(mask), frame_kernel, frame_stride)
    if frame_count_expected != expected:
        raise ValueError("frame_count inconsistent with mask length/stride")
    values = mask.values.astype(np.float64)
    out = np.empty(frame_count_expected, dtype=np.float64)
    for j in range(frame_count_expected):
        span = values[j * frame_stride: j * frame_stride + frame_kernel]
        w = weights[:span.size]
        scale = frame_kernel / span.size if span.size else 0.0
        out[j] = float(np.dot(span, w)) * scale + bias
    return out


def mask_agreement(a: EditMask, b: EditMask) -> dict[str, float]:
    """Sample-level IoU, precision, recall of mask a against mask b.

    Empty denominators fall back to 1.0 (two all-zero masks agree perfectly).
    """
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    av = a.values.astype(bool)
    bv = b.values.astype(bool)
    inter = int(np.sum(av & bv))
    union = int(np.sum(av | bv))
    a_total = int(av.sum())
    b_total = int(bv.sum())
    return {
        "iou": inter / union if union else 1.0,
        "precision": inter / a_total if a_total else 1.0,
        "recall": inter / b_total if b_total else 1.0,
    }


def mask_to_regions(mask: EditMask) -> list[list[int]]:
    """Run-length encode the 1-regions as [start, end) sample pairs."""
    values = mask.values
    if len(values) == 0:
        return []
    diffs = np.diff(values.astype(np.int8))
    starts = list(np.flatnonzero(diffs == 1) + 1)
    ends = list(np.flatnonzero(diffs == -1) + 1)
    if values[0]:
        starts.insert(0, 0)
    if values[-1]:
        ends.append(len(values))
    return [[int(s), int(e)] for s, e in zip(starts, ends)]


def regions_to_mask(regions: list[list[int]], total_len: int,
                    sample_rate: int = 16000) -> EditMask:
    """Materialize [start, end) sample regions as a binary mask."""
    values = np.zeros(total_len, dtype=np.uint8)
    for start, end in regions:
        if not (0 <= start < end <= total_len):
            raise ValueError(f"region [{start}, {end}) out of range for length {total_len}")
        values[start:end] = 1
    return EditMask(values, sample_rate)


def save_mask(path, mask: EditMask) -> None:
    payload = {
        "sample_rate": mask.sample_rate,
        "total_len": len(mask),
        "regions": mask_to_regions(mask),
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_mask(path) -> EditMask:
    with open(path) as f:
        payload = json.load(f)
    return regions_to_mask(payload["regions"], payload["total_len"], payload["sample_rate"])
