"""Dynamic mixing: build mixture samples on the fly from a speech/noise corpus,
and materialize fixed, seeded evaluation sets with a JSON manifest.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile as _wavfile

from .audio import AudioSignal, crop_or_pad, read_wav, scale_to_snr, write_wav

logger = logging.getLogger(__name__)

NOISE_DIR_NAME = "noise"


@dataclass(frozen=True)
class MixtureSample:
    """One training/eval item: mixture plus its clean components and metadata."""

    mixture: AudioSignal
    target_clean: AudioSignal
    interferers: list[AudioSignal]
    noise: AudioSignal | None
    enrollment: AudioSignal
    target_speaker_id: str
    mix_snrs: list[float]
    seed: int
    component_paths: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CorpusIndex:
    """speaker_id -> sorted utterance paths, plus an optional noise file list."""

    speakers: dict[str, list[Path]]
    noise_files: list[Path] = field(default_factory=list)

    @property
    def speaker_ids(self) -> list[str]:
        return sorted(self.speakers)


def build_index(root_dir, layout: str = "speaker-dirs") -> CorpusIndex:
    """Index a corpus directory deterministically (sorted paths).

    layout="speaker-dirs": each subdirectory is a speaker holding WAV files;
    a subdirectory named "noise" holds noise clips instead.
    layout="manifest": root_dir is a JSON file mapping speaker_id -> path list,
    with an optional "noise" key; duplicate paths are dropped with a warning.
    Speakers with fewer than 2 utterances are excluded (one must be reservable
    as the enrollment).
    """
    root = Path(root_dir)
    speakers: dict[str, list[Path]] = {}
    noise_files: list[Path] = []

    if layout == "speaker-dirs":
        if not root.is_dir():
            raise FileNotFoundError(f"corpus directory not found: {root}")
        for sub in sorted(p for p in root.iterdir() if p.is_dir()):
            wavs = sorted(sub.glob("*.wav"))
            if sub.name == NOISE_DIR_NAME:
                noise_files = wavs
            elif wavs:
                speakers[sub.name] = wavs
    elif layout == "manifest":
        with open(root) as f:
            listing = json.load(f)
        for speaker_id, paths in sorted(listing.items()):
            unique = sorted(set(Path(p) for p in paths))
            if len(unique) < len(paths):
                logger.warning("manifest speaker %s: %d duplicate paths dropped",
                               speaker_id, len(paths) - len(unique))
            if speaker_id == NOISE_DIR_NAME:
                noise_files = unique
            else:
                speakers[speaker_id] = unique
    else:
        raise ValueError(f"unknown layout {layout!r}")

    excluded = [sid for sid, utts in speakers.items() if len(utts) < 2]
    if excluded:
        logger.warning("excluding %d speaker(s) with < 2 utterances: %s",
                       len(excluded), excluded)
        speakers = {sid: utts for sid, utts in speakers.items() if len(utts) >= 2}
    if not speakers:
        raise ValueError(f"no usable speakers found in {root}")
    return CorpusIndex(speakers=speakers, noise_files=noise_files)


def make_mixture(index: CorpusIndex, k_speakers: int, with_noise: bool,
                 duration_s: float, snr_range: tuple[float, float],
                 seed: int, sample_rate: int = 16000) -> MixtureSample:
    """Build one mixture, fully determined by the seed.

    The first drawn speaker is the target; each interferer (and the noise) is
    scaled so its SNR against the target is an independent uniform draw from
    snr_range. The enrollment is a separate utterance of the target speaker.
    """
    if k_speakers < 1:
        raise ValueError("k_speakers must be >= 1")
    ids = index.speaker_ids
    if len(ids) < k_speakers:
        raise ValueError(f"need {k_speakers} speakers, corpus has {len(ids)}")
    if with_noise and not index.noise_files:
        raise ValueError("with_noise requested but corpus has no noise files")

    rng = np.random.default_rng(seed)
    target_len = int(round(duration_s * sample_rate))
    chosen = [ids[i] for i in rng.choice(len(ids), size=k_speakers, replace=False)]
    target_id = chosen[0]

    target_utts = index.speakers[target_id]
    utt_idx, enroll_idx = rng.choice(len(target_utts), size=2, replace=False)
    paths = {"target": str(target_utts[utt_idx]), "enrollment": str(target_utts[enroll_idx]),
             "interferers": [], "noise": None}

    def load_fixed(path) -> AudioSignal:
        sig = read_wav(path, expected_rate=sample_rate)
        return crop_or_pad(sig, target_len, rng)

    target_clean = load_fixed(target_utts[utt_idx])
    enrollment = load_fixed(target_utts[enroll_idx])

    mix_snrs: list[float] = []
    interferers: list[AudioSignal] = []
    for spk in chosen[1:]:
        utts = index.speakers[spk]
        path = utts[int(rng.integers(0, len(utts)))]
        paths["interferers"].append(str(path))
        raw = load_fixed(path)
        target_snr = float(rng.uniform(*snr_range))
        mix_snrs.append(target_snr)
        interferers.append(scale_to_snr(target_clean, raw, target_snr))

    noise = None
    if with_noise:
        path = index.noise_files[int(rng.integers(0, len(index.noise_files)))]
        paths["noise"] = str(path)
        raw = load_fixed(path)
        target_snr = float(rng.uniform(*snr_range))
        mix_snrs.append(target_snr)
        noise = scale_to_snr(target_clean, raw, target_snr)

    total = target_clean.samples.copy()
    for intf in interferers:
        total = total + intf.samples
    if noise is not None:
        total = total + noise.samples

    return MixtureSample(
        mixture=AudioSignal(total, sample_rate),
        target_clean=target_clean,
        interferers=interferers,
        noise=noise,
        enrollment=enrollment,
        target_speaker_id=target_id,
        mix_snrs=mix_snrs,
        seed=seed,
        component_paths=paths,
    )


def _sample_seed(base_seed: int, i: int) -> int:
    # Stable 63-bit per-item seed derived from the run seed.
    digest = hashlib.sha256(f"{base_seed}:{i}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def materialize_eval_set(index: CorpusIndex, count: int, out_dir,
                         k_speakers: int = 2, with_noise: bool = False,
                         duration_s: float = 5.0,
                         snr_range: tuple[float, float] = (-10.0, 10.0),
                         seed: int = 0, sample_rate: int = 16000) -> Path:
    """Write `count` mixtures (+ components) and a manifest; byte-reproducible.

    Returns the manifest path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        item_seed = _sample_seed(seed, i)
        sample = make_mixture(index, k_speakers, with_noise, duration_s,
                              snr_range, item_seed, sample_rate)
        sample_id = f"sample_{i:05d}"
        sample_dir = out / sample_id
        sample_dir.mkdir(exist_ok=True)

        # Quantize components to the PCM grid first and store the mixture as
        # their exact integer sum, so the on-disk files reconstruct exactly.
        components = [("target_clean", "target.wav", sample.target_clean)]
        for j, intf in enumerate(sample.interferers):
            components.append((f"interferer_{j}", f"interferer_{j}.wav", intf))
        if sample.noise is not None:
            components.append(("noise", "noise.wav", sample.noise))

        def quantize(sig: AudioSignal) -> np.ndarray:
            return np.round(sig.samples * 32767.0).astype(np.int64)

        quantized = [quantize(sig) for _, _, sig in components]
        mix_q = np.sum(quantized, axis=0)
        peak = int(np.max(np.abs(mix_q))) if len(mix_q) else 0
        if peak > 32767:
            gain = 32760.0 / peak
            components = [(key, name, AudioSignal(sig.samples * gain, sig.sample_rate))
                          for key, name, sig in components]
            quantized = [quantize(sig) for _, _, sig in components]
            mix_q = np.sum(quantized, axis=0)

        files = {"mixture": "mixture.wav", "enrollment": "enrollment.wav"}
        for (key, name, _), q in zip(components, quantized):
            files[key] = name
            _wavfile.write(sample_dir / name, sample_rate, q.astype(np.int16))
        _wavfile.write(sample_dir / "mixture.wav", sample_rate, mix_q.astype(np.int16))
        write_wav(sample_dir / "enrollment.wav", sample.enrollment)
        entries.append({
            "id": sample_id,
            "seed": item_seed,
            "target_speaker_id": sample.target_speaker_id,
            "mix_snrs": sample.mix_snrs,
            "files": files,
            "source_paths": sample.component_paths,
        })
    manifest = {
        "seed": seed,
        "count": count,
        "k_speakers": k_speakers,
        "with_noise": with_noise,
        "duration_s": duration_s,
        "snr_range": list(snr_range),
        "sample_rate": sample_rate,
        "samples": entries,
    }
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest_path


def load_manifest(manifest_path) -> dict:
    with open(manifest_path) as f:
        return json.load(f)
