"""Synthetic desk-scale speech-like corpus for smoke tests and the directional
toy experiment.

Each synthetic speaker is a harmonic source with a distinctive fundamental and
harmonic tilt; utterances vary in amplitude envelope, vibrato, and pauses, so
two "speakers" are separable and an enrollment clip carries speaker identity.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import AudioSignal, write_wav
from .mixer import CorpusIndex, build_index


def synth_utterance(speaker_idx: int, rng: np.random.Generator,
                    duration_s: float = 1.0, sample_rate: int = 16000) -> AudioSignal:
    """One utterance of the given synthetic speaker."""
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    # Fundamentals spaced geometrically so neighbors are well separated.
    f0 = 110.0 * (1.22 ** speaker_idx) * (1.0 + 0.01 * rng.standard_normal())
    tilt = 0.5 + 0.08 * speaker_idx
    vibrato = 1.0 + 0.005 * np.sin(2 * np.pi * rng.uniform(3.0, 7.0) * t)
    phase = np.cumsum(2 * np.pi * f0 * vibrato / sample_rate)
    signal = np.zeros(n)
    for h in range(1, 6):
        amp = h ** (-tilt)
        signal += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    # slow amplitude envelope with occasional pauses (speech-like on/off)
    env_points = rng.uniform(0.2, 1.0, size=8)
    env_points[rng.random(8) < 0.25] = 0.02
    env = np.interp(np.linspace(0, 7, n), np.arange(8), env_points)
    signal *= env
    rms = np.sqrt(np.mean(signal**2))
    if rms > 0:
        signal *= 0.08 / rms
    return AudioSignal(np.clip(signal, -0.99, 0.99), sample_rate)


def make_toy_corpus(out_dir, n_speakers: int = 8, utterances_per_speaker: int = 10,
                    duration_s: float = 1.0, sample_rate: int = 16000,
                    with_noise: bool = False, seed: int = 0) -> CorpusIndex:
    """Write a per-speaker WAV corpus and return its index."""
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    for spk in range(n_speakers):
        spk_dir = out / f"spk{spk:02d}"
        spk_dir.mkdir(parents=True, exist_ok=True)
        for u in range(utterances_per_speaker):
            write_wav(spk_dir / f"utt{u:03d}.wav",
                      synth_utterance(spk, rng, duration_s, sample_rate))
    if with_noise:
        noise_dir = out / "noise"
        noise_dir.mkdir(parents=True, exist_ok=True)
        n = int(round(duration_s * sample_rate))
        for u in range(utterances_per_speaker):
            noise = 0.05 * rng.standard_normal(n)
            write_wav(noise_dir / f"noise{u:03d}.wav",
                      AudioSignal(np.clip(noise, -0.99, 0.99), sample_rate))
    return build_index(out, layout="speaker-dirs")


def run_toy_pipeline(work_dir, n_speakers: int = 8, utterances_per_speaker: int = 12,
                     duration_s: float = 1.0, tse_epochs: int = 16,
                     refine_epochs: int = 48, refine_lr0: float = 0.002,
                     mixtures_per_epoch: int = 192,
                     batch_size: int = 16, eval_count: int = 48,
                     seed: int = 0) -> dict:
    """Corpus -> stage-1 training -> stage-2 training -> eval set.

    Returns paths to the corpus, checkpoints, and materialized eval set.
    Small enough for commodity CPUs; used by the directional experiment and
    the end-to-end tests.
    """
    from .masks import MaskingFunctionSpec
    from .models import TseModelConfig
    from .training import TrainConfig, train_refinement, train_tse

    work = Path(work_dir)
    corpus_dir = work / "corpus"
    index = make_toy_corpus(corpus_dir, n_speakers, utterances_per_speaker,
                            duration_s, seed=seed)
    model_config = TseModelConfig.toy()
    common = dict(epochs=tse_epochs, mixtures_per_epoch=mixtures_per_epoch,
                  batch_size=batch_size, val_count=batch_size * 2,
                  duration_s=duration_s, k_speakers=2,
                  snr_range=(-5.0, 5.0), model=model_config, seed=seed)
    tse_ckpt = train_tse(TrainConfig(stage="tse", **common), index, work / "tse")
    refine_common = dict(common, epochs=refine_epochs, lr0=refine_lr0)
    refine_ckpt = train_refinement(
        TrainConfig(stage="refine", tse_checkpoint=str(tse_ckpt),
                    masking=MaskingFunctionSpec(kind="dbfs_prob", window_len=2000),
                    **refine_common),
        index, work / "refine")
    eval_dir = work / "eval_set"
    from .mixer import materialize_eval_set
    materialize_eval_set(index, eval_count, eval_dir, k_speakers=2,
                         duration_s=duration_s, snr_range=(-5.0, 5.0),
                         seed=seed + 999)
    return {
        "corpus_dir": str(corpus_dir),
        "index": index,
        "tse_checkpoint": str(tse_ckpt),
        "refine_checkpoint": str(refine_ckpt),
        "eval_dir": str(eval_dir),
    }
