"""Evaluation harness: strategy comparisons (extract-only, refine, successive
extraction, refine-replace), synthetic or human mask sources, pluggable
external quality-metric adapters, and paired significance testing.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import subprocess
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .audio import AudioSignal, read_wav, si_sdr, write_wav
from .masks import EditMask, MaskingFunctionSpec, apply_masking_function, load_mask
from .mixer import load_manifest
from .models import (HitlTseModel, adapt_state, compose_output, refine_forward,
                     speaker_encode, tse_forward)

logger = logging.getLogger(__name__)

STRATEGIES = ("tse-only", "refine", "successive-tse", "refine-replace")

# Environment variables naming external metric executables. Each is invoked as
# `<cmd> <estimate.wav> [reference.wav]` and must print a float on stdout.
METRIC_ENV_VARS = {"pesq": "TSE_REFINE_PESQ_CMD", "dnsmos": "TSE_REFINE_DNSMOS_CMD"}


@dataclass
class EvalReport:
    """Per-sample rows plus per-config aggregates."""

    config: dict
    rows: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    def finalize(self) -> "EvalReport":
        scored = [r for r in self.rows if "error" not in r]
        flagged = [r for r in scored if r["flagged"]]
        agg = {
            "count_scored": len(scored),
            "count_flagged": len(flagged),
            "mean_si_sdr": float(np.mean([r["si_sdr"] for r in scored])) if scored else None,
            "mean_si_sdr_flagged": float(np.mean([r["si_sdr"] for r in flagged])) if flagged else None,
        }
        for metric in ("pesq", "dnsmos"):
            vals = [r[metric] for r in scored if r.get(metric) is not None]
            if vals:
                agg[f"mean_{metric}"] = float(np.mean(vals))
        self.aggregates = agg
        return self

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump({"config": self.config, "aggregates": self.aggregates,
                       "rows": self.rows}, f, indent=2)

    def to_csv(self, path) -> None:
        keys: list[str] = []
        for row in self.rows:
            for k in row:
                if k not in keys:
                    keys.append(k)
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=keys)
            writer.writeheader()
            writer.writerows(self.rows)


def metric_adapter(name: str, estimate: AudioSignal,
                   reference: AudioSignal | None = None) -> dict | None:
    """Run an external quality metric if configured; None when unavailable.

    Returns {"value": float, "tool": str} recording provenance. A crashing or
    unparsable tool yields None with a warning; it never aborts the run.
    """
    env_var = METRIC_ENV_VARS.get(name)
    if env_var is None:
        raise ValueError(f"unknown metric {name!r}")
    cmd = os.environ.get(env_var)
    if not cmd:
        return None
    with tempfile.TemporaryDirectory() as tmp:
        est_path = Path(tmp) / "estimate.wav"
        write_wav(est_path, estimate)
        argv = cmd.split() + [str(est_path)]
        if reference is not None:
            ref_path = Path(tmp) / "reference.wav"
            write_wav(ref_path, reference)
            argv.append(str(ref_path))
        try:
            result = subprocess.run(argv, capture_output=True, text=True,
                                    timeout=120, check=True)
            value = float(result.stdout.strip().splitlines()[-1])
        except (subprocess.SubprocessError, ValueError, IndexError, OSError) as exc:
            logger.warning("metric %s failed: %s", name, exc)
            return None
    return {"value": value, "tool": cmd}


def _resolve_mask(sample_id: str, y_tse: AudioSignal, target: AudioSignal,
                  mask_source, mask_dir) -> EditMask:
    if mask_source == "none":
        return EditMask(np.zeros(len(y_tse), dtype=np.uint8), y_tse.sample_rate)
    if mask_source == "human":
        path = Path(mask_dir) / f"{sample_id}.json"
        if not path.exists():
            raise FileNotFoundError(str(path))
        return load_mask(path)
    if isinstance(mask_source, MaskingFunctionSpec):
        spec = mask_source
        if spec.kind == "dbfs_prob":
            # stable per-sample threshold stream
            spec = MaskingFunctionSpec(
                kind=spec.kind, threshold=spec.threshold,
                threshold_sigma=spec.threshold_sigma, window_len=spec.window_len,
                rng_seed=(spec.rng_seed ^ zlib.crc32(sample_id.encode())) & 0x7FFFFFFF)
        return apply_masking_function(y_tse, target, spec)
    raise ValueError(f"unknown mask_source {mask_source!r}")


def evaluate_config(eval_dir, model: HitlTseModel, mask_source="none",
                    strategy: str = "tse-only", mask_dir=None,
                    with_external_metrics: bool = False,
                    limit: int | None = None) -> EvalReport:
    """Score a materialized eval set under one strategy.

    mask_source is "none", "human" (mask files named <sample_id>.json in
    mask_dir), or a MaskingFunctionSpec. A sample is "flagged" when its mask
    has any nonzero sample.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    eval_dir = Path(eval_dir)
    manifest = load_manifest(eval_dir / "manifest.json")
    if mask_source == "human" and mask_dir is None:
        raise ValueError("mask_source='human' requires mask_dir")

    if mask_source == "human":
        missing = [e["id"] for e in manifest["samples"]
                   if not (Path(mask_dir) / f"{e['id']}.json").exists()]
        if missing:
            raise FileNotFoundError(f"missing human mask files for: {missing}")

    report = EvalReport(config={
        "eval_dir": str(eval_dir),
        "strategy": strategy,
        "mask_source": (mask_source.kind if isinstance(mask_source, MaskingFunctionSpec)
                        else mask_source),
    })
    samples = manifest["samples"][:limit] if limit else manifest["samples"]
    for entry in samples:
        sample_dir = eval_dir / entry["id"]
        try:
            mixture = read_wav(sample_dir / entry["files"]["mixture"])
            target = read_wav(sample_dir / entry["files"]["target_clean"])
            enrollment = read_wav(sample_dir / entry["files"]["enrollment"])
            emb = speaker_encode(model, enrollment)
            y_tse, tse_mask, _ = tse_forward(model, mixture, emb)
            mask = _resolve_mask(entry["id"], y_tse, target, mask_source, mask_dir)
            if len(mask) != len(y_tse):
                raise ValueError(f"mask length {len(mask)} != audio length {len(y_tse)}")
            flagged = mask.any()
            estimate = _apply_strategy(model, strategy, mixture, emb, y_tse,
                                       tse_mask, mask, flagged)
            row = {
                "id": entry["id"],
                "strategy": strategy,
                "mask_source": report.config["mask_source"],
                "si_sdr": si_sdr(estimate, target),
                "flagged": flagged,
            }
            if with_external_metrics:
                for metric in ("pesq", "dnsmos"):
                    result = metric_adapter(metric, estimate,
                                            target if metric == "pesq" else None)
                    if result is not None:
                        row[metric] = result["value"]
                        row[f"{metric}_tool"] = result["tool"]
            report.rows.append(row)
        except (ValueError, FileNotFoundError) as exc:
            if mask_source == "human" and isinstance(exc, ValueError):
                # keep going on per-item mask/audio mismatches
                report.rows.append({"id": entry["id"], "error": str(exc)})
                continue
            raise
    return report.finalize()


def _apply_strategy(model, strategy, mixture, emb, y_tse, tse_mask, mask, flagged):
    if strategy == "tse-only":
        return y_tse
    if strategy == "successive-tse":
        if not flagged:
            return y_tse
        # second pass consumes the first-pass output, not the original mixture,
        # with the same enrollment embedding
        y_second, _, _ = tse_forward(model, y_tse, emb)
        return y_second
    state = adapt_state(model, tse_mask)
    y_refine = refine_forward(model, mixture, emb, state, mask)
    if strategy == "refine-replace":
        return y_refine if flagged else y_tse
    return compose_output(y_tse, y_refine, mask)  # strategy == "refine"


def replay_human_masks(mask_dir, eval_dir, model: HitlTseModel,
                       strategy: str = "refine") -> EvalReport:
    """Re-score an eval set with previously collected human masks."""
    return evaluate_config(eval_dir, model, mask_source="human",
                           strategy=strategy, mask_dir=mask_dir)


def paired_t_test(scores_a: list[float], scores_b: list[float]) -> dict[str, float]:
    """Two-sided paired t-test on matched score lists."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("score lists must have equal lengths")
    n = len(a)
    if n < 2:
        raise ValueError("need at least 2 paired scores")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ValueError("degenerate paired t-test: all differences identical")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    p = 2.0 * float(stats.t.sf(abs(t), df=n - 1))
    return {"t": t, "p": p}


def select_uniform_si_sdr_subset(rows: list[dict], count: int, seed: int = 0,
                                 bin_width: float = 2.0) -> list[dict]:
    """Stratified subsample over SI-SDR bins, for human-study sample selection."""
    rng = np.random.default_rng(seed)
    bins: dict[int, list[dict]] = {}
    for row in rows:
        bins.setdefault(int(math.floor(row["si_sdr"] / bin_width)), []).append(row)
    for items in bins.values():
        rng.shuffle(items)
    selected: list[dict] = []
    while len(selected) < count and any(bins.values()):
        for key in sorted(bins):
            if bins[key] and len(selected) < count:
                selected.append(bins[key].pop())
    return selected
