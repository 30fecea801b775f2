"""Command-line entry point wiring the pipeline: corpus mixing, mask synthesis,
training stages, evaluation runs, checkpoint export, and the annotation service.

Exit codes: 0 ok, 1 runtime error, 2 usage error. Every run writes a
resolved-config snapshot next to its outputs.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import __version__

logger = logging.getLogger("tse_refine")


def _write_snapshot(out_path: Path, params: dict) -> None:
    snapshot_path = Path(out_path).with_suffix("").with_name(
        Path(out_path).name.split(".")[0] + ".resolved_config.json")
    with open(snapshot_path, "w") as f:
        json.dump(params, f, indent=2, default=str)


@click.group()
@click.option("--log-level", default="INFO", show_default=True)
@click.version_option(__version__)
def main(log_level):
    """Human-in-the-loop target speech extraction toolkit."""
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


@main.group()
def mix():
    """Corpus indexing and mixture materialization."""


@mix.command("make-eval")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--layout", default="speaker-dirs", type=click.Choice(["speaker-dirs", "manifest"]))
@click.option("--count", default=100, show_default=True)
@click.option("--k", "k_speakers", default=2, show_default=True)
@click.option("--noise/--no-noise", default=False)
@click.option("--duration", default=5.0, show_default=True)
@click.option("--snr-lo", default=-10.0, show_default=True)
@click.option("--snr-hi", default=10.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def mix_make_eval(corpus, layout, count, k_speakers, noise, duration,
                  snr_lo, snr_hi, seed, out):
    """Materialize a fixed eval set with a JSON manifest."""
    from .mixer import build_index, materialize_eval_set
    index = build_index(corpus, layout)
    manifest = materialize_eval_set(index, count, out, k_speakers, noise,
                                    duration, (snr_lo, snr_hi), seed)
    _write_snapshot(Path(out) / "run", dict(command="mix make-eval", corpus=corpus,
                    layout=layout, count=count, k=k_speakers, noise=noise,
                    duration=duration, snr_range=[snr_lo, snr_hi], seed=seed))
    click.echo(f"wrote {count} samples; manifest: {manifest}")


@main.group()
def mask():
    """Edit-mask synthesis and inspection."""


@mask.command("synth")
@click.option("--kind", required=True,
              type=click.Choice(["mean-ae", "max-ae", "dbfs", "dbfs-prob", "global-snr"]))
@click.option("--tse", "tse_path", required=True, type=click.Path(exists=True))
@click.option("--clean", "clean_path", required=True, type=click.Path(exists=True))
@click.option("--threshold", default=None, type=float)
@click.option("--sigma", default=3.0, show_default=True)
@click.option("--window", default=4000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("-o", "--out", required=True, type=click.Path())
def mask_synth(kind, tse_path, clean_path, threshold, sigma, window, seed, out):
    """Synthesize an edit mask from extractor output vs clean reference."""
    from .audio import read_wav
    from .masks import MaskingFunctionSpec, apply_masking_function, save_mask
    spec = MaskingFunctionSpec(kind=kind.replace("-", "_"), threshold=threshold,
                               threshold_sigma=sigma, window_len=window,
                               rng_seed=seed)
    result = apply_masking_function(read_wav(tse_path), read_wav(clean_path), spec)
    save_mask(out, result)
    _write_snapshot(Path(out), dict(command="mask synth", kind=kind,
                    tse=tse_path, clean=clean_path, threshold=spec.threshold,
                    sigma=sigma, window=window, seed=seed))
    click.echo(f"wrote mask ({int(result.values.sum())} marked samples) to {out}")


@main.group()
def train():
    """Two-stage model training."""


def _load_train_config(config_path, stage):
    from .masks import MaskingFunctionSpec
    from .models import TseModelConfig
    from .training import TrainConfig
    with open(config_path) as f:
        raw = json.load(f)
    raw["stage"] = stage
    if "model" in raw:
        raw["model"] = TseModelConfig(**raw["model"])
    if raw.get("masking"):
        raw["masking"] = MaskingFunctionSpec(**raw["masking"])
    if "snr_range" in raw:
        raw["snr_range"] = tuple(raw["snr_range"])
    corpus = raw.pop("corpus")
    layout = raw.pop("corpus_layout", "speaker-dirs")
    work_dir = raw.pop("work_dir")
    return TrainConfig(**raw), corpus, layout, work_dir


@train.command("tse")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def train_tse_cmd(config_path):
    """Stage 1: train the extractor and speaker encoder."""
    from .mixer import build_index
    from .training import train_tse
    config, corpus, layout, work_dir = _load_train_config(config_path, "tse")
    ckpt = train_tse(config, build_index(corpus, layout), work_dir)
    click.echo(f"best checkpoint: {ckpt}")


@train.command("refine")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def train_refine_cmd(config_path):
    """Stage 2: train adaptation layer + refiner on a frozen extractor."""
    from .mixer import build_index
    from .training import train_refinement
    config, corpus, layout, work_dir = _load_train_config(config_path, "refine")
    ckpt = train_refinement(config, build_index(corpus, layout), work_dir)
    click.echo(f"best checkpoint: {ckpt}")


@main.group(name="eval")
def eval_group():
    """Evaluation runs."""


@eval_group.command("run")
@click.option("--eval-dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--strategy", default="tse-only", show_default=True,
              type=click.Choice(["tse-only", "refine", "successive-tse", "refine-replace"]))
@click.option("--mask-source", default="none", show_default=True,
              help="'none', 'human', or a masking kind like 'dbfs-prob'")
@click.option("--mask-dir", default=None, type=click.Path())
@click.option("--mask-seed", default=0, show_default=True)
@click.option("--external-metrics/--no-external-metrics", default=False)
@click.option("--out", required=True, type=click.Path())
def eval_run(eval_dir, checkpoint, strategy, mask_source, mask_dir, mask_seed,
             external_metrics, out):
    """Score an eval set under a strategy and write JSON + CSV reports."""
    from .evaluation import evaluate_config
    from .masks import MASK_KINDS, MaskingFunctionSpec
    from .models import load_checkpoint
    model, _ = load_checkpoint(checkpoint)
    source = mask_source
    normalized = mask_source.replace("-", "_")
    if normalized in MASK_KINDS:
        source = MaskingFunctionSpec(kind=normalized, rng_seed=mask_seed)
    elif mask_source not in ("none", "human"):
        raise click.UsageError(f"unknown mask source {mask_source!r}")
    report = evaluate_config(eval_dir, model, source, strategy, mask_dir,
                             with_external_metrics=external_metrics)
    report.to_json(out)
    report.to_csv(str(Path(out).with_suffix(".csv")))
    _write_snapshot(Path(out), dict(command="eval run", eval_dir=eval_dir,
                    checkpoint=checkpoint, strategy=strategy,
                    mask_source=mask_source, mask_seed=mask_seed))
    click.echo(json.dumps(report.aggregates, indent=2))


@main.group()
def export():
    """Checkpoint import/export."""


@export.command("model")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def export_model(checkpoint, out):
    """Dump named weight arrays (npz) and config (json) from a checkpoint."""
    from .models import export_weights, load_checkpoint
    model, _ = load_checkpoint(checkpoint)
    export_weights(out, model)
    click.echo(f"exported weights and config to {out}")


@main.command("serve")
@click.option("--eval-dir", required=True, type=click.Path(exists=True),
              envvar="TSE_REFINE_EVAL_DIR")
@click.option("--checkpoint", default=None, type=click.Path(),
              envvar="TSE_REFINE_CHECKPOINT")
@click.option("--state-dir", required=True, type=click.Path(),
              envvar="TSE_REFINE_STATE_DIR")
@click.option("--ui-dir", default=None, type=click.Path(), envvar="TSE_REFINE_UI_DIR")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8400, show_default=True, envvar="TSE_REFINE_PORT")
def serve(eval_dir, checkpoint, state_dir, ui_dir, host, port):
    """Launch the annotation service."""
    import uvicorn

    from .service import create_app
    state = Path(state_dir)
    state.mkdir(parents=True, exist_ok=True)
    app = create_app(eval_dir, state / "annotations.sqlite3", state / "masks",
                     state / "refined", checkpoint, ui_dir)
    _write_snapshot(state / "serve", dict(command="serve", eval_dir=eval_dir,
                    checkpoint=checkpoint, state_dir=state_dir, ui_dir=ui_dir,
                    host=host, port=port))
    uvicorn.run(app, host=host, port=port)


def run(argv=None) -> int:
    """Programmatic entry point returning an exit code (0 ok, 1 error, 2 usage)."""
    try:
        main.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 2
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        return 1
    except Exception as exc:  # runtime failures map to exit 1
        logger.error("error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(run())
