#!/usr/bin/env python3
"""Spin up a self-contained annotation-service demo: builds a tiny synthetic
corpus and eval set, saves an untrained toy checkpoint, and serves the
annotation API (plus the UI bundle if frontend/dist exists).

Usage:
    python3 scripts/serve_demo.py --work-dir runs/demo [--port 8400]
"""

import argparse
from pathlib import Path


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--work-dir", required=True)
    parser.add_argument("--checkpoint", default=None,
                        help="trained checkpoint; defaults to a fresh toy model")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8400)
    parser.add_argument("--samples", type=int, default=10)
    args = parser.parse_args()

    import torch
    import uvicorn

    from tse_refine.mixer import materialize_eval_set
    from tse_refine.models import HitlTseModel, TseModelConfig, save_checkpoint
    from tse_refine.service import create_app
    from tse_refine.toy import make_toy_corpus

    work = Path(args.work_dir)
    eval_dir = work / "eval_set"
    if not (eval_dir / "manifest.json").exists():
        index = make_toy_corpus(work / "corpus", n_speakers=4,
                                utterances_per_speaker=4, duration_s=1.0, seed=0)
        materialize_eval_set(index, args.samples, eval_dir, k_speakers=2,
                             duration_s=1.0, snr_range=(-5.0, 5.0), seed=1)
    checkpoint = args.checkpoint
    if checkpoint is None:
        checkpoint = work / "toy_model.pt"
        if not Path(checkpoint).exists():
            torch.manual_seed(0)
            save_checkpoint(checkpoint, HitlTseModel(TseModelConfig.toy()),
                            extra={"stage": "demo"})

    ui_dist = Path(__file__).resolve().parent.parent / "frontend" / "dist"
    app = create_app(eval_dir, work / "annotations.sqlite3", work / "masks",
                     work / "refined", checkpoint,
                     ui_dir=str(ui_dist) if ui_dist.is_dir() else None)
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":
    main()
