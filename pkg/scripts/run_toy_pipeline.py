#!/usr/bin/env python3
"""Run the desk-scale end-to-end experiment: synthesize a corpus, train both
stages, materialize an eval set, and print the strategy comparison.

Usage:
    python3 scripts/run_toy_pipeline.py --work-dir runs/toy [--seed 0]
"""

import argparse
import json
from pathlib import Path


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--work-dir", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--tse-epochs", type=int, default=16)
    parser.add_argument("--refine-epochs", type=int, default=48)
    parser.add_argument("--eval-count", type=int, default=48)
    args = parser.parse_args()

    from tse_refine.evaluation import evaluate_config
    from tse_refine.masks import MaskingFunctionSpec
    from tse_refine.models import load_checkpoint
    from tse_refine.toy import run_toy_pipeline

    result = run_toy_pipeline(args.work_dir, tse_epochs=args.tse_epochs,
                              refine_epochs=args.refine_epochs,
                              eval_count=args.eval_count, seed=args.seed)
    model, _ = load_checkpoint(result["refine_checkpoint"])
    spec = MaskingFunctionSpec(kind="dbfs_prob", window_len=2000,
                               rng_seed=args.seed)
    summary = {}
    for strategy in ("tse-only", "refine", "successive-tse"):
        report = evaluate_config(result["eval_dir"], model, spec, strategy)
        summary[strategy] = report.aggregates
        report.to_json(Path(args.work_dir) / f"report_{strategy}.json")
    print(json.dumps({"checkpoints": {k: v for k, v in result.items()
                                      if k.endswith("checkpoint")},
                      "aggregates": summary}, indent=2))


if __name__ == "__main__":
    main()
