import warnings

import pytest
import torch

warnings.filterwarnings("ignore", message=".*enable_nested_tensor.*")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print the collected acceptance verdict lines after the run."""
    try:
        import acceptance_log
    except ImportError:
        return
    if acceptance_log.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def untrained_setup(tmp_path_factory):
    """Tiny corpus + eval set + untrained toy checkpoint: fast shared fixture."""
    from tse_refine.mixer import materialize_eval_set
    from tse_refine.models import HitlTseModel, TseModelConfig, save_checkpoint
    from tse_refine.toy import make_toy_corpus

    root = tmp_path_factory.mktemp("untrained")
    index = make_toy_corpus(root / "corpus", n_speakers=4,
                            utterances_per_speaker=4, duration_s=0.5, seed=0)
    eval_dir = root / "eval_set"
    materialize_eval_set(index, 6, eval_dir, k_speakers=2, duration_s=0.5,
                         snr_range=(-5.0, 5.0), seed=1)
    torch.manual_seed(0)
    model = HitlTseModel(TseModelConfig.toy())
    ckpt = root / "model.pt"
    save_checkpoint(ckpt, model, extra={"stage": "untrained"})
    return {"root": root, "index": index, "corpus_dir": root / "corpus",
            "eval_dir": eval_dir, "checkpoint": ckpt, "model": model}


@pytest.fixture(scope="session")
def trained_pipeline(tmp_path_factory):
    """Full toy training pipeline; slow (several minutes), shared across tests."""
    import time

    from tse_refine.toy import run_toy_pipeline

    work = tmp_path_factory.mktemp("pipeline")
    start = time.perf_counter()
    result = run_toy_pipeline(work, seed=0)
    result["wall_time_s"] = time.perf_counter() - start
    return result
