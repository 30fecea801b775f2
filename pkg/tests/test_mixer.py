import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from tse_refine.audio import read_wav, write_wav, AudioSignal
from tse_refine.mixer import (build_index, load_manifest, make_mixture,
                              materialize_eval_set)
from tse_refine.toy import make_toy_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    index = make_toy_corpus(root, n_speakers=4, utterances_per_speaker=4,
                            duration_s=0.5, with_noise=True, seed=0)
    return root, index


class TestBuildIndex:
    def test_speaker_dirs(self, corpus):
        root, index = corpus
        assert len(index.speakers) == 4
        assert all(len(utts) == 4 for utts in index.speakers.values())
        assert len(index.noise_files) == 4

    def test_single_utterance_speaker_excluded(self, tmp_path):
        rng = np.random.default_rng(0)
        for name, count in [("a", 3), ("b", 1)]:
            d = tmp_path / name
            d.mkdir()
            for i in range(count):
                write_wav(d / f"u{i}.wav",
                          AudioSignal(rng.standard_normal(800) * 0.1))
        index = build_index(tmp_path)
        assert list(index.speakers) == ["a"]

    def test_manifest_dedup(self, corpus, tmp_path):
        root, _ = corpus
        utts = sorted((root / "spk00").glob("*.wav"))
        manifest = {"s0": [str(utts[0]), str(utts[0]), str(utts[1])],
                    "s1": [str(u) for u in sorted((root / "spk01").glob("*.wav"))]}
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(manifest))
        index = build_index(path, layout="manifest")
        assert len(index.speakers["s0"]) == 2

    def test_empty_corpus_errors(self, tmp_path):
        (tmp_path / "only").mkdir()
        with pytest.raises(ValueError):
            build_index(tmp_path)


class TestMakeMixture:
    def test_determinism(self, corpus):
        _, index = corpus
        a = make_mixture(index, 2, False, 0.5, (-5, 5), seed=77)
        b = make_mixture(index, 2, False, 0.5, (-5, 5), seed=77)
        np.testing.assert_array_equal(a.mixture.samples, b.mixture.samples)
        assert a.target_speaker_id == b.target_speaker_id
        assert a.mix_snrs == b.mix_snrs

    def test_zero_snr_equal_energy(self, corpus):
        _, index = corpus
        sample = make_mixture(index, 2, False, 0.5, (0.0, 0.0), seed=3)
        assert sample.interferers[0].energy() == pytest.approx(
            sample.target_clean.energy(), rel=1e-10)

    def test_reconstruction_with_noise(self, corpus):
        _, index = corpus
        sample = make_mixture(index, 3, True, 0.5, (-10, 10), seed=5)
        total = sample.target_clean.samples.copy()
        for intf in sample.interferers:
            total = total + intf.samples
        total = total + sample.noise.samples
        np.testing.assert_allclose(sample.mixture.samples, total, atol=1e-6)

    def test_enrollment_disjoint(self, corpus):
        _, index = corpus
        for seed in range(20):
            sample = make_mixture(index, 2, False, 0.5, (-10, 10), seed=seed)
            paths = sample.component_paths
            assert paths["enrollment"] != paths["target"]
            assert paths["enrollment"] not in paths["interferers"]

    def test_drawn_snr_measured(self, corpus):
        _, index = corpus
        from tse_refine.audio import snr  # noqa: F401
        sample = make_mixture(index, 2, False, 0.5, (-10, 10), seed=11)
        measured = 10 * np.log10(sample.target_clean.energy()
                                 / sample.interferers[0].energy())
        assert measured == pytest.approx(sample.mix_snrs[0], abs=1e-4)

    def test_insufficient_speakers(self, corpus):
        _, index = corpus
        with pytest.raises(ValueError):
            make_mixture(index, 10, False, 0.5, (-10, 10), seed=0)


def _tree_hash(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(path.relative_to(root).as_posix().encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


class TestMaterializeEvalSet:
    def test_rerun_identical(self, corpus, tmp_path):
        _, index = corpus
        for name in ("a", "b"):
            materialize_eval_set(index, 5, tmp_path / name, k_speakers=2,
                                 duration_s=0.5, seed=9)
        assert _tree_hash(tmp_path / "a") == _tree_hash(tmp_path / "b")

    def test_count_zero(self, corpus, tmp_path):
        _, index = corpus
        manifest_path = materialize_eval_set(index, 0, tmp_path / "empty",
                                             duration_s=0.5, seed=0)
        assert load_manifest(manifest_path)["samples"] == []

    def test_reconstruction_and_snr(self, corpus, tmp_path):
        _, index = corpus
        out = tmp_path / "set"
        materialize_eval_set(index, 6, out, k_speakers=2, with_noise=True,
                             duration_s=0.5, seed=13)
        manifest = load_manifest(out / "manifest.json")
        for entry in manifest["samples"]:
            d = out / entry["id"]
            mixture = read_wav(d / entry["files"]["mixture"])
            total = np.zeros(len(mixture))
            components = {}
            for key, name in entry["files"].items():
                if key in ("mixture", "enrollment"):
                    continue
                components[key] = read_wav(d / name)
                total = total + components[key].samples
            np.testing.assert_allclose(mixture.samples, total, atol=1e-6)
            # measured SNRs match the manifest draws
            target = components["target_clean"]
            others = [k for k in components if k != "target_clean"]
            for snr_val, key in zip(entry["mix_snrs"], others):
                measured = 10 * np.log10(target.energy() / components[key].energy())
                assert measured == pytest.approx(snr_val, abs=1e-4)

    def test_snr_histogram_roughly_uniform(self, corpus, tmp_path):
        # cheap distribution sanity check on the drawn SNRs in the manifest
        _, index = corpus
        out = tmp_path / "hist"
        materialize_eval_set(index, 60, out, k_speakers=2, duration_s=0.25, seed=21)
        manifest = load_manifest(out / "manifest.json")
        snrs = [e["mix_snrs"][0] for e in manifest["samples"]]
        counts, _ = np.histogram(snrs, bins=4, range=(-10, 10))
        from scipy import stats
        _, p = stats.chisquare(counts)
        assert p > 0.001
