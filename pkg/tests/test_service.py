import numpy as np
import pytest
from fastapi.testclient import TestClient

from tse_refine.masks import load_mask
from tse_refine.service import (create_app, normalize_regions,
                                regions_to_sample_mask)


class TestRegionNormalization:
    def test_merge_overlaps(self):
        regions = [[0.3, 0.5], [0.0, 0.1], [0.25, 0.35]]
        assert normalize_regions(regions, 0.5) == [[0.0, 0.1], [0.25, 0.5]]

    def test_adjacent_regions_merge(self):
        assert normalize_regions([[0.0, 0.1], [0.1, 0.2]], 0.5) == [[0.0, 0.2]]

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            normalize_regions([[0.4, 0.6]], 0.5)
        with pytest.raises(ValueError):
            normalize_regions([[-0.1, 0.2]], 0.5)
        with pytest.raises(ValueError):
            normalize_regions([[0.3, 0.3]], 0.5)

    def test_quarter_to_half_second_maps_to_samples(self):
        mask = regions_to_sample_mask([[0.25, 0.5]], 8000, 16000)
        assert mask.values[:4000].sum() == 0
        assert mask.values[4000:8000].all()

    def test_fractional_bounds_floor_and_ceil(self):
        mask = regions_to_sample_mask([[0.100001, 0.199999]], 8000, 16000)
        on = np.flatnonzero(mask.values)
        assert on[0] == 1600  # floor(0.100001 * 16000)
        assert on[-1] == 3200 - 1  # ceil(0.199999 * 16000) exclusive


@pytest.fixture(scope="module")
def service(tmp_path_factory):
    from tse_refine.mixer import materialize_eval_set
    from tse_refine.models import HitlTseModel, TseModelConfig, save_checkpoint
    from tse_refine.toy import make_toy_corpus
    import torch

    root = tmp_path_factory.mktemp("service")
    index = make_toy_corpus(root / "corpus", n_speakers=4,
                            utterances_per_speaker=4, duration_s=0.5, seed=0)
    eval_dir = root / "eval_set"
    materialize_eval_set(index, 10, eval_dir, k_speakers=2, duration_s=0.5,
                         snr_range=(-5.0, 5.0), seed=7)
    torch.manual_seed(0)
    ckpt = root / "model.pt"
    save_checkpoint(ckpt, HitlTseModel(TseModelConfig.toy()),
                    extra={"stage": "untrained"})
    app = create_app(eval_dir, root / "annotations.db", root / "masks",
                     root / "refined", checkpoint_path=ckpt)
    return {"client": TestClient(app), "root": root, "eval_dir": eval_dir}


def make_session(client, n=3, fam=0, annotator="tester"):
    resp = client.post("/sessions", json={
        "annotator_id": annotator,
        "sample_ids": [f"sample_{i:05d}" for i in range(n)],
        "familiarization_count": fam})
    assert resp.status_code == 200
    return resp.json()["session_id"]


class TestSessionFlow:
    def test_next_sample_idempotent(self, service):
        client = service["client"]
        sid = make_session(client)
        first = client.get(f"/sessions/{sid}/next").json()
        second = client.get(f"/sessions/{sid}/next").json()
        assert first == second
        assert first["sample_id"] == "sample_00000"
        assert first["done"] is False
        assert set(first["audio"]) == {"mixture", "enrollment", "tse_output"}

    def test_unknown_session(self, service):
        assert service["client"].get("/sessions/nope/next").status_code == 404

    def test_audio_bytes_match_disk(self, service):
        client = service["client"]
        resp = client.get("/samples/sample_00000/audio/mixture")
        assert resp.status_code == 200
        on_disk = (service["eval_dir"] / "sample_00000" / "mixture.wav").read_bytes()
        assert resp.content == on_disk

    def test_unknown_sample_404(self, service):
        assert service["client"].get(
            "/samples/sample_99999/audio/mixture").status_code == 404


class TestAnnotation:
    def test_region_to_mask_round_trip(self, service):
        client = service["client"]
        sid = make_session(client)
        resp = client.post("/samples/sample_00001/annotation", json={
            "session_id": sid, "regions": [[0.25, 0.5]]})
        assert resp.status_code == 200
        body = resp.json()
        assert body["mask_regions"] == [[4000, 8000]]
        assert body["marked_samples"] == 4000
        mask = load_mask(service["root"] / "masks" / "sample_00001.json")
        assert mask.values[:4000].sum() == 0
        assert mask.values[4000:].all()

    def test_invalid_region_rejected(self, service):
        client = service["client"]
        sid = make_session(client)
        resp = client.post("/samples/sample_00001/annotation", json={
            "session_id": sid, "regions": [[0.4, 0.9]]})
        assert resp.status_code == 422


class TestRefine:
    def test_refine_without_annotation_conflict(self, service):
        client = service["client"]
        sid = make_session(client)
        resp = client.post("/samples/sample_00002/refine",
                           json={"session_id": sid})
        assert resp.status_code == 409

    def test_empty_annotation_refined_equals_tse_bytes(self, service):
        client = service["client"]
        sid = make_session(client)
        resp = client.post("/samples/sample_00002/annotation", json={
            "session_id": sid, "regions": []})
        assert resp.status_code == 200
        refined = client.post("/samples/sample_00002/refine",
                              json={"session_id": sid}).json()
        refined_bytes = client.get(refined["audio_url"]).content
        tse_bytes = client.get("/samples/sample_00002/audio/tse_output").content
        assert refined_bytes == tse_bytes

    def test_refine_cache_hit_on_same_mask(self, service):
        client = service["client"]
        sid = make_session(client)
        client.post("/samples/sample_00000/annotation", json={
            "session_id": sid, "regions": [[0.0, 0.25]]})
        first = client.post("/samples/sample_00000/refine",
                            json={"session_id": sid}).json()
        second = client.post("/samples/sample_00000/refine",
                             json={"session_id": sid}).json()
        assert first["audio_url"] == second["audio_url"]
        assert second["cached"] is True

    def test_nonempty_mask_changes_marked_span_only(self, service):
        client = service["client"]
        sid = make_session(client)
        client.post("/samples/sample_00001/annotation", json={
            "session_id": sid, "regions": [[0.25, 0.5]]})
        refined = client.post("/samples/sample_00001/refine",
                              json={"session_id": sid}).json()
        from tse_refine.audio import read_wav
        import re
        mask_hash = refined["audio_url"].rsplit("/", 1)[1]
        y_out = read_wav(service["root"] / "refined"
                         / f"sample_00001__{mask_hash}.wav")
        y_tse = read_wav(service["root"] / "refined" / "sample_00001__tse.wav")
        np.testing.assert_array_equal(y_out.samples[:4000], y_tse.samples[:4000])


class TestRatingsAndExport:
    def test_mos_out_of_range_rejected(self, service):
        client = service["client"]
        sid = make_session(client)
        resp = client.post("/samples/sample_00000/rating", json={
            "session_id": sid, "config": "tse", "mos": 6})
        assert resp.status_code == 422

    def test_bad_config_rejected(self, service):
        client = service["client"]
        sid = make_session(client)
        resp = client.post("/samples/sample_00000/rating", json={
            "session_id": sid, "config": "oracle", "mos": 3})
        assert resp.status_code == 422

    def test_scripted_session_familiarization_excluded(self, service):
        """10 samples, 5 familiarization: export carries exactly 5 analysis
        rows and the MOS mean is the arithmetic mean of the analysis ratings."""
        client = service["client"]
        sid = make_session(client, n=10, fam=5)
        scores = {}
        for i in range(10):
            nxt = client.get(f"/sessions/{sid}/next").json()
            sample_id = nxt["sample_id"]
            assert nxt["index"] == i
            assert nxt["familiarization"] == (i < 5)
            client.post(f"/samples/{sample_id}/annotation", json={
                "session_id": sid, "regions": [[0.0, 0.25]]})
            client.post(f"/samples/{sample_id}/refine", json={"session_id": sid})
            mos = (i % 5) + 1
            client.post(f"/samples/{sample_id}/rating", json={
                "session_id": sid, "config": "refine", "mos": mos})
            scores[sample_id] = mos
        assert client.get(f"/sessions/{sid}/next").json()["done"] is True

        export = client.get(f"/sessions/{sid}/export").json()
        assert len(export["rows"]) == 5
        analysis_ids = [r["sample_id"] for r in export["rows"]]
        assert analysis_ids == [f"sample_{i:05d}" for i in range(5, 10)]
        expected = np.mean([scores[s] for s in analysis_ids])
        assert export["mos_mean"]["refine"] == pytest.approx(expected, abs=1e-12)
        for row in export["rows"]:
            assert row["ratings"] == {"refine": scores[row["sample_id"]]}
            assert row["regions"] == [[0.0, 0.25]]
