import numpy as np
import pytest
import torch

from tse_refine.audio import AudioSignal
from tse_refine.masks import EditMask, frame_count
from tse_refine.models import (HitlTseModel, RefinementState, SpeakerEmbedding,
                               TseModelConfig, adapt_state, compose_output,
                               downsample_mask_reference, export_weights,
                               extract_and_refine, load_checkpoint,
                               negative_si_sdr_loss, refine_forward,
                               save_checkpoint, speaker_encode, tse_forward)


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return HitlTseModel(TseModelConfig.toy())


def rand_signal(n, seed=0):
    return AudioSignal(np.random.default_rng(seed).standard_normal(n) * 0.1)


class TestSpeakerEncode:
    def test_deterministic(self, model):
        enr = rand_signal(8000)
        a = speaker_encode(model, enr)
        b = speaker_encode(model, enr)
        np.testing.assert_array_equal(a.vector, b.vector)

    def test_unit_norm(self, model):
        emb = speaker_encode(model, rand_signal(8000, 1))
        assert np.linalg.norm(emb.vector) == pytest.approx(1.0, abs=1e-6)

    def test_silent_enrollment_errors(self, model):
        with pytest.raises(ValueError):
            speaker_encode(model, AudioSignal(np.zeros(8000)))


class TestTseForward:
    @pytest.mark.parametrize("n", [16000, 80000, 80007])
    def test_length_preserving(self, model, n):
        emb = speaker_encode(model, rand_signal(8000, 2))
        y, mask, latent = tse_forward(model, rand_signal(n, 3), emb)
        assert len(y) == n
        assert np.all(np.isfinite(y.samples))
        cfg = model.config
        assert mask.shape == (cfg.channels, frame_count(n, cfg.encoder_kernel,
                                                        cfg.encoder_stride))

    def test_empty_input_errors(self, model):
        emb = speaker_encode(model, rand_signal(8000, 2))
        with pytest.raises(ValueError):
            tse_forward(model, AudioSignal(np.zeros(0)), emb)

    def test_eval_deterministic(self, model):
        emb = speaker_encode(model, rand_signal(8000, 4))
        mix = rand_signal(16000, 5)
        a, _, _ = tse_forward(model, mix, emb)
        b, _, _ = tse_forward(model, mix, emb)
        np.testing.assert_array_equal(a.samples, b.samples)


class TestAdaptState:
    def test_shape(self, model):
        cfg = model.config
        mask = np.random.default_rng(0).random((cfg.channels, 50)).astype(np.float32)
        state = adapt_state(model, mask)
        assert state.frames.shape == (cfg.channels, 50)

    def test_frame_locality(self, model):
        cfg = model.config
        rng = np.random.default_rng(1)
        mask = rng.random((cfg.channels, 50)).astype(np.float32)
        changed = mask.copy()
        changed[:, 7] += 1.0
        a = adapt_state(model, mask).frames
        b = adapt_state(model, changed).frames
        diff = np.abs(a - b).max(axis=0)
        assert diff[7] > 0
        np.testing.assert_array_equal(np.delete(diff, 7), 0)

    def test_zero_input_bias_only(self, model):
        cfg = model.config
        state = adapt_state(model, np.zeros((cfg.channels, 10), dtype=np.float32))
        # every frame equals the bias vector
        np.testing.assert_allclose(state.frames,
                                   np.tile(state.frames[:, :1], (1, 10)), atol=0)


class TestRefineForward:
    @pytest.mark.parametrize("n", [16000, 80000])
    def test_shape_contract(self, model, n):
        emb = speaker_encode(model, rand_signal(8000, 6))
        mix = rand_signal(n, 7)
        _, tse_mask, _ = tse_forward(model, mix, emb)
        state = adapt_state(model, tse_mask)
        mask = EditMask(np.zeros(n, dtype=np.uint8))
        y = refine_forward(model, mix, emb, state, mask)
        assert len(y) == n
        assert np.all(np.isfinite(y.samples))

    def test_mask_sensitivity(self, model):
        emb = speaker_encode(model, rand_signal(8000, 8))
        mix = rand_signal(16000, 9)
        _, tse_mask, _ = tse_forward(model, mix, emb)
        state = adapt_state(model, tse_mask)
        y0 = refine_forward(model, mix, emb, state,
                            EditMask(np.zeros(16000, dtype=np.uint8)))
        y1 = refine_forward(model, mix, emb, state,
                            EditMask(np.ones(16000, dtype=np.uint8)))
        assert not np.array_equal(y0.samples, y1.samples)

    def test_mask_length_mismatch(self, model):
        emb = speaker_encode(model, rand_signal(8000, 8))
        mix = rand_signal(16000, 9)
        _, tse_mask, _ = tse_forward(model, mix, emb)
        state = adapt_state(model, tse_mask)
        with pytest.raises(ValueError):
            refine_forward(model, mix, emb, state,
                           EditMask(np.zeros(15000, dtype=np.uint8)))

    def test_mask_frame_alignment(self, model):
        # numpy downsampler agrees with the in-model unfold path
        cfg = model.config
        for n in (1600, 16000, 16007):
            rng = np.random.default_rng(n)
            mask = EditMask((rng.random(n) < 0.4).astype(np.uint8))
            ref = downsample_mask_reference(model, mask)
            frames = frame_count(n, cfg.encoder_kernel, cfg.encoder_stride)
            padded = torch.tensor(mask.values, dtype=torch.float32).unsqueeze(0)
            got = model.refiner.downsample_mask_batch(padded, frames)[0].numpy()
            # the torch path zero-pads the tail; the numpy path averages the
            # clipped span, so compare on fully covered frames
            full = (np.arange(frames) * cfg.encoder_stride
                    + cfg.encoder_kernel) <= n
            np.testing.assert_allclose(got[full], ref[full], atol=1e-6)


class TestComposeOutput:
    def test_all_zero_mask(self, model):
        y_tse = rand_signal(8000, 10)
        y_ref = rand_signal(8000, 11)
        out = compose_output(y_tse, y_ref, EditMask(np.zeros(8000, dtype=np.uint8)))
        np.testing.assert_array_equal(out.samples, y_tse.samples)

    def test_all_one_mask(self):
        y_tse = rand_signal(8000, 10)
        y_ref = rand_signal(8000, 11)
        out = compose_output(y_tse, y_ref, EditMask(np.ones(8000, dtype=np.uint8)))
        np.testing.assert_array_equal(out.samples, y_ref.samples)

    def test_region_splice_bit_exact(self):
        y_tse = rand_signal(16000, 12)
        y_ref = rand_signal(16000, 13)
        values = np.zeros(16000, dtype=np.uint8)
        values[4000:8000] = 1
        out = compose_output(y_tse, y_ref, EditMask(values))
        np.testing.assert_array_equal(out.samples[4000:8000],
                                      y_ref.samples[4000:8000])
        np.testing.assert_array_equal(out.samples[:4000], y_tse.samples[:4000])
        np.testing.assert_array_equal(out.samples[8000:], y_tse.samples[8000:])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            compose_output(rand_signal(10), rand_signal(11),
                           EditMask(np.zeros(10, dtype=np.uint8)))


class TestCheckpoint:
    def test_round_trip(self, model, tmp_path):
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model, extra={"stage": "test"})
        loaded, extra = load_checkpoint(path)
        assert extra["stage"] == "test"
        emb = speaker_encode(model, rand_signal(8000, 14))
        mix = rand_signal(16000, 15)
        a, _, _ = tse_forward(model, mix, emb)
        b, _, _ = tse_forward(loaded, mix, emb)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_export_weights(self, model, tmp_path):
        export_weights(tmp_path / "export", model)
        arrays = np.load(tmp_path / "export" / "weights.npz")
        assert len(arrays.files) == len(model.state_dict())
        import json
        config = json.loads((tmp_path / "export" / "config.json").read_text())
        assert config["config"]["channels"] == model.config.channels


class TestGradientCheck:
    def test_finite_difference_agreement(self):
        """Analytic grads of the loss match central differences (mini config)."""
        torch.manual_seed(42)
        config = TseModelConfig.toy(channels=8, chunk_size=10, attn_heads=2,
                                    speaker_dim=8)
        model = HitlTseModel(config).double()
        model.train()
        n = 1600
        rng = np.random.default_rng(0)
        mixture = torch.as_tensor(rng.standard_normal((1, n)) * 0.1)
        target = torch.as_tensor(rng.standard_normal((1, n)) * 0.1)
        enrollment = torch.as_tensor(rng.standard_normal((1, n)) * 0.1)
        mask = torch.as_tensor((rng.random((1, n)) < 0.5).astype(np.float64))

        def loss_fn():
            emb = model.speaker_encoder(enrollment)
            y_tse, tse_mask, _ = model.tse(mixture, emb)
            state = model.adaptation(tse_mask)
            y_refine = model.refiner(mixture, emb, state, mask)
            return negative_si_sdr_loss(y_refine, target) \
                + negative_si_sdr_loss(y_tse, target)

        loss = loss_fn()
        loss.backward()
        params = [p for p in model.parameters() if p.grad is not None]
        sampler = np.random.default_rng(7)
        checked = 0
        h = 1e-6
        while checked < 60:
            p = params[int(sampler.integers(len(params)))]
            flat = p.data.view(-1)
            idx = int(sampler.integers(flat.numel()))
            analytic = float(p.grad.view(-1)[idx])
            if abs(analytic) < 1e-7:
                continue  # avoid zero-gradient relative-error blowups
            orig = float(flat[idx])
            with torch.no_grad():
                flat[idx] = orig + h
                up = float(loss_fn())
                flat[idx] = orig - h
                down = float(loss_fn())
                flat[idx] = orig
            numeric = (up - down) / (2 * h)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric))
            assert rel < 1e-3, f"param idx {idx}: analytic {analytic} vs numeric {numeric}"
            checked += 1
