"""Neural target speech extraction and edit-mask-conditioned refinement.

The extractor is a dual-path transformer masking network over a learned
strided-convolution encoder, conditioned on a speaker embedding through a
FiLM layer applied after the encoder. The refinement network has its own
encoder (no shared parameters), fuses the encoded mixture with the
downsampled edit mask, the adapted extractor state, and the speaker
embedding, and decodes through a transposed convolution. The final output
splices refined audio into the extractor output only where the mask is set.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from .audio import AudioSignal
from .masks import EditMask, downsample_mask, frame_count

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TseModelConfig:
    encoder_kernel: int = 32
    encoder_stride: int = 16
    channels: int = 64          # C_tse == C_R
    chunk_size: int = 250
    layers: int = 2             # transformer layers per intra/inter stage
    attn_heads: int = 8
    repeats: int = 4            # dual-path block repeats
    speaker_dim: int = 64
    mask_downsampler: str = "avg_pool"  # or "strided_conv"

    def __post_init__(self):
        if self.encoder_kernel % self.encoder_stride != 0:
            raise ValueError("encoder_stride must divide encoder_kernel")
        for name in ("encoder_kernel", "encoder_stride", "channels", "chunk_size",
                     "layers", "attn_heads", "repeats", "speaker_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def toy(cls, **overrides) -> "TseModelConfig":
        defaults = dict(channels=16, chunk_size=50, layers=1, attn_heads=4,
                        repeats=1, speaker_dim=16)
        defaults.update(overrides)
        return cls(**defaults)


@dataclass(frozen=True)
class SpeakerEmbedding:
    """Unit-norm conditioning vector identifying the target speaker."""

    vector: np.ndarray

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=np.float64)
        if vector.ndim != 1 or not np.all(np.isfinite(vector)):
            raise ValueError("embedding must be a finite 1-D vector")
        vector.setflags(write=False)
        object.__setattr__(self, "vector", vector)


@dataclass(frozen=True)
class RefinementState:
    """Channel x frame latent handed from the extractor to the refinement net."""

    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or not np.all(np.isfinite(frames)):
            raise ValueError("state must be a finite 2-D (channels x frames) matrix")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)


class FiLM(nn.Module):
    """Per-channel scale and shift generated from a conditioning vector."""

    def __init__(self, cond_dim: int, channels: int):
        super().__init__()
        self.proj = nn.Linear(cond_dim, 2 * channels)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        # x: (B, C, T'), cond: (B, cond_dim)
        gamma, beta = self.proj(cond).chunk(2, dim=-1)
        return x * (1.0 + gamma.unsqueeze(-1)) + beta.unsqueeze(-1)


class DualPathBlock(nn.Module):
    """Intra-chunk then inter-chunk transformer attention over chunked frames."""

    def __init__(self, channels: int, chunk_size: int, layers: int, heads: int):
        super().__init__()
        self.chunk_size = chunk_size

        def stage():
            layer = nn.TransformerEncoderLayer(
                d_model=channels, nhead=heads, dim_feedforward=4 * channels,
                dropout=0.0, batch_first=True, norm_first=True)
            return nn.TransformerEncoder(layer, num_layers=layers)

        self.intra = stage()
        self.inter = stage()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, C, T'). Pad frames to a whole number of chunks.
        b, c, t = x.shape
        p = self.chunk_size
        n_chunks = (t + p - 1) // p
        pad = n_chunks * p - t
        if pad:
            x = nn.functional.pad(x, (0, pad))
        # (B, C, n_chunks, P)
        x = x.view(b, c, n_chunks, p)
        # intra: attend within each chunk
        intra_in = x.permute(0, 2, 3, 1).reshape(b * n_chunks, p, c)
        intra_out = self.intra(intra_in).view(b, n_chunks, p, c)
        x = x + intra_out.permute(0, 3, 1, 2)
        # inter: attend across chunks at each in-chunk position
        inter_in = x.permute(0, 3, 2, 1).reshape(b * p, n_chunks, c)
        inter_out = self.inter(inter_in).view(b, p, n_chunks, c)
        x = x + inter_out.permute(0, 3, 2, 1)
        x = x.reshape(b, c, n_chunks * p)
        return x[:, :, :t]


class SpeakerEncoder(nn.Module):
    """Desk-scale enrollment encoder producing a unit-norm embedding."""

    def __init__(self, config: TseModelConfig):
        super().__init__()
        c = config.channels
        self.net = nn.Sequential(
            nn.Conv1d(1, c, kernel_size=config.encoder_kernel,
                      stride=config.encoder_stride),
            nn.ReLU(),
            nn.Conv1d(c, c, kernel_size=8, stride=4),
            nn.ReLU(),
            nn.Conv1d(c, c, kernel_size=8, stride=4),
            nn.ReLU(),
        )
        self.proj = nn.Linear(c, config.speaker_dim)

    def forward(self, enrollment: torch.Tensor) -> torch.Tensor:
        # enrollment: (B, T) -> (B, D), unit-norm
        h = self.net(enrollment.unsqueeze(1))
        pooled = h.mean(dim=-1)
        emb = self.proj(pooled)
        return emb / emb.norm(dim=-1, keepdim=True).clamp_min(1e-8)


class TseNet(nn.Module):
    """Masking extractor: encoder -> FiLM(speaker) -> dual-path blocks -> mask -> decode."""

    def __init__(self, config: TseModelConfig):
        super().__init__()
        self.config = config
        c = config.channels
        self.encoder = nn.Conv1d(1, c, kernel_size=config.encoder_kernel,
                                 stride=config.encoder_stride)
        self.film = FiLM(config.speaker_dim, c)
        self.blocks = nn.ModuleList(
            DualPathBlock(c, config.chunk_size, config.layers, config.attn_heads)
            for _ in range(config.repeats))
        self.mask_head = nn.Conv1d(c, c, kernel_size=1)
        self.decoder = nn.ConvTranspose1d(c, 1, kernel_size=config.encoder_kernel,
                                          stride=config.encoder_stride)

    def pad_input(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        t = x.shape[-1]
        t_pad = (frame_count(t, cfg.encoder_kernel, cfg.encoder_stride) - 1) \
            * cfg.encoder_stride + cfg.encoder_kernel
        if t_pad > t:
            x = nn.functional.pad(x, (0, t_pad - t))
        return x

    def forward(self, mixture: torch.Tensor, emb: torch.Tensor):
        # mixture: (B, T), emb: (B, D) -> (y_tse (B, T), mask (B, C, T'), encoded)
        if mixture.shape[-1] == 0:
            raise ValueError("empty input")
        t = mixture.shape[-1]
        x = self.pad_input(mixture).unsqueeze(1)
        encoded = torch.relu(self.encoder(x))
        h = self.film(encoded, emb)
        for block in self.blocks:
            h = block(h)
        mask = torch.relu(self.mask_head(h))
        decoded = self.decoder(encoded * mask).squeeze(1)
        return decoded[:, :t], mask, encoded


class AdaptationLayer(nn.Module):
    """Shared per-frame linear map from the extractor mask to the refinement state."""

    def __init__(self, config: TseModelConfig):
        super().__init__()
        self.proj = nn.Linear(config.channels, config.channels)

    def forward(self, tse_mask: torch.Tensor) -> torch.Tensor:
        # (B, C_tse, T') -> (B, C_R, T')
        return self.proj(tse_mask.transpose(1, 2)).transpose(1, 2)


class ConvMaskDownsampler(nn.Module):
    """Strided 1-D convolution alternative to average pooling for the edit mask."""

    def __init__(self, kernel: int, stride: int):
        super().__init__()
        self.conv = nn.Conv1d(1, 1, kernel_size=kernel, stride=stride)
        with torch.no_grad():
            self.conv.weight.fill_(1.0 / kernel)
            self.conv.bias.zero_()

    def forward(self, mask: torch.Tensor) -> torch.Tensor:
        # (B, T_pad) -> (B, T')
        return self.conv(mask.unsqueeze(1)).squeeze(1)


class RefinementNet(nn.Module):
    """Edit-mask-conditioned refiner with its own encoder and fusion FiLM."""

    def __init__(self, config: TseModelConfig):
        super().__init__()
        self.config = config
        c = config.channels
        self.encoder = nn.Conv1d(1, c, kernel_size=config.encoder_kernel,
                                 stride=config.encoder_stride)
        # concat channels: encoded mixture (C) + downsampled mask (1) + state (C)
        self.fuse = nn.Conv1d(2 * c + 1, c, kernel_size=1)
        self.film = FiLM(config.speaker_dim, c)
        self.blocks = nn.ModuleList(
            DualPathBlock(c, config.chunk_size, config.layers, config.attn_heads)
            for _ in range(config.repeats))
        self.mask_head = nn.Conv1d(c, c, kernel_size=1)
        self.decoder = nn.ConvTranspose1d(c, 1, kernel_size=config.encoder_kernel,
                                          stride=config.encoder_stride)
        if config.mask_downsampler == "strided_conv":
            self.mask_downsampler = ConvMaskDownsampler(
                config.encoder_kernel, config.encoder_stride)
        else:
            self.mask_downsampler = None

    def pad_input(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        t = x.shape[-1]
        t_pad = (frame_count(t, cfg.encoder_kernel, cfg.encoder_stride) - 1) \
            * cfg.encoder_stride + cfg.encoder_kernel
        if t_pad > t:
            x = nn.functional.pad(x, (0, t_pad - t))
        return x

    def downsample_mask_batch(self, mask: torch.Tensor, num_frames: int) -> torch.Tensor:
        """(B, T) sample mask -> (B, T') fractional frame mask."""
        cfg = self.config
        padded = self.pad_input(mask)
        if self.mask_downsampler is not None:
            out = self.mask_downsampler(padded)
        else:
            windows = padded.unfold(-1, cfg.encoder_kernel, cfg.encoder_stride)
            out = windows.mean(dim=-1)
        if out.shape[-1] != num_frames:
            raise ValueError(f"mask frames {out.shape[-1]} != encoder frames {num_frames}")
        return out

    def forward(self, mixture: torch.Tensor, emb: torch.Tensor,
                state: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # mixture, mask: (B, T); emb: (B, D); state: (B, C, T') -> y_refine (B, T)
        if mixture.shape != mask.shape:
            raise ValueError(f"mask shape {tuple(mask.shape)} != mixture {tuple(mixture.shape)}")
        t = mixture.shape[-1]
        x = self.pad_input(mixture).unsqueeze(1)
        encoded = torch.relu(self.encoder(x))
        num_frames = encoded.shape[-1]
        if state.shape[-1] != num_frames or state.shape[1] != self.config.channels:
            raise ValueError(f"state shape {tuple(state.shape)} incompatible with "
                             f"({self.config.channels}, {num_frames})")
        mask_frames = self.downsample_mask_batch(mask, num_frames)
        fused_in = torch.cat([encoded, mask_frames.unsqueeze(1), state], dim=1)
        h = self.film(self.fuse(fused_in), emb)
        for block in self.blocks:
            h = block(h)
        refine_mask = torch.relu(self.mask_head(h))
        decoded = self.decoder(encoded * refine_mask).squeeze(1)
        return decoded[:, :t]


class HitlTseModel(nn.Module):
    """Bundle: speaker encoder + extractor + adaptation layer + refiner."""

    def __init__(self, config: TseModelConfig):
        super().__init__()
        self.config = config
        self.speaker_encoder = SpeakerEncoder(config)
        self.tse = TseNet(config)
        self.adaptation = AdaptationLayer(config)
        self.refiner = RefinementNet(config)


# ---------------------------------------------------------------------------
# Single-item functional surface over AudioSignal / numpy types.

def _to_batch(signal: AudioSignal, dtype=torch.float32) -> torch.Tensor:
    return torch.tensor(signal.samples, dtype=dtype).unsqueeze(0)


def speaker_encode(model: HitlTseModel, enrollment: AudioSignal) -> SpeakerEmbedding:
    if len(enrollment) == 0 or enrollment.energy() == 0.0:
        raise ValueError("silent enrollment: cannot derive a speaker embedding")
    model.eval()
    with torch.no_grad():
        emb = model.speaker_encoder(_to_batch(enrollment))
    return SpeakerEmbedding(emb[0].numpy())


def tse_forward(model: HitlTseModel, mixture: AudioSignal,
                emb: SpeakerEmbedding) -> tuple[AudioSignal, np.ndarray, np.ndarray]:
    if len(mixture) == 0:
        raise ValueError("empty input")
    model.eval()
    with torch.no_grad():
        y, mask, latent = model.tse(_to_batch(mixture),
                                    torch.tensor(emb.vector, dtype=torch.float32).unsqueeze(0))
    return (AudioSignal(y[0].numpy().astype(np.float64), mixture.sample_rate),
            mask[0].numpy(), latent[0].numpy())


def adapt_state(model: HitlTseModel, tse_mask: np.ndarray) -> RefinementState:
    model.eval()
    with torch.no_grad():
        s = model.adaptation(torch.as_tensor(tse_mask, dtype=torch.float32).unsqueeze(0))
    return RefinementState(s[0].numpy())


def refine_forward(model: HitlTseModel, mixture: AudioSignal, emb: SpeakerEmbedding,
                   state: RefinementState, mask: EditMask) -> AudioSignal:
    if len(mask) != len(mixture):
        raise ValueError(f"mask length {len(mask)} != mixture length {len(mixture)}")
    model.eval()
    with torch.no_grad():
        y = model.refiner(
            _to_batch(mixture),
            torch.tensor(emb.vector, dtype=torch.float32).unsqueeze(0),
            torch.tensor(state.frames, dtype=torch.float32).unsqueeze(0),
            torch.tensor(mask.values, dtype=torch.float32).unsqueeze(0))
    return AudioSignal(y[0].numpy().astype(np.float64), mixture.sample_rate)


def compose_output(y_tse: AudioSignal, y_refine: AudioSignal, mask: EditMask) -> AudioSignal:
    """Splice: refined audio where the mask is 1, extractor output elsewhere.

    Samples are copied bit-exactly from their source signal.
    """
    if not (len(y_tse) == len(y_refine) == len(mask)):
        raise ValueError(f"length mismatch: {len(y_tse)}, {len(y_refine)}, {len(mask)}")
    out = np.where(mask.values.astype(bool), y_refine.samples, y_tse.samples)
    return AudioSignal(out, y_tse.sample_rate)


def extract_and_refine(model: HitlTseModel, mixture: AudioSignal,
                       enrollment: AudioSignal, mask: EditMask | None,
                       ) -> tuple[AudioSignal, AudioSignal, AudioSignal]:
    """Full single-item path: returns (y_tse, y_refine, y_output)."""
    emb = speaker_encode(model, enrollment)
    y_tse, tse_mask, _ = tse_forward(model, mixture, emb)
    if mask is None:
        mask = EditMask(np.zeros(len(mixture), dtype=np.uint8), mixture.sample_rate)
    state = adapt_state(model, tse_mask)
    y_refine = refine_forward(model, mixture, emb, state, mask)
    return y_tse, y_refine, compose_output(y_tse, y_refine, mask)


def downsample_mask_reference(model: HitlTseModel, mask: EditMask) -> np.ndarray:
    """Numpy-path mask downsampling matching the refiner's frame grid."""
    cfg = model.config
    n = frame_count(len(mask), cfg.encoder_kernel, cfg.encoder_stride)
    return downsample_mask(mask, cfg.encoder_stride, n, cfg.encoder_kernel)


# ---------------------------------------------------------------------------
# Checkpoints: versioned archive of named weight arrays plus the config.

def save_checkpoint(path, model: HitlTseModel, extra: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(model.config),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[HitlTseModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    config = TseModelConfig(**payload["config"])
    model = HitlTseModel(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("extra", {})


def export_weights(path_dir, model: HitlTseModel) -> None:
    """Dump named weight arrays (npz) and the config (json) to a directory."""
    from pathlib import Path
    out = Path(path_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {name: tensor.numpy() for name, tensor in model.state_dict().items()}
    np.savez(out / "weights.npz", **arrays)
    with open(out / "config.json", "w") as f:
        json.dump({"format_version": CHECKPOINT_FORMAT_VERSION,
                   "config": asdict(model.config)}, f, indent=2)


def negative_si_sdr_loss(estimate: torch.Tensor, reference: torch.Tensor,
                         eps: float = 1e-8) -> torch.Tensor:
    """Differentiable training loss: mean over the batch of -SI-SDR in dB."""
    ref_energy = (reference * reference).sum(dim=-1, keepdim=True)
    alpha = (estimate * reference).sum(dim=-1, keepdim=True) / (ref_energy + eps)
    target = alpha * reference
    target_energy = (target * target).sum(dim=-1)
    residual_energy = ((estimate - target) ** 2).sum(dim=-1)
    ratio = (target_energy + eps) / (residual_energy + eps)
    return (-10.0 * torch.log10(ratio)).mean()
