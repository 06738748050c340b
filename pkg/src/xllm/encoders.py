"""Toy frozen encoders for images, video frames and speech frame features."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError, LengthError
from .layers import EncoderBlock, LayerNorm, Linear, Module, MultiHeadAttention, FeedForward, padding_bias, sinusoidal_positions
from .tensor import Parameter, Tensor


class Modality(str, Enum):
    IMAGE = "image"
    VIDEO_FRAME = "video_frame"
    SPEECH = "speech"


@dataclass
class EncoderConfig:
    d_model: int = 64
    n_blocks: int = 4
    n_heads: int = 4
    d_ffn: int = 128
    conv_channels: int = 8
    pool_positions: tuple[int, ...] = (0, 2)
    d_in: int = 16
    patch: int = 8
    channels: int = 3
    frontend_kernel: int = 3
    frontend_stride: int = 2
    dw_kernel: int = 5

    def __post_init__(self):
        self.pool_positions = tuple(int(p) for p in self.pool_positions)
        if self.d_model % self.n_heads:
            raise ConfigurationError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        pools = self.pool_positions
        if any(b <= a for a, b in zip(pools, pools[1:])):
            raise ConfigurationError("pool_positions must be strictly increasing")
        if any(p < 0 or p >= self.n_blocks for p in pools):
            raise ConfigurationError("pool_positions must index existing blocks")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pool_positions"] = list(self.pool_positions)
        return d


def speech_encoder_paper() -> EncoderConfig:
    """Reference (documentation-only) shape of the published speech encoder."""
    return EncoderConfig(d_model=512, n_blocks=18, n_heads=8, d_ffn=2048, conv_channels=256, pool_positions=(5, 11), d_in=80, dw_kernel=31)


def image_encoder_desk() -> EncoderConfig:
    return EncoderConfig(n_blocks=2, pool_positions=())


def speech_encoder_desk() -> EncoderConfig:
    return EncoderConfig()


@dataclass
class FeatureSequence:
    frames: Tensor
    mask: np.ndarray
    source_modality: Modality

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.frames.ndim != 2 or self.mask.shape != (self.frames.shape[0],):
            raise DimensionError("FeatureSequence expects frames [U, d] and a mask of length U")

    def __len__(self) -> int:
        return self.frames.shape[0]


def _patch_positions(rows: int, cols: int, d: int) -> np.ndarray:
    half = d // 2
    r = sinusoidal_positions(rows, half)
    c = sinusoidal_positions(cols, half)
    return np.concatenate([np.repeat(r, cols, axis=0), np.tile(c, (rows, 1))], axis=1)


class ImageEncoder(Module):
    """Patch embedding (strided conv) followed by transformer blocks; one feature per patch."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        p, c, d = cfg.patch, cfg.channels, cfg.d_model
        self.patch_weight = Parameter(rng.normal(0.0, 1.0 / np.sqrt(p * p * c), size=(p, p, c, d)))
        self.patch_bias = Parameter(rng.normal(0.0, 0.1, size=d))
        self.blocks = [EncoderBlock(d, cfg.n_heads, cfg.d_ffn, rng) for _ in range(cfg.n_blocks)]
        self.ln = LayerNorm(d)

    def forward(self, pixels: Tensor) -> Tensor:
        """``pixels`` is ``[B, H, W, C]``; returns ``[B, U, d_model]``."""
        if pixels.ndim != 4 or pixels.shape[-1] != self.cfg.channels:
            raise DimensionError(f"expected [B, H, W, {self.cfg.channels}] pixels, got {pixels.shape}")
        B, H, W, _ = pixels.shape
        p = self.cfg.patch
        if H % p or W % p:
            raise DimensionError(f"image {H}x{W} not divisible by patch {p}")
        x = T.conv2d(pixels, self.patch_weight, self.patch_bias, stride=p)
        rows, cols = H // p, W // p
        x = x.reshape(B, rows * cols, self.cfg.d_model) + _patch_positions(rows, cols, self.cfg.d_model)
        for block in self.blocks:
            x = block(x)
        return self.ln(x)

    def encode(self, pixels) -> FeatureSequence:
        px = pixels if isinstance(pixels, Tensor) else Tensor(pixels)
        if px.ndim != 3:
            raise DimensionError(f"expected [H, W, C] pixels, got {px.shape}")
        out = self.forward(px.reshape(1, *px.shape))
        U = out.shape[1]
        return FeatureSequence(out.reshape(U, self.cfg.d_model), np.ones(U, bool), Modality.IMAGE)


def encode_image(pixels, encoder: ImageEncoder) -> FeatureSequence:
    return encoder.encode(pixels)


class ConvModule(Module):
    """Depthwise temporal convolution sandwiched between pointwise projections."""

    def __init__(self, d: int, kernel: int, rng: np.random.Generator):
        self.kernel = kernel
        self.pw_in = Linear(d, d, rng)
        self.dw_weight = Parameter(rng.normal(0.0, 1.0 / np.sqrt(kernel), size=(kernel, d)))
        self.dw_bias = Parameter(np.zeros(d))
        self.pw_out = Linear(d, d, rng, scale=0.5)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        h = self.pw_in(x) * mask[:, :, None]
        pad = self.kernel // 2
        h = T.conv1d(h, self.dw_weight, self.dw_bias, padding=(pad, self.kernel - 1 - pad), groups=h.shape[-1])
        return self.pw_out(T.gelu(h))


class ConformerLiteBlock(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.ln_attn = LayerNorm(d)
        self.attn = MultiHeadAttention(d, cfg.n_heads, rng)
        self.ln_conv = LayerNorm(d)
        self.conv = ConvModule(d, cfg.dw_kernel, rng)
        self.ln_ffn = LayerNorm(d)
        self.ffn = FeedForward(d, cfg.d_ffn, rng)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = x + self.attn(self.ln_attn(x), bias=padding_bias(mask))
        x = x + self.conv(self.ln_conv(x), mask)
        return x + self.ffn(self.ln_ffn(x))


def speech_output_length(n_in: int, cfg: EncoderConfig) -> int:
    """Frames left after the front-end (floor of n/stride) and each 2x pool (floor of n/2)."""
    n = n_in // cfg.frontend_stride
    for _ in cfg.pool_positions:
        n //= 2
    return n


def speech_min_input_length(cfg: EncoderConfig) -> int:
    return cfg.frontend_stride * 2 ** len(cfg.pool_positions)


class SpeechEncoder(Module):
    """Strided 2-D conv front-end plus conformer-lite blocks with interleaved time pooling."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        k, c = cfg.frontend_kernel, cfg.conv_channels
        self.front_weight = Parameter(rng.normal(0.0, 1.0 / np.sqrt(k * k), size=(k, k, 1, c)))
        self.front_bias = Parameter(np.zeros(c))
        freq_out = cfg.d_in // cfg.frontend_stride
        self.front_proj = Linear(freq_out * c, cfg.d_model, rng)
        self.blocks = [ConformerLiteBlock(cfg, rng) for _ in range(cfg.n_blocks)]
        self.ln = LayerNorm(cfg.d_model)

    def forward(self, frames: Tensor, lengths) -> tuple[Tensor, np.ndarray]:
        """``frames`` is ``[B, Uin, d_in]`` (zero padded); returns features and validity mask."""
        cfg = self.cfg
        lengths = np.asarray(lengths, dtype=int)
        if frames.ndim != 3 or frames.shape[-1] != cfg.d_in:
            raise DimensionError(f"expected [B, U, {cfg.d_in}] frames, got {frames.shape}")
        if lengths.min() < speech_min_input_length(cfg):
            raise LengthError(f"speech input needs at least {speech_min_input_length(cfg)} frames, got {int(lengths.min())}")
        B, U_in, _ = frames.shape
        s = cfg.frontend_stride
        # left-only padding makes every reduction a floor division
        pad = ((cfg.frontend_kernel - s), 0)
        x = T.conv2d(frames.reshape(B, U_in, cfg.d_in, 1), self.front_weight, self.front_bias, stride=s, padding=(pad, pad))
        x = T.relu(x)
        U = x.shape[1]
        x = self.front_proj(x.reshape(B, U, -1))
        lengths = lengths // s
        mask = np.arange(U)[None, :] < lengths[:, None]
        for i, block in enumerate(self.blocks):
            x = block(x, mask)
            if i in cfg.pool_positions:
                x = T.max_pool_time(x * mask[:, :, None], 2)
                lengths = lengths // 2
                mask = np.arange(x.shape[1])[None, :] < lengths[:, None]
        return self.ln(x), mask

    def encode(self, frames) -> FeatureSequence:
        fr = frames if isinstance(frames, Tensor) else Tensor(frames)
        if fr.ndim != 2:
            raise DimensionError(f"expected [U, d_in] frames, got {fr.shape}")
        out, mask = self.forward(fr.reshape(1, *fr.shape), [fr.shape[0]])
        return FeatureSequence(out.reshape(out.shape[1], self.cfg.d_model), mask[0], Modality.SPEECH)


def encode_speech(frames, encoder: SpeechEncoder) -> FeatureSequence:
    return encoder.encode(frames)


def sample_indices(n_frames: int, count: int) -> list[int]:
    """Uniform frame indices ``round(i * (F - 1) / (T - 1))`` with halves rounded up."""
    if n_frames < 1 or count < 1:
        raise LengthError("need at least one frame and one sample")
    if count == 1:
        return [0]
    num, den = n_frames - 1, count - 1
    return [(2 * i * num + den) // (2 * den) for i in range(count)]


def sample_video_frames(video, count: int) -> list[np.ndarray]:
    video = video.data if isinstance(video, Tensor) else np.asarray(video)
    if video.ndim != 4:
        raise DimensionError(f"expected [F, H, W, C] video, got {video.shape}")
    return [video[i] for i in sample_indices(video.shape[0], count)]


def batch_frames(items: list[np.ndarray]) -> tuple[Tensor, np.ndarray]:
    """Zero-pad variable-length ``[U_i, d]`` arrays into ``[B, U_max, d]``."""
    lengths = np.array([len(a) for a in items])
    out = np.zeros((len(items), lengths.max(), items[0].shape[1]))
    for i, a in enumerate(items):
        out[i, : len(a)] = a
    return Tensor(out), lengths
