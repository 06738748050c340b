"""Query-transformer interfaces that turn image and video features into quasi-linguistic embeddings."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .encoders import FeatureSequence, ImageEncoder, sample_indices
from .errors import ConfigurationError, DimensionError, LengthError
from .layers import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, padding_bias
from .speech_interface import QuasiLinguisticSequence
from .tensor import Parameter, Tensor


@dataclass
class QueryTransformerConfig:
    n_queries: int = 8
    n_blocks: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ffn: int = 128
    d_feature: int = 64

    def __post_init__(self):
        if self.n_queries < 1:
            raise ConfigurationError("n_queries must be at least 1")
        if self.d_model % self.n_heads:
            raise ConfigurationError("d_model must be divisible by n_heads")

    def to_dict(self) -> dict:
        return asdict(self)


class QueryBlock(Module):
    def __init__(self, cfg: QueryTransformerConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.ln_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, cfg.n_heads, rng)
        self.ln_cross = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, cfg.n_heads, rng, d_kv=cfg.d_feature)
        self.ln_ffn = LayerNorm(d)
        self.ffn = FeedForward(d, cfg.d_ffn, rng)

    def __call__(self, q: Tensor, features: Tensor, bias: np.ndarray) -> Tensor:
        q = q + self.self_attn(self.ln_self(q))
        q = q + self.cross_attn(self.ln_cross(q), memory=features, bias=bias)
        return q + self.ffn(self.ln_ffn(q))


class QueryTransformer(Module):
    """Learned queries alternating self-attention and cross-attention into the features."""

    def __init__(self, cfg: QueryTransformerConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.queries = Parameter(rng.normal(0.0, 1.0, size=(cfg.n_queries, cfg.d_model)))
        self.blocks = [QueryBlock(cfg, rng) for _ in range(cfg.n_blocks)]
        self.ln = LayerNorm(cfg.d_model)

    def __call__(self, features: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """``features`` ``[B, U, d_feature]`` -> ``[B, n_queries, d_model]``."""
        B, U, df = features.shape
        if U == 0:
            raise LengthError("query transformer needs at least one feature")
        if df != self.cfg.d_feature:
            raise DimensionError(f"expected feature width {self.cfg.d_feature}, got {df}")
        mask = np.ones((B, U), bool) if mask is None else mask
        bias = padding_bias(mask)
        q = self.queries.reshape(1, *self.queries.shape) + Tensor(np.zeros((B, 1, 1)))
        for block in self.blocks:
            q = block(q, features, bias)
        return self.ln(q)


def query_transform(features: FeatureSequence, qformer: QueryTransformer) -> Tensor:
    if len(features) == 0:
        raise LengthError("query transformer needs at least one feature")
    out = qformer(features.frames.reshape(1, *features.frames.shape), features.mask[None, :])
    return out.reshape(qformer.cfg.n_queries, qformer.cfg.d_model)


def _as_batch(x, ndim: int) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.ndim == ndim - 1:
        t = t.reshape(1, *t.shape)
    if t.ndim != ndim:
        raise DimensionError(f"unexpected input shape {t.shape}")
    return t


class ImageInterface(Module):
    """Query transformer plus I-Adapter over a (frozen, shared) image encoder."""

    def __init__(self, encoder: ImageEncoder, cfg: QueryTransformerConfig, d_llm: int, rng: np.random.Generator):
        self.qformer = QueryTransformer(cfg, rng)
        self.adapter = Linear(cfg.d_model, d_llm, rng)
        self._encoder = encoder

    @property
    def encoder(self) -> ImageEncoder:
        return self._encoder

    def from_features(self, features: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return self.adapter(self.qformer(features, mask))

    def forward(self, pixels) -> Tensor:
        """``[B, H, W, C]`` pixels -> ``[B, L_i, d_llm]``."""
        return self.from_features(self.encoder.forward(_as_batch(pixels, 4)))

    def __call__(self, pixels) -> QuasiLinguisticSequence:
        out = self.forward(_as_batch(pixels, 4))
        return QuasiLinguisticSequence(out.reshape(out.shape[1], out.shape[2]), "image")


def image_interface(iface: ImageInterface, pixels) -> QuasiLinguisticSequence:
    return iface(pixels)


class VideoInterface(ImageInterface):
    """Per-frame query transformer, concatenation in frame order, then the V-Adapter."""

    def __init__(self, encoder: ImageEncoder, cfg: QueryTransformerConfig, d_llm: int, rng: np.random.Generator, n_frames: int = 4):
        super().__init__(encoder, cfg, d_llm, rng)
        if n_frames < 1:
            raise ConfigurationError("a video needs at least one sampled frame")
        self.n_frames = n_frames

    def from_frame_features(self, features: Tensor) -> Tensor:
        """``[B, T, U, d]`` per-frame features -> ``[B, T * L_i, d_llm]``."""
        B, Tn, U, d = features.shape
        q = self.qformer(features.reshape(B * Tn, U, d))
        Lq = q.shape[1]
        return self.adapter(q.reshape(B, Tn * Lq, q.shape[2]))

    def frame_features(self, videos: Tensor, n_frames: int | None = None) -> Tensor:
        """Sample frames uniformly and encode them: ``[B, F, H, W, C]`` -> ``[B, T, U, d]``."""
        n_frames = self.n_frames if n_frames is None else n_frames
        if n_frames < 1:
            raise LengthError("a video needs at least one sampled frame")
        B, F = videos.shape[:2]
        idx = sample_indices(F, n_frames)
        frames = videos[:, idx]
        flat = frames.reshape(B * n_frames, *videos.shape[2:])
        feats = self.encoder.forward(flat)
        return feats.reshape(B, n_frames, feats.shape[1], feats.shape[2])

    def forward(self, videos, n_frames: int | None = None) -> Tensor:
        return self.from_frame_features(self.frame_features(_as_batch(videos, 5), n_frames))

    def __call__(self, video, n_frames: int | None = None) -> QuasiLinguisticSequence:
        out = self.forward(_as_batch(video, 5), n_frames)
        return QuasiLinguisticSequence(out.reshape(out.shape[1], out.shape[2]), "video")


def video_interface(iface: VideoInterface, video, n_frames: int | None = None) -> QuasiLinguisticSequence:
    return iface(video, n_frames)


def init_video_from_image(image: ImageInterface, video: VideoInterface) -> None:
    """Copy the image query transformer and I-Adapter into the video interface (one-way)."""
    if image.qformer.cfg != video.qformer.cfg or image.adapter.weight.shape != video.adapter.weight.shape:
        raise ConfigurationError("image and video interfaces have different shapes")
    video.qformer.load_state_dict(image.qformer.state_dict())
    video.adapter.load_state_dict(image.adapter.state_dict())


QFORMER_KIND = "query_transformer"


def save_query_transformer(path, qformer: QueryTransformer):
    return save_checkpoint(path, qformer, QFORMER_KIND, qformer.cfg.to_dict())


def init_image_from_checkpoint(image: ImageInterface, path) -> None:
    """Warm-start the image query transformer from a checkpoint; adapters are untouched."""
    load_checkpoint(path, image.qformer, QFORMER_KIND, image.qformer.cfg.to_dict())
