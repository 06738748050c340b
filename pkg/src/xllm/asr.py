"""CIF-based speech recogniser used to pretrain the speech encoder and the CIF weight predictor."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .encoders import EncoderConfig, SpeechEncoder, batch_frames
from .errors import ConfigurationError, DimensionError, LengthError
from .fusion import VOCAB_SIZE
from .layers import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, padding_bias, sinusoidal_positions
from .speech_interface import CifConfig, WeightPredictor, cif
from .tensor import Tensor


@dataclass
class AsrDecoderConfig:
    n_blocks: int = 4
    n_heads: int = 4
    d_ffn: int = 128
    visual_blocks: tuple[int, ...] = (2,)
    linguistic_blocks: tuple[int, ...] = (3,)
    d_visual: int = 64
    d_linguistic: int = 64
    n_fc: int = 1
    vocab_size: int = VOCAB_SIZE

    def __post_init__(self):
        self.visual_blocks = tuple(int(i) for i in self.visual_blocks)
        self.linguistic_blocks = tuple(int(i) for i in self.linguistic_blocks)
        for i in self.visual_blocks + self.linguistic_blocks:
            if not 0 <= i < self.n_blocks:
                raise ConfigurationError(f"cross-attention block {i} outside 0..{self.n_blocks - 1}")
        if set(self.visual_blocks) & set(self.linguistic_blocks):
            raise ConfigurationError("a block attends to either visual or linguistic inputs, not both")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["visual_blocks"] = list(self.visual_blocks)
        d["linguistic_blocks"] = list(self.linguistic_blocks)
        return d


def asr_decoder_paper() -> AsrDecoderConfig:
    """Reference shape of the published recogniser's decoder (documentation only)."""
    return AsrDecoderConfig(n_blocks=6, n_heads=8, d_ffn=2048, visual_blocks=(2, 3), linguistic_blocks=(4, 5), d_visual=768, d_linguistic=768)


class AsrDecoderBlock(Module):
    """Self-attention block with an optional cross-attention sublayer.

    The cross-attention value and output projections carry no bias, so an
    all-zero memory contributes exactly zero to the residual stream.
    """

    def __init__(self, d: int, cfg: AsrDecoderConfig, rng: np.random.Generator, d_memory: int | None):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, cfg.n_heads, rng)
        if d_memory is not None:
            self.ln_cross = LayerNorm(d)
            self.cross = MultiHeadAttention(d, cfg.n_heads, rng, d_kv=d_memory, value_bias=False)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(d, cfg.d_ffn, rng)

    def __call__(self, x: Tensor, bias, memory: Tensor | None = None, memory_bias=None) -> Tensor:
        x = x + self.attn(self.ln1(x), bias=bias)
        if memory is not None:
            x = x + self.cross(self.ln_cross(x), memory=memory, bias=memory_bias)
        return x + self.ffn(self.ln2(x))


class AsrDecoder(Module):
    """Fully-connected input layers, then a bidirectional transformer over the CIF outputs.

    Visual and linguistic inputs enter by cross-attention in their designated
    blocks; when an input is absent a single zero vector stands in for it.
    ``use_visual=False`` builds the decoder without the visual branch at all.
    """

    def __init__(self, d_model: int, cfg: AsrDecoderConfig, rng: np.random.Generator, use_visual: bool = True):
        self.cfg = cfg
        self.use_visual = use_visual
        self.fc = [Linear(d_model, d_model, rng) for _ in range(cfg.n_fc)]
        self.blocks = []
        for i in range(cfg.n_blocks):
            if i in cfg.visual_blocks:
                d_mem = cfg.d_visual if use_visual else None
            elif i in cfg.linguistic_blocks:
                d_mem = cfg.d_linguistic
            else:
                d_mem = None
            self.blocks.append(AsrDecoderBlock(d_model, cfg, rng, d_mem))
        self.ln = LayerNorm(d_model)
        self.head = Linear(d_model, cfg.vocab_size, rng)

    @staticmethod
    def _memory(x, width: int, B: int, mask):
        if x is None:
            return Tensor(np.zeros((B, 1, width))), None
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 3 or x.shape[0] != B or x.shape[2] != width:
            raise DimensionError(f"expected [{B}, M, {width}] auxiliary features, got {x.shape}")
        return x, None if mask is None else padding_bias(mask)

    def __call__(self, tokens: Tensor, mask: np.ndarray, visual=None, visual_mask=None, linguistic=None, linguistic_mask=None) -> Tensor:
        """``tokens`` ``[B, L, d]`` CIF outputs -> ``[B, L, V]`` logits."""
        B, L, d = tokens.shape
        if L == 0:
            raise LengthError("nothing to decode")
        cfg = self.cfg
        vis, vis_bias = self._memory(visual, cfg.d_visual, B, visual_mask)
        ling, ling_bias = self._memory(linguistic, cfg.d_linguistic, B, linguistic_mask)
        x = tokens
        for fc in self.fc:
            x = T.gelu(fc(x))
        x = x + sinusoidal_positions(L, d)
        bias = padding_bias(mask)
        for i, block in enumerate(self.blocks):
            if i in cfg.visual_blocks and self.use_visual:
                x = block(x, bias, vis, vis_bias)
            elif i in cfg.linguistic_blocks:
                x = block(x, bias, ling, ling_bias)
            else:
                x = block(x, bias)
        return self.head(self.ln(x))


class CifAsrModel(Module):
    """Speech encoder, CIF weight predictor and ASR decoder trained jointly."""

    def __init__(self, encoder_cfg: EncoderConfig, cif_cfg: CifConfig, decoder_cfg: AsrDecoderConfig, rng: np.random.Generator, use_visual: bool = True):
        self.encoder_cfg = encoder_cfg
        self.cif_cfg = cif_cfg
        self.encoder = SpeechEncoder(encoder_cfg, rng)
        self.predictor = WeightPredictor(encoder_cfg.d_model, cif_cfg, rng)
        self.decoder = AsrDecoder(encoder_cfg.d_model, decoder_cfg, rng, use_visual=use_visual)

    @classmethod
    def from_parts(cls, encoder: SpeechEncoder, predictor: WeightPredictor, decoder: AsrDecoder, cif_cfg: CifConfig) -> "CifAsrModel":
        self = cls.__new__(cls)
        self.encoder_cfg = encoder.cfg
        self.cif_cfg = cif_cfg
        self.encoder, self.predictor, self.decoder = encoder, predictor, decoder
        return self

    def integrate(self, frames: Tensor, lengths, targets=None):
        """Encode and integrate; returns ``(tokens, token_mask, traces, quantity)``."""
        feats, mask = self.encoder.forward(frames, lengths)
        alphas = self.predictor(feats, mask)
        return cif(feats, alphas, mask, targets, self.cif_cfg)

    def loss(self, frames: Tensor, lengths, targets, visual=None, linguistic=None) -> Tensor:
        """Token cross-entropy over the scaled CIF outputs plus the mean quantity loss."""
        if any(len(t) == 0 for t in targets):
            raise LengthError("empty transcript")
        if not self.cif_cfg.scale_at_train:
            raise ConfigurationError("training the recogniser needs scale_at_train=True")
        target_lens = [len(t) for t in targets]
        tokens, out_mask, _, quantity = self.integrate(frames, lengths, target_lens)
        got = out_mask.sum(axis=1)
        if np.any(got != target_lens):
            # scaled integration fires exactly once per target token
            raise AssertionError(f"integrate-and-fire produced {got.tolist()} outputs for targets {target_lens}")
        logits = self.decoder(tokens, out_mask, visual=visual, linguistic=linguistic)
        B, L = out_mask.shape
        tgt = np.zeros((B, L), dtype=int)
        for b, t in enumerate(targets):
            tgt[b, : len(t)] = t
        # mean over items of each item's token mean, so gradient accumulation is exact
        weights = out_mask / (out_mask.sum(axis=1, keepdims=True) * B)
        return T.cross_entropy(logits, tgt, weights) + T.mean(quantity)

    def recognize_batch(self, frames: list[np.ndarray], visual=None) -> list[list[int]]:
        """Greedy recognition with unscaled integration (one token per fired output)."""
        with T.no_grad():
            x, lengths = batch_frames(frames)
            unscaled = CifConfig(**{**self.cif_cfg.to_dict(), "scale_at_train": False})
            feats, mask = self.encoder.forward(x, lengths)
            alphas = self.predictor(feats, mask)
            tokens, out_mask, _, _ = cif(feats, alphas, mask, None, unscaled)
            if tokens.shape[1] == 0:
                return [[] for _ in frames]
            logits = self.decoder(tokens, out_mask, visual=visual).data
        pred = logits.argmax(axis=-1)
        return [pred[b, : int(out_mask[b].sum())].tolist() for b in range(len(frames))]

    def recognize(self, frames: np.ndarray) -> list[int]:
        return self.recognize_batch([frames])[0]
