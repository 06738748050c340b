"""Continuous integrate-and-fire compression, the contextual transformer, and the speech adapter."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .encoders import FeatureSequence
from .errors import ConfigurationError, DegenerateWeightError, DimensionError, LengthError
from .layers import EncoderBlock, LayerNorm, Linear, Module, padding_bias, sinusoidal_positions
from .tensor import Parameter, Tensor

# stands in for an unbounded cell edge; finite so that edge arithmetic never produces inf - inf
_OPEN = 1e18


@dataclass
class CifConfig:
    beta: float = 1.0
    scale_at_train: bool = True
    tail_threshold: float = 0.5
    predictor_channels: int = 64
    predictor_kernel: int = 5

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigurationError("CIF threshold beta must be positive")
        if not 0 <= self.tail_threshold < self.beta:
            raise ConfigurationError("tail_threshold must lie in [0, beta)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CifTrace:
    alphas: np.ndarray
    scaled_alphas: np.ndarray
    fire_positions: list[int]
    integrated: np.ndarray

    def to_record(self, utterance_id=None) -> str:
        """One-line diagnostic record."""
        return json.dumps(
            {
                "id": utterance_id,
                "alphas": [round(float(a), 6) for a in self.alphas],
                "fire_positions": [int(p) for p in self.fire_positions],
                "integrated": [round(float(w), 6) for w in self.integrated],
            }
        )


@dataclass
class QuasiLinguisticSequence:
    embeddings: Tensor
    origin: str

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def width(self) -> int:
        return self.embeddings.shape[1]


class WeightPredictor(Module):
    """1-D conv, ReLU, then a projection to one sigmoid weight per frame."""

    def __init__(self, d_model: int, cfg: CifConfig, rng: np.random.Generator):
        k, c = cfg.predictor_kernel, cfg.predictor_channels
        self.kernel = k
        self.conv_weight = Parameter(rng.normal(0.0, 1.0 / np.sqrt(k * d_model), size=(k, d_model, c)))
        self.conv_bias = Parameter(np.zeros(c))
        self.proj = Linear(c, 1, rng)

    def __call__(self, features: Tensor, mask: np.ndarray) -> Tensor:
        """``features`` ``[B, U, d]`` -> alphas ``[B, U]``; masked frames get exactly 0."""
        if features.shape[1] == 0:
            raise LengthError("cannot predict weights for an empty sequence")
        mask = np.asarray(mask, dtype=bool)
        pad = self.kernel // 2
        h = T.conv1d(features * mask[:, :, None], self.conv_weight, self.conv_bias, padding=(pad, self.kernel - 1 - pad))
        a = T.sigmoid(self.proj(T.relu(h)))
        B, U, _ = a.shape
        return a.reshape(B, U) * mask


def predict_weights(features: FeatureSequence, predictor: WeightPredictor) -> Tensor:
    if len(features) == 0:
        raise LengthError("cannot predict weights for an empty sequence")
    x = features.frames.reshape(1, *features.frames.shape)
    return predictor(x, features.mask[None, :]).reshape(len(features))


def cif(features: Tensor, alphas: Tensor, mask: np.ndarray, targets=None, cfg: CifConfig | None = None):
    """Batched integrate-and-fire.

    ``features`` ``[B, U, D]``, ``alphas`` ``[B, U]``. With ``targets`` and
    ``cfg.scale_at_train`` the weights are rescaled so each item fires exactly
    ``targets[b]`` times, the last cell absorbing any rounding residue.
    Otherwise raw weights fire once per completed ``beta`` and a trailing
    residue above ``tail_threshold`` fires one extra output.

    The weight that frame ``u`` gives cell ``i`` is the overlap of the
    accumulator interval ``[c_{u-1}, c_u]`` with ``[lo_i, hi_i]``; cell edges
    are constants of the forward pass.

    Returns ``(outputs [B, L, D], out_mask [B, L], traces, quantity_loss [B])``.
    """
    cfg = cfg or CifConfig()
    beta = cfg.beta
    mask = np.asarray(mask, dtype=bool)
    B, U = alphas.shape
    if features.shape[:2] != (B, U):
        raise DimensionError(f"features {features.shape} do not match alphas {alphas.shape}")
    alphas = alphas * mask
    raw_sum = alphas.sum(axis=1)
    if targets is not None:
        targets = np.asarray(targets, dtype=int)
        quantity = T.absolute(raw_sum - targets.astype(float))
    else:
        quantity = Tensor(np.zeros(B))
    scaled = targets is not None and cfg.scale_at_train
    if scaled:
        if np.any(raw_sum.data <= 0):
            raise DegenerateWeightError("all CIF weights are zero; cannot rescale to the target length")
        if np.any(targets < 1):
            raise LengthError("target length must be at least 1")
        weights = alphas * (Tensor(targets.astype(float)) / raw_sum).reshape(B, 1)
    else:
        weights = alphas
    acc = T.cumsum(weights, axis=1)
    acc_prev = T.concat([Tensor(np.zeros((B, 1))), acc[:, :-1]], axis=1)
    totals = acc.data[:, -1]

    if scaled:
        n_full = targets.copy()
        tail = np.zeros(B, dtype=bool)
    else:
        # tolerate accumulated rounding just below a multiple of beta
        n_full = np.floor(totals / beta + 1e-9).astype(int)
        tail = (totals - n_full * beta) > cfg.tail_threshold
    n_out = n_full + tail
    L = max(int(n_out.max()), 1)
    idx = np.arange(L)[None, :]
    lo = np.where(idx < n_out[:, None], idx * beta, _OPEN)
    hi = np.where(idx < n_out[:, None], (idx + 1) * beta, _OPEN)
    # the last scaled cell and a tail cell stay open at the top
    last = n_out - 1
    open_top = scaled | tail
    rows = np.nonzero(open_top & (n_out > 0))[0]
    hi[rows, last[rows]] = _OPEN

    upper = T.minimum(acc.reshape(B, 1, U), hi[:, :, None])
    lower = T.maximum(acc_prev.reshape(B, 1, U), lo[:, :, None])
    share = T.relu(upper - lower)  # [B, L, U]
    outputs = (share @ features) * (1.0 / beta)
    out_mask = idx < n_out[:, None]

    traces = []
    sd = share.data
    for b in range(B):
        fires = [int(np.nonzero(sd[b, i] > 0)[0].max()) if np.any(sd[b, i] > 0) else int(mask[b].sum()) - 1 for i in range(n_out[b])]
        traces.append(
            CifTrace(
                alphas=alphas.data[b, mask[b]].copy(),
                scaled_alphas=weights.data[b, mask[b]].copy(),
                fire_positions=fires,
                integrated=sd[b, : n_out[b]].sum(axis=1),
            )
        )
    return outputs, out_mask, traces, quantity


def cif_compress(features: FeatureSequence, alphas, target_len: int | None = None, cfg: CifConfig | None = None):
    """Single-utterance integrate-and-fire.

    Returns ``(QuasiLinguisticSequence, CifTrace, quantity_loss)``.
    """
    a = alphas if isinstance(alphas, Tensor) else Tensor(alphas)
    U = len(features)
    if a.shape != (U,):
        raise DimensionError(f"{a.shape[0]} weights for {U} frames")
    targets = None if target_len is None else [target_len]
    out, out_mask, traces, q = cif(
        features.frames.reshape(1, U, -1), a.reshape(1, U), features.mask[None, :], targets, cfg
    )
    n = int(out_mask[0].sum())
    seq = QuasiLinguisticSequence(out[0, :n], "speech")
    return seq, traces[0], q[0]


class Contextualizer(Module):
    """Bidirectional transformer over token-level speech embeddings (position-aware)."""

    def __init__(self, d: int, n_layers: int, n_heads: int, d_ffn: int, rng: np.random.Generator):
        self.d = d
        self.blocks = [EncoderBlock(d, n_heads, d_ffn, rng) for _ in range(n_layers)]
        self.ln = LayerNorm(d)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        B, L, d = x.shape
        if L == 0:
            raise LengthError("cannot contextualise an empty sequence")
        x = x + sinusoidal_positions(L, d)
        bias = padding_bias(mask)
        for block in self.blocks:
            x = block(x, bias)
        return self.ln(x)


def contextualize(tokens: QuasiLinguisticSequence, model: Contextualizer) -> QuasiLinguisticSequence:
    L = len(tokens)
    if L == 0:
        raise LengthError("cannot contextualise an empty sequence")
    out = model(tokens.embeddings.reshape(1, L, -1), np.ones((1, L), bool))
    return QuasiLinguisticSequence(out.reshape(L, -1), tokens.origin)


def adapt(tokens: QuasiLinguisticSequence, adapter: Linear) -> QuasiLinguisticSequence:
    if tokens.width != adapter.d_in:
        raise DimensionError(f"adapter expects width {adapter.d_in}, got {tokens.width}")
    return QuasiLinguisticSequence(adapter(tokens.embeddings), tokens.origin)


s_adapt = adapt


@dataclass
class CFormerConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_ffn: int = 128

    def to_dict(self) -> dict:
        return asdict(self)


class SpeechInterface(Module):
    """C-Former (contextual transformer on CIF outputs) plus the S-Adapter.

    The CIF weight predictor lives with the stage-1 recogniser and is passed in
    when needed, since it is trained there and frozen afterwards.
    """

    def __init__(self, d_model: int, d_llm: int, cfg: CFormerConfig, rng: np.random.Generator):
        self.cformer = Contextualizer(d_model, cfg.n_layers, cfg.n_heads, cfg.d_ffn, rng)
        self.adapter = Linear(d_model, d_llm, rng)

    def from_tokens(self, tokens: Tensor, mask: np.ndarray) -> Tensor:
        return self.adapter(self.cformer(tokens, mask))
