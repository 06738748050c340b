"""Prompt assembly, the frozen toy causal decoder, answer-only loss, and generation.

Token ids 0-255 are UTF-8 bytes. Reserved ids sit above them:

====  ==========
id    token
====  ==========
256   <Image>
257   </Image>
258   <Video>
259   </Video>
260   <Speech>
261   </Speech>
262   <eos>
263   <pad>
====  ==========
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError, LengthError, VocabularyError
from .layers import EncoderBlock, LayerNorm, Linear, Module, causal_bias
from .speech_interface import QuasiLinguisticSequence
from .tensor import Parameter, Tensor

RESERVED = ("<Image>", "</Image>", "<Video>", "</Video>", "<Speech>", "</Speech>", "<eos>", "<pad>")
RESERVED_IDS = {name: 256 + i for i, name in enumerate(RESERVED)}
VOCAB_SIZE = 256 + len(RESERVED)
EOS = RESERVED_IDS["<eos>"]
PAD = RESERVED_IDS["<pad>"]

MODALITIES = ("image", "video", "speech")
_MARKERS = {"image": ("<Image>", "</Image>"), "video": ("<Video>", "</Video>"), "speech": ("<Speech>", "</Speech>")}
_PLACEHOLDERS = {"image": "<ImageFeats>", "video": "<VideoFeats>", "speech": "<SpeechFeats>"}
QUESTION = "Question: "
ANSWER_CUE = "\n Answer:"
TEMPLATE = (
    "<Image><ImageFeats></Image><Video><VideoFeats></Video><Speech><SpeechFeats></Speech>"
    "Question: <Instruction>\n Answer:"
)


def token_id(name: str) -> int:
    try:
        return RESERVED_IDS[name]
    except KeyError:
        raise VocabularyError(f"unknown reserved token {name!r}") from None


def encode_text(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode_tokens(ids: Sequence[int], stop_at_eos: bool = True) -> str:
    out = bytearray()
    parts: list[str] = []
    for t in ids:
        t = int(t)
        if t == EOS and stop_at_eos:
            break
        if t < 256:
            out.append(t)
            continue
        if t >= VOCAB_SIZE:
            raise VocabularyError(f"token id {t} outside the vocabulary")
        parts.append(out.decode("utf-8", errors="replace"))
        out = bytearray()
        if t not in (EOS, PAD):
            parts.append(RESERVED[t - 256])
    parts.append(out.decode("utf-8", errors="replace"))
    return "".join(parts)


# ---------------------------------------------------------------------------
# prompt segments
# ---------------------------------------------------------------------------


@dataclass
class Segment:
    kind: str  # "image" | "video" | "speech" | "text"
    payload: object

    def __post_init__(self):
        if self.kind not in MODALITIES + ("text",):
            raise VocabularyError(f"unknown segment kind {self.kind!r}")


def ImageFeats(seq) -> Segment:
    return Segment("image", seq)


def VideoFeats(seq) -> Segment:
    return Segment("video", seq)


def SpeechFeats(seq) -> Segment:
    return Segment("speech", seq)


def Text(ids) -> Segment:
    return Segment("text", list(ids))


class PromptSegments(list):
    """Segments in template order: image, video, speech, then the instruction text."""

    def __init__(self, segments: Sequence[Segment] = ()):
        super().__init__(segments)
        kinds = [s.kind for s in self]
        if len(set(kinds)) != len(kinds):
            raise ConfigurationError("at most one segment per modality")
        order = {k: i for i, k in enumerate(MODALITIES + ("text",))}
        self.sort(key=lambda s: order[s.kind])

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(s.kind for s in self if s.kind in MODALITIES)

    def get(self, kind: str):
        for s in self:
            if s.kind == kind:
                return s.payload
        return None


def render_prompt(modalities: Sequence[str], instruction: str) -> str:
    """Template text with feature placeholders for the present modalities only."""
    unknown = set(modalities) - set(MODALITIES)
    if unknown:
        raise VocabularyError(f"unknown modality {sorted(unknown)}")
    head = "".join(_MARKERS[m][0] + _PLACEHOLDERS[m] + _MARKERS[m][1] for m in MODALITIES if m in modalities)
    return f"{head}{QUESTION}{instruction}{ANSWER_CUE}"


_PROMPT_RE = re.compile(
    r"\A(?P<image><Image><ImageFeats></Image>)?(?P<video><Video><VideoFeats></Video>)?"
    r"(?P<speech><Speech><SpeechFeats></Speech>)?Question: (?P<instruction>.*)\n Answer:\Z",
    re.DOTALL,
)


def parse_prompt(text: str) -> tuple[tuple[str, ...], str]:
    m = _PROMPT_RE.match(text)
    if m is None:
        raise VocabularyError("text does not follow the prompt template")
    return tuple(k for k in MODALITIES if m.group(k)), m.group("instruction")


@dataclass
class PromptLayout:
    """Row plan for one prompt.

    ``token_ids`` holds -1 at payload rows; ``payload_kind``/``payload_row``
    say which modality row fills them.
    """

    token_ids: np.ndarray
    payload_kind: list
    payload_row: np.ndarray
    rendered: str

    def __len__(self) -> int:
        return len(self.token_ids)


def prompt_layout(lengths: dict[str, int], instruction) -> PromptLayout:
    """Layout for payload ``lengths`` per modality and an instruction (text or ids)."""
    ids: list[int] = []
    kinds: list = []
    rows: list[int] = []

    def text(tokens):
        ids.extend(tokens)
        kinds.extend([None] * len(tokens))
        rows.extend([-1] * len(tokens))

    instruction_ids = encode_text(instruction) if isinstance(instruction, str) else list(instruction)
    if not instruction_ids:
        raise LengthError("instruction must be non-empty")
    for m in MODALITIES:
        if m not in lengths:
            continue
        n = int(lengths[m])
        if n < 1:
            raise LengthError(f"{m} payload is empty")
        text([token_id(_MARKERS[m][0])])
        ids.extend([-1] * n)
        kinds.extend([m] * n)
        rows.extend(range(n))
        text([token_id(_MARKERS[m][1])])
    text(encode_text(QUESTION))
    text(instruction_ids)
    text(encode_text(ANSWER_CUE))
    instruction_str = instruction if isinstance(instruction, str) else decode_tokens(instruction_ids, stop_at_eos=False)
    rendered = render_prompt([m for m in MODALITIES if m in lengths], instruction_str)
    return PromptLayout(np.array(ids, dtype=int), kinds, np.array(rows, dtype=int), rendered)


# ---------------------------------------------------------------------------
# toy decoder
# ---------------------------------------------------------------------------


@dataclass
class ToyDecoderConfig:
    vocab_size: int = VOCAB_SIZE
    d_llm: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    d_ffn: int = 128
    max_positions: int = 256
    max_local: int = 64

    def __post_init__(self):
        if self.vocab_size < VOCAB_SIZE:
            raise ConfigurationError(f"vocab_size must cover the {VOCAB_SIZE} byte and reserved ids")
        if self.d_llm % self.n_heads:
            raise ConfigurationError("d_llm must be divisible by n_heads")

    def to_dict(self) -> dict:
        return asdict(self)


class ToyDecoder(Module):
    """Causal transformer over mixed token and payload rows.

    Besides absolute positions, payload rows carry their index inside the
    payload and answer rows their index inside the answer, which is what lets
    a two-block model learn to read a payload back out.
    """

    def __init__(self, cfg: ToyDecoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d_llm
        self.tok_emb = Parameter(rng.normal(0.0, 0.3, size=(cfg.vocab_size, d)))
        self.pos_emb = Parameter(rng.normal(0.0, 0.1, size=(cfg.max_positions, d)))
        self.payload_pos = Parameter(rng.normal(0.0, 0.3, size=(cfg.max_local, d)))
        self.answer_pos = Parameter(rng.normal(0.0, 0.3, size=(cfg.max_local, d)))
        self.blocks = [EncoderBlock(d, cfg.n_heads, cfg.d_ffn, rng) for _ in range(cfg.n_blocks)]
        self.ln = LayerNorm(d)
        self.head = Linear(d, cfg.vocab_size, rng)

    def hidden(self, x: Tensor) -> Tensor:
        """``[B, P, d]`` input rows -> final normalised states (causal)."""
        P = x.shape[1]
        if P > self.cfg.max_positions:
            raise LengthError(f"sequence of {P} rows exceeds max_positions={self.cfg.max_positions}")
        bias = causal_bias(P)
        for block in self.blocks:
            x = block(x, bias)
        return self.ln(x)

    def forward(self, x: Tensor) -> Tensor:
        """``[B, P, d]`` input rows -> ``[B, P, V]`` next-token logits."""
        return self.head(self.hidden(x))


@dataclass
class SequenceBatch:
    """Padded row plan for a batch of prompt(+answer) sequences."""

    token_ids: np.ndarray  # [B, P], -1 for payload rows, PAD past the end
    payload_index: np.ndarray  # [B, P] row into the flattened payload bank, -1 elsewhere
    payload_local: np.ndarray  # [B, P]
    answer_local: np.ndarray  # [B, P], -1 outside the answer
    lengths: np.ndarray
    targets: np.ndarray | None = None
    weights: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.token_ids.shape


def build_batch(layouts: Sequence[PromptLayout], payload_offsets: Sequence[dict], answers: Sequence[Sequence[int]] | None = None, max_local: int = 64) -> SequenceBatch:
    """Row plan for prompts, each optionally followed by a teacher-forced answer.

    ``payload_offsets[b][kind]`` is the first row of that item's payload in
    the flattened payload bank. ``answers`` are answer token ids (without
    ``<eos>``); the loss covers every answer token plus the closing ``<eos>``,
    each item's positions weighted to average to one.
    """
    B = len(layouts)
    ans = [list(a) for a in answers] if answers is not None else [[] for _ in range(B)]
    lengths = np.array([len(l) + len(a) for l, a in zip(layouts, ans)])
    P = int(lengths.max())
    tok = np.full((B, P), PAD, dtype=int)
    pidx = np.full((B, P), -1, dtype=int)
    ploc = np.zeros((B, P), dtype=int)
    aloc = np.full((B, P), -1, dtype=int)
    targets = np.zeros((B, P), dtype=int)
    weights = np.zeros((B, P))
    for b, (lay, a) in enumerate(zip(layouts, ans)):
        n = len(lay)
        tok[b, :n] = lay.token_ids
        for i in np.nonzero(lay.token_ids < 0)[0]:
            kind = lay.payload_kind[i]
            pidx[b, i] = payload_offsets[b][kind] + lay.payload_row[i]
            ploc[b, i] = min(lay.payload_row[i], max_local - 1)
        tok[b, n : n + len(a)] = a
        aloc[b, n : n + len(a)] = np.minimum(np.arange(len(a)), max_local - 1)
        if answers is not None:
            seq_next = list(a) + [EOS]
            targets[b, n - 1 : n + len(a)] = seq_next
            weights[b, n - 1 : n + len(a)] = 1.0 / len(seq_next)
    if answers is None:
        return SequenceBatch(tok, pidx, ploc, aloc, lengths)
    return SequenceBatch(tok, pidx, ploc, aloc, lengths, targets, weights)


def embed_batch(decoder: ToyDecoder, batch: SequenceBatch, payload: Tensor | None) -> Tensor:
    """Gather token embeddings and payload rows, then add position terms."""
    cfg = decoder.cfg
    B, P = batch.shape
    V, d = decoder.tok_emb.shape
    if P > cfg.max_positions:
        raise LengthError(f"sequence of {P} rows exceeds max_positions={cfg.max_positions}")
    parts = [decoder.tok_emb]
    n_payload = 0
    if payload is not None:
        if payload.shape[-1] != d:
            raise DimensionError(f"payload width {payload.shape[-1]} != decoder width {d}")
        parts.append(payload)
        n_payload = payload.shape[0]
    bank = T.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    is_payload = batch.token_ids < 0
    if np.any(batch.payload_index[is_payload] >= n_payload):
        raise DimensionError("payload row index out of range")
    index = np.where(is_payload, V + batch.payload_index, batch.token_ids)
    x = bank[index]
    positions = np.broadcast_to(np.arange(P), (B, P))
    pos_bank = T.concat([decoder.pos_emb, decoder.payload_pos, decoder.answer_pos, Tensor(np.zeros((1, d)))], axis=0)
    zero_row = cfg.max_positions + 2 * cfg.max_local
    local = np.where(is_payload, cfg.max_positions + batch.payload_local, zero_row)
    local = np.where(batch.answer_local >= 0, cfg.max_positions + cfg.max_local + batch.answer_local, local)
    return x + pos_bank[positions] + pos_bank[local]


def flatten_payloads(items: Sequence[dict]) -> tuple[Tensor | None, list[dict]]:
    """Stack per-item ``{kind: Tensor [L, d]}`` payloads into one bank with offsets."""
    chunks, offsets, n = [], [], 0
    for item in items:
        off = {}
        for kind in MODALITIES:
            if kind in item and item[kind] is not None:
                t = item[kind]
                t = t.embeddings if isinstance(t, QuasiLinguisticSequence) else t
                off[kind] = n
                chunks.append(t)
                n += t.shape[0]
        offsets.append(off)
    if not chunks:
        return None, offsets
    return (T.concat(chunks, axis=0) if len(chunks) > 1 else chunks[0]), offsets


def _payload_lengths(item: dict) -> dict:
    out = {}
    for kind in MODALITIES:
        t = item.get(kind)
        if t is not None:
            out[kind] = (t.embeddings if isinstance(t, QuasiLinguisticSequence) else t).shape[0]
    return out


@dataclass
class EmbeddedPrompt:
    embeddings: Tensor
    layout: PromptLayout
    payloads: dict

    @property
    def rendered(self) -> str:
        return self.layout.rendered

    def __len__(self) -> int:
        return len(self.layout)


def assemble_prompt(decoder: ToyDecoder, segments: PromptSegments | Sequence[Segment], instruction=None) -> EmbeddedPrompt:
    """Embed one prompt: marker tokens, raw payload rows, question, instruction, answer cue."""
    segments = segments if isinstance(segments, PromptSegments) else PromptSegments(segments)
    if instruction is None:
        instruction = segments.get("text")
        if instruction is None:
            raise LengthError("no instruction given")
    payloads = {k: segments.get(k) for k in segments.modalities}
    layout = prompt_layout(_payload_lengths(payloads), instruction)
    bank, offsets = flatten_payloads([payloads])
    batch = build_batch([layout], offsets, max_local=decoder.cfg.max_local)
    x = embed_batch(decoder, batch, bank)
    return EmbeddedPrompt(x.reshape(x.shape[1], x.shape[2]), layout, payloads)


def decode_loss(decoder: ToyDecoder, items: Sequence[dict], layouts: Sequence[PromptLayout], answers: Sequence[Sequence[int]]) -> Tensor:
    """Mean over items of the per-item mean answer cross-entropy.

    ``items[b]`` maps modality -> payload rows; only answer tokens and the
    closing ``<eos>`` are scored.
    """
    if any(len(a) == 0 for a in answers):
        raise LengthError("answer must contain at least one token")
    bank, offsets = flatten_payloads(items)
    batch = build_batch(layouts, offsets, answers, max_local=decoder.cfg.max_local)
    h = decoder.hidden(embed_batch(decoder, batch, bank))
    # only scored rows go through the output head
    rows = np.flatnonzero(batch.weights)
    B, P, d = h.shape
    logits = decoder.head(h.reshape(B * P, d)[rows])
    return T.cross_entropy(logits, batch.targets.reshape(-1)[rows], batch.weights.reshape(-1)[rows]) * (batch.weights.sum() / B)


def answer_loss(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted cross-entropy; zero-weight positions (prompt and instruction) never count."""
    B = weights.shape[0]
    return T.cross_entropy(logits, targets, weights) * (weights.sum() / B)


def generate(decoder: ToyDecoder, payloads: dict, layout: PromptLayout, max_new: int, mode: str = "greedy", temperature: float = 1.0, seed: int = 0) -> list[int]:
    """Autoregressive continuation of one prompt; stops at ``<eos>`` or ``max_new`` tokens."""
    if len(layout) + max_new > decoder.cfg.max_positions:
        raise LengthError(f"prompt of {len(layout)} rows plus {max_new} new tokens exceeds {decoder.cfg.max_positions}")
    if mode not in ("greedy", "temperature"):
        raise ConfigurationError(f"unknown decoding mode {mode!r}")
    if mode == "temperature" and not temperature > 0:
        raise ConfigurationError("temperature must be positive")
    rng = np.random.default_rng(seed)
    bank, offsets = flatten_payloads([payloads])
    out: list[int] = []
    with T.no_grad():
        for _ in range(max_new):
            batch = build_batch([layout], offsets, [out], max_local=decoder.cfg.max_local)
            batch.targets = None
            logits = decoder.forward(embed_batch(decoder, batch, bank)).data[0, -1]
            if mode == "greedy":
                nxt = int(np.argmax(logits))
            else:
                z = logits / temperature
                p = np.exp(z - z.max())
                p /= p.sum()
                nxt = int(rng.choice(len(p), p=p))
            if nxt == EOS:
                break
            out.append(nxt)
    return out


def generate_text(decoder: ToyDecoder, payloads: dict, instruction: str, max_new: int = 48, **kw) -> str:
    layout = prompt_layout(_payload_lengths(payloads), instruction)
    return decode_tokens(generate(decoder, payloads, layout, max_new, **kw)).strip()
