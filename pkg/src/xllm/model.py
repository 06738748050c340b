"""The assembled stack: encoders, interfaces and decoder, addressed by named parameter groups."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import tensor as T
from .asr import CifAsrModel
from .checkpoint import load_checkpoint, save_checkpoint
from .config import XLLMConfig
from .encoders import ImageEncoder
from .errors import CheckpointError, ConfigurationError, LengthError
from .fusion import ToyDecoder, decode_tokens, generate, prompt_layout
from .layers import Module
from .speech_interface import CifConfig, QuasiLinguisticSequence, SpeechInterface, cif
from .tensor import Tensor
from .visual_interface import ImageInterface, VideoInterface

GROUPS = (
    "speech_encoder",
    "cif_predictor",
    "asr_decoder",
    "image_encoder",
    "image_qformer",
    "i_adapter",
    "video_qformer",
    "v_adapter",
    "cformer",
    "s_adapter",
    "decoder",
)
ALIASES = {
    "asr": ("speech_encoder", "cif_predictor", "asr_decoder"),
    "image_interface": ("image_qformer", "i_adapter"),
    "video_interface": ("video_qformer", "v_adapter"),
    "speech_interface": ("cformer", "s_adapter"),
    "adapters": ("i_adapter", "v_adapter", "s_adapter"),
}


def expand_groups(names) -> frozenset[str]:
    out = set()
    for n in names:
        if n in ALIASES:
            out.update(ALIASES[n])
        elif n in GROUPS:
            out.add(n)
        else:
            raise ConfigurationError(f"unknown parameter group {n!r}")
    return frozenset(out)


class XLLMModel:
    """Every trainable and frozen component of the stack.

    Each component draws its initial weights from its own seeded stream, so
    resizing one part never changes another's initialisation.
    """

    def __init__(self, cfg: XLLMConfig):
        self.cfg = cfg

        def rng(i):
            return np.random.default_rng([cfg.seed, 1000 + i])

        self.asr = CifAsrModel(cfg.speech_encoder, cfg.cif, cfg.asr_decoder, rng(0))
        # random weights stand in for a pretrained vision backbone; never trained
        self.image_encoder = ImageEncoder(cfg.image_encoder, rng(1))
        d_llm = cfg.decoder.d_llm
        self.image = ImageInterface(self.image_encoder, cfg.query_transformer, d_llm, rng(2))
        self.video = VideoInterface(self.image_encoder, cfg.query_transformer, d_llm, rng(3), n_frames=cfg.video_frames)
        self.speech = SpeechInterface(cfg.speech_encoder.d_model, d_llm, cfg.cformer, rng(4))
        self.decoder = ToyDecoder(cfg.decoder, rng(5))

    def groups(self) -> dict[str, Module]:
        return {
            "speech_encoder": self.asr.encoder,
            "cif_predictor": self.asr.predictor,
            "asr_decoder": self.asr.decoder,
            "image_encoder": self.image_encoder,
            "image_qformer": self.image.qformer,
            "i_adapter": self.image.adapter,
            "video_qformer": self.video.qformer,
            "v_adapter": self.video.adapter,
            "cformer": self.speech.cformer,
            "s_adapter": self.speech.adapter,
            "decoder": self.decoder,
        }

    def hashes(self) -> dict[str, str]:
        return {name: m.content_hash() for name, m in self.groups().items()}

    def parameters_of(self, names) -> list:
        groups = self.groups()
        return [p for n in sorted(expand_groups(names)) for p in groups[n].parameters()]

    def set_trainable(self, names) -> None:
        keep = expand_groups(names)
        for name, module in self.groups().items():
            module.requires_grad_(name in keep)

    def _group_config(self, name: str) -> dict:
        cfg = self.cfg
        table = {
            "speech_encoder": cfg.speech_encoder,
            "cif_predictor": cfg.cif,
            "asr_decoder": cfg.asr_decoder,
            "image_encoder": cfg.image_encoder,
            "image_qformer": cfg.query_transformer,
            "video_qformer": cfg.query_transformer,
            "cformer": cfg.cformer,
            "decoder": cfg.decoder,
        }
        if name in table:
            return table[name].to_dict()
        return {"d_llm": cfg.decoder.d_llm}

    def save(self, directory) -> None:
        directory = Path(directory)
        for name, module in self.groups().items():
            save_checkpoint(directory / f"{name}.ckpt", module, name, self._group_config(name))

    def load(self, directory, names=None) -> None:
        directory = Path(directory)
        for name in names or GROUPS:
            path = directory / f"{name}.ckpt"
            if not path.exists():
                raise CheckpointError(f"missing checkpoint {path}")
            load_checkpoint(path, self.groups()[name], name, self._group_config(name))

    # -- modality paths -------------------------------------------------

    def speech_tokens(self, frames: np.ndarray, target_len: int | None = None) -> tuple[Tensor, object]:
        """Frozen encoder and integrate-and-fire: ``[U_in, d_in]`` frames -> ``[L, d]`` token embeddings.

        With ``target_len`` the weights are rescaled to fire exactly that many
        times; otherwise the raw weights decide the count.
        """
        with T.no_grad():
            fr = Tensor(np.asarray(frames)[None])
            feats, mask = self.asr.encoder.forward(fr, [fr.shape[1]])
            alphas = self.asr.predictor(feats, mask)
            cfg = self.cfg.cif if target_len is not None else CifConfig(**{**self.cfg.cif.to_dict(), "scale_at_train": False})
            out, out_mask, traces, _ = cif(feats, alphas, mask, None if target_len is None else [target_len], cfg)
        n = int(out_mask[0].sum())
        if n == 0:
            raise LengthError("the utterance produced no token-level embeddings")
        return Tensor(out.data[0, :n]), traces[0]

    def speech_payload(self, frames: np.ndarray, target_len: int | None = None) -> QuasiLinguisticSequence:
        tokens, _ = self.speech_tokens(frames, target_len)
        L = tokens.shape[0]
        out = self.speech.from_tokens(tokens.reshape(1, L, -1), np.ones((1, L), bool))
        return QuasiLinguisticSequence(out.reshape(L, -1), "speech")

    def image_payload(self, pixels: np.ndarray) -> QuasiLinguisticSequence:
        return self.image(np.asarray(pixels))

    def video_payload(self, frames: np.ndarray) -> QuasiLinguisticSequence:
        return self.video(np.asarray(frames))

    def payloads(self, image=None, video=None, speech=None) -> dict:
        out = {}
        if image is not None:
            out["image"] = self.image_payload(image)
        if video is not None:
            out["video"] = self.video_payload(video)
        if speech is not None:
            out["speech"] = self.speech_payload(speech)
        return out

    def answer(self, instruction: str, image=None, video=None, speech=None, max_new: int = 32, mode: str = "greedy", temperature: float = 1.0, seed: int = 0) -> str:
        """Generate a text answer for any subset of modality inputs."""
        with T.no_grad():
            payloads = self.payloads(image, video, speech)
            layout = prompt_layout({k: len(v) for k, v in payloads.items()}, instruction)
            ids = generate(self.decoder, payloads, layout, max_new, mode=mode, temperature=temperature, seed=seed)
        return decode_tokens(ids).strip()
