"""Run configuration: a YAML tree with a runnable ``desk`` profile and a documentation-only ``paper`` profile."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .asr import AsrDecoderConfig, asr_decoder_paper
from .datagen import SyntheticCorpusSpec
from .encoders import EncoderConfig, image_encoder_desk, speech_encoder_desk, speech_encoder_paper
from .errors import ConfigurationError
from .fusion import ToyDecoderConfig
from .optim import OptimizerConfig
from .speech_interface import CFormerConfig, CifConfig
from .visual_interface import QueryTransformerConfig

PROFILES = ("desk", "paper")
SCHEDULE_NAMES = ("decoder", "asr", "image", "video", "speech", "instruct", "warm_start")


@dataclass
class StageSchedule:
    init_lr: float
    min_lr: float
    warmup_lr: float
    warmup_steps: int
    epochs: float
    batch: int
    weight_decay: float | None = None

    def __post_init__(self):
        if self.batch < 1 or self.epochs <= 0:
            raise ConfigurationError("batch must be >= 1 and epochs > 0")
        if min(self.init_lr, self.min_lr, self.warmup_lr) < 0 or self.warmup_steps < 0:
            raise ConfigurationError("learning rates and warmup steps must be non-negative")

    def steps(self, n_items: int, accumulation: int = 1) -> int:
        return max(1, math.ceil(self.epochs * n_items / (self.batch * accumulation)))


@dataclass
class CorpusSizes:
    speech: int = 500
    image: int = 500
    video: int = 200
    heldout_speech: int = 100
    instruct: int = 300
    text: int = 3000
    warm_start_image: int = 300

    def __post_init__(self):
        if min(asdict(self).values()) < 1:
            raise ConfigurationError("every corpus needs at least one item")


def _desk_schedules() -> dict[str, StageSchedule]:
    return {
        "decoder": StageSchedule(3e-3, 1e-5, 1e-5, 50, 2.7, 16, 0.01),
        "asr": StageSchedule(3e-3, 1e-5, 1e-5, 30, 32.0, 16, 0.01),
        "image": StageSchedule(3e-3, 1e-5, 1e-5, 20, 8.0, 16),
        "video": StageSchedule(2e-3, 1e-5, 1e-5, 10, 8.0, 8),
        "speech": StageSchedule(3e-3, 1e-5, 1e-5, 20, 8.0, 16),
        "instruct": StageSchedule(1e-3, 1e-5, 1e-5, 0, 2.0, 8),
        "warm_start": StageSchedule(3e-3, 1e-5, 1e-5, 20, 4.0, 16),
    }


def _paper_schedules() -> dict[str, StageSchedule]:
    return {
        "decoder": StageSchedule(0.0, 0.0, 0.0, 0, 1.0, 1),
        "asr": StageSchedule(3e-4, 1e-8, 1e-8, 24000, 84.0, 128, 0.01),
        "image": StageSchedule(3e-5, 1e-8, 1e-6, 6000, 5.0, 4),
        "video": StageSchedule(1e-5, 1e-8, 1e-6, 200, 5.0, 2),
        "speech": StageSchedule(1e-4, 1e-8, 1e-6, 6000, 30.0, 4),
        "instruct": StageSchedule(1e-6, 1e-6, 1e-6, 0, 2.0, 2),
        "warm_start": StageSchedule(3e-5, 1e-8, 1e-6, 6000, 5.0, 4),
    }


@dataclass
class XLLMConfig:
    profile: str = "desk"
    runnable: bool = True
    seed: int = 0
    speech_encoder: EncoderConfig = field(default_factory=speech_encoder_desk)
    image_encoder: EncoderConfig = field(default_factory=image_encoder_desk)
    cif: CifConfig = field(default_factory=CifConfig)
    asr_decoder: AsrDecoderConfig = field(default_factory=AsrDecoderConfig)
    query_transformer: QueryTransformerConfig = field(default_factory=QueryTransformerConfig)
    cformer: CFormerConfig = field(default_factory=CFormerConfig)
    decoder: ToyDecoderConfig = field(default_factory=ToyDecoderConfig)
    video_frames: int = 4
    corpus: SyntheticCorpusSpec = field(default_factory=SyntheticCorpusSpec)
    sizes: CorpusSizes = field(default_factory=CorpusSizes)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedules: dict = field(default_factory=_desk_schedules)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigurationError(f"unknown profile {self.profile!r}")
        missing = set(SCHEDULE_NAMES) - set(self.schedules)
        if missing:
            raise ConfigurationError(f"missing schedules {sorted(missing)}")
        if self.video_frames < 1:
            raise ConfigurationError("video_frames must be at least 1")
        if self.image_encoder.d_model != self.query_transformer.d_feature:
            raise ConfigurationError("query transformer feature width must match the image encoder")
        if self.corpus.speech.d_in != self.speech_encoder.d_in:
            raise ConfigurationError("speech corpus feature width must match the speech encoder input")
        reduction = self.speech_encoder.frontend_stride * 2 ** len(self.speech_encoder.pool_positions)
        if self.corpus.frontend_reduction != reduction:
            raise ConfigurationError(f"corpus frontend_reduction must equal the encoder reduction {reduction}")

    def require_runnable(self) -> None:
        if not self.runnable:
            raise ConfigurationError(f"the {self.profile!r} profile is documentation only and cannot be trained on a desk machine")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "schedules":
                out[f.name] = {k: asdict(s) for k, s in v.items()}
            elif hasattr(v, "to_dict"):
                out[f.name] = v.to_dict()
            elif hasattr(v, "__dataclass_fields__"):
                out[f.name] = asdict(v)
            else:
                out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "XLLMConfig":
        builders = {
            "speech_encoder": EncoderConfig,
            "image_encoder": EncoderConfig,
            "cif": CifConfig,
            "asr_decoder": AsrDecoderConfig,
            "query_transformer": QueryTransformerConfig,
            "cformer": CFormerConfig,
            "decoder": ToyDecoderConfig,
            "corpus": SyntheticCorpusSpec,
            "sizes": CorpusSizes,
            "optimizer": OptimizerConfig,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        kw = {}
        try:
            for k, v in d.items():
                if k in builders:
                    kw[k] = builders[k](**v)
                elif k == "schedules":
                    kw[k] = {name: StageSchedule(**s) for name, s in v.items()}
                else:
                    kw[k] = v
        except TypeError as exc:
            raise ConfigurationError(f"malformed config: {exc}") from None
        return cls(**kw)


def desk_config(seed: int = 0) -> XLLMConfig:
    return XLLMConfig(seed=seed, corpus=SyntheticCorpusSpec(seed=seed))


def paper_config() -> XLLMConfig:
    """Published model shapes and schedules; kept for reference, never trained here."""
    enc = speech_encoder_paper()
    return XLLMConfig(
        profile="paper",
        runnable=False,
        speech_encoder=enc,
        image_encoder=EncoderConfig(d_model=1408, n_blocks=40, n_heads=16, d_ffn=6144, pool_positions=(), patch=14),
        cif=CifConfig(predictor_channels=512, predictor_kernel=5),
        asr_decoder=asr_decoder_paper(),
        query_transformer=QueryTransformerConfig(n_queries=32, n_blocks=12, d_model=768, n_heads=12, d_ffn=3072, d_feature=1408),
        cformer=CFormerConfig(n_layers=12, n_heads=12, d_ffn=3072),
        decoder=ToyDecoderConfig(d_llm=4096, n_blocks=28, n_heads=32, d_ffn=16384, max_positions=2048, max_local=512),
        video_frames=4,
        corpus=SyntheticCorpusSpec(speech={"d_in": 80}),
        optimizer=OptimizerConfig(accumulation=16),
        schedules=_paper_schedules(),
    )


def default_config(profile: str = "desk", seed: int = 0) -> XLLMConfig:
    if profile == "desk":
        return desk_config(seed)
    if profile == "paper":
        return paper_config()
    raise ConfigurationError(f"unknown profile {profile!r}")


def dump_profiles(path) -> None:
    """Write both profiles to one YAML file."""
    tree = {"profiles": {p: default_config(p).to_dict() for p in PROFILES}}
    Path(path).write_text(yaml.safe_dump(tree, sort_keys=False))


def load_config(path=None, profile: str = "desk", seed: int | None = None) -> XLLMConfig:
    """Read ``profiles.<profile>`` from a YAML file (or the built-in defaults when ``path`` is None)."""
    if path is None:
        cfg = default_config(profile)
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file {path} not found")
        try:
            tree = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: not valid YAML ({exc})") from None
        if not isinstance(tree, dict) or profile not in tree.get("profiles", {}):
            raise ConfigurationError(f"{path} has no profile {profile!r}")
        cfg = XLLMConfig.from_dict(tree["profiles"][profile])
    if seed is not None:
        cfg.seed = seed
        cfg.corpus.seed = seed
    return cfg
