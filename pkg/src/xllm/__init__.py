"""Desk-scale multimodal interface stack: encoders, integrate-and-fire speech compression,
query-transformer visual interfaces, adapters into a frozen toy decoder, and three-stage training."""

from .config import XLLMConfig, default_config, load_config
from .errors import (
    CheckpointError,
    ConfigurationError,
    DataError,
    DivergenceError,
    FreezeViolation,
    NumericalError,
    OrderingError,
    XLLMError,
)
from .estimators import XLLM, CifSpeechRecognizer
from .eval import CerReport, EvalRecord, cer, judge_stub, relative_score
from .fusion import PromptSegments, assemble_prompt, decode_loss, generate, render_prompt
from .model import XLLMModel
from .training import StagePlan, TrainingRun, run_stage

__all__ = [
    "XLLM",
    "CerReport",
    "CheckpointError",
    "CifSpeechRecognizer",
    "ConfigurationError",
    "DataError",
    "DivergenceError",
    "EvalRecord",
    "FreezeViolation",
    "NumericalError",
    "OrderingError",
    "PromptSegments",
    "StagePlan",
    "TrainingRun",
    "XLLMConfig",
    "XLLMError",
    "XLLMModel",
    "assemble_prompt",
    "cer",
    "decode_loss",
    "default_config",
    "generate",
    "judge_stub",
    "load_config",
    "relative_score",
    "render_prompt",
    "run_stage",
]

__version__ = "0.1.0"
