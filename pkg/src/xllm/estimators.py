"""Scikit-learn style front ends for the recogniser and the full stack."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from ._validation import check_frames, check_sequence_of_queries, check_transcripts
from .asr import AsrDecoderConfig, CifAsrModel
from .config import XLLMConfig, load_config
from .encoders import EncoderConfig, batch_frames, speech_min_input_length
from .errors import ConfigurationError
from .eval import cer_corpus
from .fusion import decode_tokens, encode_text
from .optim import AdamW, OptimizerConfig, ScheduleConfig, lr_at
from .speech_interface import CifConfig, cif
from .training import Corpora, TrainingRun


class CifSpeechRecognizer(BaseEstimator):
    """Integrate-and-fire recogniser over frame-feature sequences.

    ``fit(X, y)`` takes ``[U_i, d_in]`` arrays and transcript strings,
    ``predict`` returns strings, ``transform`` returns the token-level
    embeddings (one row per recognised symbol) and ``score`` is ``1 - CER``.
    """

    def __init__(self, d_model=64, n_blocks=4, pool_positions=(0, 2), d_in=16, n_steps=1000, batch_size=16, learning_rate=3e-3, weight_decay=0.01, random_state=0):
        self.d_model = d_model
        self.n_blocks = n_blocks
        self.pool_positions = pool_positions
        self.d_in = d_in
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.random_state = random_state

    def _encoder_config(self) -> EncoderConfig:
        return EncoderConfig(d_model=self.d_model, n_blocks=self.n_blocks, pool_positions=tuple(self.pool_positions), d_in=self.d_in)

    def fit(self, X, y):
        enc = self._encoder_config()
        X = check_frames(X, self.d_in, speech_min_input_length(enc))
        y = check_transcripts(y, len(X))
        targets = [encode_text(t) for t in y]
        rng = np.random.default_rng(self.random_state)
        self.model_ = CifAsrModel(enc, CifConfig(), AsrDecoderConfig(d_visual=self.d_model, d_linguistic=self.d_model), rng)
        opt = AdamW(self.model_.parameters(), OptimizerConfig(weight_decay=self.weight_decay))
        warmup = min(30, self.n_steps - 1)
        sched = ScheduleConfig(self.learning_rate, self.learning_rate / 300, self.learning_rate / 300, warmup, self.n_steps)
        self.loss_curve_ = []
        batch = min(self.batch_size, len(X))
        for step in range(self.n_steps):
            idx = rng.choice(len(X), size=batch, replace=False)
            frames, lengths = batch_frames([X[i] for i in idx])
            loss = self.model_.loss(frames, lengths, [targets[i] for i in idx])
            opt.zero_grad()
            loss.backward()
            opt.step(lr_at(step, sched))
            self.loss_curve_.append(loss.item())
        self.model_.requires_grad_(False)
        return self

    def predict(self, X) -> list[str]:
        check_is_fitted(self, "model_")
        X = check_frames(X, self.d_in, speech_min_input_length(self.model_.encoder_cfg))
        return [decode_tokens(ids) for ids in self.model_.recognize_batch(X)]

    def transform(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        X = check_frames(X, self.d_in, speech_min_input_length(self.model_.encoder_cfg))
        unscaled = replace(self.model_.cif_cfg, scale_at_train=False)
        out = []
        with T.no_grad():
            for x in X:
                feats, mask = self.model_.encoder.forward(T.Tensor(x[None]), [len(x)])
                alphas = self.model_.predictor(feats, mask)
                tokens, tmask, _, _ = cif(feats, alphas, mask, None, unscaled)
                out.append(tokens.data[0, : int(tmask[0].sum())])
        return out

    def score(self, X, y) -> float:
        y = check_transcripts(y, len(X) if not isinstance(X, np.ndarray) or X.ndim == 3 else 1)
        hyp = self.predict(X)
        return 1.0 - cer_corpus([list(t) for t in y], [list(h) for h in hyp])


class XLLM(BaseEstimator):
    """The full stack behind ``fit`` (all training stages) and ``predict`` (answers).

    ``predict`` takes request dicts with an ``instruction`` and any of
    ``image`` (``[H, W, 3]``), ``video`` (``[F, H, W, 3]``) and ``speech``
    (``[U, d_in]``).
    """

    def __init__(self, config=None, profile="desk", random_state=0, run_dir=None, max_new_tokens=32):
        self.config = config
        self.profile = profile
        self.random_state = random_state
        self.run_dir = run_dir
        self.max_new_tokens = max_new_tokens

    def _resolve_config(self) -> XLLMConfig:
        if isinstance(self.config, XLLMConfig):
            cfg = XLLMConfig.from_dict(self.config.to_dict())
            cfg.seed = self.random_state
            cfg.corpus.seed = self.random_state
            return cfg
        return load_config(self.config, self.profile, seed=self.random_state)

    def fit(self, X=None, y=None):
        """Train every stage; ``X`` may be a ``Corpora`` to replace the synthetic default."""
        if X is not None and not isinstance(X, Corpora):
            raise ConfigurationError("fit expects a Corpora bundle or None")
        cfg = self._resolve_config()
        self.run_ = TrainingRun(cfg, self.run_dir, corpora=X)
        self.summary_ = self.run_.run()
        self.model_ = self.run_.model
        return self

    def predict(self, X) -> list[str]:
        check_is_fitted(self, "model_")
        cfg = self.model_.cfg
        queries = check_sequence_of_queries(X, cfg.corpus.image.size, cfg.speech_encoder.d_in)
        return [
            self.model_.answer(q["instruction"], image=q.get("image"), video=q.get("video"), speech=q.get("speech"), max_new=self.max_new_tokens)
            for q in queries
        ]
