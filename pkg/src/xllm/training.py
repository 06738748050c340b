"""Three-stage training: declarative freeze masks, losses, hash audits, metrics and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .config import StageSchedule, XLLMConfig
from .datagen import (
    FAMILY_COUNTS,
    STAGE2_INSTRUCTIONS,
    SyntheticCorpusSpec,
    _rng,
    gen_image_corpus,
    gen_instruction_corpus,
    gen_speech_corpus,
    gen_text_corpus,
    gen_video_corpus,
    load_corpus,
    save_corpus,
    vsqa_answer,
)
from .encoders import batch_frames
from .errors import ConfigurationError, DataError, DivergenceError, FreezeViolation, LengthError, OrderingError
from .eval import cer_corpus
from .fusion import decode_loss, encode_text, prompt_layout
from .model import XLLMModel, expand_groups
from .optim import AdamW, OptimizerConfig, ScheduleConfig, lr_at
from .tensor import Tensor
from .visual_interface import init_image_from_checkpoint, init_video_from_image, save_query_transformer

log = logging.getLogger(__name__)

# stage 0 prepares the stand-in language model before the three stages proper
STAGE_LIMITS = {
    0: frozenset({"decoder"}),
    1: expand_groups(["asr"]),
    2: expand_groups(["image_interface", "video_interface", "speech_interface"]),
    3: expand_groups(["adapters"]),
}
PREREQUISITES = {0: (), 1: (), 2: (0, 1), 3: (2,)}
STAGE_NAMES = {0: "decoder", 1: "stage1", 2: "stage2", 3: "stage3"}


@dataclass
class StagePlan:
    """What one training phase may touch and for how long.

    ``trainable`` accepts group names or the aliases in ``model.ALIASES``; the
    expanded set must lie inside the stage's allowed groups.
    """

    stage_id: int
    trainable: frozenset
    losses: list
    data_mix: dict
    epochs: float
    batch: int
    accumulation_steps: int
    lr_schedule: ScheduleConfig
    name: str = ""
    weight_decay: float | None = None

    def __post_init__(self):
        if self.stage_id not in STAGE_LIMITS:
            raise ConfigurationError(f"unknown stage {self.stage_id}")
        self.trainable = expand_groups(self.trainable)
        extra = self.trainable - STAGE_LIMITS[self.stage_id]
        if extra:
            raise ConfigurationError(f"stage {self.stage_id} may not train {sorted(extra)}")
        if self.batch < 1 or self.accumulation_steps < 1:
            raise ConfigurationError("batch and accumulation_steps must be at least 1")
        if any(w < 0 for _, w in self.losses) or (self.data_mix and sum(self.data_mix.values()) <= 0):
            raise ConfigurationError("loss and data-mix weights must be non-negative with a positive total")
        self.name = self.name or STAGE_NAMES[self.stage_id]

    @property
    def steps(self) -> int:
        return self.lr_schedule.total_steps


def make_plan(stage_id: int, trainable, schedule: StageSchedule, n_items: int, optimizer: OptimizerConfig, losses, data_mix=None, name: str = "") -> StagePlan:
    steps = schedule.steps(n_items, optimizer.accumulation)
    sched = ScheduleConfig(schedule.init_lr, schedule.min_lr, schedule.warmup_lr, min(schedule.warmup_steps, steps - 1), steps)
    return StagePlan(
        stage_id=stage_id,
        trainable=frozenset(trainable),
        losses=list(losses),
        data_mix=dict(data_mix or {name: 1.0 for name, _ in losses}),
        epochs=schedule.epochs,
        batch=schedule.batch,
        accumulation_steps=optimizer.accumulation,
        lr_schedule=sched,
        name=name,
        weight_decay=schedule.weight_decay,
    )


@dataclass
class StageResult:
    plan_name: str
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    hashes_before: dict = field(default_factory=dict)
    hashes_after: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def changed(self) -> set:
        return {g for g in self.hashes_before if self.hashes_before[g] != self.hashes_after[g]}


def run_stage(
    plan: StagePlan,
    model: XLLMModel,
    sample: Callable[[np.random.Generator], object],
    loss_fn: Callable[[object], Tensor],
    optimizer: OptimizerConfig | None = None,
    seed: int = 0,
    metrics_path=None,
) -> StageResult:
    """Optimise ``plan.trainable`` for ``plan.steps`` steps and audit that nothing else moved.

    ``sample(rng)`` draws one micro-batch and ``loss_fn`` maps it to a scalar
    mean loss; each optimiser step accumulates ``plan.accumulation_steps``
    micro-batches. A non-finite loss restores the last good weights and
    raises ``DivergenceError``.
    """
    t0 = time.perf_counter()
    result = StageResult(plan.name, hashes_before=model.hashes())
    if not plan.trainable:
        result.hashes_after = model.hashes()
        return result
    base = optimizer or OptimizerConfig()
    opt_cfg = OptimizerConfig(
        beta1=base.beta1,
        beta2=base.beta2,
        weight_decay=base.weight_decay if plan.weight_decay is None else plan.weight_decay,
        eps=base.eps,
        accumulation=plan.accumulation_steps,
        clip_norm=base.clip_norm,
    )
    model.set_trainable(plan.trainable)
    params = model.parameters_of(plan.trainable)
    opt = AdamW(params, opt_cfg)
    rng = _rng(seed, f"sampler/{plan.name}")
    metrics = open(metrics_path, "a") if metrics_path else None
    try:
        for step in range(plan.steps):
            good = [p.data.copy() for p in params]
            opt.zero_grad()
            total = 0.0
            for _ in range(plan.accumulation_steps):
                loss = loss_fn(sample(rng)) * (1.0 / plan.accumulation_steps)
                value = loss.item()
                if not math.isfinite(value):
                    for p, d in zip(params, good):
                        p.data = d
                    raise DivergenceError(f"{plan.name}: non-finite loss at step {step}")
                loss.backward()
                total += value
            lr = lr_at(step, plan.lr_schedule)
            opt.step(lr)
            result.losses.append(total)
            result.lrs.append(lr)
            if metrics:
                metrics.write(json.dumps({"step": step, "stage": plan.stage_id, "phase": plan.name, "loss": total, "lr": lr}) + "\n")
    finally:
        if metrics:
            metrics.close()
        model.set_trainable(())
    result.hashes_after = model.hashes()
    moved = result.changed - plan.trainable
    if moved:
        raise FreezeViolation(f"{plan.name} changed frozen groups {sorted(moved)}")
    result.seconds = time.perf_counter() - t0
    return result


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def answer_ids(text: str) -> list[int]:
    if not text:
        raise LengthError("answer text is empty")
    return encode_text(" " + text)


def pretrain_decoder_loss(model: XLLMModel, items: Sequence[dict]) -> Tensor:
    """Text-only prompts whose payload rows are the decoder's own token embeddings."""
    dec = model.decoder
    payloads, layouts, answers = [], [], []
    for it in items:
        ids = {k: encode_text(v) for k, v in it["payloads"].items()}
        payloads.append({k: dec.tok_emb[v] for k, v in ids.items()})
        layouts.append(prompt_layout({k: len(v) for k, v in ids.items()}, it["instruction"]))
        answers.append(answer_ids(it["answer"]))
    return decode_loss(dec, payloads, layouts, answers)


def stage1_asr_loss(model: XLLMModel, items: Sequence[dict], visual=None) -> Tensor:
    """Recogniser cross-entropy plus unit-weight quantity loss."""
    x, lengths = batch_frames([it["frames"] for it in items])
    return model.asr.loss(x, lengths, [it["tokens"] for it in items], visual=visual)


class FeatureCache:
    """Outputs of frozen components, computed once per stage.

    Everything cached here is a deterministic function of frozen weights, so
    using the cache gives the same losses as running the full path.
    """

    def __init__(self, model: XLLMModel):
        self.model = model
        self.store: dict = {}

    def image_features(self, images: Sequence[dict]) -> np.ndarray:
        with T.no_grad():
            return self.model.image_encoder.forward(Tensor(np.stack([it["pixels"] for it in images]))).data

    def video_features(self, videos: Sequence[dict]) -> np.ndarray:
        with T.no_grad():
            return self.model.video.frame_features(Tensor(np.stack([it["frames"] for it in videos]))).data

    def speech_tokens(self, frames: Sequence[np.ndarray], target_lens: Sequence[int] | None) -> list[np.ndarray]:
        out = []
        for i, fr in enumerate(frames):
            tok, _ = self.model.speech_tokens(fr, None if target_lens is None else target_lens[i])
            out.append(tok.data)
        return out


def _pad_tokens(rows: Sequence[np.ndarray]) -> tuple[Tensor, np.ndarray]:
    lens = np.array([len(r) for r in rows])
    out = np.zeros((len(rows), lens.max(), rows[0].shape[1]))
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return Tensor(out), np.arange(lens.max())[None, :] < lens[:, None]


def speech_payloads(model: XLLMModel, token_rows: Sequence[np.ndarray]) -> list[Tensor]:
    x, mask = _pad_tokens(token_rows)
    out = model.speech.from_tokens(x, mask)
    return [out[b, : len(r)] for b, r in enumerate(token_rows)]


def stage2_alignment_loss(model: XLLMModel, modality: str, features, captions: Sequence[str]) -> Tensor:
    """Caption or transcript loss through one interface and the frozen decoder.

    ``features`` are cached frozen-encoder outputs: ``[B, U, d]`` for images,
    ``[B, T, U, d]`` for video, a list of ``[L, d]`` token rows for speech.
    """
    if any(not c for c in captions):
        raise LengthError("zero-length caption")
    if modality == "image":
        out = model.image.from_features(Tensor(np.asarray(features)))
        payloads = [out[b] for b in range(out.shape[0])]
    elif modality == "video":
        out = model.video.from_frame_features(Tensor(np.asarray(features)))
        payloads = [out[b] for b in range(out.shape[0])]
    elif modality == "speech":
        payloads = speech_payloads(model, features)
    else:
        raise ConfigurationError(f"unknown modality {modality!r}")
    instruction = STAGE2_INSTRUCTIONS[modality]
    layouts = [prompt_layout({modality: p.shape[0]}, instruction) for p in payloads]
    return decode_loss(model.decoder, [{modality: p} for p in payloads], layouts, [answer_ids(c) for c in captions])


def stage3_instruction_loss(model: XLLMModel, items: Sequence[dict]) -> Tensor:
    """Instruction loss over items carrying any subset of modality rows.

    Each item holds pre-adapter rows under ``"image_q"``, ``"video_q"`` or
    ``"speech_c"`` (frozen query-transformer / C-Former outputs), plus
    ``"instruction"`` and ``"answer"``. Only the adapters see gradients.
    """
    adapters = {"image": model.image.adapter, "video": model.video.adapter, "speech": model.speech.adapter}
    keys = {"image": "image_q", "video": "video_q", "speech": "speech_c"}
    payloads, layouts, answers = [], [], []
    for it in items:
        p = {m: adapters[m](Tensor(it[k])) for m, k in keys.items() if k in it}
        if not p:
            raise DataError("instruction item carries no modality")
        payloads.append(p)
        layouts.append(prompt_layout({m: v.shape[0] for m, v in p.items()}, it["instruction"]))
        answers.append(answer_ids(it["answer"]))
    return decode_loss(model.decoder, payloads, layouts, answers)


# ---------------------------------------------------------------------------
# corpora and the full run
# ---------------------------------------------------------------------------


@dataclass
class Corpora:
    speech: list
    heldout_speech: list
    image: list
    video: list
    instruct: list
    text: list

    KINDS = ("speech", "heldout_speech", "image", "video", "instruct", "text")

    @classmethod
    def generate(cls, cfg: XLLMConfig) -> "Corpora":
        spec, n = cfg.corpus, cfg.sizes
        return cls(
            speech=gen_speech_corpus(spec, n.speech),
            heldout_speech=gen_speech_corpus(spec, n.heldout_speech, stream="heldout_speech"),
            image=gen_image_corpus(spec, n.image),
            video=gen_video_corpus(spec, n.video),
            instruct=gen_instruction_corpus(spec, n.instruct, n.image, n.video, n.speech),
            text=gen_text_corpus(spec, n.text),
        )

    def save(self, directory, spec: SyntheticCorpusSpec) -> dict:
        directory = Path(directory)
        return {k: save_corpus(directory / f"{k}.bin", k, getattr(self, k), spec) for k in self.KINDS}

    @classmethod
    def load(cls, directory) -> "Corpora":
        directory = Path(directory)
        parts = {}
        for k in cls.KINDS:
            header, items = load_corpus(directory / f"{k}.bin")
            if header["kind"] != k:
                raise DataError(f"{directory / k}.bin holds {header['kind']!r}")
            parts[k] = items
        return cls(**parts)


class TrainingRun:
    """Drives decoder preparation and stages 1-3 over one run directory.

    Each finished stage leaves ``stage{n}.done`` (a JSON summary) and a full
    checkpoint set under ``checkpoints/stage{n}``; a new run over the same
    directory resumes after the last finished stage.
    """

    def __init__(self, cfg: XLLMConfig, run_dir=None, corpora: Corpora | None = None):
        cfg.require_runnable()
        self.cfg = cfg
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.model = XLLMModel(cfg)
        self._corpora = corpora
        self.done: dict[int, dict] = {}
        self.loaded_stage = -1
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            snap = self.run_dir / "config.json"
            if snap.exists():
                if json.loads(snap.read_text()) != json.loads(json.dumps(cfg.to_dict())):
                    raise ConfigurationError(f"{snap} was written by a different configuration")
            else:
                snap.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            for s in STAGE_NAMES:
                marker = self.run_dir / f"{STAGE_NAMES[s]}.done"
                if marker.exists():
                    self.done[s] = json.loads(marker.read_text())

    # -- bookkeeping ------------------------------------------------------

    @property
    def corpora(self) -> Corpora:
        if self._corpora is None:
            data = self.run_dir / "data" if self.run_dir else None
            if data is not None and (data / "text.bin").exists():
                self._corpora = Corpora.load(data)
            else:
                self._corpora = Corpora.generate(self.cfg)
                if data is not None:
                    self._corpora.save(data, self.cfg.corpus)
        return self._corpora

    def _metrics_path(self, stage: int):
        return None if self.run_dir is None else self.run_dir / f"metrics_{STAGE_NAMES[stage]}.jsonl"

    def _ensure_loaded(self) -> None:
        """Bring the in-memory model up to the latest finished stage on disk."""
        latest = max(self.done, default=-1)
        if self.run_dir is None or latest <= self.loaded_stage:
            return
        self.model.load(self.run_dir / "checkpoints" / STAGE_NAMES[latest])
        self.loaded_stage = latest

    def _require(self, stage: int) -> None:
        missing = [p for p in PREREQUISITES[stage] if p not in self.done]
        if missing:
            names = ", ".join(STAGE_NAMES[p] for p in missing)
            raise OrderingError(f"{STAGE_NAMES[stage]} needs {names} to finish first")

    def _finish(self, stage: int, summary: dict) -> dict:
        summary = {**summary, "hashes": self.model.hashes()}
        self.done[stage] = summary
        self.loaded_stage = stage
        if self.run_dir is not None:
            self.model.save(self.run_dir / "checkpoints" / STAGE_NAMES[stage])
            (self.run_dir / f"{STAGE_NAMES[stage]}.done").write_text(json.dumps(summary, indent=2, sort_keys=True))
        return summary

    def _plan(self, stage: int, trainable, schedule, n_items: int, losses, name: str = "", data_mix=None) -> StagePlan:
        if not isinstance(schedule, StageSchedule):
            schedule = self.cfg.schedules[schedule]
        return make_plan(stage, trainable, schedule, n_items, self.cfg.optimizer, losses, data_mix, name)

    def _run(self, plan: StagePlan, sample, loss_fn, record: bool = True) -> StageResult:
        log.info("%s: %d steps", plan.name, plan.steps)
        metrics = self._metrics_path(plan.stage_id) if record else None
        res = run_stage(plan, self.model, sample, loss_fn, self.cfg.optimizer, self.cfg.seed, metrics)
        log.info("%s: loss %.4f -> %.4f in %.1fs", plan.name, res.losses[0] if res.losses else float("nan"), res.losses[-1] if res.losses else float("nan"), res.seconds)
        return res

    @staticmethod
    def _sampler(items: Sequence, batch: int):
        def sample(rng):
            idx = rng.choice(len(items), size=min(batch, len(items)), replace=False)
            return [items[i] for i in idx]

        return sample

    # -- stages -----------------------------------------------------------

    def prepare_decoder(self) -> dict:
        if 0 in self.done:
            self._ensure_loaded()
            return self.done[0]
        text = self.corpora.text
        plan = self._plan(0, ["decoder"], "decoder", len(text), [("text", 1.0)], "decoder")
        res = self._run(plan, self._sampler(text, plan.batch), lambda b: pretrain_decoder_loss(self.model, b))
        return self._finish(0, {"final_loss": res.losses[-1], "seconds": res.seconds})

    def stage1(self) -> dict:
        if 1 in self.done:
            self._ensure_loaded()
            return self.done[1]
        self._require(1)
        self._ensure_loaded()
        speech = self.corpora.speech
        plan = self._plan(1, ["asr"], "asr", len(speech), [("asr_ce", 1.0), ("quantity", 1.0)], "stage1")
        res = self._run(plan, self._sampler(speech, plan.batch), lambda b: stage1_asr_loss(self.model, b))
        report = self.heldout_cer()
        return self._finish(1, {"final_loss": res.losses[-1], "heldout_cer": report, "seconds": res.seconds, "changed": sorted(res.changed)})

    def heldout_cer(self) -> float:
        items = self.corpora.heldout_speech
        hyps = self.model.asr.recognize_batch([it["frames"] for it in items])
        return cer_corpus([it["tokens"] for it in items], hyps)

    def _stage2_data(self, modality: str):
        cache = FeatureCache(self.model)
        c = self.corpora
        if modality == "image":
            feats = cache.image_features(c.image)
            captions = [it["caption"] for it in c.image]
        elif modality == "video":
            feats = cache.video_features(c.video)
            captions = [it["caption"] for it in c.video]
        else:
            feats = cache.speech_tokens([it["frames"] for it in c.speech], [len(it["tokens"]) for it in c.speech])
            captions = [it["text"] for it in c.speech]
        return feats, captions

    def alignment_phase(self, modality: str, schedule=None, data=None, eval_size: int = 64, name: str | None = None, record: bool = True) -> dict:
        """One stage-2 sub-plan; returns initial and final loss on a fixed evaluation slice."""
        feats, captions = data if data is not None else self._stage2_data(modality)
        n = len(captions)
        group = {"image": "image_interface", "video": "video_interface", "speech": "speech_interface"}[modality]

        def take(idx):
            f = [feats[i] for i in idx] if modality == "speech" else feats[idx]
            return f, [captions[i] for i in idx]

        def loss_fn(idx):
            f, caps = take(idx)
            return stage2_alignment_loss(self.model, modality, f, caps)

        eval_idx = np.arange(min(eval_size, n))

        def evaluate():
            with T.no_grad():
                return loss_fn(eval_idx).item()

        plan = self._plan(2, [group], schedule or modality, n, [(f"{modality}_alignment", 1.0)], name or f"stage2-{modality}")

        def sample(rng):
            return rng.choice(n, size=min(plan.batch, n), replace=False)

        before = evaluate()
        res = self._run(plan, sample, loss_fn, record)
        after = evaluate()
        return {"initial_loss": before, "final_loss": after, "steps": plan.steps, "seconds": res.seconds, "changed": sorted(res.changed)}

    def stage2(self) -> dict:
        if 2 in self.done:
            self._ensure_loaded()
            return self.done[2]
        self._require(2)
        self._ensure_loaded()
        out = {"image": self.alignment_phase("image")}
        # the video interface starts from the trained image interface
        init_video_from_image(self.model.image, self.model.video)
        out["video"] = self.alignment_phase("video")
        out["speech"] = self.alignment_phase("speech")
        return self._finish(2, out)

    def _stage3_items(self) -> list[dict]:
        m, c = self.model, self.corpora
        with T.no_grad():
            img_q = m.image.qformer(Tensor(FeatureCache(m).image_features(c.image))).data
            vid_feats = FeatureCache(m).video_features(c.video)
            B, Tn, U, d = vid_feats.shape
            vid_q = m.video.qformer(Tensor(vid_feats.reshape(B * Tn, U, d))).data.reshape(B, -1, m.video.qformer.cfg.d_model)
            items = []
            for it in c.instruct:
                row = {"family": it["family"], "instruction": it["instruction"]}
                if "image" in it:
                    row["image_q"] = img_q[it["image"]]
                if "video" in it:
                    row["video_q"] = vid_q[it["video"]]
                    row["answer"] = c.video[it["video"]]["caption"]
                if it["family"] == "image":
                    row["answer"] = c.image[it["image"]]["caption"]
                if it["family"] == "speech":
                    sp = c.speech[it["speech"]]
                    tokens, _ = m.speech_tokens(sp["frames"], len(sp["tokens"]))
                    row["speech_c"] = m.speech.cformer(tokens.reshape(1, *tokens.shape), np.ones((1, tokens.shape[0]), bool)).data[0]
                    row["answer"] = sp["text"]
                if it["family"] == "image_speech":
                    tokens, _ = m.speech_tokens(it["question_frames"], len(it["question"]))
                    row["speech_c"] = m.speech.cformer(tokens.reshape(1, *tokens.shape), np.ones((1, tokens.shape[0]), bool)).data[0]
                    row["answer"] = vsqa_answer(it["question"], c.image[it["image"]]["attrs"])
                items.append(row)
        return items

    def stage3(self) -> dict:
        if 3 in self.done:
            self._ensure_loaded()
            return self.done[3]
        self._require(3)
        self._ensure_loaded()
        items = self._stage3_items()
        by_family: dict[str, list] = {}
        for it in items:
            by_family.setdefault(it["family"], []).append(it)
        mix = {f: float(FAMILY_COUNTS[f]) for f in by_family}
        plan = self._plan(3, ["adapters"], "instruct", len(items), [("instruction", 1.0)], "stage3", data_mix=mix)
        fams = sorted(mix)
        p = np.array([mix[f] for f in fams])
        p /= p.sum()

        def sample(rng):
            out = []
            for _ in range(plan.batch):
                pool = by_family[fams[int(rng.choice(len(fams), p=p))]]
                out.append(pool[int(rng.integers(len(pool)))])
            return out

        res = self._run(plan, sample, lambda b: stage3_instruction_loss(self.model, b))
        return self._finish(3, {"final_loss": res.losses[-1], "seconds": res.seconds, "changed": sorted(res.changed)})

    def run(self, upto: int = 3) -> dict:
        steps = {0: self.prepare_decoder, 1: self.stage1, 2: self.stage2, 3: self.stage3}
        return {STAGE_NAMES[s]: steps[s]() for s in range(upto + 1)}

    def run_stage_number(self, stage: int) -> dict:
        """Run one stage on its own, as the command line does; stage 1 also prepares the decoder."""
        if stage not in (1, 2, 3):
            raise ConfigurationError("stage must be 1, 2 or 3")
        if stage == 1:
            self.prepare_decoder()
            return self.stage1()
        return self.stage2() if stage == 2 else self.stage3()


# ---------------------------------------------------------------------------
# warm-start comparison
# ---------------------------------------------------------------------------


def warm_start_comparison(run: TrainingRun, seeds: Sequence[int] = (0, 1, 2), budget_steps: int = 40, workdir=None) -> list[dict]:
    """Fixed-budget stage-2 image training from a cold versus a warm query transformer.

    The warm start comes from a query transformer trained beforehand on a
    separate caption corpus. ``run`` must have a prepared decoder; its
    interface weights are restored afterwards.
    """
    if 0 not in run.done:
        raise OrderingError("warm-start comparison needs a prepared decoder")
    run._ensure_loaded()
    model, cfg = run.model, run.cfg
    saved = {g: model.groups()[g].state_dict() for g in ("image_qformer", "i_adapter")}
    workdir = Path(workdir) if workdir is not None else (run.run_dir or Path(".")) / "warm_start"
    workdir.mkdir(parents=True, exist_ok=True)
    main = run._stage2_data("image")
    spec = cfg.corpus
    alt = gen_image_corpus(spec, cfg.sizes.warm_start_image, stream="warm_start_image")
    alt_data = (FeatureCache(model).image_features(alt), [it["caption"] for it in alt])
    fixed = cfg.schedules["image"]
    n = len(main[1])
    budget = StageSchedule(fixed.init_lr, fixed.min_lr, fixed.warmup_lr, min(fixed.warmup_steps, budget_steps - 1), budget_steps * fixed.batch / n, fixed.batch)
    results = []
    try:
        for seed in seeds:
            fresh = XLLMModel(XLLMConfig.from_dict({**cfg.to_dict(), "seed": int(seed)}))
            init = {"image_qformer": fresh.image.qformer.state_dict(), "i_adapter": fresh.image.adapter.state_dict()}
            # source query transformer
            model.image.qformer.load_state_dict(init["image_qformer"])
            model.image.adapter.load_state_dict(init["i_adapter"])
            run.alignment_phase("image", schedule="warm_start", data=alt_data, name=f"warm-source-{seed}", record=False)
            ckpt = workdir / f"qformer_seed{seed}.ckpt"
            save_query_transformer(ckpt, model.image.qformer)
            outcome = {"seed": int(seed)}
            for arm in ("cold", "warm"):
                model.image.qformer.load_state_dict(init["image_qformer"])
                model.image.adapter.load_state_dict(init["i_adapter"])
                if arm == "warm":
                    init_image_from_checkpoint(model.image, ckpt)
                phase = run.alignment_phase("image", schedule=budget, data=main, name=f"warm-{arm}-{seed}", record=False)
                outcome[arm] = phase["final_loss"]
            results.append(outcome)
    finally:
        for g, state in saved.items():
            model.groups()[g].load_state_dict(state)
    return results
