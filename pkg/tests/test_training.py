import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import tiny_config
from xllm.config import StageSchedule, paper_config
from xllm.errors import ConfigurationError, DataError, DivergenceError, FreezeViolation, LengthError, OrderingError
from xllm.model import GROUPS, XLLMModel, expand_groups
from xllm.optim import AdamW, OptimizerConfig, ScheduleConfig, lr_at
from xllm.tensor import Parameter
from xllm.training import (
    STAGE_LIMITS,
    Corpora,
    StagePlan,
    TrainingRun,
    answer_ids,
    make_plan,
    pretrain_decoder_loss,
    run_stage,
    stage2_alignment_loss,
    stage3_instruction_loss,
)

SCHED = ScheduleConfig(1e-3, 1e-5, 1e-5, 0, 2)


def plan(stage, trainable, steps=2, accumulation=1, name=""):
    return StagePlan(stage, frozenset(trainable), [("loss", 1.0)], {}, 1.0, 4, accumulation, ScheduleConfig(1e-3, 1e-5, 1e-5, 0, steps), name)


@pytest.fixture(scope="module")
def corpora():
    return Corpora.generate(tiny_config())


@pytest.fixture
def model():
    return XLLMModel(tiny_config())


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory, corpora):
    run = TrainingRun(tiny_config(), tmp_path_factory.mktemp("run"), corpora=corpora)
    hashes = {-1: run.model.hashes()}
    for stage, fn in enumerate((run.prepare_decoder, run.stage1, run.stage2, run.stage3)):
        fn()
        hashes[stage] = run.model.hashes()
    return run, hashes


# -- schedule and optimiser -------------------------------------------------


def test_lr_boundaries():
    s = ScheduleConfig(3e-3, 1e-5, 1e-4, 10, 101)
    assert lr_at(0, s) == 1e-4
    assert lr_at(10, s) == 3e-3
    assert lr_at(100, s) == pytest.approx(1e-5, abs=1e-18)
    assert lr_at(5, s) == pytest.approx(1e-4 + 0.5 * (3e-3 - 1e-4))
    # halfway through the cosine
    assert lr_at(55, s) == pytest.approx(1e-5 + 0.5 * (3e-3 - 1e-5))
    with pytest.raises(ConfigurationError):
        lr_at(-1, s)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1e-2), st.floats(0, 1e-6), st.floats(0, 1e-3), st.integers(1, 200), st.integers(2, 400))
def test_lr_continuous_at_junction(init, low, warm, warmup, extra):
    s = ScheduleConfig(init, low, warm, warmup, warmup + extra)
    approach = s.warmup_lr + (s.init_lr - s.warmup_lr) * (warmup - 1e-9) / warmup
    assert lr_at(warmup, s) == pytest.approx(approach, rel=1e-6, abs=1e-15)
    values = [lr_at(k, s) for k in range(warmup, s.total_steps)]
    assert all(b <= a + 1e-18 for a, b in zip(values, values[1:]))


def test_reference_image_interface_schedule():
    img = paper_config().schedules["image"]
    assert (img.init_lr, img.min_lr, img.warmup_lr, img.warmup_steps) == (3e-5, 1e-8, 1e-6, 6000)
    opt = paper_config().optimizer
    assert (opt.beta1, opt.beta2, opt.weight_decay, opt.accumulation) == (0.9, 0.98, 0.05, 16)


def test_optimizer_config_invariants():
    with pytest.raises(ConfigurationError):
        OptimizerConfig(beta1=1.0)
    with pytest.raises(ConfigurationError):
        OptimizerConfig(beta2=0.0)


def test_adamw_matches_reference_updates():
    rng = np.random.default_rng(0)
    w0, b0 = rng.normal(size=(3, 2)), rng.normal(size=2)
    grads = [(rng.normal(size=(3, 2)) * 0.1, rng.normal(size=2) * 0.1) for _ in range(3)]
    w, b = Parameter(w0.copy()), Parameter(b0.copy())
    opt = AdamW([w, b], OptimizerConfig(weight_decay=0.1, clip_norm=None))
    ref = {"w": [w0.copy(), 0.0, 0.0], "b": [b0.copy(), 0.0, 0.0]}
    for t, (gw, gb) in enumerate(grads, 1):
        w.grad, b.grad = gw.copy(), gb.copy()
        opt.step(0.01)
        for key, g, decay in (("w", gw, True), ("b", gb, False)):
            x, m, v = ref[key]
            m = 0.9 * m + 0.1 * g
            v = 0.98 * v + 0.02 * g * g
            if decay:
                x = x * (1 - 0.01 * 0.1)
            x = x - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.98**t)) + 1e-8)
            ref[key] = [x, m, v]
    np.testing.assert_allclose(w.data, ref["w"][0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(b.data, ref["b"][0], rtol=0, atol=1e-15)


def test_adamw_clips_global_norm():
    p = Parameter(np.zeros(4))
    p.grad = np.full(4, 10.0)
    opt = AdamW([p], OptimizerConfig(weight_decay=0.0))
    assert opt.step(0.1) == pytest.approx(20.0)
    # first Adam step moves by lr regardless of scale
    np.testing.assert_allclose(p.data, -0.1, rtol=1e-6)


# -- plans ------------------------------------------------------------------


def test_stage_limits():
    assert STAGE_LIMITS[1] == {"speech_encoder", "cif_predictor", "asr_decoder"}
    assert STAGE_LIMITS[2] == {"image_qformer", "i_adapter", "video_qformer", "v_adapter", "cformer", "s_adapter"}
    assert STAGE_LIMITS[3] == {"i_adapter", "v_adapter", "s_adapter"}
    with pytest.raises(ConfigurationError):
        plan(3, ["image_qformer"])
    with pytest.raises(ConfigurationError):
        plan(1, ["decoder"])
    with pytest.raises(ConfigurationError):
        expand_groups(["vision"])


def test_make_plan_step_count():
    p = make_plan(2, ["image_interface"], StageSchedule(1e-3, 0, 0, 50, 2.0, 16), 100, OptimizerConfig(accumulation=2), [("a", 1.0)])
    assert p.steps == math.ceil(2.0 * 100 / 32)
    assert p.lr_schedule.warmup_steps == p.steps - 1


# -- run_stage ------------------------------------------------------------


def test_empty_trainable_is_noop(model):
    res = run_stage(plan(3, []), model, lambda rng: None, lambda b: pytest.fail("loss evaluated"))
    assert res.hashes_before == res.hashes_after and not res.changed


def _text_loss(model, corpora):
    return lambda batch: pretrain_decoder_loss(model, batch)


def _text_sampler(corpora, size=4):
    return lambda rng: [corpora.text[i] for i in rng.choice(len(corpora.text), size, replace=False)]


def test_only_trainable_groups_move(model, corpora):
    res = run_stage(plan(0, ["decoder"]), model, _text_sampler(corpora), _text_loss(model, corpora))
    assert res.changed == {"decoder"}
    assert all(not p.requires_grad for p in model.decoder.parameters())


def test_frozen_group_change_detected(model, corpora):
    base = _text_loss(model, corpora)

    def sneaky(batch):
        model.image_encoder.ln.weight.data = model.image_encoder.ln.weight.data + 1e-3
        return base(batch)

    with pytest.raises(FreezeViolation):
        run_stage(plan(0, ["decoder"]), model, _text_sampler(corpora), sneaky)


def test_divergence_keeps_last_good_weights(model, corpora):
    calls = []
    base = _text_loss(model, corpora)

    def loss_fn(batch):
        calls.append(1)
        loss = base(batch)
        return loss * float("nan") if len(calls) == 3 else loss

    good = {}

    def sample(rng):
        if len(calls) == 2:
            good.update(model.decoder.state_dict())
        return _text_sampler(corpora)(rng)

    with pytest.raises(DivergenceError):
        run_stage(plan(0, ["decoder"], steps=5), model, sample, loss_fn)
    for name, arr in model.decoder.state_dict().items():
        assert np.array_equal(arr, good[name]), name


def test_metrics_log_one_record_per_step(model, corpora, tmp_path):
    path = tmp_path / "metrics.jsonl"
    run_stage(plan(0, ["decoder"], steps=3), model, _text_sampler(corpora), _text_loss(model, corpora), metrics_path=path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["step"] for r in rows] == [0, 1, 2]
    assert {"step", "stage", "loss", "lr"} <= set(rows[0])


def test_accumulation_matches_concatenated_batch(corpora):
    items = corpora.text[:4]
    results = []
    for accumulation, batches in ((2, [items[:2], items[2:]]), (1, [items])):
        m = XLLMModel(tiny_config())
        queue = list(batches)
        run_stage(plan(0, ["decoder"], steps=1, accumulation=accumulation), m, lambda rng: queue.pop(0), lambda b, m=m: pretrain_decoder_loss(m, b))
        results.append(m.decoder.state_dict())
    for name in results[0]:
        np.testing.assert_allclose(results[0][name], results[1][name], rtol=0, atol=1e-9, err_msg=name)


def test_same_seed_same_trajectory(corpora):
    runs = []
    for _ in range(2):
        m = XLLMModel(tiny_config())
        runs.append(run_stage(plan(0, ["decoder"], steps=3), m, _text_sampler(corpora), _text_loss(m, corpora), seed=4).losses)
    assert runs[0] == runs[1]


# -- losses -----------------------------------------------------------------


def test_answer_ids_guard():
    assert answer_ids("ab") == [32, 97, 98]
    with pytest.raises(LengthError):
        answer_ids("")


def test_stage2_rejects_empty_caption(model):
    feats = np.zeros((1, 4, 16))
    with pytest.raises(LengthError):
        stage2_alignment_loss(model, "image", feats, [""])
    with pytest.raises(ConfigurationError):
        stage2_alignment_loss(model, "audio", feats, ["x"])


def test_stage3_mixed_batch_averages_items(model):
    rng = np.random.default_rng(0)
    a = {"image_q": rng.normal(size=(2, 16)), "instruction": "describe", "answer": "red ring"}
    b = {"speech_c": rng.normal(size=(3, 16)), "instruction": "transcribe", "answer": "abc"}
    both = stage3_instruction_loss(model, [a, b]).item()
    assert both == pytest.approx((stage3_instruction_loss(model, [a]).item() + stage3_instruction_loss(model, [b]).item()) / 2, rel=1e-12)
    with pytest.raises(DataError):
        stage3_instruction_loss(model, [{"instruction": "x", "answer": "y"}])


# -- the full run -----------------------------------------------------------


def test_freeze_audit_across_stages(finished_run):
    run, h = finished_run
    changed = lambda a, b: {g for g in GROUPS if h[a][g] != h[b][g]}
    assert changed(-1, 0) == {"decoder"}
    assert changed(0, 1) <= STAGE_LIMITS[1] and changed(0, 1)
    assert changed(1, 2) <= STAGE_LIMITS[2]
    assert not changed(1, 2) & {"speech_encoder", "cif_predictor", "asr_decoder", "image_encoder", "decoder"}
    assert changed(2, 3) == {"i_adapter", "v_adapter", "s_adapter"}


def test_stage2_summaries_report_losses(finished_run):
    run, _ = finished_run
    s2 = run.done[2]
    for modality in ("image", "video", "speech"):
        assert math.isfinite(s2[modality]["initial_loss"]) and math.isfinite(s2[modality]["final_loss"])
    assert math.isfinite(run.done[3]["final_loss"])


def test_run_directory_layout(finished_run):
    run, _ = finished_run
    d = run.run_dir
    for name in ("decoder", "stage1", "stage2", "stage3"):
        assert (d / f"{name}.done").exists()
        assert (d / "checkpoints" / name / "decoder.ckpt").exists()
    assert (d / "config.json").exists()
    record = json.loads((d / "metrics_stage3.jsonl").read_text().splitlines()[0])
    assert record["stage"] == 3


def test_resume_reloads_finished_stages(finished_run):
    run, h = finished_run
    again = TrainingRun(tiny_config(), run.run_dir)
    assert set(again.done) == {0, 1, 2, 3}
    again.stage3()
    assert again.model.hashes() == h[3]


def test_resume_rejects_different_config(finished_run):
    run, _ = finished_run
    with pytest.raises(ConfigurationError):
        TrainingRun(tiny_config(seed=5), run.run_dir)


def test_ordering_guard(tmp_path, corpora):
    run = TrainingRun(tiny_config(), tmp_path, corpora=corpora)
    with pytest.raises(OrderingError):
        run.stage2()
    with pytest.raises(OrderingError):
        run.stage3()


def test_reference_profile_not_runnable():
    with pytest.raises(ConfigurationError):
        TrainingRun(paper_config())


def test_stage3_mix_proportional_to_family_counts(finished_run):
    run, _ = finished_run
    items = run._stage3_items()
    families = {it["family"] for it in items}
    assert families <= {"image", "speech", "video", "image_speech"}
    assert all("answer" in it and it["answer"] for it in items)
