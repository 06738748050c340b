import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xllm.datagen import (
    ALPHABET,
    COLORS,
    MIRROR,
    MOTIONS,
    SHAPES,
    SpeechSpec,
    SyntheticCorpusSpec,
    corpus_checksum,
    gen_image_corpus,
    gen_instruction_corpus,
    gen_speech_corpus,
    gen_text_corpus,
    gen_video_corpus,
    infer_motion,
    load_corpus,
    majority_vote_decode,
    render_clip,
    render_image,
    render_speech,
    save_corpus,
    shape_mask,
    vsqa_answer,
)
from xllm.encoders import sample_video_frames
from xllm.errors import ConfigurationError, DataError

SPEC = SyntheticCorpusSpec(n_items=20)


@settings(max_examples=50, deadline=None)
@given(st.text(ALPHABET, min_size=1, max_size=8), st.integers(8, 20), st.integers(0, 5))
def test_noiseless_speech_decodes_exactly(text, expansion, seed):
    spec = SyntheticCorpusSpec(seed=seed, speech=SpeechSpec(noise=0.0))
    frames = render_speech(text, spec, np.random.default_rng(seed), expansion=expansion)
    assert frames.shape == (len(text) * expansion, spec.speech.d_in)
    assert majority_vote_decode(frames, spec, expansion) == text


def test_speech_items_follow_ranges():
    for item in gen_speech_corpus(SPEC):
        n = len(item["text"])
        assert SPEC.speech.min_len <= n <= SPEC.speech.max_len
        assert n * SPEC.speech.min_expansion <= len(item["frames"]) <= n * SPEC.speech.max_expansion
        assert item["tokens"] == list(item["text"].encode())


def test_same_seed_same_corpora():
    a, b = gen_speech_corpus(SPEC), gen_speech_corpus(SPEC)
    assert all(np.array_equal(x["frames"], y["frames"]) and x["text"] == y["text"] for x, y in zip(a, b))
    other = gen_speech_corpus(SyntheticCorpusSpec(seed=1, n_items=20))
    assert [x["text"] for x in a] != [x["text"] for x in other]
    # named streams are independent of each other
    assert [x["text"] for x in gen_speech_corpus(SPEC, stream="heldout_speech")] != [x["text"] for x in a]


def test_spec_rejects_expansion_below_reduction():
    with pytest.raises(ConfigurationError):
        SyntheticCorpusSpec(speech=SpeechSpec(min_expansion=6, max_expansion=10), frontend_reduction=8)
    with pytest.raises(ConfigurationError):
        SyntheticCorpusSpec(speech=SpeechSpec(min_len=5, max_len=4))
    with pytest.raises(ConfigurationError):
        SyntheticCorpusSpec(image={"size": 25, "grid": 3})


def test_caption_is_a_function_of_attributes():
    items = gen_image_corpus(SPEC, 50)
    for it in items:
        assert np.array_equal(it["pixels"], render_image(spec=SPEC, **it["attrs"]))
    a = render_image("red", "ring", 1, 2, SPEC)
    b = render_image("blue", "ring", 1, 2, SPEC)
    lit = a.sum(-1) > 0
    assert np.array_equal(lit, b.sum(-1) > 0)
    assert not np.array_equal(a, b)


def test_shape_masks_distinct():
    masks = [shape_mask(s, 8) for s in SHAPES]
    assert len({m.tobytes() for m in masks}) == len(SHAPES)
    with pytest.raises(ConfigurationError):
        shape_mask("star", 8)


def test_video_motion_rule():
    for it in gen_video_corpus(SPEC, 40):
        assert infer_motion(it["frames"]) == it["attrs"]["motion"]
        assert it["caption"].endswith(it["attrs"]["motion"])
        # reversing the clip mirrors the motion word
        assert infer_motion(it["frames"][::-1]) == MIRROR[it["attrs"]["motion"]]


def test_static_clip_frames_identical():
    clip = render_clip("green", "cross", "static", (3, 5), SPEC)
    assert all(np.array_equal(clip[0], f) for f in clip)


def test_sampled_frames_keep_motion():
    for motion in MOTIONS:
        start = (8, 8) if motion != "static" else (0, 0)
        clip = render_clip("yellow", "square", motion, start, SyntheticCorpusSpec(video={"frames": 4, "step": 2}))
        for t in (2, 4):
            assert infer_motion(np.stack(sample_video_frames(clip, t))) == motion


def test_instruction_corpus_references_valid_items():
    items = gen_instruction_corpus(SPEC, 200, n_images=5, n_videos=3, n_speech=4)
    for it in items:
        assert 0 <= it.get("image", 0) < 5 and 0 <= it.get("video", 0) < 3 and 0 <= it.get("speech", 0) < 4
        if it["family"] == "image_speech":
            assert it["question"] in ("color", "shape", "where") and it["question_frames"].ndim == 2
    counts = {f: sum(it["family"] == f for it in items) for f in ("image", "speech", "video", "image_speech")}
    assert counts["image"] > counts["speech"] > counts["video"]


def test_vsqa_answers():
    attrs = {"color": "red", "shape": "bar", "row": 2, "col": 0}
    assert [vsqa_answer(q, attrs) for q in ("color", "shape", "where")] == ["red", "bar", "bottom left"]


def test_text_corpus_answers_non_empty():
    items = gen_text_corpus(SPEC, 100)
    assert all(it["answer"] and it["instruction"] and it["payloads"] for it in items)
    assert all(set(it["payloads"]) <= {"image", "video", "speech"} for it in items)


def test_corpus_container_round_trip(tmp_path):
    items = gen_video_corpus(SPEC, 5)
    digest = save_corpus(tmp_path / "v.bin", "video", items, SPEC)
    header, back = load_corpus(tmp_path / "v.bin")
    assert header["kind"] == "video" and header["spec"]["seed"] == 0
    assert corpus_checksum(tmp_path / "v.bin") == digest
    for a, b in zip(items, back):
        assert np.array_equal(a["frames"], b["frames"]) and a["attrs"] == b["attrs"]
    assert save_corpus(tmp_path / "w.bin", "video", gen_video_corpus(SPEC, 5)) == digest


def test_corpus_container_detects_damage(tmp_path):
    path = tmp_path / "s.bin"
    save_corpus(path, "speech", gen_speech_corpus(SPEC, 3))
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="checksum"):
        load_corpus(path)
    path.write_bytes(b"NOTACORP" + bytes(raw[8:]))
    with pytest.raises(DataError):
        load_corpus(path)
    with pytest.raises(DataError):
        load_corpus(tmp_path / "missing.bin")


def test_palette_distinct():
    assert len(set(COLORS.values())) == len(COLORS)
