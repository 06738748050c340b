import numpy as np
import pytest

from xllm.checkpoint import MAGIC, read_checkpoint, save_checkpoint, load_checkpoint
from xllm.encoders import EncoderConfig, FeatureSequence, ImageEncoder, Modality
from xllm.errors import CheckpointError, ConfigurationError, LengthError
from xllm.layers import Linear
from xllm.optim import AdamW, OptimizerConfig
from xllm.tensor import Parameter, Tensor
from xllm.visual_interface import (
    ImageInterface,
    QueryTransformer,
    QueryTransformerConfig,
    VideoInterface,
    image_interface,
    init_image_from_checkpoint,
    init_video_from_image,
    query_transform,
    save_query_transformer,
    video_interface,
)

D_LLM = 12


@pytest.fixture(scope="module")
def encoder():
    return ImageEncoder(EncoderConfig(d_model=16, n_blocks=1, n_heads=2, d_ffn=24, pool_positions=(), patch=4), np.random.default_rng(0))


def qcfg(n_queries=8):
    return QueryTransformerConfig(n_queries=n_queries, n_blocks=2, d_model=16, n_heads=2, d_ffn=24, d_feature=16)


@pytest.fixture
def image(encoder):
    return ImageInterface(encoder, qcfg(), D_LLM, np.random.default_rng(1))


@pytest.fixture
def video(encoder):
    return VideoInterface(encoder, qcfg(), D_LLM, np.random.default_rng(2), n_frames=4)


def _features(U, seed=0):
    return FeatureSequence(Tensor(np.random.default_rng(seed).normal(size=(U, 16))), np.ones(U, bool), Modality.IMAGE)


def test_config_invariants():
    with pytest.raises(ConfigurationError):
        QueryTransformerConfig(n_queries=0)


@pytest.mark.parametrize("U", [4, 9])
def test_fixed_number_of_queries(U):
    qf = QueryTransformer(qcfg(), np.random.default_rng(0))
    assert query_transform(_features(U), qf).shape == (8, 16)


def test_empty_features_rejected():
    qf = QueryTransformer(qcfg(), np.random.default_rng(0))
    with pytest.raises(LengthError):
        query_transform(_features(0), qf)


def test_zero_value_projection_ignores_content():
    qf = QueryTransformer(qcfg(), np.random.default_rng(0))
    for block in qf.blocks:
        block.cross_attn.v.weight.data[:] = 0.0
        block.cross_attn.v.bias.data[:] = 0.0
    a = query_transform(_features(4, seed=1), qf).data
    b = query_transform(_features(9, seed=2), qf).data
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("size", [4, 8, 12, 16, 20, 24, 28, 32, 40, 48])
def test_image_length_is_fixed_for_every_size(image, size):
    out = image_interface(image, np.random.default_rng(size).uniform(size=(size, size, 3)))
    assert (len(out), out.width, out.origin) == (8, D_LLM, "image")


def test_identity_adapter_is_noop(encoder):
    cfg = QueryTransformerConfig(n_queries=3, n_blocks=1, d_model=16, n_heads=2, d_ffn=24, d_feature=16)
    iface = ImageInterface(encoder, cfg, 16, np.random.default_rng(3))
    iface.adapter.set_identity()
    px = np.random.default_rng(4).uniform(size=(1, 8, 8, 3))
    q = iface.qformer(encoder.forward(Tensor(px)))
    np.testing.assert_array_equal(iface.forward(px).data, q.data)


def test_distinct_images_give_distinct_sequences(image):
    rng = np.random.default_rng(5)
    a = image_interface(image, rng.uniform(size=(8, 8, 3))).embeddings.data
    b = image_interface(image, rng.uniform(size=(8, 8, 3))).embeddings.data
    assert not np.allclose(a, b)


@pytest.mark.parametrize("n_frames", [1, 2, 4, 8])
def test_video_length_is_frames_times_queries(video, n_frames):
    clip = np.random.default_rng(6).uniform(size=(10, 8, 8, 3))
    assert len(video_interface(video, clip, n_frames)) == n_frames * 8


def test_single_frame_video_matches_image_path(image, video):
    init_video_from_image(image, video)
    frame = np.random.default_rng(7).uniform(size=(8, 8, 3))
    v = video_interface(video, frame[None], 1).embeddings.data
    i = image_interface(image, frame).embeddings.data
    np.testing.assert_allclose(v, i, atol=1e-12)


def test_reversed_frames_reverse_blocks(video):
    clip = np.random.default_rng(8).uniform(size=(4, 8, 8, 3))
    fwd = video_interface(video, clip, 4).embeddings.data.reshape(4, 8, D_LLM)
    rev = video_interface(video, clip[::-1].copy(), 4).embeddings.data.reshape(4, 8, D_LLM)
    np.testing.assert_allclose(rev, fwd[::-1], atol=1e-12)


def test_video_blocks_depend_only_on_their_frame(video):
    feats = Parameter(np.random.default_rng(9).normal(size=(1, 3, 4, 16)))
    out = video.from_frame_features(feats)
    out[0, 8:16].sum().backward()
    g = np.abs(feats.grad[0]).sum(axis=(1, 2))
    assert g[1] > 0 and g[0] == 0.0 and g[2] == 0.0


def test_init_video_from_image_copies_one_way(image, video):
    image_before = image.content_hash()
    init_video_from_image(image, video)
    assert video.qformer.content_hash() == image.qformer.content_hash()
    assert video.adapter.content_hash() == image.adapter.content_hash()
    assert image.content_hash() == image_before
    opt = AdamW(video.parameters(), OptimizerConfig())
    clip = np.random.default_rng(10).uniform(size=(1, 4, 8, 8, 3))
    (video.forward(clip) ** 2).mean().backward()
    opt.step(1e-2)
    assert video.qformer.content_hash() != image.qformer.content_hash()
    assert image.content_hash() == image_before


def test_init_video_shape_mismatch(encoder, image):
    other = VideoInterface(encoder, qcfg(n_queries=4), D_LLM, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        init_video_from_image(image, other)


def test_checkpoint_round_trip_is_bit_identical(tmp_path, image, encoder):
    path = save_query_transformer(tmp_path / "qf.ckpt", image.qformer)
    assert path.read_bytes()[:8] == MAGIC
    fresh = ImageInterface(encoder, qcfg(), D_LLM, np.random.default_rng(42))
    adapter_before = fresh.adapter.content_hash()
    init_image_from_checkpoint(fresh, path)
    for (n, a), (_, b) in zip(image.qformer.named_parameters(), fresh.qformer.named_parameters()):
        assert np.array_equal(a.data, b.data), n
    assert fresh.adapter.content_hash() == adapter_before


def test_checkpoint_config_mismatch(tmp_path, image, encoder):
    path = save_query_transformer(tmp_path / "qf.ckpt", image.qformer)
    other = ImageInterface(encoder, qcfg(n_queries=4), D_LLM, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        init_image_from_checkpoint(other, path)


def test_checkpoint_corruption_detected(tmp_path):
    lin = Linear(3, 2, np.random.default_rng(0))
    path = save_checkpoint(tmp_path / "lin.ckpt", lin, "linear", {"d": 3})
    raw = path.read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"NOTACKPT" + raw[8:])
    (tmp_path / "short.ckpt").write_bytes(raw[:-8])
    for name in ("bad.ckpt", "short.ckpt", "missing.ckpt"):
        with pytest.raises(CheckpointError):
            read_checkpoint(tmp_path / name)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, lin, "other", {"d": 3})


def test_adapters_are_linear(image, video):
    rng = np.random.default_rng(11)
    x, y = rng.normal(size=(2, 16)), rng.normal(size=(2, 16))
    for adapter in (image.adapter, video.adapter):
        adapter.bias.data[:] = 0.0
        f = lambda v: adapter(Tensor(v)).data
        np.testing.assert_allclose(f(x + y), f(x) + f(y), atol=1e-9)
        np.testing.assert_allclose(f(2.5 * x), 2.5 * f(x), atol=1e-9)
