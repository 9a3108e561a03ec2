"""
Test bounding-box fusion, modality concatenation, the multi-modal UNet and the full network
"""

import numpy as np
import pytest

from mufen.encoders import EncoderConfig
from mufen.errors import ConfigError, InvalidArgumentError, MissingModalityError, ShapeError
from mufen.fusion import (
    BBoxFusion,
    Mufen,
    MufenConfig,
    MufenInputs,
    MultiModalConcat,
    MultiModalUNet,
    TokenizedFeature,
)
from mufen.layers import zero_init
from mufen.tensor import Tensor, gradcheck


@pytest.fixture
def rng():
    return np.random.default_rng(9)


def tiny_config(**overrides):
    return MufenConfig(**{"encoder": EncoderConfig.preset("tiny"), "fused_channels": 8, **overrides})


def tiny_inputs(rng, batch=1, size=64):
    return MufenInputs(
        rgb_a=rng.uniform(0.0, 1.0, (batch, 3, size, size)),
        rgb_b=rng.uniform(0.0, 1.0, (batch, 3, size, size)),
        depth=rng.uniform(0.0, 1.0, (batch, 1, size, size)),
        text=rng.normal(size=(batch, 16)),
        bbox=np.tile([0.2, 0.25, 0.7, 0.8], (batch, 1)),
    )


def test_bbox_fusion_attention_and_gate(float64, rng):
    fusion = BBoxFusion(8, 4, rng)
    tokens = TokenizedFeature(Tensor(rng.normal(size=(2, 5, 8))))
    trace = fusion.fuse_trace(tokens, Tensor(rng.normal(size=(2, 4))))
    assert trace.out.tokens.shape == (2, 5, 8)
    assert trace.alpha.shape == (2, 1, 5)
    assert np.allclose(trace.alpha.data.sum(axis=-1), 1.0)
    assert trace.gate.shape == (2, 5, 8)
    assert ((trace.gate.data > 0) & (trace.gate.data < 1)).all()


def test_bbox_fusion_without_context_is_a_projection(float64, rng):
    fusion = BBoxFusion(8, 4, rng)
    zero_init(fusion.value)
    tokens = Tensor(rng.normal(size=(1, 3, 8)))
    out = fusion(TokenizedFeature(tokens), Tensor(rng.normal(size=(1, 4))))
    assert np.allclose(out.tokens.data, fusion.proj(tokens).data)


def test_bbox_fusion_gradients(float64, rng):
    fusion = BBoxFusion(4, 3, rng)
    tokens = Tensor(rng.normal(size=(1, 4, 4)), requires_grad=True)
    bbox_feat = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
    def loss():
        out = fusion(TokenizedFeature(tokens), bbox_feat).tokens
        return (out * out).mean()

    assert gradcheck(loss, [tokens, bbox_feat, fusion.gate.weight, fusion.transform.weight]) < 1e-6


def test_bbox_fusion_shape_checks(rng):
    fusion = BBoxFusion(8, 4, rng)
    tokens = TokenizedFeature(Tensor(np.zeros((2, 5, 8))))
    with pytest.raises(ShapeError):
        fusion(tokens, Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        fusion(tokens, Tensor(np.zeros((1, 4))))
    with pytest.raises(ShapeError):
        fusion(TokenizedFeature(Tensor(np.zeros((2, 5, 6)))), Tensor(np.zeros((2, 4))))


def test_vector_tokens():
    feature = TokenizedFeature.from_vector(np.ones((2, 7)))
    assert feature.n_tokens == 1
    assert feature.width == 7
    with pytest.raises(ShapeError):
        TokenizedFeature.from_vector(np.ones(7))


def test_concat_broadcasts_vectors_over_the_grid(float64, rng):
    concat = MultiModalConcat({"mesh": 4, "text": 6}, 8, rng, grid=4)
    features = {
        "mesh": TokenizedFeature(Tensor(np.zeros((1, 16, 4)))),
        "text": TokenizedFeature.from_vector(rng.normal(size=(1, 6))),
    }
    out = concat(features)
    assert out.shape == (1, 8, 4, 4)
    # constant grid plus a broadcast vector gives the same vector at every site
    assert np.allclose(out.data, out.data[:, :, :1, :1])


def test_concat_requires_every_modality(rng):
    concat = MultiModalConcat({"mesh": 4, "text": 6}, 8, rng, grid=4)
    with pytest.raises(MissingModalityError) as err:
        concat({"mesh": TokenizedFeature(Tensor(np.zeros((1, 16, 4))))})
    assert err.value.modality == "text"
    with pytest.raises(ShapeError):
        concat({
            "mesh": TokenizedFeature(Tensor(np.zeros((1, 9, 4)))),
            "text": TokenizedFeature(Tensor(np.zeros((1, 1, 6)))),
        })


@pytest.mark.parametrize("channels", [16, 64])
def test_unet_decodes_the_grid(rng, channels):
    unet = MultiModalUNet(channels, rng)
    rgb, attention = unet.forward_with_attention(Tensor(rng.normal(size=(1, channels, 16, 16))))
    assert rgb.shape == (1, 3, 225, 225)
    assert ((rgb.data > 0) & (rgb.data < 1)).all()
    assert attention["down"].shape == (1, 64, 64)
    assert attention["bottleneck"].shape == (1, 64, 64)
    assert attention["cross"].shape == (1, 256, 256)
    for weights in attention.values():
        assert np.allclose(weights.data.sum(axis=-1), 1.0, atol=1e-5)


def test_unet_input_checks(rng):
    with pytest.raises(InvalidArgumentError):
        MultiModalUNet(4, rng)
    unet = MultiModalUNet(8, rng, out_size=32)
    with pytest.raises(ShapeError):
        unet(Tensor(np.zeros((1, 8, 8, 8))))


def test_mufen_forward(float64, rng):
    model = Mufen(tiny_config(), rng)
    rgb, bundle = model(tiny_inputs(rng, batch=2))
    assert rgb.shape == (2, 3, 225, 225)
    assert ((rgb.data > 0) & (rgb.data < 1)).all()
    assert bundle.present() == ["mesh", "depth", "text", "bbox"]
    assert bundle.mesh_feat.shape == (2, 8, 16, 16)
    assert bundle.fused.shape == (2, 8, 16, 16)
    assert set(bundle.extras) == {f"{m}_{k}" for m in ("mesh", "depth", "text", "bbox") for k in ("gate", "alpha")}


def test_mufen_gradients_reach_every_parameter(float64, rng):
    model = Mufen(tiny_config(out_size=32), rng)
    rgb, _ = model(tiny_inputs(rng))
    rgb.mean().backward()
    missing = [name for name, p in model.named_parameters() if p.grad is None]
    assert missing == []


def test_concat_gradients(float64, rng, check_gradients, weighted_loss):
    concat = MultiModalConcat({"mesh": 4, "text": 6}, 8, rng, grid=4)
    grid = Tensor(rng.normal(size=(1, 16, 4)), requires_grad=True)
    text = Tensor(rng.normal(size=(1, 6)), requires_grad=True)
    loss = lambda: weighted_loss(concat({"mesh": TokenizedFeature(grid), "text": TokenizedFeature.from_vector(text)}))
    assert check_gradients(loss, concat, [grid, text], samples=6) < 1e-4


def test_unet_gradients(float64, rng, check_gradients, weighted_loss):
    unet = MultiModalUNet(8, rng, out_size=32)
    x = Tensor(rng.normal(size=(1, 8, 16, 16)), requires_grad=True)
    assert check_gradients(lambda: weighted_loss(unet(x)), unet, [x], samples=2) < 1e-4


@pytest.mark.slow
def test_mufen_gradients_match_finite_differences(float64, rng, check_gradients, weighted_loss):
    model = Mufen(tiny_config(out_size=32), rng)
    inputs = tiny_inputs(rng)
    inputs.rgb_a = Tensor(inputs.rgb_a, requires_grad=True)
    inputs.text = Tensor(inputs.text, requires_grad=True)
    loss = lambda: weighted_loss(model(inputs)[0])
    assert check_gradients(loss, model, [inputs.rgb_a, inputs.text], samples=2) < 1e-4


def test_mufen_on_a_four_view_set(float64, rng):
    model = Mufen(tiny_config(view_set="FBLR", out_size=32), rng)
    inputs = tiny_inputs(rng, batch=2)
    inputs.rgb_a = inputs.rgb_b = None
    inputs.views = [rng.uniform(0.0, 1.0, (2, 3, 64, 64)) for _ in range(4)]
    rgb, bundle = model(inputs)
    assert rgb.shape == (2, 3, 32, 32)
    assert bundle.mesh_feat.shape == (2, 8, 16, 16)
    rgb.mean().backward()
    assert [name for name, p in model.named_parameters() if p.grad is None] == []
    assert len(model.mesh_encoder.encoders) == 4

    inputs.views = None
    with pytest.raises(MissingModalityError) as err:
        model(inputs)
    assert err.value.modality == "mesh"
    inputs.views = [rng.uniform(0.0, 1.0, (2, 3, 64, 64)) for _ in range(6)]
    with pytest.raises(ShapeError):
        model(inputs)


def test_mufen_missing_modality(rng):
    model = Mufen(tiny_config(out_size=32), rng)
    inputs = tiny_inputs(rng)
    inputs.depth = None
    with pytest.raises(MissingModalityError) as err:
        model(inputs)
    assert err.value.modality == "depth"


@pytest.mark.parametrize(
    "modalities, use_bbox_fusion",
    [(("mesh", "bbox"), True), (("mesh", "depth", "text"), False), (("depth",), False)],
)
def test_mufen_ablations(float64, rng, modalities, use_bbox_fusion):
    model = Mufen(tiny_config(modalities=modalities, use_bbox_fusion=use_bbox_fusion, out_size=32), rng)
    inputs = tiny_inputs(rng)
    for name, fields in {"mesh": ("rgb_a", "rgb_b"), "depth": ("depth",), "text": ("text",), "bbox": ("bbox",)}.items():
        if name not in modalities:
            for field_name in fields:
                setattr(inputs, field_name, None)
    rgb, bundle = model(inputs)
    assert rgb.shape == (1, 3, 32, 32)
    assert bundle.present() == [m for m in ("mesh", "depth", "text", "bbox") if m in modalities]
    if not use_bbox_fusion:
        assert bundle.extras == {}


def test_mufen_config_violations():
    assert tiny_config().validate() == []
    assert tiny_config(use_bbox_fusion=True, modalities=("mesh",)).validate()
    assert tiny_config(modalities=("mesh", "audio"), use_bbox_fusion=False).validate()
    assert tiny_config(modalities=(), use_bbox_fusion=False).validate()
    assert tiny_config(fused_channels=4).validate()
    assert MufenConfig(encoder=EncoderConfig(grid=8)).validate()
    assert tiny_config(view_set="FBLR").validate() == []
    assert tiny_config(view_set="FB").validate()
    with pytest.raises(ConfigError):
        tiny_config(fused_channels=4).ensure_valid()
    with pytest.raises(ConfigError):
        Mufen(tiny_config(fused_channels=4), np.random.default_rng(0))


def test_mufen_widths_follow_the_modalities():
    cfg = tiny_config(modalities=("text", "mesh"), use_bbox_fusion=False)
    assert cfg.widths() == {"mesh": 8, "text": 16}
