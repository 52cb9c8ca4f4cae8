"""Tests for services.backbone."""

from __future__ import annotations

import numpy as np
import pytest

from services.backbone import (
    EVAL,
    DEFAULT_BACKBONE,
    TRAIN,
    BackboneSpec,
    NetworkParams,
    backward,
    embed,
    flatten_size,
    forward,
    init_params,
    layer_param_counts,
    layer_summary,
    load_checkpoint,
    load_sidecar,
    param_count,
    param_shapes,
    save_checkpoint,
    shape_chain,
)
from services.errors import StructuralError
from tests.conftest import TINY_SPEC, numeric_gradient, relative_error


# ── Geometry ─────────────────────────────────────────────────────────────────


def test_parameter_count_is_exact():
    assert param_count(DEFAULT_BACKBONE) == 2_962_944


def test_per_layer_parameter_counts():
    assert layer_param_counts(DEFAULT_BACKBONE) == {
        "conv1": 4864,
        "conv2": 55392,
        "conv3": 110720,
        "conv4": 110688,
        "conv5": 6208,
        "conv6": 2080,
        "fc7": 2654464,
        "fc8": 16448,
        "fc9": 2080,
    }


def test_shape_chain_spatial_sizes():
    chain = shape_chain(DEFAULT_BACKBONE)
    spatial = [chain[name][-1] for name in ("conv1", "pool1", "conv2", "conv3", "conv4", "pool4",
                                            "conv5", "conv6", "pool6")]
    assert spatial == [126, 62, 64, 66, 68, 33, 35, 37, 18]
    assert flatten_size(DEFAULT_BACKBONE) == 10368
    assert chain["fc9"] == (32,)


def test_layer_summary_totals_match_count():
    rows = layer_summary(DEFAULT_BACKBONE)
    assert rows[0]["layer"] == "input"
    assert sum(r["params"] for r in rows) == 2_962_944
    assert rows[-1]["output"] == (32,)


def test_spec_collapsing_to_empty_map_is_rejected():
    with pytest.raises(StructuralError):
        shape_chain(BackboneSpec(input_size=4))


def test_spec_requires_six_convolutions():
    with pytest.raises(StructuralError):
        BackboneSpec(conv_channels=(8, 8))


# ── Parameters ───────────────────────────────────────────────────────────────


def test_init_is_seeded_and_fan_in_bounded():
    a = init_params(5, TINY_SPEC, "float64")
    b = init_params(5, TINY_SPEC, "float64")
    c = init_params(6, TINY_SPEC, "float64")
    assert a.fingerprint == b.fingerprint != c.fingerprint
    for name, tensor in a.items():
        if name.endswith(".bias"):
            assert not tensor.any()
        else:
            bound = np.sqrt(6.0 / np.prod(tensor.shape[1:]))
            assert np.abs(tensor).max() <= bound


def test_params_are_read_only(tiny_params):
    with pytest.raises(ValueError):
        tiny_params["conv1.weight"][0, 0, 0, 0] = 1.0


def test_params_reject_wrong_shapes(tiny_params):
    tensors = {k: v.copy() for k, v in tiny_params.items()}
    tensors["fc9.bias"] = np.zeros(7)
    with pytest.raises(StructuralError, match="fc9.bias"):
        NetworkParams(TINY_SPEC, tensors)


def test_params_reject_missing_tensors(tiny_params):
    tensors = {k: v.copy() for k, v in tiny_params.items() if k != "conv3.weight"}
    with pytest.raises(StructuralError, match="missing"):
        NetworkParams(TINY_SPEC, tensors)


# ── Forward ──────────────────────────────────────────────────────────────────


def test_forward_full_network_single_and_batch():
    params = init_params(0, DEFAULT_BACKBONE, "float32")
    images = np.random.default_rng(0).random((2, 3, 128, 128), dtype=np.float32)
    single, trace = forward(params, images[0])
    batch, _ = forward(params, images)
    assert single.shape == (32,)
    assert batch.shape == (2, 32)
    np.testing.assert_allclose(batch[0], single, rtol=1e-5, atol=1e-6)
    assert trace.spatial_sizes() == [126, 62, 64, 66, 68, 33, 35, 37, 18]


def test_zero_parameters_give_zero_embedding():
    tensors = {name: np.zeros(shape) for name, shape in param_shapes(TINY_SPEC).items()}
    params = NetworkParams(TINY_SPEC, tensors)
    image = np.random.default_rng(0).random((2, 8, 8))
    out, _ = forward(params, image)
    assert not out.any()


def test_forward_rejects_wrong_input_shape(tiny_params):
    with pytest.raises(StructuralError, match="input"):
        forward(tiny_params, np.zeros((3, 8, 8)))


def test_eval_mode_is_deterministic_and_train_mode_is_seeded(tiny_params, rng):
    image = rng.random((2, 8, 8))
    a, _ = forward(tiny_params, image, EVAL, dropout_seed=1)
    b, _ = forward(tiny_params, image, EVAL, dropout_seed=2)
    np.testing.assert_array_equal(a, b)
    c, _ = forward(tiny_params, image, TRAIN, dropout_seed=1)
    d, _ = forward(tiny_params, image, TRAIN, dropout_seed=1)
    np.testing.assert_array_equal(c, d)


def test_embed_chunks_match_single_pass(tiny_params, rng):
    images = rng.random((5, 2, 8, 8))
    np.testing.assert_allclose(embed(tiny_params, images, batch_size=2), forward(tiny_params, images)[0])


# ── Backward ─────────────────────────────────────────────────────────────────


@pytest.mark.parametrize("mode", [EVAL, TRAIN])
def test_backward_matches_finite_differences(tiny_params, rng, mode):
    images = rng.random((2, 2, 8, 8))
    out, trace = forward(tiny_params, images, mode, dropout_seed=11)
    g = rng.normal(size=out.shape)
    analytic = backward(trace, g)

    tensors = {k: v.copy() for k, v in tiny_params.items()}

    def loss():
        params = NetworkParams(TINY_SPEC, {k: v.copy() for k, v in tensors.items()})
        return float(np.sum(forward(params, images, mode, dropout_seed=11)[0] * g))

    for name in tensors:
        picks = rng.choice(tensors[name].size, size=min(4, tensors[name].size), replace=False)
        numeric = numeric_gradient(loss, tensors[name], h=1e-5, indices=picks)
        assert relative_error(analytic[name].reshape(-1)[picks], numeric.reshape(-1)[picks]) < 1e-4, name


def test_backward_returns_gradients_in_parameter_order(tiny_params, rng):
    out, trace = forward(tiny_params, rng.random((2, 8, 8)))
    grads = backward(trace, np.ones_like(out))
    assert list(grads) == list(tiny_params)
    for name, tensor in tiny_params.items():
        assert grads[name].shape == tensor.shape


def test_backward_rejects_wrong_gradient_shape(tiny_params, rng):
    out, trace = forward(tiny_params, rng.random((3, 2, 8, 8)))
    with pytest.raises(StructuralError, match="output"):
        backward(trace, np.ones((3, 5)))


# ── Checkpoints ──────────────────────────────────────────────────────────────


def test_checkpoint_round_trip_is_bit_exact(tmp_path, tiny_params):
    path = save_checkpoint(tiny_params, tmp_path / "net.npz", sidecar={"epoch": 1})
    restored = load_checkpoint(path)
    assert restored.spec == TINY_SPEC
    assert restored.fingerprint == tiny_params.fingerprint
    for name, tensor in tiny_params.items():
        np.testing.assert_array_equal(restored[name], tensor)
        assert restored[name].dtype == tensor.dtype
    assert load_sidecar(path) == {"epoch": 1}


def test_checkpoint_rejects_unknown_version(tmp_path, tiny_params, monkeypatch):
    import config

    path = save_checkpoint(tiny_params, tmp_path / "net.npz")
    monkeypatch.setattr(config, "CHECKPOINT_FORMAT_VERSION", 99)
    with pytest.raises(StructuralError, match="format version"):
        load_checkpoint(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(StructuralError, match="not found"):
        load_checkpoint(tmp_path / "absent.npz")
