import dataclasses

import numpy as np
import pytest

from reskws import nn
from reskws.models import (
    INPUT_DIMS,
    VARIANTS,
    build,
    dilation_at,
    footprint,
    get_spec,
    layer_plan,
    receptive_field,
)

PARAM_COUNTS = {
    "res15": 237_870,
    "res15-narrow": 42_636,
    "res26": 438_345,
    "res26-narrow": 78_375,
    "res8": 110_295,
    "res8-narrow": 19_893,
}


def test_dilation_schedule():
    assert [dilation_at(i) for i in range(12)] == [1, 1, 1, 2, 2, 2, 4, 4, 4, 8, 8, 8]


def test_res15_dilations_in_plan():
    res = [op for op in layer_plan("res15") if op.kind == "res"]
    assert [d for op in res for d in op.dilation] == [1, 1, 1, 2, 2, 2, 4, 4, 4, 8, 8, 8]


def test_unknown_arch_lists_valid_names():
    with pytest.raises(ValueError) as exc:
        get_spec("res9")
    for name in VARIANTS:
        assert name in str(exc.value)


def _probe_support(model, canvas=300):
    """Backpropagate a delta at the centre output unit through the model's own layers.

    Every conv is replaced by a single-channel all-ones kernel with the layer's
    dilation, so the nonzero support of the result is exactly the set of input
    positions that can influence that unit.
    """
    ones = np.ones((1, 1, 3, 3))

    def walk_back(layers, grad):
        for layer in reversed(layers):
            if isinstance(layer, nn.Conv2d):
                x = np.zeros_like(grad)
                grad, _ = nn.conv2d_backward(grad, x, ones, layer.dilation)
                grad = (grad != 0).astype(float)
            elif isinstance(layer, nn.AvgPool2d):
                grad = nn.avg_pool_backward(grad, (1, 1) + shapes_by_layer[id(layer)], layer.window)
                grad = (grad != 0).astype(float)
            elif isinstance(layer, nn.ResidualBlock):
                grad = ((walk_back(layer.body.layers, grad) + grad) != 0).astype(float)
        return grad

    layers = [l for l in model.features.layers if not isinstance(l, nn.GlobalAvgPool)]
    shapes_by_layer = {}
    shape = (canvas, canvas)
    for layer in layers:
        if isinstance(layer, nn.AvgPool2d):
            shapes_by_layer[id(layer)] = shape
            shape = (shape[0] // layer.window[0], shape[1] // layer.window[1])
    grad = np.zeros((1, 1) + shape)
    grad[0, 0, shape[0] // 2, shape[1] // 2] = 1.0
    support = walk_back(layers, grad)[0, 0]
    rows, cols = np.nonzero(support)
    # a dilated receptive field has holes, so measure the extent
    return rows.max() - rows.min() + 1, cols.max() - cols.min() + 1


def test_receptive_field_examples():
    assert receptive_field("res15") == (125, 125)
    assert receptive_field("res26") == (100, 100)
    assert receptive_field("res8") == (54, 41)
    # narrow variants share the geometry of the wide ones
    assert receptive_field("res15-narrow") == receptive_field("res15")


@pytest.mark.parametrize("arch", ["res8", "res26", "res15"])
def test_receptive_field_matches_probe(arch):
    one_map = dataclasses.replace(get_spec(arch), n_feature_maps=1)
    model = build(one_map, np.random.default_rng(0))
    assert _probe_support(model) == receptive_field(arch)


@pytest.mark.parametrize("arch", list(VARIANTS))
def test_parameter_counts(arch):
    model = build(arch, np.random.default_rng(0))
    assert model.n_params() == PARAM_COUNTS[arch]
    assert footprint(arch).n_params == PARAM_COUNTS[arch]


@pytest.mark.parametrize("arch", ["res8-narrow", "res15-narrow", "res26-narrow"])
def test_forward_shape_and_finite(arch):
    model = build(arch, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(3,) + INPUT_DIMS).astype(np.float32)
    logits = model.forward(x)
    assert logits.shape == (3, 12) and np.all(np.isfinite(logits))
    np.testing.assert_allclose(model.predict_proba(x).sum(axis=1), 1.0, atol=1e-6)
    # (N, 1, T, F) is accepted too
    np.testing.assert_array_equal(model.forward(x[:, None]), logits)


def test_same_seed_same_weights():
    a = build("res8-narrow", np.random.default_rng(7)).state_tensors()
    b = build("res8-narrow", np.random.default_rng(7)).state_tensors()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)


def test_footprint_rows_res15():
    fp = footprint("res15")
    stem, res, final, bn, gap, fc = fp.rows
    assert stem.params == 405 and stem.multiplies == 405 * 98 * 40
    assert res.count == 6 and res.params == 12 * 9 * 45 * 45
    assert final.d_h == [16] and final.d_w == [16]
    assert bn.multiplies == 45 * 98 * 40
    assert gap.multiplies == 45
    assert fc.params == fc.multiplies == 540
    assert fp.n_multiplies == sum(r.multiplies for r in fp.layers)
    assert fp.n_params == sum(r.params for r in fp.layers)


def test_footprint_pooled_positions():
    fp = footprint("res8")
    pool = fp.rows[1]
    assert pool.type == "avg-pool" and pool.positions == (98 // 4) * (40 // 3)
    assert fp.rows[2].positions == 24 * 13


def test_footprint_text_and_dict():
    fp = footprint("res8-narrow")
    d = fp.to_dict()
    assert d["n_params"] == 19_893 and d["n_multiplies"] == fp.n_multiplies
    assert "Total" in fp.to_text()


def test_every_parameter_gets_a_gradient():
    for arch in ["res8-narrow", "res15-narrow"]:
        model = build(arch, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4,) + INPUT_DIMS).astype(np.float32)
        labels = rng.integers(0, 12, 4)
        logits = model.forward(x, train=True)
        _, _, grad = nn.softmax_cross_entropy(logits, labels)
        model.zero_grad()
        model.backward(grad)
        for p in model.parameters():
            assert p.grad is not None and np.any(p.grad != 0), p.name
