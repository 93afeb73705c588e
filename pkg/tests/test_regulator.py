import dataclasses
import math

import numpy as np
import pytest

from sorsnn import autodiff as ad
from sorsnn.autodiff import ShapeError, Value, no_grad
from sorsnn.optim import Adam
from sorsnn.regulator import (LSTMParams, Regulator, RegulatorConfig, UnknownTaskError,
                              generate_weights, snapshot_targets)
from sorsnn.snn import LayerSpec

from conftest import analytic_grad, numeric_grad, rel_err


def _small_layers(regions=(0, 0, 1)):
    return [
        LayerSpec("a", "dense", (3,), (4,), region_id=regions[0]),
        LayerSpec("b", "dense", (4,), (2,), region_id=regions[1]),
        LayerSpec("c", "dense", (2,), (3,), region_id=regions[2]),
    ]


def _reg(layers=None, hidden=5, handoff=True, seed=0):
    cfg = RegulatorConfig(task_dim=3, layer_dim=2, hidden=hidden, handoff=handoff)
    reg = Regulator(layers or _small_layers(), cfg, np.random.default_rng(seed))
    reg.add_task(1, np.random.default_rng(100))
    reg.add_task(2, np.random.default_rng(200))
    return reg


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def test_hand_computed_single_layer():
    layers = [LayerSpec("only", "dense", (1,), (2,))]
    reg = Regulator(layers, RegulatorConfig(task_dim=1, layer_dim=1, hidden=2), np.random.default_rng(0))
    reg.add_task(1, np.random.default_rng(0))
    reg.task_emb[1].x.data[:] = [1.0]
    reg.layer_emb[0].data[:] = [0.5]
    w_x = np.array([[0.1, 0.2], [0.0, -0.3],      # forget
                    [0.5, 0.0], [0.2, 0.2],       # input
                    [0.3, 0.1], [-0.1, 0.4],      # output
                    [0.7, -0.2], [0.1, 0.6]])     # cell
    reg.lstm[0] = LSTMParams(Value(w_x), Value(np.full((8, 2), 9.0)), Value(np.zeros(8)))
    reg.head_w[0].data[...] = [[1.0, 2.0], [-1.0, 0.5]]
    reg.head_b[0].data[...] = [0.1, -0.1]
    reg.head_scale = [1.0]

    # zero initial state: the recurrent matrix never contributes at the first layer
    c1 = _sig(0.5) * math.tanh(0.6)
    c2 = _sig(0.3) * math.tanh(0.4)
    o1 = _sig(0.35) * math.tanh(c1)
    o2 = _sig(0.1) * math.tanh(c2)
    expected = [1.0 * o1 + 2.0 * o2 + 0.1, -1.0 * o1 + 0.5 * o2 - 0.1]
    W = reg.generate(1)[0].data
    assert W.shape == (2, 1)
    np.testing.assert_allclose(W[:, 0], expected, rtol=0, atol=1e-15)


def test_zero_params_emit_head_bias():
    reg = _reg()
    for p in reg.shared_parameters():
        p.data[...] = 0.0
    for hb in reg.head_b:
        hb.data[...] = np.arange(hb.size, dtype=float)
    for spec, w, hb in zip(reg.layers, reg.generate(1), reg.head_b):
        np.testing.assert_array_equal(w.data, hb.data.reshape(spec.weight_shape))


def test_shapes_follow_layer_specs():
    layers = [LayerSpec("c", "conv2d", (1, 4, 4), (3, 4, 4), region_id=0),
              LayerSpec("d", "dense", (3, 4, 4), (5,), region_id=1)]
    reg = _reg(layers)
    assert [w.shape for w in reg.generate(1)] == [(3, 1, 3, 3), (5, 48)]


def test_generation_deterministic():
    reg = _reg()
    for a, b in zip(reg.generate(2), generate_weights(reg, 2)):
        np.testing.assert_array_equal(a.data, b.data)


def test_same_seed_same_regulator():
    for a, b in zip(_reg(seed=3).generate(1), _reg(seed=3).generate(1)):
        np.testing.assert_array_equal(a.data, b.data)


def test_tasks_get_different_weights():
    reg = _reg()
    assert not np.allclose(reg.generate(1)[0].data, reg.generate(2)[0].data)


def test_unknown_task_and_dimension_errors():
    reg = _reg()
    with pytest.raises(UnknownTaskError):
        reg.generate(9)
    with pytest.raises(ShapeError):
        reg.generate_from(Value(np.zeros(7)))
    with pytest.raises(ValueError):
        reg.add_task(1, np.random.default_rng(0))


def test_initial_weight_scale():
    layers = [LayerSpec("big", "dense", (400,), (300,))]
    reg = Regulator(layers, RegulatorConfig(init_gain=1.0), np.random.default_rng(0))
    with no_grad():
        w = reg.generate_from(Value(np.zeros(32)))[0].data
    assert w.std() == pytest.approx(1.0 / math.sqrt(400), rel=0.05)


def test_snapshot_is_detached_and_bit_identical():
    reg = _reg()
    snap = snapshot_targets(reg, [1])
    for s, w in zip(snap[1], reg.generate(1)):
        np.testing.assert_array_equal(s, w.data)
    for p in reg.shared_parameters():
        p.data += 0.1
    fresh = reg.snapshot([1])
    assert not np.array_equal(fresh[1][0], snap[1][0])
    assert snapshot_targets(reg, []) == {}


def test_gradients_reach_every_input():
    reg = _reg(hidden=3)
    coefs = [np.random.default_rng(i).standard_normal(s.weight_shape) for i, s in enumerate(reg.layers)]

    def f():
        return sum((ad.sum_(ad.tanh(w) * c) for w, c in zip(reg.generate(1), coefs)), Value(0.0))

    params = [reg.task_emb[1].x] + reg.layer_emb + reg.shared_parameters()
    grads = analytic_grad(f, params)
    for p, g in zip(params, grads):
        assert np.abs(g).sum() > 0, p.name
        assert rel_err(g, numeric_grad(f, p)) < 1e-4, p.name


def test_other_task_embedding_gets_no_gradient():
    reg = _reg()
    backward_target = ad.sum_(reg.generate(1)[0])
    ad.backward(backward_target)
    assert not reg.task_emb[2].x.grad.any()


def _copy_region0_into_region1(reg):
    reg.lstm[1] = LSTMParams(*(Value(p.data.copy()) for p in reg.lstm[0].values()))


def test_split_region_with_shared_params_and_handoff_matches_single_region():
    single = _reg(_small_layers((0, 0, 0)))
    split = _reg(_small_layers((0, 0, 1)))
    split.lstm[0] = single.lstm[0]
    _copy_region0_into_region1(split)
    split.layer_emb = single.layer_emb
    split.head_w, split.head_b, split.head_scale = single.head_w, single.head_b, single.head_scale
    split.task_emb = single.task_emb
    for a, b in zip(single.generate(1), split.generate(1)):
        np.testing.assert_array_equal(a.data, b.data)

    split.cfg = dataclasses.replace(split.cfg, handoff=False)
    out = split.generate(1)
    assert not np.allclose(out[2].data, single.generate(1)[2].data)
    np.testing.assert_array_equal(out[0].data, single.generate(1)[0].data)


def test_region_boundary_changes_output():
    a = _reg(_small_layers((0, 0, 1)))
    b = _reg(_small_layers((0, 1, 1)))
    b.lstm = a.lstm
    b.layer_emb, b.task_emb = a.layer_emb, a.task_emb
    b.head_w, b.head_b, b.head_scale = a.head_w, a.head_b, a.head_scale
    assert not np.allclose(a.generate(1)[1].data, b.generate(1)[1].data)


def test_frozen_embedding_unchanged_by_optimizer():
    reg = _reg()
    reg.freeze(1)
    before = reg.task_emb[1].x.data.copy()
    params = reg.shared_parameters() + reg.layer_emb + [e.x for e in reg.task_emb.values() if not e.frozen]
    opt = Adam(params, lr=1e-2)
    for _ in range(10):
        opt.zero_grad()
        loss = ad.sum_(ad.square(reg.generate(1)[0])) + ad.sum_(ad.square(reg.generate(2)[1]))
        ad.backward(loss)
        opt.step()
    np.testing.assert_array_equal(reg.task_emb[1].x.data, before)
    assert reg.embedding(1).frozen
