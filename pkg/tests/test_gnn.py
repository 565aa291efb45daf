"""Attention layer and two-layer model: values, gradients, equivariance, checkpoints."""

import numpy as np
import pytest

from fgssl import autodiff as ad
from fgssl.autodiff import Tensor, grad_check
from fgssl.gat import (
    GatLayer,
    GnnModel,
    build_model,
    gat_layer_forward,
    glorot_bound,
    init_params,
    load_checkpoint,
    message_structure,
    model_forward,
    save_checkpoint,
)
from fgssl.graphs import Graph, generate_sbm


def tiny_graph(n, edges, dim=3, num_classes=2, seed=0):
    rng = np.random.default_rng(seed)
    return Graph(features=rng.standard_normal((n, dim)),
                 edges=np.asarray(sorted(tuple(sorted(e)) for e in edges)).reshape(-1, 2),
                 labels=rng.integers(0, num_classes, n), num_classes=num_classes)


def test_isolated_node_attends_to_itself():
    g = tiny_graph(1, [], dim=3)
    layer_model = build_model(3, 2, hidden_dim=4, seed=0)
    layer = layer_model.extractor_heads[0]
    out, alpha = gat_layer_forward(layer, Tensor(g.features), message_structure(g), return_attention=True)
    np.testing.assert_allclose(alpha, [1.0])
    np.testing.assert_allclose(out.data, g.features @ layer.weight.data, atol=1e-12)


def test_identical_features_give_uniform_attention():
    g = tiny_graph(3, [(0, 1), (0, 2)], dim=3)
    g = Graph(features=np.tile(g.features[0], (3, 1)), edges=g.edges, labels=g.labels, num_classes=2)
    layer = build_model(3, 2, hidden_dim=4, seed=1).extractor_heads[0]
    _, alpha = gat_layer_forward(layer, Tensor(g.features), message_structure(g), return_attention=True)
    # node 0 has self + two neighbors, all with identical features
    msg_src, msg_dst = message_structure(g)
    np.testing.assert_allclose(alpha[msg_dst == 0], [1 / 3, 1 / 3, 1 / 3], atol=1e-12)


def test_attention_normalized_on_random_graph():
    g = generate_sbm(2, 6, 0.6, 0.3, 0.4, seed=3)
    layer = build_model(2, 2, hidden_dim=4, seed=2).extractor_heads[0]
    _, alpha = gat_layer_forward(layer, Tensor(g.features), message_structure(g), return_attention=True)
    msg_src, msg_dst = message_structure(g)
    starts = np.flatnonzero(np.r_[True, msg_dst[1:] != msg_dst[:-1]])
    np.testing.assert_allclose(np.add.reduceat(alpha, starts), np.ones(g.num_nodes), atol=1e-12)
    assert (alpha > 0).all()


def test_gat_layer_gradient_check():
    g = tiny_graph(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)], dim=3)
    msgs = message_structure(g)
    model = build_model(3, 2, hidden_dim=4, seed=4)
    layer = model.extractor_heads[0]
    w_out = np.random.default_rng(0).standard_normal((6, 4))

    def f(w, a, x):
        out = gat_layer_forward(GatLayer(weight=w, attn=a), x, msgs)
        return ad.reduce_sum(ad.mul(out, Tensor(w_out)))

    err = grad_check(f, [layer.weight.data, layer.attn.data, g.features])
    assert err <= 1e-6


def test_zero_weights_give_uniform_class_probabilities():
    g = generate_sbm(2, 5, 0.5, 0.2, 0.4, seed=5)
    model = build_model(g.feature_dim, g.num_classes, hidden_dim=8, seed=0)
    for p in model.parameters():
        p.data = np.zeros_like(p.data)
    _, z = model_forward(model, g)
    np.testing.assert_allclose(z.data, 0.0, atol=1e-15)
    probs = ad.row_softmax(z).data
    np.testing.assert_allclose(probs, 1.0 / g.num_classes, atol=1e-12)


def test_model_forward_permutation_equivariance():
    g = generate_sbm(2, 6, 0.5, 0.2, 0.4, seed=6)
    model = build_model(g.feature_dim, g.num_classes, hidden_dim=8, seed=7)
    h, z = model_forward(model, g)

    rng = np.random.default_rng(8)
    perm = rng.permutation(g.num_nodes)  # perm[new] = old
    inv = np.argsort(perm)
    edges = np.asarray(sorted(tuple(sorted((inv[u], inv[v]))) for u, v in g.edges))
    gp = Graph(features=g.features[perm], edges=edges, labels=g.labels[perm], num_classes=g.num_classes)
    hp, zp = model_forward(model, gp)
    np.testing.assert_allclose(hp.data, h.data[perm], atol=1e-9)
    np.testing.assert_allclose(zp.data, z.data[perm], atol=1e-9)


def test_full_model_gradient_check_small_graph():
    g = generate_sbm(2, 4, 0.8, 0.3, 0.4, seed=9)
    model = build_model(g.feature_dim, g.num_classes, hidden_dim=4, seed=10)
    arrays = [p.data.copy() for p in model.parameters()]
    w_out = np.random.default_rng(1).standard_normal((g.num_nodes, g.num_classes))

    def f(w1, a1, w2, a2):
        m = GnnModel(extractor_heads=[GatLayer(weight=w1, attn=a1)],
                     classifier=GatLayer(weight=w2, attn=a2))
        _, z = model_forward(m, g)
        return ad.reduce_sum(ad.mul(z, Tensor(w_out)))

    assert grad_check(f, arrays) <= 1e-6


def test_init_deterministic_and_bounded():
    a = build_model(20, 3, hidden_dim=8, seed=42)
    b = build_model(20, 3, hidden_dim=8, seed=42)
    c = build_model(20, 3, hidden_dim=8, seed=43)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.data, pb.data)
    assert any(not np.array_equal(pa.data, pc.data) for pa, pc in zip(a.parameters(), c.parameters()))
    for p in a.parameters():
        bound = glorot_bound(*p.data.shape)
        assert np.abs(p.data).max() <= bound


def test_multi_head_concatenation_width():
    model = build_model(10, 3, hidden_dim=8, heads=2, seed=0)
    assert model.hidden_dim == 8
    assert len(model.extractor_heads) == 2
    assert model.extractor_heads[0].weight.data.shape == (10, 4)
    g = generate_sbm(2, 5, 0.5, 0.2, 0.3, seed=1)
    gm = build_model(g.feature_dim, g.num_classes, hidden_dim=8, heads=2, seed=0)
    h, z = model_forward(gm, g)
    assert h.data.shape == (10, 8) and z.data.shape == (10, 2)


def test_hidden_dim_must_divide_heads():
    with pytest.raises(ValueError):
        build_model(10, 3, hidden_dim=9, heads=2, seed=0)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = build_model(7, 4, hidden_dim=6, heads=2, seed=13)
    # scale a block to exercise awkward decimals
    model.extractor_heads[0].weight.data = model.extractor_heads[0].weight.data * np.pi
    save_checkpoint(model, tmp_path / "model.ckpt")
    loaded = load_checkpoint(tmp_path / "model.ckpt")
    assert loaded.parameter_names() == model.parameter_names()
    for pa, pb in zip(model.parameters(), loaded.parameters()):
        assert np.array_equal(pa.data, pb.data)
    # writing the loaded model again produces identical bytes
    save_checkpoint(loaded, tmp_path / "model2.ckpt")
    assert (tmp_path / "model.ckpt").read_bytes() == (tmp_path / "model2.ckpt").read_bytes()


def test_reinit_overwrites_in_place():
    model = build_model(5, 2, hidden_dim=4, seed=0)
    before = [p.data.copy() for p in model.parameters()]
    init_params(model, seed=1)
    assert any(not np.array_equal(b, p.data) for b, p in zip(before, model.parameters()))
    init_params(model, seed=0)
    for b, p in zip(before, model.parameters()):
        assert np.array_equal(b, p.data)
