import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graft.backbone import HeadWeights, encode, forward, prompt_graph
from graft.diffengine import Tensor
from graft.edgeprompt import EdgePrompt, edge_prompt, prompted_adjacency
from graft.errors import ValidationError
from graft.graphdata import GraphBatch, generate_synthetic


@pytest.fixture(scope="module")
def graphs():
    return generate_synthetic("degree-parity", 20, seed=9).graphs[:4]


def test_layer_placement(tiny_backbone):
    cfg = tiny_backbone.config
    for placement, layers in (("off", []), ("shallow", [0]), ("deep", [0, 1, 2])):
        ep = EdgePrompt(placement, cfg.L, cfg.d_in, cfg.d, cfg.d_e)
        assert ep.layers == layers and ep.enabled == bool(layers)
    ep = EdgePrompt("deep", cfg.L, cfg.d_in, cfg.d, cfg.d_e)
    assert ep.alpha[0].shape == (2 * cfg.d_in + cfg.d_e, 1)
    assert ep.beta[1].shape == (2 * cfg.d + cfg.d_e, 1)
    with pytest.raises(ValidationError):
        EdgePrompt("middle", 3, 2, 2, 1)


def test_initial_weights_are_degree_normalized(graphs, tiny_backbone):
    cfg = tiny_backbone.config
    ep = EdgePrompt("deep", cfg.L, cfg.d_in, cfg.d, cfg.d_e)
    batch = GraphBatch(graphs)
    deg = batch.in_edges.sizes[batch.dst]
    for layer, a in enumerate(prompted_adjacency(graphs, tiny_backbone, ep)):
        np.testing.assert_allclose(a, 1.0 / deg, rtol=1e-15)
    comp = EdgePrompt("deep", cfg.L, cfg.d_in, cfg.d, cfg.d_e, compensate=True)
    for a in prompted_adjacency(graphs, tiny_backbone, comp):
        np.testing.assert_allclose(a, 1.0, rtol=1e-14)


def test_tau_by_hand():
    # node 0 has in-edges from 1 and 2; node 1 from 0; node 2 from 0
    x = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    src, dst = np.array([1, 2, 0, 0]), np.array([0, 0, 1, 2])
    e = np.array([[1.0], [0.0], [1.0], [0.0]])
    alpha = np.array([[0.1], [0.2], [0.3], [-0.4], [0.5]])
    beta = np.array([[0.0], [1.0], [0.0], [0.0], [2.0]])
    from graft.kernels import Segments

    a_hat, tau, t = edge_prompt(Tensor(x), src, dst, e, np.ones((4, 1)), Tensor(alpha), Tensor(beta), Segments(dst, 3))
    z = np.concatenate([x[dst], x[src], e], axis=1)
    s = (z @ alpha)[:, 0]
    want_tau = np.array([np.exp(s[0]) / (np.exp(s[0]) + np.exp(s[1])), np.exp(s[1]) / (np.exp(s[0]) + np.exp(s[1])), 1.0, 1.0])
    np.testing.assert_allclose(tau.value[:, 0], want_tau, rtol=1e-14)
    np.testing.assert_allclose(t.value[:, 0], (z @ beta)[:, 0], rtol=1e-14)
    np.testing.assert_allclose(a_hat.value[:, 0], want_tau + (z @ beta)[:, 0], rtol=1e-14)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 30.0))
def test_tau_sums_to_one_per_destination(seed, scale):
    rng = np.random.default_rng(seed)
    g = generate_synthetic("triangle-detect", 10, seed=seed % 1000).graphs[0]
    batch = GraphBatch([g])
    ep = EdgePrompt("shallow", 2, g.d_in, 4, g.d_e, rng=rng, init_scale=scale)
    _, tau, _ = ep.weights(0, batch.x, batch)
    sums = np.bincount(batch.dst, weights=tau.value[:, 0], minlength=batch.num_nodes)
    has_in = batch.in_edges.sizes > 0
    assert np.all(np.abs(sums[has_in] - 1.0) <= 1e-12)


def test_disabled_equals_plain_backbone_bit_exact(graphs, tiny_backbone, rng):
    cfg = tiny_backbone.config
    H = HeadWeights.init(cfg.d, 1, 1, rng)
    off = EdgePrompt("off", cfg.L, cfg.d_in, cfg.d, cfg.d_e)
    assert np.array_equal(forward(graphs, tiny_backbone, H, edge_prompt=off).value, forward(graphs, tiny_backbone, H).value)


def test_deep_uses_each_layer_representation(graphs, tiny_backbone, rng):
    cfg = tiny_backbone.config
    ep = EdgePrompt("deep", cfg.L, cfg.d_in, cfg.d, cfg.d_e, rng=rng, init_scale=0.3)
    seen = []
    batch = GraphBatch(graphs)

    def hook(layer, rep, b):
        seen.append(rep.shape[1])
        return ep.hook(layer, rep, b)

    encode(batch, tiny_backbone, edge_hook=hook)
    assert seen == [cfg.d_in] + [cfg.d] * (cfg.L - 1)
    with pytest.raises(ValidationError):
        ep.weights(1, np.zeros((batch.num_nodes, cfg.d + 1)), batch)


def test_prompted_graph_captures_weights(graphs, tiny_backbone, rng):
    cfg = tiny_backbone.config
    ep = EdgePrompt("shallow", cfg.L, cfg.d_in, cfg.d, cfg.d_e, rng=rng, init_scale=0.3)
    H = HeadWeights.init(cfg.d, 1, 1, rng)
    pg = prompt_graph(graphs, tiny_backbone, edge_prompt=ep)
    assert pg.edge_weights[1] is None and np.array_equal(pg.adjacency(1), np.ones(pg.batch.num_edges))
    # replaying the captured graph reproduces the prompted forward exactly
    assert np.array_equal(forward(pg, tiny_backbone, H).value, forward(graphs, tiny_backbone, H, edge_prompt=ep).value)
