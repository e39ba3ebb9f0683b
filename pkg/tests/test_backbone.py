import json
import os
import subprocess
import sys

import numpy as np
import pytest

from graft.backbone import (
    BackboneConfig,
    BackboneWeights,
    HeadWeights,
    encode,
    forward,
    gin_layer,
    load_weights,
    save_weights,
)
from graft.diffengine import Tensor
from graft.errors import ValidationError, VersionError
from graft.graphdata import GraphBatch, LabeledGraph, generate_synthetic


@pytest.fixture(scope="module")
def model():
    ds = generate_synthetic("motif-count-threshold", 30, seed=8)
    cfg = BackboneConfig(ds.d_in, ds.d_e, d=12, L=3, T=ds.T, head_layers=2)
    rng = np.random.default_rng(5)
    return ds, BackboneWeights.init(cfg, rng), HeadWeights.init(12, ds.T, 2, rng)


def _torch_forward(g: LabeledGraph, W: BackboneWeights, H: HeadWeights, edge_weights=None):
    torch = pytest.importorskip("torch")
    t = lambda a: torch.tensor(np.asarray(a))
    src, dst, ef = g.directed()
    h = t(g.node_features) @ t(W["input_proj.weight"].value) + t(W["input_proj.bias"].value)
    for l in range(W.config.L):
        p = f"layers.{l}."
        msg = h[t(src)] + t(ef) @ t(W[p + "edge_proj.weight"].value) + t(W[p + "edge_proj.bias"].value)
        if edge_weights is not None:
            msg = msg * t(edge_weights[l])[:, None]
        agg = torch.zeros_like(h).index_add_(0, t(dst), msg)
        z = torch.relu((h + agg) @ t(W[p + "mlp.0.weight"].value) + t(W[p + "mlp.0.bias"].value))
        h = z @ t(W[p + "mlp.1.weight"].value) + t(W[p + "mlp.1.bias"].value)
        if l < W.config.L - 1:
            h = torch.relu(h)
    z = h.mean(0, keepdim=True)
    for i, (w, b) in enumerate(H.layers):
        z = z @ t(w.value) + t(b.value)
        if i < len(H.layers) - 1:
            z = torch.relu(z)
    return z.numpy()


def test_forward_matches_torch_oracle(model):
    ds, W, H = model
    for g in ds.graphs[:5]:
        np.testing.assert_allclose(forward(g, W, H).value, _torch_forward(g, W, H), rtol=1e-10, atol=1e-12)


def test_isolated_nodes_finite(model):
    _, W, H = model
    g = LabeledGraph(np.ones((3, W.config.d_in)), np.zeros((0, 2)), np.zeros((0, W.config.d_e)), [1, 0])
    out = forward(g, W, H).value
    assert out.shape == (1, 2) and np.all(np.isfinite(out))


def test_permutation_invariance_exact(model, rng):
    ds, W, H = model
    for g in ds.graphs[:8]:
        h = g.relabel(rng.permutation(g.n))
        assert np.array_equal(forward(g, W, H).value, forward(h, W, H).value)


def test_batch_independence_exact(model):
    ds, W, H = model
    gs = ds.graphs[:7]
    together = forward(gs, W, H).value
    alone = np.concatenate([forward(g, W, H).value for g in gs])
    assert np.array_equal(together, alone)
    assert np.array_equal(forward(gs[::-1], W, H).value, together[::-1])


def test_zero_edge_weights_reduce_to_per_node_mlp(model):
    ds, W, H = model
    g = ds.graphs[0]
    batch = GraphBatch([g])
    zeros = Tensor(np.zeros((batch.num_edges, 1)))
    h = encode(batch, W, edge_hook=lambda layer, rep, b: zeros)
    # oracle: the same layers with no neighbours at all
    lone = [LabeledGraph(g.node_features[i : i + 1], np.zeros((0, 2)), np.zeros((0, g.d_e)), g.labels) for i in range(g.n)]
    want = np.concatenate([encode(GraphBatch([x]), W).value for x in lone])
    np.testing.assert_allclose(h.value, want, rtol=0, atol=1e-13)


def test_unit_edge_weights_equal_plain(model):
    ds, W, _ = model
    batch = GraphBatch(ds.graphs[:3])
    ones = Tensor(np.ones((batch.num_edges, 1)))
    assert np.array_equal(encode(batch, W).value, encode(batch, W, edge_hook=lambda *a: ones).value)


def test_shape_errors(model):
    ds, W, _ = model
    batch = GraphBatch(ds.graphs[:1])
    with pytest.raises(ValidationError):
        gin_layer(np.zeros((batch.num_nodes, W.config.d + 1)), batch, W, 0)
    other = generate_synthetic("degree-parity", 10, seed=0).graphs[0]
    bad = LabeledGraph(other.node_features[:, :3], other.edges, other.edge_features, other.labels)
    with pytest.raises(ValidationError):
        encode(GraphBatch([bad]), W)


def test_freeze_and_names(model):
    _, W, _ = model
    names = set(W.tensors)
    assert "input_proj.weight" in names and "layers.2.mlp.1.bias" in names
    copy = W.copy()
    copy.set_trainable(True)
    assert not copy["layers.0.eps"].trainable  # eps never trains
    assert all(p.trainable for n, p in copy.tensors.items() if not n.endswith("eps"))
    copy.freeze()
    assert copy.trainable_params() == []


def test_weight_file_round_trip(model, tmp_path):
    ds, W, H = model
    save_weights(tmp_path / "w.json", W, H)
    W2, H2 = load_weights(tmp_path / "w.json")
    assert W2.sha256() == W.sha256()
    assert all(not p.trainable for p in W2.params())
    g = ds.graphs[3]
    assert np.array_equal(forward(g, W2, H2).value, forward(g, W, H).value)


def test_weight_file_errors(model, tmp_path):
    _, W, _ = model
    path = tmp_path / "w.json"
    save_weights(path, W)
    doc = json.loads(path.read_text())
    _, head = load_weights(path)
    assert head is None
    with pytest.raises(ValidationError, match="layer count mismatch"):
        load_weights(path, expect=BackboneConfig(W.config.d_in, W.config.d_e, W.config.d, L=5))
    doc["version"] = 2
    path.write_text(json.dumps(doc))
    with pytest.raises(VersionError, match="unsupported weight file version"):
        load_weights(path)
    doc["version"] = 1
    doc["tensors"]["input_proj.weight"] = [[0.0]]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="shape mismatch"):
        load_weights(path)
    path.write_text("{")
    with pytest.raises(ValidationError, match="malformed"):
        load_weights(path)


def test_pure_python_backend_bit_identical(model, tmp_path):
    """The numpy fallback selected at import reproduces compiled logits bit for bit."""
    ds, W, H = model
    save_weights(tmp_path / "w.json", W, H)
    script = (
        "import sys, numpy as np\n"
        "from graft import kernels\n"
        "from graft.backbone import load_weights, forward\n"
        "from graft.graphdata import generate_synthetic\n"
        "assert kernels.BACKEND == 'python'\n"
        "W, H = load_weights(sys.argv[1])\n"
        "ds = generate_synthetic('motif-count-threshold', 30, seed=8)\n"
        "np.save(sys.argv[2], forward(ds.graphs, W, H).value)\n"
    )
    env = dict(os.environ, GRAFT_PURE_PYTHON="1")
    subprocess.run([sys.executable, "-c", script, str(tmp_path / "w.json"), str(tmp_path / "o.npy")], env=env, check=True)
    assert np.array_equal(np.load(tmp_path / "o.npy"), forward(ds.graphs, W, H).value)
