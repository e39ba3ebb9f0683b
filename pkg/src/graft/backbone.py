"""GIN backbone with edge features, mean readout and an MLP head.

Layer ``l`` computes::

    h'_i = MLP_l((1 + eps_l) * h_i + sum_{j in N(i)} w_ij * (h_j + edge_proj_l(e_ij)))

with ``w_ij = 1`` unless an edge prompt supplies prompted weights for that
layer.  The self term is never reweighted.  ReLU follows every layer but the
last; logits are raw.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from graft.diffengine import ParamTensor, Tensor, ops
from graft.errors import NumericalError, ValidationError, VersionError
from graft.graphdata import GraphBatch, LabeledGraph
from graft.ioutil import atomic_write_text

WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class BackboneConfig:
    d_in: int
    d_e: int
    d: int = 64
    L: int = 5
    T: int = 1
    head_layers: int = 1

    def __post_init__(self):
        if self.L < 1:
            raise ValidationError("L must be >= 1")
        if not 1 <= self.head_layers <= 4:
            raise ValidationError("head_layers must be in [1, 4]")
        if min(self.d_in, self.d, self.T) < 1 or self.d_e < 0:
            raise ValidationError("dimensions must be positive")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class BackboneWeights:
    """All frozen parameters of the L-layer backbone, keyed by stable names."""

    def __init__(self, config: BackboneConfig, tensors: dict[str, ParamTensor]):
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: BackboneConfig, rng: np.random.Generator) -> "BackboneWeights":
        d, t = config.d, {}

        def add(name, value, trainable=True):
            t[name] = ParamTensor(name, value, trainable)

        add("input_proj.weight", _glorot(rng, config.d_in, d))
        add("input_proj.bias", np.zeros(d))
        for l in range(config.L):
            p = f"layers.{l}."
            add(p + "edge_proj.weight", _glorot(rng, config.d_e, d) if config.d_e else np.zeros((0, d)))
            add(p + "edge_proj.bias", np.zeros(d))
            add(p + "mlp.0.weight", _glorot(rng, d, d))
            add(p + "mlp.0.bias", np.zeros(d))
            add(p + "mlp.1.weight", _glorot(rng, d, d))
            add(p + "mlp.1.bias", np.zeros(d))
            add(p + "eps", np.zeros(1), trainable=False)
        return cls(config, t)

    def __getitem__(self, name: str) -> ParamTensor:
        return self.tensors[name]

    def params(self) -> list[ParamTensor]:
        return list(self.tensors.values())

    def trainable_params(self) -> list[ParamTensor]:
        return [p for p in self.tensors.values() if p.trainable]

    def set_trainable(self, flag: bool) -> None:
        for name, p in self.tensors.items():
            p.set_trainable(flag and not name.endswith(".eps"))

    def freeze(self) -> "BackboneWeights":
        self.set_trainable(False)
        return self

    def copy(self) -> "BackboneWeights":
        return BackboneWeights(
            self.config,
            {k: ParamTensor(k, v.value.copy(), v.trainable) for k, v in self.tensors.items()},
        )

    def sha256(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name].value).tobytes())
        return h.hexdigest()


class HeadWeights:
    """MLP of 1-4 layers mapping pooled d-vectors to T logits (hidden width d)."""

    def __init__(self, layers: list[tuple[ParamTensor, ParamTensor]]):
        if not 1 <= len(layers) <= 4:
            raise ValidationError("head must have between 1 and 4 layers")
        self.layers = layers

    @classmethod
    def init(cls, d: int, T: int, n_layers: int, rng: np.random.Generator, prefix="head") -> "HeadWeights":
        if not 1 <= n_layers <= 4:
            raise ValidationError("head_layers must be in [1, 4]")
        dims = [d] * n_layers + [T]
        return cls([
            (
                ParamTensor(f"{prefix}.{i}.weight", _glorot(rng, dims[i], dims[i + 1])),
                ParamTensor(f"{prefix}.{i}.bias", np.zeros(dims[i + 1])),
            )
            for i in range(n_layers)
        ])

    def params(self) -> list[ParamTensor]:
        return [p for pair in self.layers for p in pair]

    @property
    def tensors(self) -> dict[str, ParamTensor]:
        return {p.name: p for p in self.params()}

    def __call__(self, z):
        for idx, (w, b) in enumerate(self.layers):
            z = ops.linear(z, w, b)
            if idx < len(self.layers) - 1:
                z = ops.relu(z)
        return z


def _check_finite(t: Tensor, what: str) -> Tensor:
    if not np.all(np.isfinite(t.value)):
        raise NumericalError(f"non-finite values in {what}")
    return t


def as_batch(graph) -> GraphBatch:
    if isinstance(graph, GraphBatch):
        return graph
    if isinstance(graph, LabeledGraph):
        return GraphBatch([graph])
    if isinstance(graph, (list, tuple)):
        return GraphBatch(list(graph))
    raise TypeError(f"cannot batch {type(graph).__name__}")


def gin_layer(h, batch: GraphBatch, W: BackboneWeights, layer: int, edge_weight=None) -> Tensor:
    """One message-passing layer; ``edge_weight`` is an (E, 1) column or None for unit weights."""
    h = ops.as_tensor(h)
    d = W.config.d
    if h.shape != (batch.num_nodes, d):
        raise ValidationError(f"layer {layer}: node states {h.shape}, expected {(batch.num_nodes, d)}")
    if batch.edge_attr.shape[1] != W.config.d_e:
        raise ValidationError(f"edge feature dim {batch.edge_attr.shape[1]} != d_e {W.config.d_e}")
    p = f"layers.{layer}."
    msg = ops.add(
        ops.gather(h, batch.src),
        ops.linear(batch.edge_attr, W[p + "edge_proj.weight"], W[p + "edge_proj.bias"]),
    )
    if edge_weight is not None:
        msg = ops.mul(msg, edge_weight)
    agg = ops.segment_sum(msg, batch.in_edges)
    pre = ops.add(ops.mul(h, 1.0 + W[p + "eps"].value), agg)
    z = ops.relu(ops.linear(pre, W[p + "mlp.0.weight"], W[p + "mlp.0.bias"]))
    out = ops.linear(z, W[p + "mlp.1.weight"], W[p + "mlp.1.bias"])
    return _check_finite(out, f"layer {layer}")


EdgeHook = Callable[[int, Tensor, GraphBatch], "Tensor | None"]


def encode(
    batch: GraphBatch,
    W: BackboneWeights,
    x: Tensor | None = None,
    edge_hook: EdgeHook | None = None,
) -> Tensor:
    """Final node states.  ``edge_hook(layer, incoming_repr, batch)`` may return prompted weights.

    The representation handed to the hook is the layer's input: the (prompted)
    raw features at layer 0, the previous layer's output afterwards.
    """
    cfg = W.config
    if batch.x.shape[1] != cfg.d_in:
        raise ValidationError(f"node feature dim {batch.x.shape[1]} != d_in {cfg.d_in}")
    x = Tensor(batch.x) if x is None else x
    h = ops.linear(x, W["input_proj.weight"], W["input_proj.bias"])
    rep = x
    for layer in range(cfg.L):
        w = edge_hook(layer, rep, batch) if edge_hook is not None else None
        h = gin_layer(h, batch, W, layer, w)
        if layer < cfg.L - 1:
            h = ops.relu(h)
        rep = h
    return h


def readout(h: Tensor, batch: GraphBatch) -> Tensor:
    return ops.segment_mean(h, batch.node_graph)


def forward(graph, W: BackboneWeights, H: HeadWeights, node_prompt=None, edge_prompt=None) -> Tensor:
    """Logits (B, T) for a graph, list of graphs, batch or :class:`PromptedGraph`.

    ``node_prompt`` must offer ``apply(X) -> X_hat``; ``edge_prompt`` must offer
    ``hook(layer, repr, batch) -> weights | None``.
    """
    if isinstance(graph, PromptedGraph):
        batch = graph.batch
        h = encode(batch, W, graph.x_hat, graph.hook)
    else:
        batch = as_batch(graph)
        x = Tensor(batch.x)
        if node_prompt is not None:
            x = node_prompt.apply(x)
        h = encode(batch, W, x, edge_prompt.hook if edge_prompt is not None else None)
    return _check_finite(H(readout(h, batch)), "logits")


@dataclass
class PromptedGraph:
    """The transformed graph: prompted node features plus per-layer edge weights (None = unit)."""

    batch: GraphBatch
    x_hat: Tensor
    edge_weights: list

    def hook(self, layer, rep, batch):
        return self.edge_weights[layer]

    def adjacency(self, layer: int) -> np.ndarray:
        w = self.edge_weights[layer]
        return np.ones(self.batch.num_edges) if w is None else w.value[:, 0].copy()


def prompt_graph(graph, W: BackboneWeights, node_prompt=None, edge_prompt=None) -> PromptedGraph:
    """Run the prompt pipeline once and capture X_hat and every layer's edge weights."""
    batch = as_batch(graph)
    x = Tensor(batch.x)
    if node_prompt is not None:
        x = node_prompt.apply(x)
    weights: list = [None] * W.config.L

    def hook(layer, rep, b):
        w = edge_prompt.hook(layer, rep, b) if edge_prompt is not None else None
        weights[layer] = w
        return w

    encode(batch, W, x, hook)
    return PromptedGraph(batch, x, weights)


# --- weight files -------------------------------------------------------------------

def save_weights(path, W: BackboneWeights, H: HeadWeights | None = None) -> None:
    cfg = asdict(W.config)
    tensors = {k: v.value.tolist() for k, v in W.tensors.items()}
    if H is not None:
        cfg["T"] = H.layers[-1][0].shape[1]
        cfg["head_layers"] = len(H.layers)
        tensors.update({k: v.value.tolist() for k, v in H.tensors.items()})
    doc = {"version": WEIGHTS_VERSION, "config": cfg, "tensors": tensors}
    atomic_write_text(path, json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n")


def load_weights(path, expect: BackboneConfig | None = None) -> tuple[BackboneWeights, HeadWeights | None]:
    """Load a weight file; backbone tensors come back frozen.

    ``expect`` checks the stored architecture against a declared config.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"weight file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed weight file ({exc.msg})") from None
    version = doc.get("version")
    if version != WEIGHTS_VERSION:
        raise VersionError(
            f"unsupported weight file version {version!r}; this reader handles version {WEIGHTS_VERSION}"
        )
    try:
        cfg = BackboneConfig(**doc["config"])
    except TypeError as exc:
        raise ValidationError(f"{path}: bad config ({exc})") from None
    if expect is not None:
        if expect.L != cfg.L:
            raise ValidationError(f"layer count mismatch: file has L={cfg.L}, config expects L={expect.L}")
        for key in ("d", "d_in", "d_e"):
            if getattr(expect, key) != getattr(cfg, key):
                raise ValidationError(
                    f"{key} mismatch: file has {getattr(cfg, key)}, config expects {getattr(expect, key)}"
                )
    ref = BackboneWeights.init(cfg, np.random.default_rng(0))
    raw = doc["tensors"]
    tensors = {}
    for name, p in ref.tensors.items():
        if name not in raw:
            raise ValidationError(f"weight file is missing tensor {name!r}")
        value = np.array(raw[name], dtype=np.float64)
        if value.size == 0 and p.value.size == 0:
            value = value.reshape(p.shape)  # [] loses the trailing dim when d_e = 0
        if value.shape != p.shape:
            raise ValidationError(f"shape mismatch for {name!r}: {value.shape} vs declared {p.shape}")
        tensors[name] = ParamTensor(name, value, trainable=False)
    W = BackboneWeights(cfg, tensors)
    H = None
    if any(k.startswith("head.") for k in raw):
        ref_h = HeadWeights.init(cfg.d, cfg.T, cfg.head_layers, np.random.default_rng(0))
        layers = []
        for w, b in ref_h.layers:
            pair = []
            for p in (w, b):
                value = np.array(raw.get(p.name), dtype=np.float64)
                if value.shape != p.shape:
                    raise ValidationError(f"shape mismatch for {p.name!r}: {value.shape} vs declared {p.shape}")
                pair.append(ParamTensor(p.name, value))
            layers.append(tuple(pair))
        H = HeadWeights(layers)
    return W, H
