"""Selective edge prompt: per-layer reweighting of the adjacency.

For a directed edge j -> i with features e_ij and node representations x::

    z_ij   = [x_i || x_j || e_ij]
    tau_ij = softmax over the in-edges of i of (alpha . z_ij)
    t_ij   = beta . z_ij
    a_ij'  = tau_ij * a_ij + t_ij          (a_ij = 1 for present edges)

``shallow`` prompts only the first layer (x = prompted input features);
``deep`` prompts every layer with that layer's incoming representations.
"""
from __future__ import annotations

import numpy as np

from graft.diffengine import ParamTensor, Tensor, ops
from graft.errors import ValidationError
from graft.graphdata import GraphBatch
from graft.kernels import Segments

PLACEMENTS = ("off", "shallow", "deep")


def edge_prompt(
    node_repr,
    src: np.ndarray,
    dst: np.ndarray,
    edge_feat: np.ndarray,
    base,
    alpha,
    beta,
    in_edges: Segments,
    compensate: bool = False,
) -> tuple[Tensor, Tensor, Tensor]:
    """Prompted edge weights; returns ``(a_hat, tau, t)``, each an (E, 1) column."""
    z = ops.concat([ops.gather(node_repr, dst), ops.gather(node_repr, src), edge_feat], axis=1)
    tau = ops.segment_softmax(ops.matmul(z, alpha), in_edges)
    if compensate:
        # rescale so that tau = 1 per edge at alpha = 0
        tau = ops.mul(tau, in_edges.sizes[dst].astype(np.float64)[:, None])
    t = ops.matmul(z, beta)
    return ops.add(ops.mul(tau, base), t), tau, t


class EdgePrompt:
    """Shared alpha/beta vectors for each prompted layer."""

    def __init__(
        self,
        placement: str,
        L: int,
        d_in: int,
        d: int,
        d_e: int,
        rng: np.random.Generator | None = None,
        init_scale: float = 0.0,
        compensate: bool = False,
    ):
        if placement not in PLACEMENTS:
            raise ValidationError(f"edge placement must be one of {PLACEMENTS}, got {placement!r}")
        self.placement, self.L = placement, L
        self.d_in, self.d, self.d_e = d_in, d, d_e
        self.compensate = compensate
        rng = np.random.default_rng(0) if rng is None else rng
        self.layers = {"off": [], "shallow": [0], "deep": list(range(L))}[placement]
        self.alpha: dict[int, ParamTensor] = {}
        self.beta: dict[int, ParamTensor] = {}
        for layer in self.layers:
            width = 2 * self.d_x(layer) + d_e
            for store, name in ((self.alpha, "alpha"), (self.beta, "beta")):
                value = rng.uniform(-init_scale, init_scale, size=(width, 1)) if init_scale else np.zeros((width, 1))
                store[layer] = ParamTensor(f"edge_prompt.{layer}.{name}", value)

    def d_x(self, layer: int) -> int:
        return self.d_in if layer == 0 else self.d

    @property
    def enabled(self) -> bool:
        return bool(self.layers)

    def params(self) -> list[ParamTensor]:
        return [p for layer in self.layers for p in (self.alpha[layer], self.beta[layer])]

    def weights(self, layer: int, rep, batch: GraphBatch) -> tuple[Tensor, Tensor, Tensor]:
        rep = ops.as_tensor(rep)
        if rep.shape[1] != self.d_x(layer):
            raise ValidationError(
                f"layer {layer}: edge prompt expects {self.d_x(layer)}-dim node representations, got {rep.shape[1]}"
            )
        base = np.ones((batch.num_edges, 1))
        return edge_prompt(
            rep, batch.src, batch.dst, batch.edge_attr, base,
            self.alpha[layer], self.beta[layer], batch.in_edges, self.compensate,
        )

    def hook(self, layer: int, rep, batch: GraphBatch):
        if layer not in self.alpha:
            return None
        return self.weights(layer, rep, batch)[0]


def prompted_adjacency(graph, W, edge: EdgePrompt, node_prompt=None) -> list[np.ndarray]:
    """Per-layer edge weights over the directed edge list (unit weights where unprompted)."""
    from graft.backbone import prompt_graph

    pg = prompt_graph(graph, W, node_prompt, edge)
    return [pg.adjacency(layer) for layer in range(W.config.L)]
