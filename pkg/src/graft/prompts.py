"""Node prompts: GPF, GPF-plus and the selective (gated) node prompt.

All functions act on a whole feature matrix ``X`` (n, d_in), one node per row.
"""
from __future__ import annotations

import numpy as np

from graft.diffengine import ParamTensor, Tensor, ops
from graft.errors import ValidationError

NODE_MODES = ("none", "gpf", "gpf_plus", "gspf")


def gpf_apply(X, p) -> Tensor:
    """Add one shared prompt vector to every node."""
    return ops.add(X, p)


def attention_assign(X, logit_keys, basis) -> tuple[Tensor, Tensor]:
    """``p_hat_i = sum_j softmax_j(key_j . x_i) p_j``; returns (p_hat, weights)."""
    weights = ops.softmax(ops.matmul(X, ops.transpose(logit_keys)))
    return ops.matmul(weights, basis), weights


def gpf_plus_assign(X, basis, attn) -> tuple[Tensor, Tensor]:
    """Learnable cross-attention over the k basis prompts."""
    return attention_assign(X, attn, basis)


def gspf_assign(X, basis) -> tuple[Tensor, Tensor]:
    """Parameter-free attention: the basis vectors are their own keys."""
    return attention_assign(X, basis, basis)


def gspf_gate(X, gate: list[tuple[ParamTensor, ParamTensor]]) -> Tensor:
    """Per-node confidence ``r = sigmoid(mlp(x))`` as an (n, 1) column."""
    z = X
    for idx, (w, b) in enumerate(gate):
        z = ops.linear(z, w, b)
        if idx < len(gate) - 1:
            z = ops.relu(z)
    return ops.sigmoid(z)


def gspf_apply(X, basis, gate, attn=None) -> Tensor:
    """``x_hat_i = x_i + r_i * p_hat_i``.  ``attn`` switches to learnable attention keys."""
    r = gspf_gate(X, gate)
    p_hat, _ = gspf_assign(X, basis) if attn is None else gpf_plus_assign(X, basis, attn)
    return ops.add(X, ops.mul(r, p_hat))


class NodePrompt:
    """Tunable node-prompt parameters for one of the modes in ``NODE_MODES``."""

    def __init__(
        self,
        mode: str,
        d_in: int,
        k: int = 1,
        rng: np.random.Generator | None = None,
        gate_layers: int = 1,
        learned_attention: bool = False,
        init_scale: float = 0.01,
    ):
        if mode not in NODE_MODES:
            raise ValidationError(f"unknown node prompt mode {mode!r}")
        if k < 1:
            raise ValidationError("k must be >= 1")
        if mode == "gpf" and k != 1:
            raise ValidationError("gpf uses a single prompt vector (k must be 1)")
        if gate_layers < 1:
            raise ValidationError("gate_layers must be >= 1")
        rng = np.random.default_rng(0) if rng is None else rng
        self.mode, self.d_in, self.k = mode, d_in, k
        self.gate_layers = gate_layers
        self.learned_attention = learned_attention
        self.basis = self.attn = None
        self.gate: list[tuple[ParamTensor, ParamTensor]] = []

        def small(*shape):
            return rng.uniform(-init_scale, init_scale, size=shape)

        if mode == "none":
            return
        self.basis = ParamTensor("node_prompt.basis", small(k, d_in))
        if mode == "gpf_plus" or (mode == "gspf" and learned_attention):
            self.attn = ParamTensor("node_prompt.attn", small(k, d_in))
        if mode == "gspf":
            for idx in range(gate_layers):
                out = 1 if idx == gate_layers - 1 else d_in
                self.gate.append((
                    ParamTensor(f"node_prompt.gate.{idx}.weight", small(d_in, out)),
                    ParamTensor(f"node_prompt.gate.{idx}.bias", np.zeros(out)),
                ))

    def params(self) -> list[ParamTensor]:
        out = [p for p in (self.basis, self.attn) if p is not None]
        return out + [p for pair in self.gate for p in pair]

    def apply(self, X) -> Tensor:
        X = ops.as_tensor(X)
        if X.shape[1] != self.d_in:
            raise ValidationError(f"node features have dim {X.shape[1]}, prompt expects {self.d_in}")
        if self.mode == "none":
            return X
        if self.mode == "gpf":
            return gpf_apply(X, self.basis)
        if self.mode == "gpf_plus":
            p_hat, _ = gpf_plus_assign(X, self.basis, self.attn)
            return ops.add(X, p_hat)
        return gspf_apply(X, self.basis, self.gate, self.attn)

    def attention_weights(self, X) -> np.ndarray | None:
        X = ops.as_tensor(X)
        if self.mode == "gpf_plus" or (self.mode == "gspf" and self.attn is not None):
            return gpf_plus_assign(X, self.basis, self.attn)[1].value
        if self.mode == "gspf":
            return gspf_assign(X, self.basis)[1].value
        return None

    def gate_values(self, X) -> np.ndarray | None:
        if self.mode != "gspf":
            return None
        return gspf_gate(ops.as_tensor(X), self.gate).value[:, 0]
