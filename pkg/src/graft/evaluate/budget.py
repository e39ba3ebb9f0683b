"""Tunable-parameter accounting.

Counts exclude the task head unless ``include_head`` is set: the published
budgets (GPF about 0.3K at width 300) only fit with the head left out.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from graft.errors import ValidationError


@dataclass
class ParamBudget:
    method: str
    components: dict[str, tuple[int, str]] = field(default_factory=dict)
    head: tuple[int, str] = (0, "0")
    include_head: bool = False

    @property
    def prompt_total(self) -> int:
        return sum(c for c, _ in self.components.values())

    @property
    def total(self) -> int:
        return self.prompt_total + (self.head[0] if self.include_head else 0)

    @property
    def formula(self) -> str:
        parts = [f for _, f in self.components.values()] or ["0"]
        if self.include_head:
            parts.append(self.head[1])
        return " + ".join(parts)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "total": self.total,
            "formula": self.formula,
            "include_head": self.include_head,
            "components": {k: {"count": c, "formula": f} for k, (c, f) in self.components.items()},
            "head": {"count": self.head[0], "formula": self.head[1]},
        }


def count_params(
    mode: str,
    d_in: int,
    d: int,
    d_e: int,
    L: int,
    k: int = 1,
    edge: str = "off",
    head_layers: int = 1,
    T: int = 1,
    include_head: bool = False,
    gate_layers: int = 1,
    learned_attention: bool = False,
    node_prompt: bool = True,
) -> ParamBudget:
    """Symbolic tunable-parameter count for a tuning method."""
    b = ParamBudget(mode, include_head=include_head)
    b.head = (
        (head_layers - 1) * (d * d + d) + d * T + T,
        f"{head_layers - 1}*(d^2+d) + d*T + T" if head_layers > 1 else "d*T + T",
    )
    if mode == "gpf":
        if k != 1:
            raise ValidationError("gpf uses k = 1")
        b.components["prompt"] = (d_in, "d_in")
    elif mode == "gpf_plus":
        b.components["basis"] = (k * d_in, "k*d_in")
        b.components["attention"] = (k * d_in, "k*d_in")
    elif mode == "gspf":
        if node_prompt:
            b.components["basis"] = (k * d_in, "k*d_in")
            gate = (gate_layers - 1) * (d_in * d_in + d_in) + d_in + 1
            b.components["gate"] = (
                gate, "d_in + 1" if gate_layers == 1 else f"{gate_layers - 1}*(d_in^2+d_in) + d_in + 1"
            )
            if learned_attention:
                b.components["attention"] = (k * d_in, "k*d_in")
    elif mode == "ft":
        b.components["backbone"] = (
            d_in * d + d + L * (d_e * d + d + 2 * (d * d + d)),
            "d_in*d + d + L*(d_e*d + d + 2*(d^2 + d))",
        )
    elif mode == "linear_probe":
        pass
    else:
        raise ValidationError(f"unknown tuning mode {mode!r}")
    if edge not in ("off", "shallow", "deep"):
        raise ValidationError(f"unknown edge placement {edge!r}")
    if edge != "off":
        if mode in ("ft", "linear_probe"):
            raise ValidationError(f"mode {mode} takes no edge prompt")
        first = 2 * (2 * d_in + d_e)
        if edge == "shallow":
            b.components["edge"] = (first, "2*(2*d_in + d_e)")
        else:
            b.components["edge"] = (
                first + (L - 1) * 2 * (2 * d + d_e),
                "2*(2*d_in + d_e) + (L-1)*2*(2*d + d_e)",
            )
    return b


def count_trainable(params) -> int:
    """Number of scalar entries across trainable parameter tensors."""
    return sum(int(p.value.size) for p in params if p.trainable)
