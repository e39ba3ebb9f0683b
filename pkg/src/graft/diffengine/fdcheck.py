"""Central finite-difference oracle for the tape's analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from graft.diffengine.tape import ParamTensor, Tape, Tensor


@dataclass
class ParamCheck:
    name: str
    size: int
    status: str  # "ok", "fail" or "skipped (frozen)"
    max_rel_err: float = 0.0
    worst_index: tuple[int, ...] | None = None
    analytic: float | None = None
    numeric: float | None = None


@dataclass
class FDReport:
    h: float
    tol: float
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        errs = [p.max_rel_err for p in self.params if p.status != "skipped (frozen)"]
        return max(errs, default=0.0)

    @property
    def passed(self) -> bool:
        return all(p.status != "fail" for p in self.params)

    @property
    def n_checked(self) -> int:
        return sum(p.size for p in self.params if p.status != "skipped (frozen)")

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "tol": self.tol,
            "passed": self.passed,
            "max_rel_err": self.max_rel_err,
            "n_checked": self.n_checked,
            "params": [vars(p) for p in self.params],
        }


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps gradients that are exactly zero (e.g. softmax shift
    directions) from being judged against pure round-off: at h = 1e-5 a
    central difference carries noise around 1e-11.
    """
    if not (np.isfinite(analytic) and np.isfinite(numeric)):
        return float("inf")
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def fd_check(
    f: Callable[[], Tensor],
    params: Iterable[ParamTensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> FDReport:
    """Compare tape gradients of ``f()`` against ``(f(x+h) - f(x-h)) / 2h`` entry by entry.

    ``f`` must rebuild its forward pass from the current parameter values on
    every call.  Non-finite comparisons are reported as failures.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = list(params)
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = {id(p): (None if p.grad is None else p.grad.copy()) for p in params}

    report = FDReport(h=h, tol=tol)
    for p in params:
        if not p.trainable:
            report.params.append(ParamCheck(p.name, p.value.size, "skipped (frozen)"))
            continue
        grad = analytic[id(p)]
        if grad is None:
            grad = np.zeros_like(p.value)
        check = ParamCheck(p.name, p.value.size, "ok")
        for idx in np.ndindex(p.value.shape):
            orig = p.value[idx]
            p.value[idx] = orig + h
            f_plus = float(f().value)
            p.value[idx] = orig - h
            f_minus = float(f().value)
            p.value[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = relative_error(float(grad[idx]), numeric, floor)
            if err > check.max_rel_err or check.worst_index is None:
                check.max_rel_err = err
                check.worst_index = tuple(int(i) for i in idx)
                check.analytic = float(grad[idx])
                check.numeric = numeric
        if not check.max_rel_err < tol:
            check.status = "fail"
        report.params.append(check)
    return report
