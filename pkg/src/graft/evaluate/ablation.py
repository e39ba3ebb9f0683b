"""Node/edge prompt ablation grid and shallow/deep placement comparison."""
from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from graft.errors import GraftError

# (np_on, ep_on) in report row order
CELLS = ((False, False), (True, False), (False, True), (True, True))


def cell_config(base, np_on: bool, ep_on: bool, placement: str | None = None):
    """TuneConfig for one ablation cell; the double ablation is full fine-tuning."""
    if not np_on and not ep_on:
        return replace(base, mode="ft", edge="off", node_prompt=True)
    edge = (placement or (base.edge if base.edge not in (None, "off") else "deep")) if ep_on else "off"
    return replace(base, mode="gspf", edge=edge, node_prompt=np_on)


@dataclass
class AblationCell:
    np_on: bool
    ep_on: bool
    results: dict[str, tuple[float, float] | None] = field(default_factory=dict)  # dataset -> (mean, std)

    @property
    def label(self) -> str:
        return f"({'NP' if self.np_on else '-'}, {'EP' if self.ep_on else '-'})"

    @property
    def avg(self) -> float | None:
        means = [r[0] for r in self.results.values() if r is not None]
        if not means or len(means) != len(self.results):
            return None
        return sum(means) / len(means)

    def to_dict(self) -> dict:
        return {
            "np": self.np_on,
            "ep": self.ep_on,
            "results": {k: (None if v is None else {"mean": v[0], "std": v[1]}) for k, v in self.results.items()},
            "avg": self.avg,
        }


@dataclass
class AblationReport:
    datasets: list[str]
    cells: list[AblationCell]
    placement: dict[str, dict[str, tuple[float, float] | None]]  # shallow/deep -> dataset -> (mean, std)
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "datasets": self.datasets,
            "cells": [c.to_dict() for c in self.cells],
            "placement": {
                p: {k: (None if v is None else {"mean": v[0], "std": v[1]}) for k, v in r.items()}
                for p, r in self.placement.items()
            },
            "errors": self.errors,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def _rows(self):
        def fmt(r):
            return "n/a" if r is None else f"{100 * r[0]:.2f}±{100 * r[1]:.2f}"

        head = ["NP", "EP", *self.datasets, "Avg."]
        rows = []
        for c in self.cells:
            avg = c.avg
            rows.append(
                ["✓" if c.np_on else "-", "✓" if c.ep_on else "-"]
                + [fmt(c.results.get(d)) for d in self.datasets]
                + ["n/a" if avg is None else f"{100 * avg:.2f}"]
            )
        return head, rows

    def to_text(self) -> str:
        head, rows = self._rows()
        widths = [max(len(str(r[i])) for r in [head, *rows]) for i in range(len(head))]
        lines = ["  ".join(str(v).rjust(w) for v, w in zip(r, widths)) for r in [head, *rows]]
        lines.append("")
        for p in ("shallow", "deep"):
            vals = self.placement.get(p, {})
            parts = [f"{d}: {'n/a' if vals.get(d) is None else f'{100 * vals[d][0]:.2f}±{100 * vals[d][1]:.2f}'}" for d in self.datasets]
            lines.append(f"{p:>7}  " + "  ".join(parts))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        head, rows = self._rows()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head)
        w.writerows(rows)
        return buf.getvalue()


def _run(job):
    from graft.trainer import tune

    dataset, backbone, config = job
    try:
        _, report = tune(dataset, backbone, config, workers=1)
    except GraftError as exc:
        return None, f"{dataset.name} {config.mode}: {exc}"
    agg = report.aggregate
    if agg["test_auc_mean"] is None:
        return None, f"{dataset.name} {config.mode}: no successful seed"
    return (agg["test_auc_mean"], agg["test_auc_std"]), None


def run_ablation(datasets, backbone, base_config, placements=("shallow", "deep")) -> AblationReport:
    """Run the four NP/EP cells and the edge placement comparison.

    ``datasets`` is a Dataset or a list of them; all runs share ``base_config``'s
    seeds, so the NP+EP and NP-only cells are paired.  Placement runs use
    NP+EP and differ only in where the edge prompt is applied.
    """
    if not isinstance(datasets, (list, tuple)):
        datasets = [datasets]
    base_config.validate()
    # identical configs (e.g. the NP+EP cell and its deep placement twin) run once
    keys, unique = [], {}
    for i, ds in enumerate(datasets):
        for np_on, ep_on in CELLS:
            cfg = cell_config(base_config, np_on, ep_on)
            keys.append(("cell", (np_on, ep_on), ds.name, (i, cfg)))
            unique.setdefault((i, cfg), (ds, backbone, cfg))
        for p in placements:
            cfg = cell_config(base_config, True, True, placement=p)
            keys.append(("place", p, ds.name, (i, cfg)))
            unique.setdefault((i, cfg), (ds, backbone, cfg))
    try:
        workers = max(1, int(os.environ.get("GRAFT_THREADS", "1")))
    except ValueError:
        workers = 1
    jobs = list(unique.values())
    if workers > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
            outs = dict(zip(unique, pool.map(_run, jobs)))
    else:
        outs = {k: _run(j) for k, j in zip(unique, jobs)}

    names = [ds.name for ds in datasets]
    cells = [AblationCell(np_on, ep_on, {n: None for n in names}) for np_on, ep_on in CELLS]
    by_flag = {(c.np_on, c.ep_on): c for c in cells}
    placement = {p: {n: None for n in names} for p in placements}
    errors = []
    for kind, key, name, job in keys:
        res, err = outs[job]
        if err and err not in errors:
            errors.append(err)
        if kind == "cell":
            by_flag[key].results[name] = res
        else:
            placement[key][name] = res
    return AblationReport(names, cells, placement, errors)

