"""Frozen-backbone prompt tuning, supervised pre-training and the run protocol."""
from __future__ import annotations

import datetime as _dt
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

import graft
from graft import kernels
from graft.backbone import BackboneConfig, BackboneWeights, HeadWeights, forward
from graft.diffengine import ParamTensor, Tape, ops
from graft.edgeprompt import PLACEMENTS, EdgePrompt
from graft.errors import NumericalError, ValidationError, VersionError
from graft.evaluate.budget import count_params, count_trainable
from graft.evaluate.metrics import multitask_auc
from graft.graphdata import Dataset, GraphBatch, LabeledGraph
from graft.ioutil import atomic_write_text
from graft.prompts import NODE_MODES, NodePrompt

log = logging.getLogger(__name__)

TUNE_MODES = ("gpf", "gpf_plus", "gspf", "ft", "linear_probe")
LR_GRID = (1e-3, 5e-4, 1e-4)
WD_GRID = (1e-5, 1e-4, 1e-3)
EPOCH_GRID = (50, 100, 150, 200)
K_GRID = (1, 5, 10, 20)
STATE_VERSION = 1

masked_bce = ops.masked_bce


class OffGridWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TuneConfig:
    mode: str = "gspf"
    k: int = 1
    edge: str | None = None  # None: deep for gspf, off otherwise
    node_prompt: bool = True  # gspf only; False gives the edge-prompt-only ablation
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 50
    head_layers: int = 1
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    batch_size: int = 32
    gate_layers: int = 1
    learned_attention: bool = False
    edge_compensate: bool = False
    prompt_init_scale: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.edge is None:
            object.__setattr__(self, "edge", "deep" if self.mode == "gspf" else "off")

    @property
    def edge_placement(self) -> str:
        return self.edge or "off"

    def validate(self) -> list[str]:
        """Raise on contradictions; return warnings for values outside the published grids."""
        if self.mode not in TUNE_MODES:
            raise ValidationError(f"unknown mode {self.mode!r}; expected one of {TUNE_MODES}")
        if self.edge_placement not in PLACEMENTS:
            raise ValidationError(f"--edge must be one of {PLACEMENTS}")
        if self.mode == "gpf" and self.k != 1:
            raise ValidationError(f"mode gpf uses a single prompt vector; got k={self.k}")
        if self.mode in ("ft", "linear_probe") and self.edge_placement != "off":
            raise ValidationError(f"mode {self.mode} has no prompts; it requires --edge off")
        if not self.node_prompt and (self.mode != "gspf" or self.edge_placement == "off"):
            raise ValidationError("disabling the node prompt needs mode gspf with an edge prompt")
        if self.k < 1 or self.batch_size < 1 or self.epochs < 0 or not self.seeds:
            raise ValidationError("k, batch_size >= 1, epochs >= 0 and at least one seed are required")
        if not 1 <= self.head_layers <= 4:
            raise ValidationError("head_layers must be in [1, 4]")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValidationError("lr must be positive and weight_decay non-negative")
        notes = []
        for name, value, grid in (
            ("lr", self.lr, LR_GRID),
            ("weight_decay", self.weight_decay, WD_GRID),
            ("epochs", self.epochs, EPOCH_GRID),
            ("k", self.k, K_GRID),
        ):
            if value not in grid:
                notes.append(f"off-grid value: {name}={value} (grid {list(grid)})")
        return notes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TuneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


class Adam:
    """Adam with L2 weight decay added to the gradient."""

    def __init__(self, params, lr=1e-3, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.params = [p for p in params]
        for p in self.params:
            if not p.trainable:
                raise ValidationError(f"optimizer given frozen parameter {p.name!r}")
        self.lr, self.weight_decay, self.eps = lr, weight_decay, eps
        self.b1, self.b2 = betas
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self) -> None:
        self.t += 1
        c1, c2 = 1.0 - self.b1**self.t, 1.0 - self.b2**self.t
        for p in self.params:
            g = np.zeros_like(p.value) if p.grad is None else p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            m = self.m[p.name] = self.b1 * self.m[p.name] + (1.0 - self.b1) * g
            v = self.v[p.name] = self.b2 * self.v[p.name] + (1.0 - self.b2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None

    @property
    def n_scalars(self) -> int:
        return count_trainable(self.params)


@dataclass
class PromptState:
    """Everything tuned downstream: node prompt, edge prompt, head and Adam moments."""

    mode: str
    config: TuneConfig
    dims: dict
    node: NodePrompt | None
    edge: EdgePrompt | None
    head: HeadWeights
    adam_t: int = 0
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config: TuneConfig, backbone_cfg: BackboneConfig, T: int, rng) -> "PromptState":
        d_in, d, d_e, L = backbone_cfg.d_in, backbone_cfg.d, backbone_cfg.d_e, backbone_cfg.L
        head = HeadWeights.init(d, T, config.head_layers, rng)
        node = edge = None
        if config.mode in ("gpf", "gpf_plus") or (config.mode == "gspf" and config.node_prompt):
            node = NodePrompt(
                config.mode, d_in, config.k, rng,
                gate_layers=config.gate_layers,
                learned_attention=config.learned_attention,
                init_scale=config.prompt_init_scale,
            )
        if config.mode in NODE_MODES and config.edge_placement != "off":
            edge = EdgePrompt(config.edge_placement, L, d_in, d, d_e, rng, compensate=config.edge_compensate)
        dims = {"d_in": d_in, "d": d, "d_e": d_e, "L": L, "T": T}
        return cls(config.mode, config, dims, node, edge, head)

    def prompt_params(self) -> list[ParamTensor]:
        out = [] if self.node is None else self.node.params()
        return out + ([] if self.edge is None else self.edge.params())

    def params(self) -> list[ParamTensor]:
        return self.prompt_params() + self.head.params()

    def tensors(self) -> dict[str, ParamTensor]:
        return {p.name: p for p in self.params()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.tensors().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, p in self.tensors().items():
            p.value = snap[k].copy()

    def logits(self, graphs, backbone: BackboneWeights):
        return forward(graphs, backbone, self.head, self.node, self.edge)

    def to_json(self) -> dict:
        tensors = {k: v.value.tolist() for k, v in self.tensors().items()}
        for k, m in self.adam_m.items():
            tensors[f"adam.m.{k}"] = m.tolist()
        for k, v in self.adam_v.items():
            tensors[f"adam.v.{k}"] = v.tolist()
        return {
            "version": STATE_VERSION,
            "mode": self.mode,
            "config": self.config.to_dict(),
            "dims": self.dims,
            "adam_t": self.adam_t,
            "tensors": tensors,
        }

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_json(), separators=(",", ":"), allow_nan=False) + "\n")

    @classmethod
    def load(cls, path) -> "PromptState":
        doc = json.loads(Path(path).read_text())
        if doc.get("version") != STATE_VERSION:
            raise VersionError(f"unsupported prompt state version {doc.get('version')!r}")
        config = TuneConfig.from_dict(doc["config"])
        dims = doc["dims"]
        bcfg = BackboneConfig(d_in=dims["d_in"], d_e=dims["d_e"], d=dims["d"], L=dims["L"], T=dims["T"])
        state = cls.init(config, bcfg, dims["T"], np.random.default_rng(0))
        raw = doc["tensors"]
        for name, p in state.tensors().items():
            if name not in raw:
                raise ValidationError(f"prompt state is missing tensor {name!r}")
            value = np.array(raw[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValidationError(f"shape mismatch for {name!r}: {value.shape} vs {p.shape}")
            p.value = value
        state.adam_t = int(doc.get("adam_t", 0))
        state.adam_m = {k[7:]: np.array(v) for k, v in raw.items() if k.startswith("adam.m.")}
        state.adam_v = {k[7:]: np.array(v) for k, v in raw.items() if k.startswith("adam.v.")}
        return state


def predict(graphs: list[LabeledGraph], backbone, state: PromptState, batch_size: int = 256) -> np.ndarray:
    out = []
    for lo in range(0, len(graphs), batch_size):
        out.append(state.logits(GraphBatch(graphs[lo : lo + batch_size]), backbone).value)
    return np.concatenate(out) if out else np.zeros((0, state.dims["T"]))


def evaluate_auc(graphs, backbone, state: PromptState) -> tuple[float, list[float], list[int]]:
    if not graphs:
        return math.nan, [], []
    scores = predict(graphs, backbone, state)
    return multitask_auc(scores, np.stack([g.labels for g in graphs]))


def _labelled(graphs: list[LabeledGraph]) -> tuple[list[LabeledGraph], int]:
    keep = [g for g in graphs if not np.all(np.isnan(g.labels))]
    return keep, len(graphs) - len(keep)


def _fmt(x: float):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def run_seed(dataset: Dataset, backbone: BackboneWeights, config: TuneConfig, seed: int):
    """Tune one seed.  Returns ``(PromptState, seed_report, tuned_backbone_or_None)``."""
    rng = np.random.default_rng(seed)
    ft = config.mode == "ft"
    W = backbone.copy() if ft else backbone
    if ft:
        W.set_trainable(True)
    else:
        W.freeze()
    state = PromptState.init(config, W.config, dataset.T, rng)
    opt_params = state.params() + (W.trainable_params() if ft else [])
    opt = Adam(opt_params, lr=config.lr, weight_decay=config.weight_decay)

    train, skipped = _labelled(dataset.split("train"))
    valid, test = dataset.split("valid"), dataset.split("test")
    report = {
        "seed": seed,
        "status": "ok",
        "skipped_graphs": skipped,
        "optimizer_scalars": opt.n_scalars,
        "train_loss": [],
        "valid_auc": [],
    }
    if not train:
        raise ValidationError("no labelled training graphs")

    def snap():
        s = state.snapshot()
        if ft:
            s.update({f"backbone:{k}": v.value.copy() for k, v in W.tensors.items()})
        return s

    def restore(s):
        state.restore({k: v for k, v in s.items() if not k.startswith("backbone:")})
        if ft:
            for k, p in W.tensors.items():
                p.value = s[f"backbone:{k}"].copy()

    best_auc, best_epoch, best = -math.inf, 0, snap()
    try:
        for epoch in range(1, config.epochs + 1):
            perm = rng.permutation(len(train))
            total, count = 0.0, 0
            for lo in range(0, len(train), config.batch_size):
                batch = GraphBatch([train[i] for i in perm[lo : lo + config.batch_size]])
                with Tape() as tape:
                    loss = masked_bce(state.logits(batch, W), batch.labels)
                tape.backward(loss)
                opt.step()
                total += float(loss.value) * batch.num_graphs
                count += batch.num_graphs
            report["train_loss"].append(total / count)
            auc, _, _ = evaluate_auc(valid, W, state)
            report["valid_auc"].append(_fmt(auc))
            if auc > best_auc:  # NaN never wins
                best_auc, best_epoch, best = auc, epoch, snap()
        if best_epoch == 0 and config.epochs:
            # validation AUC undefined throughout: keep the last epoch
            best_epoch, best = config.epochs, snap()
    except NumericalError as exc:
        report["status"] = "diverged"
        report["error"] = str(exc)
        log.warning("seed %s diverged: %s", seed, exc)
        return state, report, None

    restore(best)
    state.adam_t = opt.t
    state.adam_m = {k: v.copy() for k, v in opt.m.items() if not k.startswith("layers.") and not k.startswith("input_proj")}
    state.adam_v = {k: v.copy() for k, v in opt.v.items() if not k.startswith("layers.") and not k.startswith("input_proj")}
    v_auc, _, _ = evaluate_auc(valid, W, state)
    t_auc, per_task, excluded = evaluate_auc(test, W, state)
    losses = report["train_loss"]
    report.update(
        best_epoch=best_epoch,
        best_valid_auc=_fmt(v_auc),
        test_auc=_fmt(t_auc),
        test_task_auc=[_fmt(a) for a in per_task],
        excluded_tasks=excluded,
        monotone_ok=(losses[-1] <= losses[0]) if losses else None,
    )
    return state, report, (W if ft else None)


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (
        _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc)
        if epoch
        else _dt.datetime.now(_dt.timezone.utc)
    )
    return when.replace(microsecond=0).isoformat()


def make_manifest(config_snapshot: dict, dataset: Dataset, weights_sha256: str, seeds) -> dict:
    return {
        "config": config_snapshot,
        "dataset": dataset.name,
        "dataset_sha256": dataset.sha256(),
        "weights_sha256": weights_sha256,
        "seeds": list(seeds),
        "tool_version": graft.__version__,
        "kernel_backend": kernels.BACKEND,
        "timestamps": {"created": _timestamp()},
    }


@dataclass
class RunReport:
    manifest: dict
    mode: str
    config: dict
    param_budget: dict
    seeds: list[dict]
    backbone_sha256_before: str
    backbone_sha256_after: str
    tuned_backbones: dict = field(default_factory=dict, repr=False)

    @property
    def aggregate(self) -> dict:
        ok = [s for s in self.seeds if s["status"] == "ok" and s.get("test_auc") is not None]
        aucs = np.array([s["test_auc"] for s in ok])
        vals = np.array([s["best_valid_auc"] for s in ok if s.get("best_valid_auc") is not None])
        return {
            "n_seeds": len(self.seeds),
            "n_ok": len(ok),
            "test_auc_mean": float(aucs.mean()) if aucs.size else None,
            "test_auc_std": float(aucs.std()) if aucs.size else None,
            "valid_auc_mean": float(vals.mean()) if vals.size else None,
            "monotone_failures": [s["seed"] for s in ok if s.get("monotone_ok") is False],
        }

    @property
    def frozen_ok(self) -> bool:
        return self.backbone_sha256_before == self.backbone_sha256_after

    def to_dict(self) -> dict:
        return {
            "manifest": self.manifest,
            "mode": self.mode,
            "config": self.config,
            "param_budget": self.param_budget,
            "seeds": self.seeds,
            "aggregate": self.aggregate,
            "backbone_sha256_before": self.backbone_sha256_before,
            "backbone_sha256_after": self.backbone_sha256_after,
            "frozen_ok": self.frozen_ok,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("GRAFT_THREADS", "1")))
    except ValueError:
        return 1


def tune(
    dataset: Dataset,
    backbone: BackboneWeights,
    config: TuneConfig,
    weights_sha256: str | None = None,
    workers: int | None = None,
):
    """Tune every seed in ``config.seeds``; returns ``(states_by_seed, RunReport)``.

    The backbone is never modified (mode ``ft`` trains a private copy).
    """
    for note in config.validate():
        warnings.warn(note, OffGridWarning, stacklevel=2)
    cfg = backbone.config
    if (cfg.d_in, cfg.d_e) != (dataset.d_in, dataset.d_e):
        raise ValidationError(
            f"dataset dims (d_in={dataset.d_in}, d_e={dataset.d_e}) do not match backbone ({cfg.d_in}, {cfg.d_e})"
        )
    before = backbone.sha256()
    workers = min(workers or _worker_count(), len(config.seeds))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(run_seed, *zip(*[(dataset, backbone, config, s) for s in config.seeds])))
    else:
        results = [run_seed(dataset, backbone, config, s) for s in config.seeds]
    after = backbone.sha256()
    budget = count_params(
        config.mode, cfg.d_in, cfg.d, cfg.d_e, cfg.L, config.k, config.edge_placement,
        config.head_layers, dataset.T, gate_layers=config.gate_layers,
        learned_attention=config.learned_attention, node_prompt=config.node_prompt,
    )
    states = {s: r[0] for s, r in zip(config.seeds, results)}
    manifest = make_manifest(config.to_dict(), dataset, weights_sha256 or before, config.seeds)
    report = RunReport(
        manifest, config.mode, config.to_dict(), budget.to_dict(),
        [r[1] for r in results], before, after,
        {s: r[2] for s, r in zip(config.seeds, results) if r[2] is not None},
    )
    return states, report


# --- supervised pre-training on a source task -------------------------------------------

@dataclass(frozen=True)
class PretrainConfig:
    d: int = 64
    L: int = 5
    head_layers: int = 1
    lr: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0


def pretrain(dataset: Dataset, config: PretrainConfig, downstream: str | None = None):
    """Train backbone + temporary head on a source task.

    Returns ``(backbone, head, report)``; the backbone comes back frozen at
    its best-validation epoch.  The head is only kept so the saved file can
    reproduce source-task logits; downstream tuning starts a fresh head.
    """
    if downstream is not None and downstream == dataset.name:
        raise ValidationError("pre-training source task must differ from the downstream task")
    rng = np.random.default_rng(config.seed)
    bcfg = BackboneConfig(dataset.d_in, dataset.d_e, config.d, config.L, dataset.T, config.head_layers)
    W = BackboneWeights.init(bcfg, rng)
    H = HeadWeights.init(config.d, dataset.T, config.head_layers, rng)
    params = W.trainable_params() + H.params()
    opt = Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    train, skipped = _labelled(dataset.split("train"))
    valid = dataset.split("valid")
    probe = PromptState(
        "ft", TuneConfig(mode="ft"), {"T": dataset.T}, None, None, H
    )

    def snap():
        return {p.name: p.value.copy() for p in params}

    best_auc, best_epoch, best = -math.inf, 0, snap()
    history = []
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(train))
        total = 0.0
        for lo in range(0, len(train), config.batch_size):
            batch = GraphBatch([train[i] for i in perm[lo : lo + config.batch_size]])
            with Tape() as tape:
                loss = masked_bce(forward(batch, W, H), batch.labels)
            tape.backward(loss)
            opt.step()
            total += float(loss.value) * batch.num_graphs
        auc, _, _ = evaluate_auc(valid, W, probe)
        history.append({"epoch": epoch, "train_loss": total / len(train), "valid_auc": _fmt(auc)})
        log.info("pretrain epoch %d loss %.4f valid auc %.4f", epoch, total / len(train), auc)
        if not math.isnan(auc) and auc > best_auc:
            best_auc, best_epoch, best = auc, epoch, snap()
    for p in params:
        p.value = best[p.name].copy()
    W.freeze()
    report = {
        "source_task": dataset.name,
        "best_epoch": best_epoch,
        "best_valid_auc": _fmt(best_auc) if best_epoch else None,
        "skipped_graphs": skipped,
        "history": history,
        "config": asdict(config),
    }
    return W, H, report


# --- full-pipeline gradient check ---------------------------------------------------------

def random_graph(n: int, rng: np.random.Generator, d_in: int = 8, d_e: int = 4, T: int = 2) -> LabeledGraph:
    """Connected random graph with dense random features and one missing label."""
    order = rng.permutation(n)
    edges = {tuple(sorted((int(order[i]), int(order[rng.integers(0, i)])))) for i in range(1, n)}
    for _ in range(n // 2):
        u, v = sorted(int(t) for t in rng.choice(n, size=2, replace=False))
        edges.add((u, v))
    edges = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    labels = rng.integers(0, 2, T).astype(np.float64)
    if T > 1:
        labels[-1] = np.nan
    return LabeledGraph(
        rng.normal(size=(n, d_in)), edges, rng.normal(size=(len(edges), d_e)), labels, "train"
    )


def gradcheck_pipeline(
    mode: str = "gspf",
    edge: str = "deep",
    graph_size: int = 6,
    seed: int = 0,
    k: int = 3,
    d: int = 8,
    L: int = 3,
    h: float = 1e-5,
    tol: float = 1e-4,
):
    """fd_check of masked BCE through prompts, backbone and head on one random graph.

    Prompt parameters start at a large random scale so that no gradient is
    trivially zero; the backbone is frozen and therefore reported as skipped.
    """
    from graft.diffengine import fd_check

    config = TuneConfig(mode=mode, k=1 if mode == "gpf" else k, edge=edge)
    config.validate()
    rng = np.random.default_rng(seed)
    graph = random_graph(graph_size, rng)
    bcfg = BackboneConfig(graph.d_in, graph.d_e, d, L, len(graph.labels))
    W = BackboneWeights.init(bcfg, rng).freeze()
    state = PromptState.init(config, bcfg, len(graph.labels), rng)
    for p in state.prompt_params():
        p.value = rng.uniform(-0.5, 0.5, size=p.shape)
    batch = GraphBatch([graph])

    def f():
        return masked_bce(state.logits(batch, W), batch.labels)

    return fd_check(f, state.params() + W.params(), h=h, tol=tol)
