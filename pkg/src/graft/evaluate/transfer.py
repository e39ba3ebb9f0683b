"""Desk-scale transfer experiment: triangle-detect source, degree-parity target."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

# label -> (mode, edge, node_prompt); the reference row is the linear probe
ARMS = {
    "linear_probe": ("linear_probe", "off", True),
    "gpf": ("gpf", "off", True),
    "gpf_plus": ("gpf_plus", "off", True),
    "gspf_np": ("gspf", "off", True),
    "gspf_ep": ("gspf", "deep", False),
    "gspf_np_ep_shallow": ("gspf", "shallow", True),
    "gspf_np_ep_deep": ("gspf", "deep", True),
}
PROMPT_ARMS = tuple(a for a in ARMS if a != "linear_probe")


@dataclass(frozen=True)
class TransferConfig:
    source_count: int = 2000
    target_count: int = 500
    source_seed: int = 1
    target_seed: int = 2
    d: int = 32
    L: int = 3
    pretrain_epochs: int = 20
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 1e-5
    k: int = 5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)


@dataclass
class TransferResult:
    config: TransferConfig
    source_valid_auc: float
    arms: dict[str, dict] = field(default_factory=dict)  # label -> RunReport.aggregate
    seconds: dict[str, float] = field(default_factory=dict)

    def mean(self, arm: str) -> float:
        return self.arms[arm]["test_auc_mean"]

    @property
    def total_seconds(self) -> float:
        return sum(self.seconds.values())

    def to_text(self) -> str:
        lines = [f"source valid AUC {self.source_valid_auc:.4f}"]
        for arm, agg in self.arms.items():
            lines.append(
                f"{arm:<20} test AUC {agg['test_auc_mean']:.4f} ± {agg['test_auc_std']:.4f}"
                f"  ({agg['n_ok']}/{agg['n_seeds']} seeds, {self.seconds[arm]:.1f}s)"
            )
        lines.append(f"total {self.total_seconds:.1f}s")
        return "\n".join(lines) + "\n"


def run_transfer(config: TransferConfig = TransferConfig(), arms=tuple(ARMS), log=None) -> TransferResult:
    """Pre-train on triangle detection, then tune every arm on degree parity.

    Seeds run sequentially in this process; ``seconds`` records wall time for
    data generation plus pre-training (key ``pretrain``) and for each arm.
    """
    from graft.graphdata import generate_synthetic
    from graft.trainer import PretrainConfig, TuneConfig, pretrain, tune

    t0 = time.perf_counter()
    source = generate_synthetic("triangle-detect", config.source_count, config.source_seed)
    target = generate_synthetic("degree-parity", config.target_count, config.target_seed)
    W, _, report = pretrain(
        source, PretrainConfig(d=config.d, L=config.L, epochs=config.pretrain_epochs), downstream=target.name
    )
    result = TransferResult(config, report["best_valid_auc"])
    result.seconds["pretrain"] = time.perf_counter() - t0
    if log:
        log(f"pretrain: valid AUC {result.source_valid_auc:.4f} ({result.seconds['pretrain']:.1f}s)")
    base = TuneConfig(
        lr=config.lr, weight_decay=config.weight_decay, epochs=config.epochs, seeds=tuple(config.seeds)
    )
    for arm in arms:
        mode, edge, node_prompt = ARMS[arm]
        cfg = replace(base, mode=mode, edge=edge, node_prompt=node_prompt, k=1 if mode in ("gpf", "linear_probe") else config.k)
        t = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, run = tune(target, W, cfg, workers=1)
        result.seconds[arm] = time.perf_counter() - t
        result.arms[arm] = run.aggregate
        if log:
            log(f"{arm}: test AUC {run.aggregate['test_auc_mean']:.4f} ({result.seconds[arm]:.1f}s)")
    return result


if __name__ == "__main__":
    import sys

    res = run_transfer(log=lambda line: print(line, file=sys.stderr, flush=True))
    sys.stdout.write(res.to_text())
