"""``graft`` command line: data generation, pre-training, tuning, evaluation, ablation."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from graft.errors import GraftError, NumericalError, ValidationError

log = logging.getLogger("graft")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _seeds(text: str) -> list[int]:
    """``5`` means seeds 0..4; ``3,7,11`` lists them explicitly."""
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed spec {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("--seeds needs at least one seed")
    return list(range(n))


def _tune_flags(p: argparse.ArgumentParser) -> None:
    # defaults are None so a --config file can fill them; see _tune_config
    p.add_argument("--mode", choices=("gpf", "gpf_plus", "gspf", "ft", "linear_probe"))
    p.add_argument("--k", type=int)
    p.add_argument("--edge", choices=("off", "shallow", "deep"))
    p.add_argument("--no-node-prompt", dest="node_prompt", action="store_false", default=None)
    p.add_argument("--lr", type=float)
    p.add_argument("--wd", type=float, dest="weight_decay")
    p.add_argument("--epochs", type=int)
    p.add_argument("--head-layers", type=int)
    p.add_argument("--seeds", type=_seeds)
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--config", type=Path, help="JSON file of TuneConfig fields; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graft", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic JSONL dataset")
    p.add_argument("--task", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-min", type=int, default=8)
    p.add_argument("--n-max", type=int, default=16)
    p.add_argument("--out", type=Path, required=True, help="output .jsonl file")

    p = sub.add_parser("pretrain", help="supervised pre-training on a source task")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--L", type=int, default=5)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--wd", type=float, default=0.0)
    p.add_argument("--head-layers", type=int, default=1)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--downstream", help="downstream task name (must differ from the source)")

    p = sub.add_parser("tune", help="tune prompts and head on a frozen backbone")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _tune_flags(p)

    p = sub.add_parser("eval", help="score a saved prompt state")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--state", type=Path, required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("ablate", help="NP/EP ablation grid and shallow/deep comparison")
    p.add_argument("--data", type=Path, required=True, nargs="+")
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--csv", action="store_true")
    _tune_flags(p)

    p = sub.add_parser("count-params", help="tunable parameter count of a method")
    p.add_argument("--mode", required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--d-in", type=int, help="input feature width (defaults to --d)")
    p.add_argument("--de", type=int, required=True)
    p.add_argument("--L", type=int, default=5)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--edge", choices=("off", "shallow", "deep"), default="off")
    p.add_argument("--head-layers", type=int, default=1)
    p.add_argument("--T", type=int, default=1)
    p.add_argument("--include-head", action="store_true")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full pipeline")
    p.add_argument("--mode", choices=("gpf", "gpf_plus", "gspf"), default="gspf")
    p.add_argument("--edge", choices=("off", "shallow", "deep"), default="deep")
    p.add_argument("--graph-size", type=int, default=6)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", type=Path)
    return parser


def _tune_config(args):
    from graft.trainer import TuneConfig

    values = {}
    if args.config is not None:
        try:
            values.update(json.loads(args.config.read_text()))
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: malformed JSON ({exc.msg})") from None
    for key in ("mode", "k", "edge", "node_prompt", "lr", "weight_decay", "epochs", "head_layers", "seeds", "batch_size"):
        value = getattr(args, key)
        if value is not None:
            values[key] = value
    config = TuneConfig.from_dict(values)
    for note in config.validate():
        log.warning(note)
    return config


def _emit(obj: dict, out: Path | None) -> None:
    from graft.ioutil import dump_json, write_json

    if out is not None:
        write_json(out, obj)
    sys.stdout.write(dump_json(obj))


def cmd_gen_data(args) -> int:
    from graft.graphdata import generate_synthetic, save_dataset

    ds = generate_synthetic(args.task, args.count, args.seed, n_min=args.n_min, n_max=args.n_max)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} graphs ({ds.name}, T={ds.T}) to {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from graft.backbone import save_weights
    from graft.graphdata import load_dataset
    from graft.ioutil import file_sha256, write_json
    from graft.trainer import PretrainConfig, pretrain

    ds = load_dataset(args.data)
    config = PretrainConfig(
        d=args.d, L=args.L, head_layers=args.head_layers, lr=args.lr,
        weight_decay=args.wd, epochs=args.epochs, batch_size=args.batch, seed=args.seed,
    )
    W, H, report = pretrain(ds, config, downstream=args.downstream)
    weights = args.out / "weights.json"
    save_weights(weights, W, H)
    report["weights_sha256"] = file_sha256(weights)
    report["dataset_sha256"] = ds.sha256()
    write_json(args.out / "pretrain_report.json", report)
    print(f"best valid AUC {report['best_valid_auc']} at epoch {report['best_epoch']}; weights in {weights}")
    return EXIT_OK


def cmd_tune(args) -> int:
    from graft.backbone import load_weights
    from graft.graphdata import load_dataset
    from graft.ioutil import atomic_write_text, file_sha256
    from graft.trainer import tune

    config = _tune_config(args)
    ds = load_dataset(args.data)
    W, _ = load_weights(args.weights)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # grid notes were already logged
        states, report = tune(ds, W, config, weights_sha256=file_sha256(args.weights))
    for seed, state in states.items():
        state.save(args.out / f"prompt_state_seed{seed}.json")
    atomic_write_text(args.out / "run_report.json", report.to_json())
    agg = report.aggregate
    if agg["n_ok"] == 0:
        raise NumericalError("every seed diverged; see run_report.json")
    print(f"{config.mode}: test AUC {agg['test_auc_mean']:.4f} ± {agg['test_auc_std']:.4f} over {agg['n_ok']} seeds")
    return EXIT_OK


def cmd_eval(args) -> int:
    from graft.backbone import load_weights
    from graft.graphdata import load_dataset
    from graft.trainer import PromptState, evaluate_auc

    ds = load_dataset(args.data)
    W, _ = load_weights(args.weights)
    state = PromptState.load(args.state)
    if state.config.mode == "ft":
        raise ValidationError("ft states do not carry the tuned backbone; evaluate from the tune run report")
    mean, per_task, excluded = evaluate_auc(ds.split(args.split), W, state)
    _emit(
        {
            "split": args.split,
            "auc": None if np.isnan(mean) else mean,
            "per_task": [None if np.isnan(a) else a for a in per_task],
            "excluded_tasks": excluded,
        },
        args.out,
    )
    return EXIT_OK


def cmd_ablate(args) -> int:
    from graft.backbone import load_weights
    from graft.evaluate.ablation import run_ablation
    from graft.graphdata import load_dataset
    from graft.ioutil import atomic_write_text

    config = _tune_config(args)
    datasets = [load_dataset(p) for p in args.data]
    W, _ = load_weights(args.weights)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = run_ablation(datasets, W, config)
    atomic_write_text(args.out / "ablation.json", report.to_json())
    atomic_write_text(args.out / "ablation.txt", report.to_text())
    if args.csv:
        atomic_write_text(args.out / "ablation.csv", report.to_csv())
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_count_params(args) -> int:
    from graft.evaluate.budget import count_params

    b = count_params(
        args.mode, args.d if args.d_in is None else args.d_in, args.d, args.de, args.L,
        k=args.k, edge=args.edge, head_layers=args.head_layers, T=args.T, include_head=args.include_head,
    )
    if args.out is not None:
        from graft.ioutil import write_json

        write_json(args.out, b.to_dict())
    print(b.total)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from graft.trainer import gradcheck_pipeline

    report = gradcheck_pipeline(
        args.mode, args.edge, graph_size=args.graph_size, seed=args.seed, k=args.k, h=args.h, tol=args.tol
    )
    out = report.to_dict()
    out.update(mode=args.mode, edge=args.edge, graph_size=args.graph_size)
    _emit(out, args.out)
    return EXIT_OK if report.passed else EXIT_NUMERICAL


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "tune": cmd_tune,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "count-params": cmd_count_params,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
        )
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (GraftError, FileNotFoundError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
