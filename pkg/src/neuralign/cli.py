"""Command-line entry point for reproducible alignment runs.

Subcommands: synth, train, sweep, eval, report, export. Every run writes a
`run.json` provenance record (flags, seed, config hash, versions) next to
its primary outputs, and identical flags plus seed produce byte-identical
outputs.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import (
    NonFiniteLossError,
    TrainConfig,
    fit,
    load_checkpoint,
    save_checkpoint,
)
from .data import (
    BankFormatError,
    PairManifest,
    SynthSpec,
    default_schedule,
    read_bank,
    read_neural,
    synth_generate,
    write_bank,
    write_neural,
)
from .evaluation import (
    evaluate_checkpoint,
    export_embeddings,
    layer_sweep,
    relative_depth,
    scaling_regression,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class CliError(Exception):
    """Data or format problem surfaced to the user (exit code 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {path}")
    return p


def _json_dump(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_provenance(out_dir: Path, args: argparse.Namespace, config: dict | None) -> None:
    flags = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k not in ("command", "func")
    }
    record = {
        "command": args.command,
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "config": config,
        "config_sha256": hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()
        ).hexdigest() if config is not None else None,
        "versions": {"neuralign": __version__, "numpy": np.__version__},
    }
    _json_dump(record, out_dir / "run.json")


def _load_config(args: argparse.Namespace) -> TrainConfig:
    """Config file plus flag overrides; flags win."""
    base: dict = {}
    if getattr(args, "config", None):
        with open(_require(args.config, "config file"), encoding="utf-8") as fh:
            base = json.load(fh)
    for key in ("learning_rate", "weight_decay", "batch_size", "epochs",
                "dropout_p", "seed", "d_s", "encoder", "projector"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    try:
        return TrainConfig(**base)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad training config: {exc}") from exc


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of TrainConfig fields")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dropout-p", dest="dropout_p", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--d-s", dest="d_s", type=int)
    p.add_argument("--encoder", choices=["eegproject", "tsconv"])
    p.add_argument("--projector", choices=["linear", "identity"])
    p.add_argument("--encoder-dim", dest="encoder_dim", type=int, default=1024,
                   help="encoder output width D (architecture dim, not a TrainConfig field)")


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        spec = SynthSpec(
            train_concepts=args.concepts - args.test_concepts,
            test_concepts=args.test_concepts,
            images_per_concept=args.images_per,
            layers=default_schedule(args.layers),
            embedding_dim=args.dim,
            channels=args.channels,
            time_points=args.time_points,
            seed=args.seed,
        )
    except ValueError as exc:
        raise CliError(f"invalid synthesis spec: {exc}") from exc
    result = synth_generate(spec)
    neural_path = out / "neural_synth01.neb"
    write_neural(result.dataset, neural_path)
    bank_paths = []
    for bank in result.banks:
        path = out / f"bank_layer{bank.layer_index:02d}.neb"
        write_bank(bank, path)
        bank_paths.append(path.name)
    result.manifest.neural_sources["synth01"] = {
        "path": neural_path.name,
        "channel_names": result.dataset.channel_names,
        "sampling_rate_hz": result.dataset.sampling_rate_hz,
    }
    result.manifest.save(out / "manifest.json")
    _write_provenance(out, args, None)
    print(f"wrote {len(bank_paths)} banks + neural + manifest to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = PairManifest.load(_require(args.manifest, "manifest"))
    dataset = read_neural(_require(args.neural, "neural file"))
    bank = read_bank(_require(args.bank, "bank"))
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, log = fit(dataset, bank, manifest, config, encoder_dim=args.encoder_dim)
    save_checkpoint(ckpt, out / "checkpoint.nck")
    _json_dump(
        [{"epoch": e.epoch, "train_loss": e.train_loss, "test_loss": e.test_loss}
         for e in log],
        out / "loss_log.json",
    )
    _write_provenance(out, args, asdict(config))
    print(f"trained {config.epochs} epochs; checkpoint + loss log in {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    manifest = PairManifest.load(_require(args.manifest, "manifest"))
    dataset = read_neural(_require(args.neural, "neural file"))
    banks_dir = _require(args.banks_dir, "banks directory")
    bank_files = sorted(banks_dir.glob("bank_layer*.neb"))
    if not bank_files:
        raise CliError(f"no bank_layer*.neb files under {banks_dir}")
    banks = [read_bank(p) for p in bank_files]
    config = _load_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = layer_sweep(
        dataset, banks, manifest, config,
        encoder_dim=args.encoder_dim, seeds=seeds, workers=args.workers,
    )
    _json_dump(result.to_dict(), out / "sweep.json")
    _write_provenance(out, args, asdict(config))
    print(
        f"swept {len(banks)} layers: best layer {result.best_layer} "
        f"top1={result.best_top1:.3f}, final top1={result.final_top1:.3f}, "
        f"delta={result.delta:+.3f}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(_require(args.ckpt, "checkpoint"))
    manifest = PairManifest.load(_require(args.manifest, "manifest"))
    dataset = read_neural(_require(args.neural, "neural file"))
    bank = read_bank(_require(args.bank, "bank"))
    report = evaluate_checkpoint(ckpt, dataset, bank, manifest, split=args.split)
    metrics = args.metrics.split(",")
    allowed = {"top1": "top1", "top5": "top5", "concept": "concept_accuracy"}
    unknown = [m for m in metrics if m not in allowed]
    if unknown:
        raise CliError(f"unknown metrics: {unknown}; choose from {sorted(allowed)}")
    payload = report.to_dict()
    payload = {
        k: v for k, v in payload.items()
        if k not in allowed.values() or k in [allowed[m] for m in metrics]
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_report(args) -> int:
    """Summary table (and optional scaling regression) from sweep rows.

    Input rows: {"model", "params", "num_layers", "best_layer",
    "best_top1_pct", "final_top1_pct"}. Percent columns are formatted to
    one decimal in the CSV; full precision goes to the regression JSON.
    """
    with open(_require(args.results, "results file"), encoding="utf-8") as fh:
        rows = json.load(fh)
    if not isinstance(rows, list) or not rows:
        raise CliError("results file must hold a nonempty JSON list of rows")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["model,params,num_layers,best_layer,best_depth_pct,acc_best_pct,acc_final_pct,delta_pct"]
    for row in rows:
        try:
            depth_pct = 100.0 * relative_depth(row["best_layer"], row["num_layers"])
            delta = row["best_top1_pct"] - row["final_top1_pct"]
            lines.append(
                f'{row["model"]},{row["params"]},{row["num_layers"]},{row["best_layer"]},'
                f'{depth_pct:.1f},{row["best_top1_pct"]:.1f},{row["final_top1_pct"]:.1f},'
                f'{delta:+.1f}'
            )
        except (KeyError, ValueError) as exc:
            raise CliError(f"bad results row {row!r}: {exc}") from exc
    (out / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.regress:
        regression = {
            "best_layer": scaling_regression(
                [(row["params"], row["best_top1_pct"]) for row in rows]
            ).to_dict(),
            "final_output": scaling_regression(
                [(row["params"], row["final_top1_pct"]) for row in rows]
            ).to_dict(),
        }
        _json_dump(regression, out / "regression.json")
    _write_provenance(out, args, None)
    print(f"report written to {out / 'summary.csv'}")
    return EXIT_OK


def cmd_export(args) -> int:
    ckpt = load_checkpoint(_require(args.ckpt, "checkpoint"))
    manifest = PairManifest.load(_require(args.manifest, "manifest"))
    dataset = read_neural(_require(args.neural, "neural file"))
    bank = read_bank(_require(args.bank, "bank"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = export_embeddings(ckpt, dataset, bank, manifest, out, split=args.split)
    print(f"exported {n} rows to {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="neuralign", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset + banks")
    p.add_argument("--concepts", type=int, default=1000, help="total concepts")
    p.add_argument("--test-concepts", dest="test_concepts", type=int, default=200)
    p.add_argument("--images-per", dest="images_per", type=int, default=10)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--dim", type=int, default=64, help="image embedding width")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--time-points", dest="time_points", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one encoder against one bank")
    p.add_argument("--manifest", required=True)
    p.add_argument("--neural", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train + evaluate across all layer banks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--neural", required=True)
    p.add_argument("--banks-dir", dest="banks_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", help="comma-separated seeds to average over")
    p.add_argument("--workers", type=int, default=1)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="retrieval metrics for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--neural", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--metrics", default="top1,top5,concept")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="summary table + scaling regression")
    p.add_argument("--results", required=True, help="JSON list of sweep rows")
    p.add_argument("--out", required=True)
    p.add_argument("--regress", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export", help="projected embeddings as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--neural", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLossError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BankFormatError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
