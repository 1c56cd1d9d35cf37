"""``subspec`` command-line entry point.

Every subcommand writes its artifacts under ``--out`` and prints a JSON
summary on stdout.  Failures exit non-zero with ``{"error": ..., "message": ...}``
on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, InvalidSpec, ManifestParse, MissingBlob, SubspecError
from .experiment import (
    Dataset,
    ExperimentSpec,
    Hyper,
    ModelSpec,
    SmallCNN,
    ablation_sweep,
    activation_profile,
    generate_dataset,
    train_model,
)
from .fusion import fusion_report
from .gradcheck import check_norm_gradients, random_shape
from .norm import SsnConfig
from .tensor import read_tns4, write_tns4

log = logging.getLogger("subspec")

GRADCHECK_TOL = 1e-6


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", f"{self.prog}: {message}", 2)


def _fail(code: str, message: str, exit_code: int = 1):
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    raise SystemExit(exit_code)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _write_table(path: Path, rows: list[dict], fmt: str) -> Path:
    path = path.with_suffix("." + fmt)
    if fmt == "json":
        path.write_text(json.dumps(rows, indent=2))
        return path
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else [])
    writer.writeheader()
    for row in rows:
        writer.writerow({k: json.dumps(v) if isinstance(v, list) else v for k, v in row.items()})
    path.write_text(buf.getvalue())
    return path


# -- dataset directories ---------------------------------------------------------------


def save_dataset(directory: Path, spec: ExperimentSpec, data: Dataset) -> Path:
    entries = []
    for split, xs, ys in (("train", data.x_train, data.y_train), ("test", data.x_test, data.y_test)):
        (directory / split).mkdir(parents=True, exist_ok=True)
        for i, (x, y) in enumerate(zip(xs, ys)):
            rel = f"{split}/{i:05d}.tns"
            write_tns4(directory / rel, x[None])
            entries.append({"file": rel, "label": int(y), "split": split})
    manifest = {
        "format": "subspec-dataset",
        "spec": json.loads(spec.to_json()),
        "feature_shape": list(data.x_train.shape[1:]),
        "n_train": len(data.y_train),
        "n_test": len(data.y_test),
        "entries": entries,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_dataset(directory) -> Dataset:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise MissingBlob(f"dataset manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
        entries = manifest["entries"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise ManifestParse(f"{path}: {exc}") from exc
    split = {"train": ([], []), "test": ([], [])}
    for e in entries:
        blob = path.parent / e["file"]
        if not blob.is_file():
            raise MissingBlob(f"missing blob {blob}")
        xs, ys = split[e["split"]]
        xs.append(read_tns4(blob)[0])
        ys.append(int(e["label"]))
    (xtr, ytr), (xte, yte) = split["train"], split["test"]
    if not xtr or not xte:
        raise ManifestParse(f"{path}: dataset needs both train and test entries")
    return Dataset(np.stack(xtr), np.array(ytr), np.stack(xte), np.array(yte))


# -- subcommands ---------------------------------------------------------------------


def cmd_gen_data(args) -> dict:
    if args.spec:
        spec = ExperimentSpec.from_json(args.spec)
    else:
        spec = ExperimentSpec()
        spec.validate()
    if args.seed is not None:
        spec.seed = args.seed
    data = generate_dataset(spec)
    path = save_dataset(args.out, spec, data)
    return {"manifest": str(path), "n_train": spec.n_train, "n_test": spec.n_test,
            "feature_shape": list(data.x_train.shape[1:])}


def _model_spec(args) -> ModelSpec:
    if args.norm == "bn" and args.s != 1:
        raise InvalidConfig("--norm bn takes no sub-bands; drop --s or use --norm ssn/bnsub")
    SsnConfig(args.s, args.affine)  # validates s
    return ModelSpec(args.norm, args.s, args.affine, tuple(args.widths))


def _hyper(args, seed: int) -> Hyper:
    return Hyper(args.epochs, args.lr, args.batch_size, seed)


def cmd_train(args) -> dict:
    data = load_dataset(args.data)
    spec = _model_spec(args)
    model, report = train_model(spec, data, _hyper(args, args.seed or 0))
    ckpt = model.save(args.out / "checkpoint")
    rows = [{"variant": spec.label, "seed": report.seed, **e} for e in report.epochs]
    table = _write_table(args.out / "epochs", rows, args.format) if rows else None
    (args.out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    return {
        "checkpoint": str(ckpt),
        "epochs_table": str(table) if table else None,
        "variant": spec.label,
        "final_test_accuracy": report.final_test_accuracy,
        "n_params": report.n_params,
        "wall_time": report.wall_time,
    }


def cmd_sweep(args) -> dict:
    data = load_dataset(args.data)
    grid = {"s_values": [1, 2, 4], "affine_types": ["all", "sub"], "include_bn": True, "include_bn_sub": True}
    if args.grid:
        try:
            user = json.loads(Path(args.grid).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"{args.grid}: {exc}") from exc
        unknown = set(user) - set(grid)
        if unknown:
            raise InvalidSpec(f"unknown grid fields: {sorted(unknown)}")
        grid.update(user)
    base = ModelSpec(widths=tuple(args.widths))
    seeds = list(range(args.seed or 0, (args.seed or 0) + args.seeds))
    rows = ablation_sweep(base, grid["s_values"], grid["affine_types"], seeds, data, _hyper(args, 0),
                          grid["include_bn"], grid["include_bn_sub"], args.workers)
    table = _write_table(args.out / "sweep", rows, args.format)
    return {"table": str(table), "rows": [{k: r[k] for k in ("variant", "mean_accuracy", "std_accuracy")} for r in rows]}


def cmd_analyze(args) -> dict:
    model = SmallCNN.load(args.checkpoint)
    data = load_dataset(args.data)
    x = data.x_test if args.split == "test" else data.x_train
    if args.samples:
        x = x[: args.samples]
    prof = activation_profile(model, x, args.layer, args.bands)
    path = args.out / "profile.csv"
    path.write_text(prof.to_csv())
    return {"profile": str(path), "layer": args.layer, "bands": args.bands,
            "band_spread": prof.band_spread, "band_cv": prof.band_cv,
            "band_values": prof.band_values.tolist()}


def cmd_fuse_check(args) -> dict:
    report = fusion_report(args.checkpoint, seed=args.seed or 0, fold_stats=args.fold_stats)
    path = args.out / "fusion_report.json"
    path.write_text(json.dumps(report, indent=2))
    return {"report": str(path), "max_abs_diff": report["max_abs_diff"],
            "max_abs_diff_interior": report["max_abs_diff_interior"], "pairs": len(report["pairs"])}


def cmd_gradcheck(args) -> dict:
    if args.norm == "bn" and args.s != 1:
        raise InvalidConfig("--norm bn takes no sub-bands")
    cfg = SsnConfig(args.s, args.affine)
    rng = np.random.default_rng(args.seed or 0)
    errors = []
    for _ in range(args.trials):
        res = check_norm_gradients(rng, args.norm, cfg, random_shape(rng, args.s))
        errors.append(res.max_error)
    worst = max(errors)
    return {"norm": args.norm, "s": args.s, "affine": args.affine, "trials": args.trials,
            "max_relative_error": worst, "tolerance": GRADCHECK_TOL, "passed": bool(worst < GRADCHECK_TOL)}


# -- parser ---------------------------------------------------------------------------


def _widths(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: 0; gen-data keeps the seed from --spec)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    common.add_argument("--format", choices=["csv", "json"], default="json", help="table format (default: json)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    train_opts = argparse.ArgumentParser(add_help=False)
    hyper = Hyper()
    train_opts.add_argument("--epochs", type=int, default=hyper.epochs, help=f"training epochs (default: {hyper.epochs})")
    train_opts.add_argument("--lr", type=float, default=hyper.lr, help=f"SGD learning rate (default: {hyper.lr})")
    train_opts.add_argument("--batch-size", type=int, default=hyper.batch_size, help=f"minibatch size (default: {hyper.batch_size})")
    train_opts.add_argument("--widths", type=_widths, default=list(ModelSpec().widths), help="conv widths, e.g. 8,24,32")

    parser = _Parser(prog="subspec", description="SubSpectral Normalization toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--spec", help="ExperimentSpec JSON file (default: built-in spec)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common, train_opts], help="train one model")
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--norm", choices=["bn", "ssn", "bnsub"], default="ssn")
    p.add_argument("--s", type=int, default=1, help="number of sub-bands")
    p.add_argument("--affine", choices=["all", "sub"], default="sub")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", parents=[common, train_opts], help="ablation over norm variants and seeds")
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--grid", help="JSON with s_values, affine_types, include_bn, include_bn_sub")
    p.add_argument("--seeds", type=int, default=5, help="number of paired seeds")
    p.add_argument("--workers", type=int, default=None, help="parallel runs (default: $SUBSPEC_THREADS or 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", parents=[common], help="activation-norm profile of a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--layer", type=int, default=0, help="block index")
    p.add_argument("--bands", type=int, default=4, help="sub-bands for averaging")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--samples", type=int, default=0, help="limit on samples (0: all)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fuse-check", parents=[common], help="verify SSN-into-conv fusion")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fold-stats", action="store_true", help="fold running statistics into the affine first")
    p.set_defaults(func=cmd_fuse_check)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of norm gradients")
    p.add_argument("--norm", choices=["bn", "ssn", "bnsub"], default="ssn")
    p.add_argument("--s", type=int, default=1)
    p.add_argument("--affine", choices=["all", "sub"], default="sub")
    p.add_argument("--trials", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    args.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        result = args.func(args)
    except SubspecError as exc:
        _fail(exc.code, str(exc))
    except OSError as exc:
        _fail("Io", str(exc))
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    _emit(result)
    if args.command == "gradcheck" and not result["passed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
