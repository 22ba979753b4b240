"""Command-line entry point: ``mmfusion {generate,train,evaluate,grid}``.

Exit codes: 0 success, 2 configuration, 3 contract/shape, 4 data validation,
5 non-finite values, 6 file system, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from mmfusion.config import OUTPUT_ROOT_ENV, load_config
from mmfusion.errors import ConfigError, ContractError, MMFusionError

log = logging.getLogger("mmfusion")

IO_EXIT = 6


def _overrides(args) -> list[str]:
    out = list(args.set or [])
    if getattr(args, "epochs", None) is not None:
        out.append(f"train.epochs={args.epochs}")
    if getattr(args, "seed", None) is not None:
        out.append(f"train.seed={args.seed}")
    if getattr(args, "output_dir", None) is not None:
        out.append(f"output_dir={args.output_dir}")
    return out


def cmd_generate(args) -> int:
    from mmfusion.data.preprocess import preprocess
    from mmfusion.data.synthetic import generate_synthetic, write_dataset
    from mmfusion.runner import file_digest

    ds = generate_synthetic(args.n, args.seed, args.size)
    path = write_dataset(ds, args.out)
    _, report = preprocess(ds.manifest)
    pos = sum(r.label for r in ds.records)
    print(f"wrote {len(ds.records)} records ({pos} positive / {len(ds.records) - pos} negative) to {args.out}")
    print(f"funnel: {report.input_rows} rows -> {report.output_rows} kept; removed {report.counts}")
    print(f"manifest {path} sha256 {file_digest(path)}")
    return 0


def cmd_train(args) -> int:
    from mmfusion.runner import run_experiment

    cfg = load_config(args.config, _overrides(args))
    run_dir = Path(cfg.output_dir) / (args.name or cfg.model.name.lower().replace("+", "_"))
    res = run_experiment(cfg, run_dir)
    m = res.metrics
    print(f"{cfg.model.name}: accuracy {m.accuracy:.3f} precision {m.precision:.3f} "
          f"sensitivity {m.sensitivity:.3f} f1 {m.f1:.3f} auc {m.auc:.3f} "
          f"(best epoch {res.fit.state.best_epoch})")
    print(f"artifacts in {run_dir}")
    return 0


def cmd_evaluate(args) -> int:
    from mmfusion.data.manifest import load_records, read_manifest
    from mmfusion.data.preprocess import preprocess
    from mmfusion.data.split import split, split_digest
    from mmfusion.data.tabular import TabularEncoder
    from mmfusion.fusion import FusionModel
    from mmfusion.train import evaluate
    from mmfusion.autodiff.checkpoint import load_checkpoint
    from mmfusion.autodiff.tensor import default_dtype

    _, meta = load_checkpoint(args.checkpoint)
    kept, _ = preprocess(read_manifest(args.manifest))
    records = load_records(kept)
    if args.subset == "val":
        sp = meta.get("split")
        if not sp:
            raise ContractError("checkpoint has no split metadata; use --subset all")
        train, records = split(records, sp["ratio"], sp["seed"])
        digest = split_digest(train, records)
        if digest != meta.get("split_digest"):
            log.warning("split digest %s differs from the checkpoint's %s", digest[:12],
                        str(meta.get("split_digest"))[:12])
    encoder = TabularEncoder(**meta["encoder"])
    with default_dtype(meta.get("dtype", "float64")):
        model, _ = FusionModel.load(args.checkpoint)
        report = evaluate(model, records, encoder)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_grid(args) -> int:
    from mmfusion.config import paper_grid
    from mmfusion.runner import run_grid

    cfg = load_config(args.config, _overrides(args))
    if args.paper:
        cfg.grid = paper_grid()
    if not cfg.grid:
        raise ConfigError("no grid given: add a 'grid' list to the config or pass --paper")
    out_dir = Path(cfg.output_dir) / (args.name or "grid")
    res = run_grid(cfg, out_dir)
    print(res.table_text, end="")
    digests = set(res.digests.values())
    print(f"{len(res.entries)} rows, {len(res.failures)} failed, split digests identical: {len(digests) <= 1}")
    for key, why in res.failures.items():
        print(f"FAILED {key}: {why}")
    print(f"artifacts in {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmfusion", description="Multimodal late-fusion experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic four-view dataset")
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    for name, func, help_ in (("train", cmd_train, "train one configuration"),
                              ("grid", cmd_grid, "train every backbone x text-encoder cell")):
        t = sub.add_parser(name, help=help_)
        t.add_argument("--config", help="YAML or JSON run config")
        t.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field, e.g. train.lr=0.001 (repeatable)")
        t.add_argument("--epochs", type=int)
        t.add_argument("--seed", type=int)
        t.add_argument("--output-dir", help=f"output root (env {OUTPUT_ROOT_ENV} wins)")
        t.add_argument("--name", help="run directory name under the output root")
        if name == "grid":
            t.add_argument("--paper", action="store_true", help="use the full 11 x 2 grid")
        t.set_defaults(func=func)

    e = sub.add_parser("evaluate", help="score a checkpoint on a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--subset", choices=("all", "val"), default="all",
                   help="'val' re-derives the validation split stored in the checkpoint")
    e.add_argument("--out", help="also write the metrics JSON here")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MMFusionError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return IO_EXIT


if __name__ == "__main__":
    sys.exit(main())
