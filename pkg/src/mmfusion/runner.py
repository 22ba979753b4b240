"""End-to-end runs: data -> preprocess -> split -> fit -> artifacts, and the grid sweep.

Every run directory holds ``config.json`` (resolved snapshot), ``run.json``
(seed, split digest, filter report, best epoch), ``history.csv``,
``metrics.json`` and ``best.ckpt``: enough to repeat the run exactly.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import time
import traceback
from dataclasses import dataclass, replace
from pathlib import Path

from mmfusion.autodiff.tensor import default_dtype
from mmfusion.config import GridCell, RunConfig
from mmfusion.data.manifest import load_records, read_manifest
from mmfusion.data.preprocess import FilterReport, preprocess
from mmfusion.data.records import MultimodalRecord
from mmfusion.data.split import split, split_digest
from mmfusion.data.synthetic import generate_synthetic
from mmfusion.data.tabular import TabularEncoder
from mmfusion.errors import ContractError
from mmfusion.fusion import FusionModel
from mmfusion.metrics import MetricsReport, report_table
from mmfusion.nn.specs import BackboneSpec, TextEncoderSpec
from mmfusion.train import HISTORY_COLUMNS, FitResult, evaluate, fit

log = logging.getLogger(__name__)


@dataclass
class PreparedData:
    train: list[MultimodalRecord]
    val: list[MultimodalRecord]
    digest: str
    report: FilterReport


@dataclass
class RunResult:
    run_dir: Path
    metrics: MetricsReport
    fit: FitResult
    digest: str
    seconds: float


def prepare_data(cfg: RunConfig) -> PreparedData:
    """Load or generate records, filter them and split 80/20 (stratified, seeded)."""
    d = cfg.data
    if d.source == "synthetic":
        ds = generate_synthetic(d.n, d.seed, d.image_size)
        kept, report = preprocess(ds.manifest)
        keep = set(kept.ids())
        records = [r for r in ds.records if r.patient_id in keep]
    else:
        manifest = read_manifest(d.manifest)
        kept, report = preprocess(manifest)
        records = load_records(kept)
    size = cfg.model.backbone.input_size
    bad = [r.patient_id for r in records if r.views["LCC"].shape[-1] != size]
    if bad:
        raise ContractError(f"{len(bad)} record(s) have images not {size}x{size} (first: {bad[0]}); "
                            f"regenerate or set model.backbone.input_size")
    train, val = split(records, d.split_ratio, d.split_seed)
    return PreparedData(train, val, split_digest(train, val), report)


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=HISTORY_COLUMNS, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in history:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: RunConfig, run_dir, data: PreparedData | None = None) -> RunResult:
    """Train one configuration and write its artifacts into ``run_dir``."""
    cfg.validate()
    start = time.perf_counter()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    data = data or prepare_data(cfg)
    (run_dir / "config.json").write_text(cfg.to_json())
    encoder = TabularEncoder.fit(data.train, use_birads=cfg.data.use_birads)
    meta = {
        "seed": cfg.train.seed,
        "split_digest": data.digest,
        "split": {"ratio": cfg.data.split_ratio, "seed": cfg.data.split_seed,
                  "train": len(data.train), "val": len(data.val)},
        "encoder": encoder.to_dict(),
        "dtype": cfg.train.dtype,
    }

    history_path = run_dir / "history.csv"
    history_rows: list[dict] = []

    def on_epoch(row, model, state):
        history_rows.append(row)
        history_path.write_text(history_csv(history_rows))
        if cfg.train.checkpoint_every and state.epoch % cfg.train.checkpoint_every == 0:
            model.save(run_dir / f"epoch_{state.epoch:03d}.ckpt", {**meta, "epoch": state.epoch})

    with default_dtype(cfg.train.dtype):
        model = FusionModel(cfg.model, seed=cfg.train.seed)
        result = fit(model, data.train, data.val, cfg.train, cfg.augment, encoder=encoder, on_epoch=on_epoch)
        model.load_state_dict(result.best_state)
        model.save(run_dir / "best.ckpt", {**meta, "epoch": result.state.best_epoch})
        metrics = evaluate(model, data.val, encoder)
    _dump(run_dir / "metrics.json", metrics.to_dict())
    _dump(run_dir / "run.json", {
        **meta, "model": cfg.model.name, "best_epoch": result.state.best_epoch,
        "steps": result.state.step, "samples_seen": result.state.samples_seen,
        "filter_report": json.loads(data.report.to_json()),
    })
    seconds = time.perf_counter() - start
    log.info("%s: val acc %.3f auc %.3f (best epoch %d, %.1fs)", cfg.model.name, metrics.accuracy,
             metrics.auc, result.state.best_epoch, seconds)
    return RunResult(run_dir, metrics, result, data.digest, seconds)


def cell_config(cfg: RunConfig, cell: GridCell) -> RunConfig:
    cell_cfg = copy.deepcopy(cfg)
    backbone = BackboneSpec(**{**cfg.model.backbone.to_dict(), "variant": cell.backbone})
    text = TextEncoderSpec(**{**cfg.model.text.to_dict(), "kind": cell.text})
    cell_cfg.model = replace(cfg.model, backbone=backbone, text=text)
    cell_cfg.grid = None
    return cell_cfg


@dataclass
class GridResult:
    entries: list[tuple[str, MetricsReport | None]]
    digests: dict[str, str]
    failures: dict[str, str]
    table_text: str
    table_csv: str
    out_dir: Path


def run_grid(cfg: RunConfig, out_dir) -> GridResult:
    """Train every grid cell on one shared split; a failing cell is reported, not fatal."""
    cfg.validate()
    if not cfg.grid:
        raise ContractError("grid run needs a nonempty grid")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = prepare_data(cfg)
    entries, digests, failures, timings = [], {}, {}, {}
    for cell in cfg.grid:
        cell_cfg = cell_config(cfg, cell)
        name = cell_cfg.model.name
        try:
            res = run_experiment(cell_cfg, out_dir / cell.key, data)
            entries.append((name, res.metrics))
            digests[cell.key] = res.digest
            timings[cell.key] = round(res.seconds, 2)
        except Exception as exc:  # isolate the cell
            log.error("grid cell %s failed: %s", cell.key, exc)
            failures[cell.key] = f"{type(exc).__name__}: {exc}"
            (out_dir / cell.key).mkdir(parents=True, exist_ok=True)
            (out_dir / cell.key / "error.txt").write_text(traceback.format_exc())
            entries.append((name, None))
    text, table_csv = report_table(entries)
    (out_dir / "table.txt").write_text(text)
    (out_dir / "table.csv").write_text(table_csv)
    _dump(out_dir / "grid.json", {"cells": [c.key for c in cfg.grid], "split_digests": digests,
                                  "failures": failures, "seconds": timings})
    return GridResult(entries, digests, failures, text, table_csv, out_dir)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
