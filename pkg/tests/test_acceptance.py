"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are written with output capture disabled so they show up in a
plain ``pytest`` run. Criteria 7 and 8 train real models and take several
minutes on one CPU core.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from mmfusion.augment import AffineParams, AugmentationSpec, affine, augment_record, hflip, vflip
from mmfusion.autodiff import Tensor
from mmfusion.config import OUTPUT_ROOT_ENV, load_config, paper_grid
from mmfusion.data.manifest import read_manifest
from mmfusion.data.preprocess import preprocess
from mmfusion.data.synthetic import generate_synthetic
from mmfusion.fusion import FusionModel, ModelConfig
from mmfusion.metrics import TABLE_COLUMNS, Confusion, auc, pairwise_auc, point_metrics
from mmfusion.nn.attention import VisionTransformer
from mmfusion.nn.specs import BackboneSpec, TextEncoderSpec
from mmfusion.runner import prepare_data, run_experiment, run_grid

TESTS = Path(__file__).parent
REPO = TESTS.parent
TOY = REPO / "configs" / "toy.yaml"


@pytest.fixture
def verdict(capsys):
    """Print ``PASS``/``FAIL`` for a criterion, then assert it."""

    def report(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})")
        assert ok, detail

    return report


@pytest.fixture(autouse=True)
def _no_output_root_env(monkeypatch):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)


def test_criterion_1_gradient_correctness(verdict):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           str(TESTS / "test_gradients.py")], capture_output=True, text=True, cwd=REPO)
    seconds = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    verdict(1, "finite-difference checks, rel err < 1e-4, 10 seeds, < 60 s",
            proc.returncode == 0 and seconds < 60.0, f"{summary}; wall {seconds:.1f}s")


def test_criterion_2_metric_oracles(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, n)
        labels[rng.choice(n, 2, replace=False)] = [0, 1]
        levels = int(rng.integers(1, 8))
        scores = rng.integers(0, levels, n) / max(levels - 1, 1)
        worst = max(worst, abs(auc(scores, labels) - pairwise_auc(scores, labels)))
    acc, prec, sens, f1, _ = point_metrics(Confusion(tp=2, fp=1, fn=2, tn=5))
    exact = (acc, prec, sens, f1) == (0.7, 2 / 3, 0.5, 4 / 7)
    verdict(2, "rank AUC == pairwise AUC within 1e-12 on 1000 cases; hand fixture exact",
            worst <= 1e-12 and exact, f"max |diff| {worst:.1e}; (2,1,2,5) -> f1 {f1!r}, exact {exact}")


def test_criterion_3_fusion_contract(verdict):
    cfg = ModelConfig(BackboneSpec("vgg16", input_size=32, width=2, feature_dim=8),
                      TextEncoderSpec(hidden_dim=8, feature_dim=4))
    model = FusionModel(cfg, seed=0).eval()
    rng = np.random.default_rng(0)
    f = [Tensor(rng.standard_normal((2, 8))) for _ in range(4)]
    ft = Tensor(rng.standard_normal((2, 4)))
    fc = model.fuse(f, ft).data
    slices = [fc[:, 8 * i:8 * (i + 1)] for i in range(4)] + [fc[:, 32:]]
    ordered = all(np.array_equal(s, p.data) for s, p in zip(slices, f + [ft]))
    img = Tensor(rng.uniform(size=(2, 1, 32, 32)))
    feats = model.extract_image_features([img] * 4)
    same = all(np.array_equal(x.data, feats[0].data) for x in feats[1:])
    verdict(3, "F_c width 36, slices (f1,f2,f3,f4,ft), identical views -> identical features",
            fc.shape[1] == 36 and ordered and same, f"width {fc.shape[1]}, order {ordered}, shared {same}")


def test_criterion_4_vit_structure(verdict):
    vit = VisionTransformer(1, 64, 8, 64, 4, 4, 2, 32, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).uniform(size=(2, 1, 64, 64)))
    tokens = vit.tokens(x).shape[1]
    vit(x)
    worst = max(np.abs(a.sum(axis=-1) - 1.0).max() for a in vit.attention_maps())
    verdict(4, "S=64, P=8 gives 65 tokens; attention rows sum to 1 within 1e-9",
            tokens == 65 and worst <= 1e-9, f"{tokens} tokens, {len(vit.attention_maps())} layers, "
                                            f"max |row sum - 1| {worst:.1e}")


def test_criterion_5_augmentation_invariants(verdict):
    rng = np.random.default_rng(5)
    ok_flip = ok_ident = ok_range = ok_views = True
    worst_ident = 0.0
    for seed in range(20):
        img = rng.uniform(size=(1, 64, 64))
        ok_flip &= np.array_equal(hflip(hflip(img)), img) and np.array_equal(vflip(vflip(img)), img)
        worst_ident = max(worst_ident, np.abs(affine(img, AffineParams()) - img).max())
        record = generate_synthetic(2, seed=seed, image_size=64).records[0]
        record = record.with_views({v: img for v in record.views})
        out = augment_record(record, AugmentationSpec(p_affine=1.0), np.random.default_rng(seed))
        views = list(out.views.values())
        ok_range &= all(v.min() >= 0.0 and v.max() <= 1.0 for v in views)
        ok_views &= all(np.array_equal(v, views[0]) for v in views[1:])
    ok_ident = worst_ident <= 1e-9
    verdict(5, "flip involutions, identity affine within 1e-9, outputs in [0,1], views consistent",
            ok_flip and ok_ident and ok_range and ok_views,
            f"flips {ok_flip}, identity err {worst_ident:.1e}, range {ok_range}, views {ok_views}")


def test_criterion_6_preprocessing_funnel(verdict):
    manifest = read_manifest(TESTS / "fixtures" / "funnel_manifest.csv")
    kept, report = preprocess(manifest)
    again, report2 = preprocess(kept)
    ok = (len(manifest) == 10 and len(kept) == 5 and report.removed == 5
          and report.birads06 == 3 and report.duplicate == 1 and report.missing == 1
          and again.rows == kept.rows and report2.removed == 0)
    verdict(6, "10-row fixture filters to 5 with 5 removals; idempotent", ok,
            f"{len(manifest)} -> {len(kept)}, report {report.counts}, second pass removes {report2.removed}")


@pytest.fixture(scope="module")
def toy_data():
    return prepare_data(load_config(TOY))


def _surrogate(tmp_path, data, overrides):
    cfg = load_config(TOY, overrides)
    res = run_experiment(cfg, tmp_path / cfg.model.name.replace("+", "_"), data)
    return cfg, res


def test_criterion_7_surrogate_experiment(verdict, tmp_path, toy_data):
    budget = 300.0
    _, vgg = _surrogate(tmp_path, toy_data, [])
    _, vit = _surrogate(tmp_path, toy_data, [
        "model.backbone.variant=vit", "model.text.kind=lstm",
        "model.backbone.patch=8", "model.backbone.dim=64", "model.backbone.heads=4", "model.backbone.layers=4",
    ])
    mv, mt = vgg.metrics, vit.metrics
    ok = (mv.accuracy >= 0.95 and mv.auc >= 0.97 and mt.accuracy >= 0.85
          and vgg.seconds < budget and vit.seconds < budget)
    verdict(7, "toy VGG16+ANN acc >= 0.95 and AUC >= 0.97, toy ViT+LSTM acc >= 0.85, 30 epochs, < 5 min each",
            ok, f"VGG16+ANN acc {mv.accuracy:.3f} auc {mv.auc:.3f} best epoch {vgg.fit.state.best_epoch} "
                f"in {vgg.seconds:.0f}s; ViT+LSTM acc {mt.accuracy:.3f} auc {mt.auc:.3f} best epoch "
                f"{vit.fit.state.best_epoch} in {vit.seconds:.0f}s; n_val {mv.n}")


def test_criterion_8_paper_shaped_sweep(verdict, tmp_path):
    budget = 45 * 60.0
    cfg = load_config(TOY, ["train.epochs=1"])
    cfg.grid = paper_grid()
    start = time.perf_counter()
    res = run_grid(cfg, tmp_path / "grid")
    seconds = time.perf_counter() - start
    rows = res.table_csv.strip().splitlines()
    header = rows[0].split(",")
    values = [float(v) for r in rows[1:] for v in r.split(",")[2:] if v != "failed"]
    in_range = len(values) == 22 * 5 and all(0.0 <= v <= 1.0 for v in values)
    digests = set(res.digests.values())
    ok = (len(rows) - 1 == 22 and tuple(header) == TABLE_COLUMNS and in_range
          and len(digests) == 1 and not res.failures and seconds < budget)
    verdict(8, "11 x 2 grid at toy scale gives 22 rows, metrics in [0,1], one split digest, < 45 min", ok,
            f"{len(rows) - 1} rows, {len(res.failures)} failed, {len(digests)} distinct digest(s), "
            f"{seconds / 60:.1f} min")


def test_criterion_9_determinism(verdict, tmp_path):
    overrides = ["data.n=48", "data.image_size=32", "model.backbone.input_size=32", "model.backbone.width=4",
                 "augment.crop_out=32", "train.epochs=2", "augment.p_affine=1.0"]
    same = True
    checked = []
    for extra in ([], ["model.backbone.variant=vit", "model.text.kind=lstm", "model.backbone.dim=16",
                       "model.backbone.heads=2", "model.backbone.layers=1"]):
        cfg = load_config(TOY, overrides + extra)
        a = run_experiment(cfg, tmp_path / "a" / cfg.model.name)
        b = run_experiment(cfg, tmp_path / "b" / cfg.model.name)
        for f in ("history.csv", "metrics.json", "best.ckpt"):
            same &= (a.run_dir / f).read_bytes() == (b.run_dir / f).read_bytes()
        same &= a.fit.history == b.fit.history
        checked.append(cfg.model.name)
    verdict(9, "repeated runs give bit-identical loss history and metrics", same,
            f"{', '.join(checked)}: history.csv, metrics.json and best.ckpt byte-identical = {same}")
