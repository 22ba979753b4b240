"""Synthetic four-view phantoms with correlated report fields.

Each view is a half-ellipse of textured "tissue" against a black background,
anchored at the chest wall (left edge for L views, right edge for R views);
MLO views add a brighter pectoral wedge. Positive cases carry 1-3 bright
Gaussian lesions in the views of the sampled lesion side. Images are
quantized to 8 bits so in-memory records match what is written to disk.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from mmfusion.data.manifest import Manifest, record_to_row, write_image, write_manifest
from mmfusion.data.records import NEGATIVE, POSITIVE, VIEWS, MultimodalRecord
from mmfusion.errors import ContractError

MEAN_AGE = 53.0
AGE_SD = 10.0
AGE_RANGE = (25.0, 90.0)
LESION_AMPLITUDE = (0.4, 0.6)
# lesion sigma and texture correlation length, in pixels at a 64-px image
LESION_SIGMA = (3.0, 5.0)
TEXTURE_SIGMA = 1.2


@dataclass
class SyntheticDataset:
    manifest: Manifest
    records: list[MultimodalRecord]


def _breast_mask(size: int, side: str, mlo: bool) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    depth = xx if side == "L" else 1.0 - xx  # distance from the chest wall
    mask = (depth / 0.85) ** 2 + ((yy - 0.5) / 0.46) ** 2 <= 1.0
    pectoral = np.zeros_like(mask)
    if mlo:
        pectoral = mask & (depth + yy < 0.3)
    return mask, pectoral


def _view(rng: np.random.Generator, size: int, view: str, density: int, lesions: int) -> np.ndarray:
    scale = size / 64.0
    mask, pectoral = _breast_mask(size, view[0], "MLO" in view)
    noise = gaussian_filter(rng.standard_normal((size, size)), TEXTURE_SIGMA * scale)
    noise = (noise - noise[mask].mean()) / noise[mask].std()
    tissue = 0.30 + 0.015 * (density - 1) + (0.03 + 0.01 * density) * noise
    img = np.where(mask, tissue, 0.0) + 0.15 * pectoral
    if lesions:
        ys, xs = np.nonzero(mask & ~pectoral)
        yy, xx = np.mgrid[0:size, 0:size]
        for _ in range(lesions):
            k = rng.integers(ys.size)
            sigma = rng.uniform(*LESION_SIGMA) * scale
            amp = rng.uniform(*LESION_AMPLITUDE)
            img = img + amp * np.exp(-((yy - ys[k]) ** 2 + (xx - xs[k]) ** 2) / (2 * sigma ** 2))
    img = np.clip(img, 0.0, 1.0)
    return (np.round(img * 255) / 255)[None]


def lesion_energy(record: MultimodalRecord) -> float:
    """Summed bright excess over the tissue median after light smoothing.

    A threshold on this statistic is the reference ceiling check for how
    separable the image modality of a generated set is.
    """
    total = 0.0
    for v in VIEWS:
        img = record.views[v][0]
        smooth = gaussian_filter(img, 2.0 * img.shape[0] / 64.0)
        tissue = img > 0
        level = np.median(img[tissue]) if tissue.any() else 0.0
        total += float(np.clip(smooth - level - 0.15, 0.0, None).sum())
    return total


def generate_synthetic(n: int, seed: int = 0, image_size: int = 64) -> SyntheticDataset:
    """``n`` records, exactly half positive, fully determined by ``seed``."""
    if n < 2 or n % 2:
        raise ContractError(f"synthetic dataset size must be an even number >= 2, got {n}")
    if image_size < 8:
        raise ContractError(f"image_size must be at least 8, got {image_size}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.repeat([POSITIVE, NEGATIVE], n // 2))
    records = []
    for i, label in enumerate(labels):
        density = int(rng.integers(1, 5))
        age = float(np.round(np.clip(rng.normal(MEAN_AGE, AGE_SD), *AGE_RANGE), 1))
        if label == POSITIVE:
            birads = int(rng.integers(4, 6))
            history = bool(rng.random() < 0.5)
            laterality = int(rng.integers(0, 3))
            lesions = int(rng.integers(1, 4))
            sides = {0: "L", 1: "R", 2: "LR"}[laterality]
        else:
            birads = int(rng.integers(1, 4))
            history = bool(rng.random() < 0.2)
            laterality, lesions, sides = None, 0, ""
        views = {v: _view(rng, image_size, v, density, lesions if v[0] in sides else 0) for v in VIEWS}
        records.append(MultimodalRecord(
            patient_id=f"SYN{i:05d}", views=views, birads=birads, density=density, age=age,
            family_history=history, laterality=laterality, label=int(label)))
    provenance = {"source": "synthetic", "seed": str(seed), "n": str(n), "image_size": str(image_size)}
    manifest = Manifest([record_to_row(r) for r in records], provenance)
    return SyntheticDataset(manifest, records)


def write_dataset(dataset: SyntheticDataset, out_dir) -> Path:
    """Write ``manifest.csv`` and ``<id>/<VIEW>.pgm`` images; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for record in dataset.records:
        d = out / record.patient_id
        d.mkdir(exist_ok=True)
        for v in VIEWS:
            write_image(d / f"{v}.pgm", record.views[v])
    path = out / "manifest.csv"
    dataset.manifest.root = out
    write_manifest(dataset.manifest, path)
    return path
