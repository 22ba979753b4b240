"""Manifest table: one row per case, image paths per view, tabular fields.

File layout::

    # source=synthetic
    # seed=7
    patient_id,birads,density,age,family_history,laterality,label,LCC,LMLO,RCC,RMLO
    SYN00000,4,2,53.1,1,0,positive,SYN00000/LCC.pgm,SYN00000/LMLO.pgm,...

Leading ``# key=value`` lines carry provenance. Image paths are relative to
the manifest's directory (layout ``<id>/<VIEW>.pgm``, 8-bit grayscale).
``laterality`` may be empty; ``family_history`` is 0/1; ``label`` is
``positive`` or ``negative``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from mmfusion.data.records import NEGATIVE, POSITIVE, VIEWS, MultimodalRecord
from mmfusion.errors import ContractError, ValidationError

TABULAR_COLUMNS = ("patient_id", "birads", "density", "age", "family_history", "laterality", "label")
COLUMNS = TABULAR_COLUMNS + VIEWS
OPTIONAL_COLUMNS = ("laterality",)
LABELS = {"negative": NEGATIVE, "positive": POSITIVE, "0": NEGATIVE, "1": POSITIVE}
BOOLS = {"1": True, "0": False, "true": True, "false": False, "yes": True, "no": False}


@dataclass
class Manifest:
    rows: list[dict[str, str]] = field(default_factory=list)
    provenance: dict[str, str] = field(default_factory=dict)
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.rows)

    def ids(self) -> list[str]:
        return [r["patient_id"] for r in self.rows]

    def copy_with(self, rows: list[dict[str, str]]) -> "Manifest":
        return Manifest([dict(r) for r in rows], dict(self.provenance), self.root)

    def to_text(self) -> str:
        buf = io.StringIO()
        for key, value in self.provenance.items():
            buf.write(f"# {key}={value}\n")
        writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({c: row.get(c, "") for c in COLUMNS})
        return buf.getvalue()


def write_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text(manifest.to_text())


def read_manifest(path) -> Manifest:
    path = Path(path)
    lines = path.read_text().splitlines()
    provenance = {}
    body_start = 0
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            body_start = i
            break
        key, _, value = line[1:].strip().partition("=")
        provenance[key.strip()] = value.strip()
    else:
        body_start = len(lines)
    reader = csv.DictReader(lines[body_start:])
    header = tuple(reader.fieldnames or ())
    if not set(COLUMNS) - set(OPTIONAL_COLUMNS) <= set(header) <= set(COLUMNS):
        missing = sorted(set(COLUMNS) - set(OPTIONAL_COLUMNS) - set(header))
        extra = sorted(set(header) - set(COLUMNS))
        raise ContractError(f"{path}: manifest columns mismatch (missing {missing}, unexpected {extra})")
    rows = [{c: (row.get(c) or "").strip() for c in COLUMNS} for row in reader]
    return Manifest(rows, provenance, path.parent)


def parse_row(row: dict[str, str]) -> dict:
    """Typed tabular fields of one row; raises ValidationError on malformed values."""
    errors = []

    def as_int(name, lo, hi):
        try:
            v = int(row[name])
        except ValueError:
            errors.append(f"{name}={row[name]!r} is not an integer")
            return None
        if not lo <= v <= hi:
            errors.append(f"{name}={v} outside {lo}-{hi}")
        return v

    out = {"patient_id": row["patient_id"]}
    out["birads"] = as_int("birads", 0, 6)
    out["density"] = as_int("density", 1, 4)
    try:
        out["age"] = float(row["age"])
        if not (np.isfinite(out["age"]) and out["age"] > 0):
            errors.append(f"age={row['age']!r} is not a positive number")
    except ValueError:
        errors.append(f"age={row['age']!r} is not a number")
    hist = row["family_history"].lower()
    if hist not in BOOLS:
        errors.append(f"family_history={row['family_history']!r} not one of {sorted(BOOLS)}")
    out["family_history"] = BOOLS.get(hist)
    out["laterality"] = as_int("laterality", 0, 2) if row["laterality"] else None
    label = row["label"].lower()
    if label not in LABELS:
        errors.append(f"label={row['label']!r} not positive/negative")
    out["label"] = LABELS.get(label)
    if errors:
        raise ValidationError("; ".join(errors))
    return out


def read_image(path) -> np.ndarray:
    """Grayscale image file -> (1, S, S) float array in [0, 1]."""
    with Image.open(path) as im:
        if im.mode not in ("L", "I", "I;16", "I;16B"):
            im = im.convert("L")
        mode = im.mode
        arr = np.asarray(im)
    scale = 255.0 if mode == "L" else 65535.0
    return (arr.astype(np.float64) / scale)[None]


def write_image(path, img: np.ndarray) -> None:
    """(1, S, S) or (S, S) array in [0, 1] -> 8-bit PGM."""
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[0]
    Image.fromarray(np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)).save(path)


def load_records(manifest: Manifest, root=None) -> list[MultimodalRecord]:
    root = Path(root or manifest.root or ".")
    records = []
    for row in manifest.rows:
        fields_ = parse_row(row)
        views = {v: read_image(root / row[v]) for v in VIEWS}
        records.append(MultimodalRecord(views=views, **fields_).validate())
    return records


def record_to_row(record: MultimodalRecord, image_ext: str = "pgm") -> dict[str, str]:
    row = {
        "patient_id": record.patient_id,
        "birads": str(record.birads),
        "density": str(record.density),
        "age": f"{record.age:.1f}",
        "family_history": "1" if record.family_history else "0",
        "laterality": "" if record.laterality is None else str(record.laterality),
        "label": "positive" if record.label == POSITIVE else "negative",
    }
    for v in VIEWS:
        row[v] = f"{record.patient_id}/{v}.{image_ext}"
    return row
