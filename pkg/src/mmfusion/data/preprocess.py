"""Row filtering: missing values, malformed rows, duplicate ids, BIRADS 0/6."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from mmfusion.data.manifest import COLUMNS, OPTIONAL_COLUMNS, Manifest, parse_row
from mmfusion.errors import ValidationError

EXCLUDED_BIRADS = (0, 6)

# documented context only; the clinical source data is not available
PAPER_FUNNEL = {
    "report_samples_before": 7904,
    "report_samples_after": 5046,
    "cases": 770,
    "positive_cases": 385,
    "negative_cases": 385,
    "mammograms": 3080,
}


@dataclass
class RowError:
    row: int
    patient_id: str
    message: str


@dataclass
class FilterReport:
    input_rows: int
    output_rows: int
    missing: int = 0
    malformed: int = 0
    duplicate: int = 0
    birads06: int = 0
    errors: list[RowError] = field(default_factory=list)

    @property
    def counts(self) -> dict[str, int]:
        return {"missing": self.missing, "malformed": self.malformed,
                "dup": self.duplicate, "birads06": self.birads06}

    @property
    def removed(self) -> int:
        return self.missing + self.malformed + self.duplicate + self.birads06

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def preprocess(manifest: Manifest) -> tuple[Manifest, FilterReport]:
    """Apply the filter rules in order and report how many rows each removed.

    1. any required field empty -> ``missing``
    2. a field that does not parse or is out of range -> ``malformed`` (with a
       per-row message in ``errors``)
    3. repeated ``patient_id`` -> ``duplicate`` (first occurrence kept)
    4. BIRADS 0 (inconclusive) or 6 (biopsy-proven) -> ``birads06``
    """
    report = FilterReport(input_rows=len(manifest), output_rows=0)
    seen: set[str] = set()
    kept = []
    required = [c for c in COLUMNS if c not in OPTIONAL_COLUMNS]
    for i, row in enumerate(manifest.rows):
        if any(not (row.get(c) or "").strip() for c in required):
            report.missing += 1
            continue
        try:
            parsed = parse_row(row)
        except ValidationError as exc:
            report.malformed += 1
            report.errors.append(RowError(i, row.get("patient_id", ""), str(exc)))
            continue
        if parsed["patient_id"] in seen:
            report.duplicate += 1
            continue
        seen.add(parsed["patient_id"])
        if parsed["birads"] in EXCLUDED_BIRADS:
            report.birads06 += 1
            continue
        kept.append(row)
    report.output_rows = len(kept)
    return manifest.copy_with(kept), report
