"""In-memory patient case."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from mmfusion.errors import ValidationError

VIEWS = ("LCC", "LMLO", "RCC", "RMLO")
LATERALITY = {0: "left", 1: "right", 2: "both"}
NEGATIVE, POSITIVE = 0, 1


@dataclass
class MultimodalRecord:
    """One case: four mammogram views, report-derived fields, binary label.

    ``views`` maps each of LCC/LMLO/RCC/RMLO to a (C, S, S) float array in
    [0, 1]. ``laterality`` is None when no lesion side is recorded.
    """

    patient_id: str
    views: dict[str, np.ndarray]
    birads: int
    density: int
    age: float
    family_history: bool
    laterality: int | None
    label: int
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    def validate(self) -> "MultimodalRecord":
        problems = []
        if set(self.views) != set(VIEWS):
            problems.append(f"views {sorted(self.views)} != {list(VIEWS)}")
        if not 0 <= self.birads <= 6:
            problems.append(f"birads {self.birads} outside 0-6")
        if not 1 <= self.density <= 4:
            problems.append(f"density {self.density} outside 1-4")
        if not (np.isfinite(self.age) and self.age > 0):
            problems.append(f"age {self.age} not a positive number")
        if self.laterality is not None and self.laterality not in LATERALITY:
            problems.append(f"laterality {self.laterality} not in {{0, 1, 2}}")
        if self.label not in (NEGATIVE, POSITIVE):
            problems.append(f"label {self.label} not 0/1")
        if problems:
            raise ValidationError(f"record {self.patient_id}: " + "; ".join(problems))
        return self

    def view_stack(self) -> np.ndarray:
        """(4, C, S, S) in canonical view order."""
        return np.stack([self.views[v] for v in VIEWS])

    def with_views(self, views: dict[str, np.ndarray]) -> "MultimodalRecord":
        return replace(self, views=views)
