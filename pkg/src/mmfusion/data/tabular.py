"""Encoding of the report fields for the text encoders.

Field order is fixed: birads, density, age, family_history, laterality.

``ann`` mode gives a length-5 vector:

* birads  -> (birads - 1) / 4            (1..5 mapped to [0, 1])
* density -> (density - 1) / 3           (1..4 mapped to [0, 1])
* age     -> (age - mean) / std          (training-split statistics)
* history -> 1.0 or 0.0
* laterality -> index / 3 with none=0, left=1, right=2, both=3

``lstm`` mode gives a (5, 11) token sequence. Token k is
``[one-hot field id (5) | one-hot category (5) | numeric (1)]``; categorical
fields fill the category block (birads-1, density-1, history 0/1,
laterality index as above) and leave numeric at 0, while age leaves the
category block empty and puts its z-score in the numeric slot.

With ``use_birads=False`` the BIRADS value (not its field id) is zeroed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mmfusion.data.records import MultimodalRecord
from mmfusion.errors import ConfigError, ValidationError

FIELDS = ("birads", "density", "age", "family_history", "laterality")
NUM_FIELDS = len(FIELDS)
NUM_CATEGORIES = 5
TOKEN_DIM = NUM_FIELDS + NUM_CATEGORIES + 1


def laterality_index(lat: int | None) -> int:
    return 0 if lat is None else lat + 1


@dataclass
class TabularEncoder:
    age_mean: float
    age_std: float
    use_birads: bool = True

    @classmethod
    def fit(cls, records: Sequence[MultimodalRecord], use_birads: bool = True) -> "TabularEncoder":
        """Age statistics from the given (training) records only."""
        ages = np.array([r.age for r in records], dtype=np.float64)
        std = float(ages.std()) if ages.size > 1 else 1.0
        return cls(float(ages.mean()), std if std > 0 else 1.0, use_birads)

    def _check(self, r: MultimodalRecord) -> None:
        problems = []
        if not 1 <= r.birads <= 5:
            problems.append(f"birads {r.birads} outside 1-5")
        if not 1 <= r.density <= 4:
            problems.append(f"density {r.density} outside 1-4")
        if not (np.isfinite(r.age) and r.age > 0):
            problems.append(f"age {r.age} invalid")
        if r.laterality not in (None, 0, 1, 2):
            problems.append(f"laterality {r.laterality} not in {{0,1,2}} or absent")
        if problems:
            raise ValidationError(f"record {r.patient_id}: " + "; ".join(problems))

    def encode(self, r: MultimodalRecord, mode: str = "ann") -> np.ndarray:
        self._check(r)
        z_age = (r.age - self.age_mean) / self.age_std
        if mode == "ann":
            return np.array([
                (r.birads - 1) / 4.0 if self.use_birads else 0.0,
                (r.density - 1) / 3.0,
                z_age,
                1.0 if r.family_history else 0.0,
                laterality_index(r.laterality) / 3.0,
            ])
        if mode == "lstm":
            tokens = np.zeros((NUM_FIELDS, TOKEN_DIM))
            tokens[np.arange(NUM_FIELDS), np.arange(NUM_FIELDS)] = 1.0
            cat = NUM_FIELDS
            if self.use_birads:
                tokens[0, cat + r.birads - 1] = 1.0
            tokens[1, cat + r.density - 1] = 1.0
            tokens[2, -1] = z_age
            tokens[3, cat + int(bool(r.family_history))] = 1.0
            tokens[4, cat + laterality_index(r.laterality)] = 1.0
            return tokens
        raise ConfigError(f"unknown tabular mode {mode!r}; use 'ann' or 'lstm'")

    def encode_batch(self, records: Sequence[MultimodalRecord], mode: str = "ann") -> np.ndarray:
        return np.stack([self.encode(r, mode) for r in records])

    def to_dict(self) -> dict:
        return {"age_mean": self.age_mean, "age_std": self.age_std, "use_birads": self.use_birads}
