"""Seeded, label-stratified train/validation split."""

from __future__ import annotations

import hashlib
from typing import Sequence, TypeVar

import numpy as np

from mmfusion.errors import ContractError

T = TypeVar("T")


def split(records: Sequence[T], ratio: float = 0.8, seed: int = 0) -> tuple[list[T], list[T]]:
    """Partition ``records`` (anything with ``.label``) into train/val.

    Each class is shuffled with the seed and contributes round(ratio * count)
    items to train, so both sides keep the class ratio to within one record.
    Output preserves input order within each side.
    """
    if len(records) < 2:
        raise ContractError(f"split needs at least 2 records, got {len(records)}")
    if not 0.0 < ratio < 1.0:
        raise ContractError(f"split ratio must lie strictly between 0 and 1, got {ratio}")
    rng = np.random.default_rng(seed)
    labels = np.array([r.label for r in records])
    train_idx = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        train_idx.extend(idx[:int(round(ratio * idx.size))].tolist())
    in_train = np.zeros(len(records), dtype=bool)
    in_train[train_idx] = True
    train = [r for r, t in zip(records, in_train) if t]
    val = [r for r, t in zip(records, in_train) if not t]
    if not train or not val:
        raise ContractError(f"ratio {ratio} leaves an empty split ({len(train)} train / {len(val)} val)")
    return train, val


def split_digest(train: Sequence, val: Sequence) -> str:
    """sha256 over the ordered patient ids of both sides."""
    text = "train:" + ",".join(r.patient_id for r in train) + "|val:" + ",".join(r.patient_id for r in val)
    return hashlib.sha256(text.encode()).hexdigest()
