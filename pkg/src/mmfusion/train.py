"""Adam training loop with seeded shuffling, augmentation and model selection."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from mmfusion.augment import AugmentationSpec, augment_record
from mmfusion.autodiff import functional as F
from mmfusion.autodiff.tensor import Tensor, first_nonfinite_op, get_default_dtype
from mmfusion.data.records import MultimodalRecord
from mmfusion.data.tabular import TabularEncoder
from mmfusion.errors import ConfigError, ContractError, NonFiniteError
from mmfusion.fusion import FusionModel
from mmfusion.metrics import MetricsReport, evaluate_scores
from mmfusion.nn.module import Parameter

log = logging.getLogger(__name__)

EVAL_BATCH = 32
HISTORY_COLUMNS = ("epoch", "train_loss", "accuracy", "precision", "sensitivity", "f1", "auc")


@dataclass
class TrainConfig:
    lr: float = 0.0005
    batch_size: int = 8
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0
    dtype: str = "float64"

    def problems(self, allow_zero_lr: bool = False) -> list[str]:
        out = []
        lo_ok = self.lr >= 0 if allow_zero_lr else self.lr > 0
        if not (isinstance(self.lr, (int, float)) and lo_ok and math.isfinite(self.lr)):
            out.append(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            out.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            out.append(f"epochs must be >= 1, got {self.epochs}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            out.append("adam betas must lie in [0, 1)")
        if self.eps <= 0:
            out.append("adam eps must be > 0")
        if self.dtype not in ("float64", "float32"):
            out.append(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.checkpoint_every < 0:
            out.append("checkpoint_every must be >= 0")
        return out

    def validate(self, allow_zero_lr: bool = False) -> "TrainConfig":
        """``allow_zero_lr`` admits lr == 0, a frozen-weights diagnostic used by
        ``fit``; configuration files always require lr > 0."""
        errs = self.problems(allow_zero_lr)
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"TrainConfig: unknown keys {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    samples_seen: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    best_metric: float = -math.inf
    best_epoch: int = 0
    rng_state: dict = field(default_factory=dict)


# ---------------------------------------------------------------------- adam
def adam_step(params: Sequence[tuple[str, Parameter]], state: TrainState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on parameters and moments."""
    missing = [name for name, p in params if p.grad is None]
    if missing:
        raise ContractError(f"no gradient for trainable parameter(s): {', '.join(missing[:5])}")
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, p in params:
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    return F.cross_entropy(logits, labels)


# ------------------------------------------------------------------- batching
def text_mode(model: FusionModel) -> str:
    return model.config.text.kind


def make_batch(records: Sequence[MultimodalRecord], encoder: TabularEncoder, mode: str):
    dtype = get_default_dtype()
    views = np.stack([r.view_stack() for r in records]).astype(dtype, copy=False)
    tab = encoder.encode_batch(records, mode).astype(dtype, copy=False)
    labels = np.array([r.label for r in records], dtype=int)
    return views, tab, labels


def predict(model: FusionModel, records: Sequence[MultimodalRecord], encoder: TabularEncoder,
            batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Positive-class probabilities in evaluation mode."""
    mode = text_mode(model)
    out = []
    for lo in range(0, len(records), batch_size):
        views, tab, _ = make_batch(records[lo:lo + batch_size], encoder, mode)
        out.append(model.predict_proba(views, tab))
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model: FusionModel, records: Sequence[MultimodalRecord], encoder: TabularEncoder) -> MetricsReport:
    scores = predict(model, records, encoder)
    return evaluate_scores(scores, [r.label for r in records])


# ------------------------------------------------------------------------ fit
@dataclass
class FitResult:
    state: TrainState
    history: list[dict]
    encoder: TabularEncoder
    best_state: dict[str, np.ndarray]
    best_report: MetricsReport | None


def fit(model: FusionModel, train_set: Sequence[MultimodalRecord], val_set: Sequence[MultimodalRecord],
        cfg: TrainConfig, augmentation: AugmentationSpec | None = None,
        encoder: TabularEncoder | None = None,
        on_epoch: Callable[[dict, FusionModel, TrainState], None] | None = None,
        max_steps: int | None = None) -> FitResult:
    """Train ``model`` and keep the parameters with the best validation accuracy.

    Each epoch reshuffles with the seed, augments every training record,
    forms drop-last batches, and applies one Adam step per batch; the model is
    then scored on ``val_set``. ``on_epoch`` sees each history row (used for
    checkpointing and logging). ``max_steps`` stops early, mainly for probes.
    """
    cfg.validate(allow_zero_lr=True)
    train_ids = {r.patient_id for r in train_set}
    if any(r.patient_id in train_ids for r in val_set):
        raise ContractError("train and validation sets overlap")
    if len(train_set) < cfg.batch_size:
        raise ContractError(f"{len(train_set)} training records is fewer than one batch of {cfg.batch_size}")
    encoder = encoder or TabularEncoder.fit(train_set)
    mode = text_mode(model)
    shuffle_ss, augment_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    augment_rng = np.random.default_rng(augment_ss)
    params = list(model.named_parameters())
    state = TrainState()
    history: list[dict] = []
    best_state = model.state_dict()
    best_report = None
    n_batches = len(train_set) // cfg.batch_size

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = [train_set[i] for i in idx]
            if augmentation is not None:
                batch = [augment_record(r, augmentation, augment_rng) for r in batch]
            views, tab, labels = make_batch(batch, encoder, mode)
            logits = model(views, tab)
            loss = cross_entropy_loss(logits, labels)
            if not np.isfinite(loss.data).all():
                where = first_nonfinite_op(loss) or "unknown op"
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, step {state.step + 1}; "
                                     f"first non-finite output from {where}")
            model.zero_grad()
            loss.backward()
            adam_step(params, state, cfg)
            state.samples_seen += len(batch)
            losses.append(float(loss.data))
            if max_steps is not None and state.step >= max_steps:
                break
        state.epoch = epoch
        report = evaluate(model, val_set, encoder) if val_set else None
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else float("nan")}
        if report is not None:
            row.update(accuracy=report.accuracy, precision=report.precision,
                       sensitivity=report.sensitivity, f1=report.f1, auc=report.auc)
            if report.accuracy > state.best_metric:
                state.best_metric, state.best_epoch = report.accuracy, epoch
                best_state, best_report = model.state_dict(), report
        history.append(row)
        state.rng_state = {"shuffle": shuffle_rng.bit_generator.state,
                           "augment": augment_rng.bit_generator.state}
        log.info("epoch %d loss %.4f %s", epoch, row["train_loss"],
                 "" if report is None else f"val acc {report.accuracy:.3f} auc {report.auc:.3f}")
        if on_epoch is not None:
            on_epoch(row, model, state)
        if max_steps is not None and state.step >= max_steps:
            break
    return FitResult(state, history, encoder, best_state, best_report)
