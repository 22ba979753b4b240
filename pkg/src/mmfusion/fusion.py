"""Late-fusion classifier: four view encoders + a tabular encoder + linear head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from mmfusion.autodiff import functional as F
from mmfusion.autodiff.checkpoint import load_checkpoint, save_checkpoint
from mmfusion.autodiff.tensor import Tensor, as_tensor, concat, relu, split
from mmfusion.errors import ConfigError, ContractError, DimensionError
from mmfusion.nn.backbones import build_backbone
from mmfusion.nn.module import Dropout, Linear, Module
from mmfusion.nn.specs import BackboneSpec, TextEncoderSpec
from mmfusion.nn.text import build_text_encoder

VIEWS = ("LCC", "LMLO", "RCC", "RMLO")
NUM_CLASSES = 2


@dataclass
class ModelConfig:
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    text: TextEncoderSpec = field(default_factory=TextEncoderSpec)
    dropout: float = 0.2
    classifier_hidden: int | None = None
    shared_image_encoder: bool = True

    @property
    def fused_width(self) -> int:
        return len(VIEWS) * self.backbone.feature_dim + self.text.feature_dim

    def problems(self) -> list[str]:
        out = self.backbone.problems() + self.text.problems()
        if not 0.0 <= self.dropout < 1.0:
            out.append(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.classifier_hidden is not None and self.classifier_hidden <= 0:
            out.append(f"classifier_hidden must be positive, got {self.classifier_hidden}")
        return out

    def validate(self) -> "ModelConfig":
        errs = self.problems()
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        if set(data) - known:
            raise ConfigError(f"ModelConfig: unknown keys {sorted(set(data) - known)}")
        data["backbone"] = BackboneSpec.from_dict(data.get("backbone", {}))
        data["text"] = TextEncoderSpec.from_dict(data.get("text", {}))
        return cls(**data)

    @property
    def name(self) -> str:
        from mmfusion.nn.specs import DISPLAY_NAMES
        return f"{DISPLAY_NAMES.get(self.backbone.variant, self.backbone.variant)}+{self.text.kind.upper()}"


class FusionModel(Module):
    """Maps (four views, tabular features) to two class logits; class 1 is positive."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]
        if config.shared_image_encoder:
            self.image_encoder = build_backbone(config.backbone, streams[0])
        else:
            self.view_encoders = [build_backbone(config.backbone, streams[0]) for _ in VIEWS]
        self.text_encoder = build_text_encoder(config.text, streams[1], config.dropout)
        self.fusion_dropout = Dropout(config.dropout, streams[2])
        width = config.fused_width
        if config.classifier_hidden:
            self.hidden = Linear(width, config.classifier_hidden, streams[3])
            self.classifier = Linear(config.classifier_hidden, NUM_CLASSES, streams[3])
        else:
            self.hidden = None
            self.classifier = Linear(width, NUM_CLASSES, streams[3])

    def extract_image_features(self, views: Sequence[Tensor]) -> list[Tensor]:
        """Encode views in (LCC, LMLO, RCC, RMLO) order; returns f1..f4 in that order."""
        if len(views) != len(VIEWS):
            raise ContractError(f"expected {len(VIEWS)} views ({', '.join(VIEWS)}), got {len(views)}")
        views = [as_tensor(v) for v in views]
        n = views[0].shape[0]
        if any(v.shape != views[0].shape for v in views):
            raise DimensionError(f"view shapes differ: {[v.shape for v in views]}")
        if not self.config.shared_image_encoder:
            return [enc(v) for enc, v in zip(self.view_encoders, views)]
        # one batched pass through the shared encoder
        feats = self.image_encoder(concat(views, axis=0))
        return split(feats, [n] * len(views), axis=0)

    def fuse(self, image_features: Sequence[Tensor], text_features: Tensor) -> Tensor:
        """F_c = concat(f1, f2, f3, f4, ft) along the feature axis; no parameters."""
        parts = list(image_features) + [text_features]
        batch = {p.shape[0] for p in parts}
        if len(batch) != 1:
            raise DimensionError(f"fuse: batch sizes differ {[p.shape for p in parts]}")
        return concat(parts, axis=1)

    def classify(self, fused: Tensor) -> tuple[Tensor, np.ndarray]:
        """Logits (N, 2) and softmax probabilities."""
        if fused.ndim != 2 or fused.shape[1] != self.config.fused_width:
            raise DimensionError(f"classifier expects (N, {self.config.fused_width}), got {fused.shape}")
        x = self.fusion_dropout(fused)
        if self.hidden is not None:
            x = relu(self.hidden(x))
        logits = self.classifier(x)
        return logits, F.softmax(logits.detach(), axis=1).data

    def forward(self, views, tabular) -> Tensor:
        """``views``: sequence of four (N, C, S, S) tensors or one (N, 4, C, S, S) array."""
        if not isinstance(views, (list, tuple)):
            arr = views.data if isinstance(views, Tensor) else np.asarray(views)
            if arr.ndim != 5 or arr.shape[1] != len(VIEWS):
                raise ContractError(f"expected view stack (N, 4, C, S, S), got {arr.shape}")
            views = [Tensor(arr[:, i]) for i in range(len(VIEWS))]
        feats = self.extract_image_features(views)
        ft = self.text_encoder(as_tensor(tabular))
        logits, _ = self.classify(self.fuse(feats, ft))
        return logits

    def predict_proba(self, views, tabular) -> np.ndarray:
        """Positive-class probability per sample (evaluation mode, no graph)."""
        from mmfusion.autodiff.tensor import no_grad
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                logits = self.forward(views, tabular)
        finally:
            self.train(was_training)
        return F.softmax(logits, axis=1).data[:, 1]

    # ----------------------------------------------------------- checkpoints
    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"model_config": self.config.to_dict(), **(extra_meta or {})}
        save_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path) -> tuple["FusionModel", dict]:
        state, meta = load_checkpoint(path)
        model = cls(ModelConfig.from_dict(meta["model_config"]))
        model.load_state_dict(state)
        return model, meta
