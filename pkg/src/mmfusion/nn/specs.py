"""Declarative descriptions of image backbones and text encoders."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from mmfusion.errors import ConfigError

# variant name -> family
BACKBONE_VARIANTS = {
    "vgg16": "vgg",
    "vgg19": "vgg",
    "resnet34": "resnet",
    "resnet50": "resnet",
    "mobilenet_v3": "mobilenet_v3",
    "effnet_b0": "effnet",
    "effnet_b1": "effnet",
    "effnet_b2": "effnet",
    "effnet_b3": "effnet",
    "effnet_b4": "effnet",
    "effnet_b5": "effnet",
    "effnet_b6": "effnet",
    "effnet_b7": "effnet",
    "vit": "vit",
}

# the eleven image encoders compared in the reference sweep, in table order
PAPER_BACKBONES = (
    "vgg16", "vgg19", "resnet34", "resnet50", "mobilenet_v3",
    "effnet_b0", "effnet_b1", "effnet_b2", "effnet_b3", "effnet_b7", "vit",
)

DISPLAY_NAMES = {
    "vgg16": "VGG16", "vgg19": "VGG19", "resnet34": "ResNet34", "resnet50": "ResNet50",
    "mobilenet_v3": "MobileNet_v3", "vit": "ViT",
    **{f"effnet_b{i}": f"EffNet_b{i}" for i in range(8)},
}

TEXT_KINDS = ("ann", "lstm")

# CNN families halve the resolution five times
CNN_DOWNSAMPLE = 32


def _from_dict(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    return cls(**data)


@dataclass
class BackboneSpec:
    variant: str = "vgg16"
    input_size: int = 64
    channels: int = 1
    feature_dim: int = 32
    width: int = 8
    batchnorm: bool = True
    # ViT geometry
    patch: int = 8
    dim: int = 64
    heads: int = 4
    layers: int = 4
    mlp_ratio: int = 2

    @property
    def family(self) -> str:
        return BACKBONE_VARIANTS.get(self.variant, "?")

    @property
    def downsample(self) -> int:
        return self.patch if self.family == "vit" else CNN_DOWNSAMPLE

    def problems(self) -> list[str]:
        out = []
        if self.variant not in BACKBONE_VARIANTS:
            out.append(f"backbone variant {self.variant!r} not in {sorted(BACKBONE_VARIANTS)}")
            return out
        if self.feature_dim <= 0:
            out.append(f"feature_dim must be > 0, got {self.feature_dim}")
        if self.channels <= 0 or self.width <= 0:
            out.append("channels and width must be positive")
        if self.family == "vit":
            if self.patch <= 0 or self.input_size % self.patch:
                out.append(f"input_size {self.input_size} not divisible by patch {self.patch}")
            if self.heads <= 0 or self.dim % self.heads:
                out.append(f"dim {self.dim} not divisible by heads {self.heads}")
        elif self.input_size % CNN_DOWNSAMPLE or self.input_size <= 0:
            out.append(f"input_size {self.input_size} not divisible by downsampling factor {CNN_DOWNSAMPLE}")
        return out

    def validate(self) -> "BackboneSpec":
        errs = self.problems()
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "BackboneSpec":
        return _from_dict(cls, data)


@dataclass
class TextEncoderSpec:
    kind: str = "ann"
    hidden_dim: int = 16
    feature_dim: int = 8
    num_features: int = 5
    # width of each embedded field token in sequence (lstm) mode
    token_dim: int = 11

    def problems(self) -> list[str]:
        out = []
        if self.kind not in TEXT_KINDS:
            out.append(f"text encoder kind {self.kind!r} not in {TEXT_KINDS}")
        if self.feature_dim <= 0 or self.hidden_dim <= 0:
            out.append("text feature_dim and hidden_dim must be > 0")
        if self.num_features <= 0:
            out.append("num_features must be > 0")
        return out

    def validate(self) -> "TextEncoderSpec":
        errs = self.problems()
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TextEncoderSpec":
        return _from_dict(cls, data)
