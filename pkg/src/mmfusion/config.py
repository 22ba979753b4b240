"""Run configuration: one YAML/JSON file describing data, model, augmentation and training.

Unspecified fields take the reference recipe defaults (lr 0.0005, batch 8,
100 epochs, 80/20 split). The shipped toy config overrides epochs and widths
so runs finish on a CPU.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from mmfusion.augment import AugmentationSpec
from mmfusion.errors import ConfigError
from mmfusion.fusion import ModelConfig
from mmfusion.nn.specs import BACKBONE_VARIANTS, PAPER_BACKBONES, TEXT_KINDS
from mmfusion.train import TrainConfig

OUTPUT_ROOT_ENV = "MMFUSION_OUTPUT_ROOT"
SECTIONS = ("data", "model", "augment", "train", "output_dir", "grid")


@dataclass
class DataConfig:
    source: str = "synthetic"  # or "manifest"
    n: int = 200
    seed: int = 0
    image_size: int = 64
    manifest: str | None = None
    split_ratio: float = 0.8
    split_seed: int = 0
    use_birads: bool = True  # False zeroes the BIRADS input for leakage-free runs

    def problems(self) -> list[str]:
        out = []
        if self.source not in ("synthetic", "manifest"):
            out.append(f"data.source must be 'synthetic' or 'manifest', got {self.source!r}")
        if self.source == "synthetic":
            if self.n < 2 or self.n % 2:
                out.append(f"data.n must be an even number >= 2, got {self.n}")
            if self.image_size < 8:
                out.append(f"data.image_size must be >= 8, got {self.image_size}")
        if self.source == "manifest":
            if not self.manifest:
                out.append("data.manifest is required when data.source is 'manifest'")
            elif not Path(self.manifest).is_file():
                out.append(f"data.manifest {self.manifest} does not exist")
        if not 0.0 < self.split_ratio < 1.0:
            out.append(f"data.split_ratio must lie in (0, 1), got {self.split_ratio}")
        return out


@dataclass(frozen=True)
class GridCell:
    backbone: str
    text: str

    @property
    def key(self) -> str:
        return f"{self.backbone}+{self.text}"


def paper_grid() -> list[GridCell]:
    """The 11 backbones x 2 text encoders, ANN block first as in the results tables."""
    return [GridCell(b, t) for t in TEXT_KINDS for b in PAPER_BACKBONES]


def parse_grid(spec) -> tuple[list[GridCell] | None, list[str]]:
    if spec is None:
        return None, []
    if spec == "paper":
        return paper_grid(), []
    if not isinstance(spec, list):
        return None, [f"grid must be 'paper' or a list of cells, got {type(spec).__name__}"]
    cells, errs = [], []
    for i, item in enumerate(spec):
        if isinstance(item, str) and "+" in item:
            backbone, text = item.split("+", 1)
        elif isinstance(item, dict) and set(item) == {"backbone", "text"}:
            backbone, text = item["backbone"], item["text"]
        else:
            errs.append(f"grid[{i}] must be 'variant+kind' or {{backbone, text}}, got {item!r}")
            continue
        if backbone not in BACKBONE_VARIANTS:
            errs.append(f"grid[{i}]: unknown backbone {backbone!r}")
        if text not in TEXT_KINDS:
            errs.append(f"grid[{i}]: unknown text encoder {text!r}")
        cells.append(GridCell(backbone, text))
    return cells, errs


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentationSpec = field(default_factory=AugmentationSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs"
    grid: list[GridCell] | None = None

    def problems(self) -> list[str]:
        out = self.data.problems() + self.model.problems() + self.augment.problems() + self.train.problems()
        if self.augment.crop_out != self.model.backbone.input_size:
            out.append(f"augment.crop_out ({self.augment.crop_out}) must equal "
                       f"model.backbone.input_size ({self.model.backbone.input_size})")
        if self.grid is not None and not self.grid:
            out.append("grid is empty")
        return out

    def validate(self) -> "RunConfig":
        errs = self.problems()
        if errs:
            raise ConfigError("invalid configuration:\n  - " + "\n  - ".join(errs))
        return self

    def to_dict(self) -> dict:
        return {
            "data": asdict(self.data),
            "model": self.model.to_dict(),
            "augment": self.augment.to_dict(),
            "train": self.train.to_dict(),
            "output_dir": self.output_dir,
            "grid": None if self.grid is None else [c.key for c in self.grid],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=list) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """Build and validate, reporting every problem found in one error."""
        data = data or {}
        errs = []
        unknown = set(data) - set(SECTIONS)
        if unknown:
            errs.append(f"unknown top-level keys {sorted(unknown)}")
        parts = {}
        for key, build in (("data", lambda d: _dataclass_from(DataConfig, d, "data")),
                           ("model", ModelConfig.from_dict),
                           ("augment", AugmentationSpec.from_dict),
                           ("train", TrainConfig.from_dict)):
            section = data.get(key) or {}
            if not isinstance(section, dict):
                errs.append(f"{key} must be a mapping")
                continue
            try:
                parts[key] = build(section)
            except (ConfigError, TypeError) as exc:
                errs.append(str(exc))
        grid, grid_errs = parse_grid(data.get("grid"))
        errs += grid_errs
        if len(parts) == 4:
            cfg = cls(output_dir=str(data.get("output_dir", "runs")), grid=grid, **parts)
            errs += cfg.problems()
        else:
            errs += [e for part in parts.values() for e in part.problems()]
        if errs:
            raise ConfigError("invalid configuration:\n  - " + "\n  - ".join(errs))
        return cfg


def _dataclass_from(cls, data: dict, section: str):
    unknown = set(data) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    return cls(**data)


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    data = copy.deepcopy(data or {})
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, raw = item.split("=", 1)
        node = data
        *path, leaf = key.strip().split(".")
        for part in path:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r}: {part!r} is not a section")
            node = nxt
        node[leaf] = yaml.safe_load(raw)
    return data


def load_config(path=None, overrides=None) -> RunConfig:
    """Read a config file (YAML or JSON), apply overrides and the output-root env var."""
    data = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {p} is not valid YAML/JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {p} must contain a mapping")
    data = apply_overrides(data, overrides)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root:
        data["output_dir"] = root
    return RunConfig.from_dict(data)
