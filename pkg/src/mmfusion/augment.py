"""Training-time image augmentation with seeded, view-consistent draws.

Images are arrays whose last two axes are (H, W); pixel (r, c) sits at
coordinate (y=r, x=c). Geometric transforms map output pixels back into the
source and sample bilinearly. Rotation by a positive angle turns the image
counter-clockwise as displayed, so 90 degrees matches ``np.rot90``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from mmfusion.data.records import VIEWS, MultimodalRecord
from mmfusion.errors import ConfigError

log = logging.getLogger(__name__)


@dataclass
class AugmentationSpec:
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_crop: float = 1.0
    crop_out: int = 64
    crop_scale: tuple[float, float] = (0.8, 1.0)
    crop_ratio: tuple[float, float] = (3 / 4, 4 / 3)
    p_affine: float = 0.5
    rotate_max_deg: float = 90.0
    scale_range: tuple[float, float] = (0.8, 1.2)
    shift_frac: float = 0.0625
    per_view: bool = False

    def problems(self) -> list[str]:
        out = []
        for name in ("p_hflip", "p_vflip", "p_crop", "p_affine"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                out.append(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.rotate_max_deg <= 180.0:
            out.append("rotate_max_deg must lie in [0, 180]")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            out.append(f"scale_range {self.scale_range} must satisfy 0 < low <= high")
        lo, hi = self.crop_scale
        if not 0 < lo <= hi <= 1:
            out.append(f"crop_scale {self.crop_scale} must satisfy 0 < low <= high <= 1")
        lo, hi = self.crop_ratio
        if not 0 < lo <= hi:
            out.append(f"crop_ratio {self.crop_ratio} must satisfy 0 < low <= high")
        if self.crop_out <= 0:
            out.append("crop_out must be positive")
        if not 0.0 <= self.shift_frac < 1.0:
            out.append("shift_frac must lie in [0, 1)")
        return out

    def validate(self) -> "AugmentationSpec":
        errs = self.problems()
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    @classmethod
    def identity(cls, crop_out: int = 64) -> "AugmentationSpec":
        return cls(p_hflip=0.0, p_vflip=0.0, p_crop=0.0, crop_out=crop_out, p_affine=0.0,
                   rotate_max_deg=0.0, scale_range=(1.0, 1.0), shift_frac=0.0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentationSpec":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"AugmentationSpec: unknown keys {sorted(unknown)}")
        for key in ("crop_scale", "crop_ratio", "scale_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


# ------------------------------------------------------------------ primitives
def hflip(img: np.ndarray) -> np.ndarray:
    return img[..., :, ::-1].copy()


def vflip(img: np.ndarray) -> np.ndarray:
    return img[..., ::-1, :].copy()


def bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray, zero_fill: bool) -> np.ndarray:
    """Sample ``img`` (..., H, W) at fractional coordinates.

    With ``zero_fill`` the image is treated as zero outside its support, so
    samples fade to 0 within one pixel of the border; otherwise coordinates
    are clamped to the edge.
    """
    h, w = img.shape[-2:]
    if zero_fill:
        img = np.pad(img, [(0, 0)] * (img.ndim - 2) + [(1, 1), (1, 1)])
        ys, xs = ys + 1.0, xs + 1.0
        h, w = h + 2, w + 2
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.minimum(np.floor(ys).astype(int), h - 2) if h > 1 else np.zeros_like(ys, dtype=int)
    x0 = np.minimum(np.floor(xs).astype(int), w - 2) if w > 1 else np.zeros_like(xs, dtype=int)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    wy, wx = ys - y0, xs - x0
    top = img[..., y0, x0] * (1 - wx) + img[..., y0, x1] * wx
    bottom = img[..., y1, x0] * (1 - wx) + img[..., y1, x1] * wx
    return top * (1 - wy) + bottom * wy


def resize(img: np.ndarray, out_h: int, out_w: int | None = None) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment and edge clamping."""
    out_w = out_w or out_h
    h, w = img.shape[-2:]
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(img, yy, xx, zero_fill=False)


def crop_and_resize(img: np.ndarray, box: tuple[int, int, int, int], out: int) -> np.ndarray:
    top, left, ch, cw = box
    return resize(img[..., top:top + ch, left:left + cw], out, out)


def sample_crop_box(h: int, w: int, spec: AugmentationSpec, rng: np.random.Generator):
    """(top, left, height, width) of a random area/aspect crop, or the full image."""
    area = h * w
    log_lo, log_hi = math.log(spec.crop_ratio[0]), math.log(spec.crop_ratio[1])
    for _ in range(10):
        target = area * rng.uniform(*spec.crop_scale)
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        cw = int(round(math.sqrt(target * ratio)))
        ch = int(round(math.sqrt(target / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    log.debug("no feasible %sx%s crop for scale %s; resizing full image", h, w, spec.crop_scale)
    return 0, 0, h, w


def random_resized_crop(img: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    box = sample_crop_box(*img.shape[-2:], spec, rng)
    return crop_and_resize(img, box, spec.crop_out)


@dataclass(frozen=True)
class AffineParams:
    angle_deg: float = 0.0
    scale: float = 1.0
    shift_x: float = 0.0  # fraction of width
    shift_y: float = 0.0  # fraction of height

    def inverse(self) -> "AffineParams":
        """Parameters of the transform that undoes this one."""
        th = math.radians(self.angle_deg)
        h_tx, h_ty = self.shift_x, self.shift_y
        # t' = -(1/s) R(-theta) t, in the same fractional units (square images)
        c, s = math.cos(th), math.sin(th)
        inv_x = -(c * h_tx - s * h_ty) / self.scale
        inv_y = -(s * h_tx + c * h_ty) / self.scale
        return AffineParams(-self.angle_deg, 1.0 / self.scale, inv_x, inv_y)


def affine(img: np.ndarray, params: AffineParams) -> np.ndarray:
    """Rotate/scale about the centre, then translate; zero fill outside."""
    h, w = img.shape[-2:]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    th = math.radians(params.angle_deg)
    c, s = math.cos(th), math.sin(th)
    yy, xx = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    # output -> source: undo translation, then rotation and scale about the centre
    dx = xx - cx - params.shift_x * w
    dy = yy - cy - params.shift_y * h
    src_x = cx + (c * dx - s * dy) / params.scale
    src_y = cy + (s * dx + c * dy) / params.scale
    return bilinear_sample(img, src_y, src_x, zero_fill=True)


def sample_affine(spec: AugmentationSpec, rng: np.random.Generator) -> AffineParams:
    return AffineParams(
        angle_deg=float(rng.uniform(-spec.rotate_max_deg, spec.rotate_max_deg)),
        scale=float(rng.uniform(*spec.scale_range)),
        shift_x=float(rng.uniform(-spec.shift_frac, spec.shift_frac)),
        shift_y=float(rng.uniform(-spec.shift_frac, spec.shift_frac)),
    )


def shift_scale_rotate(img: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    return affine(img, sample_affine(spec, rng))


# ---------------------------------------------------------------- record level
@dataclass(frozen=True)
class AugmentDraw:
    hflip: bool
    vflip: bool
    crop: bool
    affine: AffineParams | None


def sample_draw(spec: AugmentationSpec, rng: np.random.Generator) -> AugmentDraw:
    hf = bool(rng.random() < spec.p_hflip)
    vf = bool(rng.random() < spec.p_vflip)
    crop = bool(rng.random() < spec.p_crop)
    aff = sample_affine(spec, rng) if rng.random() < spec.p_affine else None
    return AugmentDraw(hf, vf, crop, aff)


def apply_draw(img: np.ndarray, draw: AugmentDraw, box, spec: AugmentationSpec) -> np.ndarray:
    if draw.hflip:
        img = hflip(img)
    if draw.vflip:
        img = vflip(img)
    if draw.crop:
        img = crop_and_resize(img, box, spec.crop_out)
    elif img.shape[-1] != spec.crop_out or img.shape[-2] != spec.crop_out:
        img = resize(img, spec.crop_out)
    if draw.affine is not None:
        img = affine(img, draw.affine)
    return np.clip(img, 0.0, 1.0)


def augment_record(record: MultimodalRecord, spec: AugmentationSpec,
                   rng: np.random.Generator) -> MultimodalRecord:
    """Augment the four views; one parameter draw covers all views unless ``per_view``."""
    h, w = record.views[VIEWS[0]].shape[-2:]
    draw = sample_draw(spec, rng)
    box = sample_crop_box(h, w, spec, rng) if draw.crop else None
    views = {}
    for v in VIEWS:
        if spec.per_view and v != VIEWS[0]:
            draw = sample_draw(spec, rng)
            box = sample_crop_box(h, w, spec, rng) if draw.crop else None
        views[v] = apply_draw(record.views[v], draw, box, spec)
    return record.with_views(views)
