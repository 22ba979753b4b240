"""Toy-scale image backbones: VGG, ResNet, MobileNetV3, EfficientNet and ViT.

Each family keeps its defining block structure at reduced width so it runs
on a CPU. Every CNN halves resolution five times, then global-average-pools
and projects linearly to ``feature_dim``.
"""

from __future__ import annotations

import math

import numpy as np

from mmfusion.autodiff import functional as F
from mmfusion.autodiff.tensor import hardsigmoid, hardswish, relu, sigmoid, silu
from mmfusion.nn.attention import VisionTransformer
from mmfusion.nn.module import BatchNorm2d, Conv2d, Linear, Module, Sequential
from mmfusion.nn.specs import BackboneSpec

VGG_STAGES = {"vgg16": (2, 2, 3, 3, 3), "vgg19": (2, 2, 4, 4, 4)}
RESNET_STAGES = {"resnet34": ("basic", (3, 4, 6, 3)), "resnet50": ("bottleneck", (3, 4, 6, 3))}
# (width multiplier, depth multiplier)
EFFNET_SCALING = {
    "effnet_b0": (1.0, 1.0), "effnet_b1": (1.0, 1.1), "effnet_b2": (1.1, 1.2),
    "effnet_b3": (1.2, 1.4), "effnet_b4": (1.4, 1.8), "effnet_b5": (1.6, 2.2),
    "effnet_b6": (1.8, 2.6), "effnet_b7": (2.0, 3.1),
}

ACTIVATIONS = {"relu": relu, "hswish": hardswish, "silu": silu}


def _round_channels(c: float, divisor: int = 4) -> int:
    return max(divisor, int(c + divisor / 2) // divisor * divisor)


class ConvBNAct(Module):
    def __init__(self, cin, cout, k, rng, stride=1, groups=1, act="relu", batchnorm=True):
        self.conv = Conv2d(cin, cout, k, rng, stride=stride, groups=groups, bias=not batchnorm)
        self.bn = BatchNorm2d(cout) if batchnorm else None
        self.act = act

    def forward(self, x):
        x = self.conv(x)
        if self.bn is not None:
            x = self.bn(x)
        return ACTIVATIONS[self.act](x) if self.act else x


class PooledHead(Module):
    def __init__(self, cin: int, feature_dim: int, rng):
        self.proj = Linear(cin, feature_dim, rng)

    def forward(self, x):
        return self.proj(F.global_avg_pool2d(x))


# ------------------------------------------------------------------------ VGG
class VGG(Module):
    def __init__(self, spec: BackboneSpec, rng):
        w = spec.width
        widths = (w, 2 * w, 4 * w, 4 * w, 4 * w)
        cin = spec.channels
        self.stages = []
        for n_conv, cout in zip(VGG_STAGES[spec.variant], widths):
            layers = []
            for _ in range(n_conv):
                layers.append(ConvBNAct(cin, cout, 3, rng, batchnorm=spec.batchnorm))
                cin = cout
            self.stages.append(Sequential(*layers))
        self.head = PooledHead(cin, spec.feature_dim, rng)

    def forward(self, x):
        for stage in self.stages:
            x = F.max_pool2d(stage(x), 2)
        return self.head(x)


# --------------------------------------------------------------------- ResNet
class BasicBlock(Module):
    expansion = 1

    def __init__(self, cin, mid, stride, rng):
        self.conv1 = ConvBNAct(cin, mid, 3, rng, stride=stride)
        self.conv2 = ConvBNAct(mid, mid, 3, rng, act=None)
        self.shortcut = None
        if stride != 1 or cin != mid:
            self.shortcut = ConvBNAct(cin, mid, 1, rng, stride=stride, act=None)

    def residual(self, x):
        return self.conv2(self.conv1(x))

    def forward(self, x):
        skip = x if self.shortcut is None else self.shortcut(x)
        return relu(self.residual(x) + skip)


class Bottleneck(Module):
    expansion = 4

    def __init__(self, cin, mid, stride, rng):
        cout = mid * self.expansion
        self.conv1 = ConvBNAct(cin, mid, 1, rng)
        self.conv2 = ConvBNAct(mid, mid, 3, rng, stride=stride)
        self.conv3 = ConvBNAct(mid, cout, 1, rng, act=None)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = ConvBNAct(cin, cout, 1, rng, stride=stride, act=None)

    def residual(self, x):
        return self.conv3(self.conv2(self.conv1(x)))

    def forward(self, x):
        skip = x if self.shortcut is None else self.shortcut(x)
        return relu(self.residual(x) + skip)


class ResNet(Module):
    def __init__(self, spec: BackboneSpec, rng):
        kind, depths = RESNET_STAGES[spec.variant]
        block = BasicBlock if kind == "basic" else Bottleneck
        w = spec.width
        self.stem = ConvBNAct(spec.channels, w, 3, rng, stride=2)
        cin = w
        self.blocks = []
        for i, (depth, mid) in enumerate(zip(depths, (w, 2 * w, 4 * w, 8 * w))):
            for j in range(depth):
                stride = 2 if i > 0 and j == 0 else 1
                self.blocks.append(block(cin, mid, stride, rng))
                cin = mid * block.expansion
        self.head = PooledHead(cin, spec.feature_dim, rng)

    def forward(self, x):
        x = F.max_pool2d(self.stem(x), 2)
        for b in self.blocks:
            x = b(x)
        return self.head(x)


# ------------------------------------------------- inverted residual families
class SqueezeExcite(Module):
    """Channel gating: pool -> reduce -> act -> expand -> gate -> rescale."""

    def __init__(self, channels, reduced, rng, act="relu", gate="hardsigmoid"):
        self.fc1 = Linear(channels, reduced, rng)
        self.fc2 = Linear(reduced, channels, rng)
        self.act = act
        self.gate = gate

    def forward(self, x):
        s = ACTIVATIONS[self.act](self.fc1(F.global_avg_pool2d(x)))
        s = self.fc2(s)
        s = hardsigmoid(s) if self.gate == "hardsigmoid" else sigmoid(s)
        return F.scale_channels(x, s)


class InvertedResidual(Module):
    """Expand (1x1) -> depthwise (kxk) -> optional SE -> project (1x1).

    Shared by MobileNetV3 (relu/hard-swish, hard-sigmoid gate) and
    EfficientNet MBConv (swish, sigmoid gate).
    """

    def __init__(self, cin, expanded, cout, k, stride, se, act, rng, se_gate="hardsigmoid", se_reduced=None):
        self.expand = ConvBNAct(cin, expanded, 1, rng, act=act) if expanded != cin else None
        self.depthwise = ConvBNAct(expanded, expanded, k, rng, stride=stride, groups=expanded, act=act)
        self.se = None
        if se:
            reduced = se_reduced or _round_channels(expanded / 4)
            self.se = SqueezeExcite(expanded, reduced, rng, act="relu" if act == "hswish" else act,
                                    gate=se_gate)
        self.project = ConvBNAct(expanded, cout, 1, rng, act=None)
        self.use_residual = stride == 1 and cin == cout

    def forward(self, x):
        y = x if self.expand is None else self.expand(x)
        y = self.depthwise(y)
        if self.se is not None:
            y = self.se(y)
        y = self.project(y)
        return y + x if self.use_residual else y


class MobileNetV3(Module):
    def __init__(self, spec: BackboneSpec, rng):
        w = spec.width
        c = lambda m: _round_channels(w * m)  # noqa: E731
        # (kernel, expanded, out, squeeze-excite, activation, stride)
        config = [
            (3, c(1), c(1), True, "relu", 2),
            (3, c(4), c(1.5), False, "relu", 2),
            (3, c(4.5), c(1.5), False, "relu", 1),
            (5, c(6), c(2), True, "hswish", 2),
            (5, c(12), c(2), True, "hswish", 1),
            (5, c(12), c(3), True, "hswish", 2),
        ]
        self.stem = ConvBNAct(spec.channels, c(1), 3, rng, stride=2, act="hswish")
        cin = c(1)
        self.blocks = []
        for k, exp, cout, se, act, stride in config:
            self.blocks.append(InvertedResidual(cin, exp, cout, k, stride, se, act, rng))
            cin = cout
        self.last = ConvBNAct(cin, c(6), 1, rng, act="hswish")
        self.head = PooledHead(c(6), spec.feature_dim, rng)

    def forward(self, x):
        x = self.stem(x)
        for b in self.blocks:
            x = b(x)
        return self.head(self.last(x))


class EfficientNet(Module):
    # base stages: (expand ratio, kernel, stride, out multiple of width, repeats)
    BASE = [(1, 3, 1, 1.0, 1), (6, 3, 2, 1.5, 2), (6, 5, 2, 2.0, 2), (6, 3, 2, 3.0, 3), (6, 5, 2, 4.0, 1)]

    def __init__(self, spec: BackboneSpec, rng):
        wm, dm = EFFNET_SCALING[spec.variant]
        w = spec.width
        stem_out = _round_channels(w * wm)
        self.stem = ConvBNAct(spec.channels, stem_out, 3, rng, stride=2, act="silu")
        cin = stem_out
        self.blocks = []
        for expand, k, stride, mult, repeats in self.BASE:
            cout = _round_channels(w * mult * wm)
            for j in range(int(math.ceil(repeats * dm))):
                self.blocks.append(InvertedResidual(
                    cin, cin * expand, cout, k, stride if j == 0 else 1, True, "silu", rng,
                    se_gate="sigmoid", se_reduced=max(1, cin // 4)))
                cin = cout
        head_ch = _round_channels(4 * cin)
        self.last = ConvBNAct(cin, head_ch, 1, rng, act="silu")
        self.head = PooledHead(head_ch, spec.feature_dim, rng)

    def forward(self, x):
        x = self.stem(x)
        for b in self.blocks:
            x = b(x)
        return self.head(self.last(x))


def build_backbone(spec: BackboneSpec, rng: np.random.Generator) -> Module:
    """Instantiate the image encoder described by ``spec``; maps (N,C,S,S) -> (N, feature_dim)."""
    spec.validate()
    family = spec.family
    if family == "vgg":
        return VGG(spec, rng)
    if family == "resnet":
        return ResNet(spec, rng)
    if family == "mobilenet_v3":
        return MobileNetV3(spec, rng)
    if family == "effnet":
        return EfficientNet(spec, rng)
    return VisionTransformer(spec.channels, spec.input_size, spec.patch, spec.dim, spec.heads,
                             spec.layers, spec.mlp_ratio, spec.feature_dim, rng)
