from mmfusion.nn.attention import MultiHeadAttention, VisionTransformer, patchify
from mmfusion.nn.backbones import build_backbone
from mmfusion.nn.module import (
    BatchNorm2d,
    Conv2d,
    Dropout,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    Sequential,
)
from mmfusion.nn.recurrent import LSTM
from mmfusion.nn.specs import (
    BACKBONE_VARIANTS,
    DISPLAY_NAMES,
    PAPER_BACKBONES,
    BackboneSpec,
    TextEncoderSpec,
)
from mmfusion.nn.text import ANNEncoder, LSTMEncoder, build_text_encoder
