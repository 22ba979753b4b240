"""Multi-head self-attention and the vision transformer encoder."""

from __future__ import annotations

import numpy as np

from mmfusion.autodiff import functional as F
from mmfusion.autodiff.tensor import Tensor, concat, expand_leading, relu, reshape, transpose
from mmfusion.errors import ConfigError, DimensionError
from mmfusion.nn.module import LayerNorm, Linear, Module, Parameter


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention with ``heads`` parallel heads.

    The per-head query/key/value projections are column blocks of one
    (dim, dim) matrix each; heads are concatenated and mixed by ``out_proj``.
    The softmax weights of the latest forward pass are kept in
    ``last_attention`` with shape (N, heads, T, T).
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if heads <= 0 or dim % heads:
            raise ConfigError(f"attention dim {dim} is not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)
        self.last_attention: np.ndarray | None = None

    def _split_heads(self, x: Tensor, n: int, t: int) -> Tensor:
        return transpose(reshape(x, (n, t, self.heads, self.dim // self.heads)), (0, 2, 1, 3))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise DimensionError(f"attention expects (N, T, {self.dim}), got {x.shape}")
        n, t, d = x.shape
        q = self._split_heads(self.q_proj(x), n, t)
        k = self._split_heads(self.k_proj(x), n, t)
        v = self._split_heads(self.v_proj(x), n, t)
        scores = (q @ transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(d // self.heads))
        attn = F.softmax(scores, axis=-1)
        self.last_attention = attn.data
        ctx = reshape(transpose(attn @ v, (0, 2, 1, 3)), (n, t, d))
        return self.out_proj(ctx)


class EncoderBlock(Module):
    """Pre-norm transformer block: attention and MLP, each with a residual."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, dim * mlp_ratio, rng)
        self.fc2 = Linear(dim * mlp_ratio, dim, rng)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(relu(self.fc1(self.norm2(x))))


def patchify(x: Tensor, patch: int) -> Tensor:
    """(N, C, S, S) -> (N, (S/P)^2, C*P*P), patches in row-major grid order."""
    n, c, h, w = x.shape
    if h % patch or w % patch:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    x = reshape(x, (n, c, gh, patch, gw, patch))
    x = transpose(x, (0, 2, 4, 1, 3, 5))
    return reshape(x, (n, gh * gw, c * patch * patch))


class VisionTransformer(Module):
    """Patch embedding, prepended class token, learned positions, encoder stack.

    ``encode`` returns the final class-token state (N, dim); ``forward``
    additionally projects it to ``feature_dim``. Class token and position
    embeddings start at zero.
    """

    def __init__(self, channels: int, image_size: int, patch: int, dim: int, heads: int,
                 layers: int, mlp_ratio: int, feature_dim: int, rng: np.random.Generator):
        if image_size % patch:
            raise ConfigError(f"image size {image_size} not divisible by patch size {patch}")
        self.patch = patch
        self.num_patches = (image_size // patch) ** 2
        self.patch_embed = Linear(channels * patch * patch, dim, rng)
        self.cls_token = Parameter(np.zeros((1, dim)))
        self.pos_embed = Parameter(np.zeros((self.num_patches + 1, dim)))
        self.blocks = [EncoderBlock(dim, heads, mlp_ratio, rng) for _ in range(layers)]
        self.norm = LayerNorm(dim)
        self.head = Linear(dim, feature_dim, rng)

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1

    def tokens(self, x: Tensor) -> Tensor:
        """Embedded token sequence (N, T, dim) before the encoder stack."""
        patches = patchify(x, self.patch)
        if patches.shape[1] != self.num_patches:
            raise DimensionError(f"expected {self.num_patches} patches, image {x.shape} gives {patches.shape[1]}")
        tok = self.patch_embed(patches)
        cls = expand_leading(self.cls_token, (x.shape[0],))
        return concat([cls, tok], axis=1) + self.pos_embed

    def encode(self, x: Tensor) -> Tensor:
        z = self.tokens(x)
        for block in self.blocks:
            z = block(z)
        return self.norm(z)[:, 0]

    def attention_maps(self) -> list[np.ndarray]:
        return [b.attn.last_attention for b in self.blocks]

    def forward(self, x):
        return self.head(self.encode(x))
