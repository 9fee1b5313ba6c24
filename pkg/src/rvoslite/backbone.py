"""Toy visual backbone, text embedder, and the project-then-pool feature path.

The backbone is a three-stage strided convolutional stack producing features
at strides 4, 8, 16 with exact ceil(H/stride) spatial shapes. Frames are
processed independently (no temporal mixing). The text embedder is a
whitespace tokenizer over a closed vocabulary plus a learned class token.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .synthetic import expression_vocabulary

UNKNOWN_TOKEN = "<unk>"


@dataclass(frozen=True)
class ModelDims:
    channels: int = 16          # shared width C
    heads: int = 2
    num_queries: int = 4        # N
    level_channels: tuple[int, ...] = (16, 16, 16)
    dec_layers: int = 2
    block_self_layers: int = 1
    ffn_mult: int = 4

    def __post_init__(self):
        if self.channels % self.heads != 0:
            raise ValueError(f"channels {self.channels} not divisible by heads "
                             f"{self.heads}")
        if min(self.channels, self.heads, self.num_queries, self.dec_layers + 1,
               self.ffn_mult, *self.level_channels) < 1:
            raise ValueError("all model dimensions must be positive")

    @property
    def num_levels(self) -> int:
        return len(self.level_channels)


@dataclass
class MultiScaleFeatures:
    levels: list[torch.Tensor]  # each T×h_j×w_j×c_j
    level_strides: list[int]


@dataclass
class TextEmbedding:
    tokens: torch.Tensor       # L_text×C
    class_token: torch.Tensor  # 1×C


class ConvBackbone(nn.Module):
    """Strided conv stack; stage j output is the stride-4·2^j feature level."""

    STRIDES = (4, 8, 16)

    def __init__(self, level_channels: tuple[int, ...] = (16, 16, 16),
                 dtype=torch.float64):
        super().__init__()
        if len(level_channels) != 3:
            raise ValueError("backbone has exactly 3 stages")
        c0, c1, c2 = level_channels
        self.level_channels = tuple(level_channels)
        # kernel == stride, so output size is exactly ceil(input/stride) after padding
        self.stage0 = nn.Conv2d(3, c0, kernel_size=4, stride=4, dtype=dtype)
        self.stage1 = nn.Conv2d(c0, c1, kernel_size=2, stride=2, dtype=dtype)
        self.stage2 = nn.Conv2d(c1, c2, kernel_size=2, stride=2, dtype=dtype)

    @staticmethod
    def _pad_to_multiple(x: torch.Tensor, k: int) -> torch.Tensor:
        h, w = x.shape[-2:]
        ph = (-h) % k
        pw = (-w) % k
        if ph or pw:
            x = nn.functional.pad(x, (0, pw, 0, ph))
        return x

    def forward(self, clip_or_mask: torch.Tensor) -> MultiScaleFeatures:
        """T×H×W×3 clip or T×H×W binary mask (lifted to 3 channels) to features."""
        x = torch.as_tensor(clip_or_mask, dtype=self.stage0.weight.dtype)
        if x.ndim == 3:
            x = x[..., None].expand(-1, -1, -1, 3)
        if x.ndim != 4 or x.shape[-1] != 3:
            raise ValueError(f"expected T×H×W×3 or T×H×W input, got {tuple(x.shape)}")
        if not torch.isfinite(x).all():
            raise ValueError("non-finite values in backbone input")
        x = x.permute(0, 3, 1, 2)  # T×3×H×W
        levels = []
        for stage, k in zip((self.stage0, self.stage1, self.stage2), (4, 2, 2)):
            x = torch.tanh(stage(self._pad_to_multiple(x, k)))
            levels.append(x.permute(0, 2, 3, 1))
        return MultiScaleFeatures(levels, list(self.STRIDES))


def extract_visual_features(clip_or_mask, backbone: ConvBackbone) -> MultiScaleFeatures:
    return backbone(clip_or_mask)


class TextEmbedder(nn.Module):
    def __init__(self, channels: int, vocab: list[str] | None = None,
                 dtype=torch.float64):
        super().__init__()
        words = list(vocab) if vocab is not None else expression_vocabulary()
        if UNKNOWN_TOKEN in words:
            words.remove(UNKNOWN_TOKEN)
        self.vocab = [UNKNOWN_TOKEN] + words
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.table = nn.Embedding(len(self.vocab), channels, dtype=dtype)
        self.class_token = nn.Parameter(torch.zeros(1, channels, dtype=dtype))
        nn.init.normal_(self.table.weight, std=0.2)
        nn.init.normal_(self.class_token, std=0.2)

    def forward(self, expression: str) -> TextEmbedding:
        words = expression.strip().lower().split()
        if not words:
            raise ValueError("expression must contain at least one token")
        ids = torch.tensor([self.index.get(w, 0) for w in words], dtype=torch.long)
        return TextEmbedding(self.table(ids), self.class_token)


def embed_text(expression: str, embedder: TextEmbedder) -> TextEmbedding:
    return embedder(expression)


class FeatureProjector(nn.Module):
    """Per-level linear maps c_j -> C used before spatial average pooling."""

    def __init__(self, level_channels: tuple[int, ...], channels: int,
                 dtype=torch.float64):
        super().__init__()
        self.levels = nn.ModuleList(
            nn.Linear(c, channels, dtype=dtype) for c in level_channels)

    def project_and_pool(self, feat: MultiScaleFeatures, level: int) -> torch.Tensor:
        """Pointwise projection then per-frame spatial mean: T×C."""
        n = len(self.levels)
        if not -n <= level < n:
            raise IndexError(f"level {level} out of range for {n} levels")
        x = self.levels[level](feat.levels[level])  # T×h×w×C
        return x.mean(dim=(1, 2))


def project_and_pool(feat: MultiScaleFeatures, level: int,
                     projector: FeatureProjector) -> torch.Tensor:
    return projector.project_and_pool(feat, level)
