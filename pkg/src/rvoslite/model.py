"""Toy-scale multimodal transformer for referring video segmentation.

Pipeline: text embedding and per-frame multi-scale visual features are fused
by sequential per-level cross-attention (class token carries the result);
the class token seeds per-frame object queries decoded against each frame
independently; temporal self-attention then links each object across frames;
a video-wise query (learned, or initialized from instance masks) cross-reads
the temporal tokens and drives a dot-product mask head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .attention import (CrossAttentionLayer, FeedForwardLayer, QueryAttentionBlock,
                        SelfAttentionLayer, sincos_position_1d, sincos_position_2d)
from .backbone import (ConvBackbone, FeatureProjector, ModelDims, MultiScaleFeatures,
                       TextEmbedder, TextEmbedding)
from .data import VideoClip
from .instance_query import build_video_query


@dataclass
class SegmentationOutput:
    mask_logits: np.ndarray   # N×T×H_m×W_m
    query_scores: np.ndarray  # N in [0, 1]
    binary_masks: np.ndarray  # T×H×W in {0, 1}, upsampled union of selected queries


class MTA(nn.Module):
    """Sequential per-level cross-attention of multimodal tokens (text tokens +
    class token) into the flattened spatio-temporal tokens of each level."""

    def __init__(self, dims: ModelDims, dtype=torch.float64):
        super().__init__()
        C = dims.channels
        self.in_proj = nn.ModuleList(
            nn.Linear(c, C, dtype=dtype) for c in dims.level_channels)
        self.cross = nn.ModuleList(
            CrossAttentionLayer(C, dims.heads, dtype=dtype)
            for _ in dims.level_channels)
        self.ffn = nn.ModuleList(
            FeedForwardLayer(C, dims.ffn_mult * C, dtype=dtype)
            for _ in dims.level_channels)
        self.cross_attention_calls = 0  # instrumentation, reset per forward

    def forward(self, text: TextEmbedding,
                vis: MultiScaleFeatures) -> tuple[torch.Tensor, MultiScaleFeatures]:
        if len(vis.levels) != len(self.cross):
            raise ValueError(f"expected {len(self.cross)} feature levels, got "
                             f"{len(vis.levels)}")
        self.cross_attention_calls = 0
        tokens = torch.cat([text.tokens, text.class_token], dim=0)
        projected = [proj(level) for proj, level in zip(self.in_proj, vis.levels)]
        for level, cross, ffn in zip(projected, self.cross, self.ffn):
            memory = level.reshape(-1, level.shape[-1])  # T·h·w tokens
            tokens = cross(tokens, memory)
            self.cross_attention_calls += 1
            tokens = ffn(tokens)
        class_token = tokens[-1:]
        fused = MultiScaleFeatures([lvl + class_token for lvl in projected],
                                   list(vis.level_strides))
        return class_token, fused


def mta_fuse(text: TextEmbedding, vis: MultiScaleFeatures, mta: MTA):
    return mta(text, vis)


def _flatten_frame_memory(fused: MultiScaleFeatures,
                          dtype) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-frame memory (T, L, C) and its fixed 2D positional encoding (L, C)."""
    parts, pos_parts = [], []
    for level in fused.levels:
        t, h, w, c = level.shape
        parts.append(level.reshape(t, h * w, c))
        pos_parts.append(sincos_position_2d(h, w, c, dtype=dtype))
    return torch.cat(parts, dim=1), torch.cat(pos_parts, dim=0)


class FrameDecoder(nn.Module):
    """Per-frame transformer decoding: the class token repeated N times is
    refined against each frame's tokens independently. Learned per-query
    position embeddings enter attention only through queries/keys, so depth 0
    returns the repeated class token exactly."""

    def __init__(self, dims: ModelDims, dtype=torch.float64):
        super().__init__()
        C, H = dims.channels, dims.heads
        self.num_queries = dims.num_queries
        self.query_pos = nn.Parameter(
            torch.randn(dims.num_queries, C, dtype=dtype) * 0.2)
        self.cross = nn.ModuleList(
            CrossAttentionLayer(C, H, dtype=dtype) for _ in range(dims.dec_layers))
        self.selfs = nn.ModuleList(
            SelfAttentionLayer(C, H, dtype=dtype) for _ in range(dims.dec_layers))
        self.ffn = nn.ModuleList(
            FeedForwardLayer(C, dims.ffn_mult * C, dtype=dtype)
            for _ in range(dims.dec_layers))

    def forward(self, fused: MultiScaleFeatures, class_token: torch.Tensor) -> torch.Tensor:
        memory, mem_pos = _flatten_frame_memory(fused, class_token.dtype)
        T = memory.shape[0]
        x = class_token.expand(self.num_queries, -1).expand(T, -1, -1)
        qpos = self.query_pos.expand(T, -1, -1)
        for cross, self_l, ffn in zip(self.cross, self.selfs, self.ffn):
            x = cross(x, memory, query_pos=qpos, memory_pos=mem_pos)
            x = self_l(x, pos=qpos)
            x = ffn(x)
        return x  # T×N×C


def frame_decode(fused: MultiScaleFeatures, class_token: torch.Tensor,
                 decoder: FrameDecoder) -> torch.Tensor:
    return decoder(fused, class_token)


class TemporalEncoder(nn.Module):
    """Self-attention over the T temporal positions of each object query
    independently; no mixing across query indices."""

    def __init__(self, dims: ModelDims, dtype=torch.float64):
        super().__init__()
        self.attn = SelfAttentionLayer(dims.channels, dims.heads, dtype=dtype)
        self.ffn = FeedForwardLayer(dims.channels, dims.ffn_mult * dims.channels,
                                    dtype=dtype)

    def forward(self, obj: torch.Tensor) -> torch.Tensor:
        if obj.ndim != 3:
            raise ValueError(f"expected T×N×C object queries, got {tuple(obj.shape)}")
        t = obj.shape[0]
        pos = sincos_position_1d(t, obj.shape[2], dtype=obj.dtype)
        x = obj.permute(1, 0, 2)  # N×T×C, queries as batch
        x = self.attn(x, pos=pos.expand(x.shape[0], -1, -1))
        x = self.ffn(x)
        return x.permute(1, 0, 2)


class MTI(nn.Module):
    """Temporal interaction: per-object encoder plus the video-query decoder."""

    def __init__(self, dims: ModelDims, dtype=torch.float64):
        super().__init__()
        self.enc = TemporalEncoder(dims, dtype)
        self.dec = QueryAttentionBlock(dims.channels, dims.heads, self_layers=1,
                                       ffn_mult=dims.ffn_mult, dtype=dtype)


def mti_encode(obj: torch.Tensor, mti: MTI) -> torch.Tensor:
    return mti.enc(obj)


def mti_decode(encoded: torch.Tensor, video_query: torch.Tensor,
               mti: MTI) -> torch.Tensor:
    """Cross-attention of the N video-query rows against all T·N temporal tokens."""
    if encoded.ndim != 3:
        raise ValueError(f"expected T×N×C encoder output, got {tuple(encoded.shape)}")
    return mti.dec(video_query, encoded.reshape(-1, encoded.shape[-1]))


def upsample_nearest(small: np.ndarray, out_hw: tuple[int, int],
                     stride: int) -> np.ndarray:
    """Invert stride-s pooling: output pixel (r, c) copies cell (r//s, c//s)."""
    h, w = out_hw
    rows = np.arange(h) // stride
    cols = np.arange(w) // stride
    return small[..., rows[:, None], cols[None, :]]


class MaskHead(nn.Module):
    """Dot-product mask head over the finest fused level plus a per-query score."""

    def __init__(self, dims: ModelDims, dtype=torch.float64):
        super().__init__()
        C = dims.channels
        self.mask_embed = nn.Linear(C, C, dtype=dtype)
        self.pixel_embed = nn.Linear(C, C, dtype=dtype)
        self.score = nn.Linear(C, 1, dtype=dtype)

    def forward(self, video_query: torch.Tensor,
                fused: MultiScaleFeatures) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (mask logits N×T×h×w, score logits N)."""
        emb = self.mask_embed(video_query)            # N×C
        pix = self.pixel_embed(fused.levels[0])       # T×h×w×C (finest level)
        logits = torch.einsum("nc,thwc->nthw", emb, pix)
        return logits, self.score(video_query).squeeze(-1)


def _select_and_upsample(logits_np: np.ndarray, scores_np: np.ndarray,
                         out_hw: tuple[int, int], stride: int) -> SegmentationOutput:
    selected = np.flatnonzero(scores_np > 0.5)
    if selected.size == 0:
        selected = np.array([int(scores_np.argmax())])
    small = np.zeros(logits_np.shape[1:], dtype=np.uint8)
    for n in selected:
        small |= (logits_np[n] > 0).astype(np.uint8)  # sigmoid(x) > 0.5 iff x > 0
    binary = upsample_nearest(small, out_hw, stride)
    return SegmentationOutput(logits_np, scores_np, binary.astype(np.uint8))


def predict_masks(video_query: torch.Tensor, fused: MultiScaleFeatures,
                  head: MaskHead, out_hw: tuple[int, int]) -> SegmentationOutput:
    """Select queries (score > 0.5, else the best one), union their thresholded
    masks, and nearest-neighbor upsample to the clip resolution."""
    with torch.no_grad():
        logits, score_logits = head(video_query, fused)
        scores = torch.sigmoid(score_logits)
    return _select_and_upsample(logits.numpy(), scores.numpy(), out_hw,
                                fused.level_strides[0])


class RvosModel(nn.Module):
    """Full pipeline. Submodule names fix the checkpoint key namespaces:
    backbone.*, text.*, proj.*, mta.*, dec.*, mti.*, head.*, q0, block.*"""

    def __init__(self, dims: ModelDims, vocab: list[str] | None = None,
                 dtype=torch.float64):
        super().__init__()
        self.dims = dims
        self.dtype_ = dtype
        self.backbone = ConvBackbone(dims.level_channels, dtype)
        self.text = TextEmbedder(dims.channels, vocab, dtype)
        self.proj = FeatureProjector(dims.level_channels, dims.channels, dtype)
        self.mta = MTA(dims, dtype)
        self.dec = FrameDecoder(dims, dtype)
        self.mti = MTI(dims, dtype)
        self.head = MaskHead(dims, dtype)
        self.q0 = nn.Parameter(
            torch.randn(dims.num_queries, dims.channels, dtype=dtype)
            / dims.channels ** 0.5)
        self.block = QueryAttentionBlock(dims.channels, dims.heads,
                                         self_layers=dims.block_self_layers,
                                         ffn_mult=dims.ffn_mult, dtype=dtype)

    def video_query(self, clip: VideoClip, provider=None, instance_init: bool = True,
                    k_max: int = 8, score_threshold: float = 0.0, level: int = -1,
                    multi_level_sum: bool = False,
                    mask_encode_mode: str = "mask") -> torch.Tensor:
        return build_video_query(
            clip, provider, self.backbone, self.proj, self.block, self.q0,
            enabled=instance_init, k_max=k_max, score_threshold=score_threshold,
            level=level, multi_level_sum=multi_level_sum,
            mask_encode_mode=mask_encode_mode)

    def forward_logits(self, clip: VideoClip, expression: str, provider=None,
                       instance_init: bool = True, **query_kwargs):
        """Differentiable forward pass: (mask logits, score logits, fused)."""
        text = self.text(expression)
        vis = self.backbone(torch.as_tensor(clip.frames, dtype=self.dtype_))
        class_token, fused = self.mta(text, vis)
        obj = self.dec(fused, class_token)
        encoded = self.mti.enc(obj)
        vq = self.video_query(clip, provider, instance_init, **query_kwargs)
        vq = mti_decode(encoded, vq, self.mti)
        logits, score_logits = self.head(vq, fused)
        return logits, score_logits

    def forward_pipeline(self, clip: VideoClip, expression: str, provider=None,
                         instance_init: bool = True,
                         **query_kwargs) -> SegmentationOutput:
        with torch.no_grad():
            logits, score_logits = self.forward_logits(
                clip, expression, provider, instance_init, **query_kwargs)
            scores = torch.sigmoid(score_logits)
        return _select_and_upsample(logits.numpy(), scores.numpy(),
                                    (clip.height, clip.width),
                                    self.backbone.STRIDES[0])
