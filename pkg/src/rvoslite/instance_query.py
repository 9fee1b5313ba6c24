"""Instance-mask providers and the sequential fold that turns instance masks
into the video-wise query.

Each provided mask track is encoded by the visual backbone, projected and
spatially pooled into a T×C instance feature, and folded into the learned
initial query by repeated application of one shared attention block, most
confident instance first. With no instances (or the feature disabled) the
learned initial query passes through unchanged, which is exactly the
baseline model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .attention import QueryAttentionBlock
from .backbone import ConvBackbone, FeatureProjector
from .data import DatasetManifest, VideoClip
from .rle import decode_mask


class ProviderError(ValueError):
    pass


class AlignmentError(ProviderError):
    """Provided masks do not align with the sampled clip."""


@dataclass
class InstanceMaskSet:
    masks: np.ndarray           # K×T×H×W binary
    instance_ids: list[int]
    scores: list[float]

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.uint8)
        k = self.masks.shape[0] if self.masks.ndim == 4 else 0
        if len(self.instance_ids) != k or len(self.scores) != k:
            raise ValueError("instance_ids/scores must match the number of masks")

    @property
    def num_instances(self) -> int:
        return len(self.instance_ids)


def _empty_set(clip: VideoClip) -> InstanceMaskSet:
    shape = (0, clip.num_frames, clip.height, clip.width)
    return InstanceMaskSet(np.zeros(shape, dtype=np.uint8), [], [])


class OracleInstanceProvider:
    """Ground-truth mask tracks of the clip's video, confidence 1.0."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest

    def provide(self, clip: VideoClip) -> InstanceMaskSet:
        entry = self.manifest.videos[clip.video_id]
        ids = sorted(entry.objects)
        if not ids:
            return _empty_set(clip)
        masks = np.stack([
            self.manifest.load_mask_track(clip.video_id, oid).masks[clip.frame_indices]
            for oid in ids])
        return InstanceMaskSet(masks, ids, [1.0] * len(ids))


class PerturbedInstanceProvider:
    """Oracle masks degraded by seeded dilation/erosion and frame dropout,
    scored by their overlap with the originals."""

    def __init__(self, manifest: DatasetManifest, seed: int = 0,
                 ops: tuple[str, ...] = ("dilate", "erode"),
                 radius: tuple[int, int] = (1, 2), drop_prob: float = 0.0):
        for op in ops:
            if op not in ("dilate", "erode"):
                raise ProviderError(f"unknown perturbation {op!r}")
        self.oracle = OracleInstanceProvider(manifest)
        self.seed = seed
        self.ops = ops
        self.radius = radius
        self.drop_prob = drop_prob

    def provide(self, clip: VideoClip) -> InstanceMaskSet:
        base = self.oracle.provide(clip)
        rng = np.random.default_rng(self.seed)
        masks = base.masks.copy()
        scores = []
        for i in range(base.num_instances):
            for t in range(masks.shape[1]):
                op = str(rng.choice(self.ops))
                r = int(rng.integers(self.radius[0], self.radius[1] + 1))
                m = masks[i, t].astype(bool)
                if op == "dilate":
                    m = ndimage.binary_dilation(m, iterations=r)
                elif m.any():
                    m = ndimage.binary_erosion(m, iterations=r)
                if self.drop_prob and rng.random() < self.drop_prob:
                    m = np.zeros_like(m)
                masks[i, t] = m.astype(np.uint8)
            inter = np.logical_and(masks[i], base.masks[i]).sum()
            union = np.logical_or(masks[i], base.masks[i]).sum()
            scores.append(float(inter / union) if union else 1.0)
        return InstanceMaskSet(masks, list(base.instance_ids), scores)


class FileInstanceProvider:
    """Precomputed full-length mask tracks from disk, e.g. exported from an
    external video instance segmentation model.

    Layout: <root>/<video_id>.json with
      {"instances": [{"id": 1, "score": 0.9, "height": H, "width": W,
                      "rle": [<one string per source frame>]}, ...]}
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def provide(self, clip: VideoClip) -> InstanceMaskSet:
        path = self.root / f"{clip.video_id}.json"
        if not path.exists():
            raise ProviderError(f"instance mask file missing: {path}")
        with open(path) as f:
            payload = json.load(f)
        masks, ids, scores = [], [], []
        for inst in payload.get("instances", []):
            shape = (inst["height"], inst["width"])
            if shape != (clip.height, clip.width):
                raise AlignmentError(
                    f"instance {inst['id']} of {clip.video_id}: mask shape {shape} "
                    f"does not match clip {(clip.height, clip.width)}")
            if max(clip.frame_indices) >= len(inst["rle"]):
                raise AlignmentError(
                    f"instance {inst['id']} of {clip.video_id}: track length "
                    f"{len(inst['rle'])} too short for frame index "
                    f"{max(clip.frame_indices)}")
            track = np.stack([decode_mask(inst["rle"][t], shape)
                              for t in clip.frame_indices])
            masks.append(track)
            ids.append(int(inst["id"]))
            scores.append(float(inst.get("score", 1.0)))
        if not masks:
            return _empty_set(clip)
        return InstanceMaskSet(np.stack(masks), ids, scores)


class EmptyInstanceProvider:
    """Always K=0; makes the instance-initialized model collapse to baseline."""

    def provide(self, clip: VideoClip) -> InstanceMaskSet:
        return _empty_set(clip)


PROVIDERS = ("oracle", "perturbed", "file", "empty")


def make_provider(kind: str, manifest: DatasetManifest | None = None,
                  masks_dir: str | Path | None = None, seed: int = 0):
    if kind == "oracle":
        return OracleInstanceProvider(manifest)
    if kind == "perturbed":
        return PerturbedInstanceProvider(manifest, seed=seed)
    if kind == "file":
        if masks_dir is None:
            raise ProviderError("file provider needs a masks directory")
        return FileInstanceProvider(masks_dir)
    if kind == "empty":
        return EmptyInstanceProvider()
    raise ProviderError(f"unknown provider {kind!r}")


def provide_instance_masks(clip: VideoClip, provider, k_max: int = 8,
                           score_threshold: float = 0.0) -> InstanceMaskSet:
    """Fetch, filter, and order instance masks.

    Masks scoring below the threshold are dropped; the rest are sorted by
    descending score (ties by ascending instance id) and capped at k_max.
    """
    raw = provider.provide(clip)
    if raw.masks.ndim == 4 and raw.masks.shape[1:] != (clip.num_frames, clip.height,
                                                       clip.width):
        raise AlignmentError(
            f"provider masks {raw.masks.shape[1:]} do not align with the clip "
            f"{(clip.num_frames, clip.height, clip.width)}")
    order = sorted(range(raw.num_instances),
                   key=lambda i: (-raw.scores[i], raw.instance_ids[i]))
    keep = [i for i in order if raw.scores[i] >= score_threshold][:k_max]
    if not keep:
        return _empty_set(clip)
    return InstanceMaskSet(raw.masks[keep],
                           [raw.instance_ids[i] for i in keep],
                           [raw.scores[i] for i in keep])


def aggregate_instance_queries(q0: torch.Tensor, instance_features,
                               block: QueryAttentionBlock) -> torch.Tensor:
    """Fold the ordered instance features into the query with one shared block;
    an empty list returns q0 unchanged."""
    q = q0
    for feat in instance_features:
        if feat.ndim != 2 or feat.shape[1] != q0.shape[1]:
            raise ValueError(f"instance feature must be T×{q0.shape[1]}, got "
                             f"{tuple(feat.shape)}")
        q = block(q, feat)
    return q


def build_video_query(clip: VideoClip, provider, backbone: ConvBackbone,
                      projector: FeatureProjector, block: QueryAttentionBlock,
                      q0: torch.Tensor, *, enabled: bool = True, k_max: int = 8,
                      score_threshold: float = 0.0, level: int = -1,
                      multi_level_sum: bool = False,
                      mask_encode_mode: str = "mask") -> torch.Tensor:
    """Full instance-initialization path: masks -> features -> pooled
    instance features -> sequential fold. Disabled (or K=0) returns q0."""
    if not enabled or provider is None:
        return q0
    inst = provide_instance_masks(clip, provider, k_max, score_threshold)
    if inst.num_instances == 0:
        return q0
    feats = []
    for i in range(inst.num_instances):
        if mask_encode_mode == "masked_rgb":
            enc_in = clip.frames * inst.masks[i][..., None]
        else:
            enc_in = inst.masks[i].astype(np.float64)
        ms = backbone(torch.as_tensor(enc_in))
        if multi_level_sum:
            pooled = sum(projector.project_and_pool(ms, j)
                         for j in range(len(ms.levels)))
        else:
            pooled = projector.project_and_pool(ms, level)
        feats.append(pooled)
    return aggregate_instance_queries(q0, feats, block)
