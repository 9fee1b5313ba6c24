"""Training: per-pixel BCE + Dice on matched queries, score BCE, one-to-one
query/target matching, AdamW with gradient accumulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from torch.nn import functional as F

from .data import DatasetManifest, VideoClip
from .model import RvosModel
from .sampling import SamplingPlan, derive_seed, sample_frames


class NumericsError(RuntimeError):
    """Non-finite loss; training must halt with diagnostics."""


@dataclass
class TrainSample:
    clip: VideoClip
    expression: str
    targets: np.ndarray  # K×T×H×W ground-truth masks, one per target object


def dice_loss(prob: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Soft Dice with +1 smoothing; exactly 0 when prob == target."""
    inter = (prob * target).sum()
    total = prob.sum() + target.sum()
    return 1 - (2 * inter + 1) / (total + 1)


def downsample_targets(targets: np.ndarray, stride: int, dtype=torch.float64):
    """Block-mean soft targets over the mask head's stride-s cells."""
    t = torch.as_tensor(np.ascontiguousarray(targets), dtype=dtype)
    squeeze = t.ndim == 3
    if squeeze:
        t = t[None]
    pooled = F.avg_pool2d(t, kernel_size=stride, stride=stride, ceil_mode=True,
                          count_include_pad=False)
    return pooled[0] if squeeze else pooled


def match_queries(mask_logits: torch.Tensor, score_logits: torch.Tensor,
                  targets_small: torch.Tensor) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of queries to targets;
    cost = mask BCE + Dice + score BCE against a positive label."""
    n, k = mask_logits.shape[0], targets_small.shape[0]
    cost = np.zeros((n, k))
    with torch.no_grad():
        prob = torch.sigmoid(mask_logits)
        one = torch.ones(())
        for i in range(n):
            score_cost = F.binary_cross_entropy_with_logits(score_logits[i], one)
            for j in range(k):
                c = F.binary_cross_entropy_with_logits(mask_logits[i], targets_small[j])
                c = c + dice_loss(prob[i], targets_small[j]) + score_cost
                cost[i, j] = c.item()
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def segmentation_loss(mask_logits: torch.Tensor, score_logits: torch.Tensor,
                      targets_small: torch.Tensor) -> torch.Tensor:
    if not (torch.isfinite(mask_logits).all() and torch.isfinite(score_logits).all()):
        raise NumericsError("non-finite mask or score logits")
    pairs = match_queries(mask_logits, score_logits, targets_small)
    mask_terms = []
    score_target = torch.zeros_like(score_logits)
    for n, k in pairs:
        mask_terms.append(
            F.binary_cross_entropy_with_logits(mask_logits[n], targets_small[k])
            + dice_loss(torch.sigmoid(mask_logits[n]), targets_small[k]))
        score_target[n] = 1.0
    loss = torch.stack(mask_terms).mean() if mask_terms else mask_logits.sum() * 0
    loss = loss + F.binary_cross_entropy_with_logits(score_logits, score_target)
    return loss


def training_step(model: RvosModel, sample: TrainSample,
                  optimizer: torch.optim.Optimizer, step_index: int,
                  accum_steps: int = 2, provider=None, instance_init: bool = False,
                  **query_kwargs) -> float:
    """One micro-step; the optimizer advances every accum_steps micro-steps."""
    mask_logits, score_logits = model.forward_logits(
        sample.clip, sample.expression, provider, instance_init, **query_kwargs)
    targets_small = downsample_targets(sample.targets, model.backbone.STRIDES[0],
                                       dtype=mask_logits.dtype)
    try:
        loss = segmentation_loss(mask_logits, score_logits, targets_small)
    except NumericsError as exc:
        raise NumericsError(
            f"{exc} at step {step_index} (video {sample.clip.video_id}, "
            f"expression {sample.expression!r})") from exc
    if not torch.isfinite(loss):
        raise NumericsError(
            f"non-finite loss {loss.item()} at step {step_index} "
            f"(video {sample.clip.video_id}, expression {sample.expression!r})")
    (loss / accum_steps).backward()
    if (step_index + 1) % accum_steps == 0:
        optimizer.step()
        optimizer.zero_grad()
    return float(loss.item())


def run_training(model: RvosModel, manifest: DatasetManifest, *, steps: int,
                 lr: float, weight_decay: float, accum_steps: int,
                 sampling_method: str, num_frames: int, seed: int,
                 provider=None, instance_init: bool = False,
                 expression_ids: list[str] | None = None,
                 **query_kwargs) -> list[dict]:
    """Train on a fixed expression subset; returns one log record per step."""
    pool = [e for e in manifest.expressions
            if expression_ids is None or e.expression_id in expression_ids]
    if not pool:
        raise ValueError("no expressions to train on")
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr,
                                  weight_decay=weight_decay)
    rng = np.random.default_rng(derive_seed(seed, "order"))
    logs = []
    for step in range(steps):
        sample_def = pool[int(rng.integers(len(pool)))]
        plan = SamplingPlan(sampling_method, num_frames,
                            derive_seed(seed, "clip", step, sample_def.video_id))
        indices = sample_frames(manifest.videos[sample_def.video_id].source_length,
                                plan)
        clip = manifest.load_frames(sample_def.video_id, indices)
        targets = manifest.expression_target_masks(sample_def, indices)
        loss = training_step(model, TrainSample(clip, sample_def.expression, targets),
                             optimizer, step, accum_steps, provider, instance_init,
                             **query_kwargs)
        logs.append({"step": step, "loss": loss, "lr": lr})
    return logs
