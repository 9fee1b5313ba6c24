"""Point-prompt spatial refinement of predicted masks.

From each predicted frame mask we derive a tight bounding box, 10 positive
points sampled uniformly inside the mask, and 5 negative points sampled
uniformly from the box outside the mask. A pluggable refiner consumes
(frame image, prompts) and returns a replacement mask. The bundled stub
refiner does deterministic color region growing so the pipeline is testable
without any external segmentation model; external segmenters attach through
a file-exchange protocol.
"""

from __future__ import annotations

import dataclasses
import json
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import read_mask_png, write_frame_png, write_mask_png
from .model import SegmentationOutput

POSITIVE_COUNT = 10
NEGATIVE_COUNT = 5


class EmptyMaskError(ValueError):
    """Mask has no foreground pixel; the caller skips refinement for that frame."""


class RefinementError(RuntimeError):
    def __init__(self, frame_index: int, cause: Exception):
        self.frame_index = frame_index
        self.cause = cause
        super().__init__(f"refiner failed on frame {frame_index}: {cause}")


@dataclass(frozen=True)
class BBox:
    row_min: int
    col_min: int
    row_max: int  # inclusive
    col_max: int  # inclusive

    def as_list(self) -> list[int]:
        return [self.row_min, self.col_min, self.row_max, self.col_max]


@dataclass
class PromptPoints:
    positives: list[tuple[int, int]]
    negatives: list[tuple[int, int]]
    bbox: BBox


def bbox_from_mask(mask: np.ndarray) -> BBox:
    """Tight axis-aligned box over all foreground pixels."""
    mask = np.asarray(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskError("cannot compute a bounding box of an empty mask")
    return BBox(int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1]))


def sample_prompt_points(mask: np.ndarray, seed: int) -> PromptPoints:
    """Uniform without-replacement point prompts for one frame mask.

    Positives: min(10, #foreground) mask pixels. Negatives: min(5, #candidates)
    pixels inside the bbox but outside the mask.
    """
    mask = np.asarray(mask).astype(bool)
    box = bbox_from_mask(mask)
    rng = np.random.default_rng(seed)

    fg = np.argwhere(mask)
    k_pos = min(POSITIVE_COUNT, len(fg))
    pos_idx = rng.choice(len(fg), size=k_pos, replace=False)
    positives = [(int(r), int(c)) for r, c in fg[pos_idx]]

    window = np.zeros_like(mask)
    window[box.row_min:box.row_max + 1, box.col_min:box.col_max + 1] = True
    bg = np.argwhere(window & ~mask)
    k_neg = min(NEGATIVE_COUNT, len(bg))
    if k_neg:
        neg_idx = rng.choice(len(bg), size=k_neg, replace=False)
        negatives = [(int(r), int(c)) for r, c in bg[neg_idx]]
    else:
        negatives = []
    return PromptPoints(positives, negatives, box)


BASE_GROW_THRESHOLD = 0.2


def stub_refine(image: np.ndarray, prompts: PromptPoints,
                threshold: float | None = None) -> np.ndarray:
    """Deterministic color region growing, the desk-scale refiner.

    Seeds are the positive points; growth proceeds over 4-connected pixels
    inside the bbox whose Euclidean RGB distance to the mean positive color is
    strictly below the threshold. Pixels 4-adjacent to a negative point are
    barred. Worst case the output is the seeds themselves.

    The default threshold adapts to the prompts: half the maximum pairwise
    distance among positive-point colors (an over-grown input mask puts some
    positives on the background, and the halfway cut separates the two color
    clusters whenever the object holds the majority), floored at
    BASE_GROW_THRESHOLD for single-cluster prompts.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    box = prompts.bbox

    barred = np.zeros((h, w), dtype=bool)
    for r, c in prompts.negatives:
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w:
                barred[rr, cc] = True

    colors = np.array([image[r, c] for r, c in prompts.positives])
    if threshold is None:
        spread = np.sqrt(((colors[:, None] - colors[None]) ** 2).sum(-1)).max()
        threshold = max(BASE_GROW_THRESHOLD, spread / 2)
    mean_color = colors.mean(axis=0)
    dist = np.sqrt(((image - mean_color) ** 2).sum(axis=-1))

    out = np.zeros((h, w), dtype=np.uint8)
    queue = deque()
    for r, c in prompts.positives:  # seeds always belong to the output
        out[r, c] = 1
        queue.append((r, c))
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if not (box.row_min <= rr <= box.row_max and box.col_min <= cc <= box.col_max):
                continue
            if out[rr, cc] or barred[rr, cc]:
                continue
            if dist[rr, cc] < threshold:
                out[rr, cc] = 1
                queue.append((rr, cc))
    return out


class IdentityRefiner:
    """Returns the input mask unchanged."""

    def refine(self, image: np.ndarray, prompts: PromptPoints,
               mask: np.ndarray) -> np.ndarray:
        return mask


class StubRefiner:
    def __init__(self, threshold: float | None = None):
        self.threshold = threshold

    def refine(self, image, prompts, mask):
        return stub_refine(image, prompts, self.threshold)


class ExternalRefiner:
    """File-exchange adapter for an out-of-process segmenter.

    For each frame a fresh request directory is created under `root` holding
    `frame.png` and `prompts.json`; the external process answers by writing
    `refined.png` (0/255) into the same directory. Requests are serialized per
    adapter instance.
    """

    def __init__(self, root: str | Path, timeout: float = 30.0, poll: float = 0.05):
        self.root = Path(root)
        self.timeout = timeout
        self.poll = poll
        self._counter = 0

    def refine(self, image, prompts, mask):
        req_dir = self.root / f"request_{self._counter:06d}"
        self._counter += 1
        req_dir.mkdir(parents=True, exist_ok=True)
        write_frame_png(req_dir / "frame.png", image)
        with open(req_dir / "prompts.json", "w") as f:
            json.dump({
                "positives": [list(p) for p in prompts.positives],
                "negatives": [list(p) for p in prompts.negatives],
                "bbox": prompts.bbox.as_list(),
            }, f, indent=2)

        response = req_dir / "refined.png"
        deadline = time.monotonic() + self.timeout
        while not response.exists():
            if time.monotonic() > deadline:
                raise TimeoutError(f"no refined.png in {req_dir} after {self.timeout}s")
            time.sleep(self.poll)
        refined = read_mask_png(response)
        if refined.shape != np.asarray(mask).shape:
            raise ValueError(f"refined mask shape {refined.shape} does not match "
                             f"frame mask {np.asarray(mask).shape}")
        return refined


def make_refiner(kind: str, *, threshold: float | None = None,
                 exchange_dir: str | Path | None = None,
                 timeout: float = 30.0):
    """Refiner factory for the CLI: none | identity | stub | external."""
    if kind == "none":
        return None
    if kind == "identity":
        return IdentityRefiner()
    if kind == "stub":
        return StubRefiner(threshold)
    if kind == "external":
        if exchange_dir is None:
            raise ValueError("external refiner needs an exchange directory")
        return ExternalRefiner(exchange_dir, timeout=timeout)
    raise ValueError(f"unknown refiner {kind!r}")


def refine_masks(clip_frames: np.ndarray, output: SegmentationOutput, refiner,
                 seed: int, on_error: str = "keep_original") -> SegmentationOutput:
    """Replace each frame's binary mask with the refiner's answer.

    Frames with empty masks pass through unchanged; query scores and logits are
    untouched. Refiner failures follow `on_error`: keep_original or abort.
    """
    if on_error not in ("keep_original", "abort"):
        raise ValueError(f"unknown on_error policy {on_error!r}")
    frames = np.asarray(clip_frames)
    masks = np.array(output.binary_masks, copy=True)
    for t in range(masks.shape[0]):
        if not masks[t].any():
            continue
        prompts = sample_prompt_points(masks[t], seed=seed + t)
        try:
            masks[t] = np.asarray(refiner.refine(frames[t], prompts, masks[t]),
                                  dtype=np.uint8)
        except Exception as exc:
            err = RefinementError(t, exc)
            if on_error == "abort":
                raise err from exc
            continue
    return dataclasses.replace(output, binary_masks=masks)
