"""Synthetic moving-shapes dataset generator with exact ground-truth masks.

Each video is a uniform background plus 1..max_objects colored shapes, each
following one motion (translate left/right/up/down, stationary, circular
path). Expressions are template strings over color, shape, and motion;
videos where several objects share a motion also yield one multi-target
expression. Everything is deterministic given (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import mask_to_rle_track, save_manifest, write_frame_png, write_mask_png

TRANSLATE_DIRS = {"left": (0, -1), "right": (0, 1), "up": (-1, 0), "down": (1, 0)}

COLORS = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.80, 0.15),
    "blue": (0.15, 0.20, 0.85),
    "yellow": (0.90, 0.85, 0.10),
    "purple": (0.60, 0.15, 0.80),
    "cyan": (0.10, 0.80, 0.80),
    "orange": (0.90, 0.50, 0.10),
}

BACKGROUND = (0.05, 0.05, 0.08)

# Grid-aligned base sizes (multiples of the finest feature stride) so
# rectilinear shapes can be represented exactly by a stride-4 mask head.
SHAPE_SIZES = {
    "square": (8, 8),
    "rectangle": (8, 12),
    "circle": (9, 9),    # radius 4
    "triangle": (8, 9),  # height x base
}


class GenerationError(ValueError):
    """Canvas cannot accommodate the requested shapes/motions."""


@dataclass
class GeneratorConfig:
    n_videos: int = 2
    frames_per_video: int = 10
    height: int = 32
    width: int = 32
    min_objects: int = 1
    max_objects: int = 2
    shapes: tuple[str, ...] = ("square", "rectangle", "circle", "triangle")
    motions: tuple[str, ...] = ("left", "right", "up", "down", "still", "circle")
    speed: int = 4
    orbit_radius: int = 4
    shape_scale: int = 1
    force_shared_motion: bool = True
    masks_as: str = "rle"  # "rle" | "png"
    split: str = "train"

    def validate(self):
        if self.n_videos < 1:
            raise GenerationError("n_videos must be >= 1")
        if self.frames_per_video < 2:
            raise GenerationError("frames_per_video must be >= 2")
        if self.height < 1 or self.width < 1:
            raise GenerationError("canvas dimensions must be positive")
        if not self.shapes or not self.motions:
            raise GenerationError("shape and motion vocabularies must be non-empty")
        for s in self.shapes:
            if s not in SHAPE_SIZES:
                raise GenerationError(f"unknown shape {s!r}")
        for m in self.motions:
            if m != "still" and m != "circle" and m not in TRANSLATE_DIRS:
                raise GenerationError(f"unknown motion {m!r}")
        if self.masks_as not in ("rle", "png"):
            raise GenerationError("masks_as must be 'rle' or 'png'")


@dataclass
class _SceneObject:
    object_id: int
    shape: str
    color: str
    motion: str
    positions: list[tuple[int, int]]  # top-left (row, col) per frame
    stamp: np.ndarray = field(repr=False)  # h×w binary shape template

    def mask_at(self, t: int, H: int, W: int) -> np.ndarray:
        mask = np.zeros((H, W), dtype=np.uint8)
        r, c = self.positions[t]
        h, w = self.stamp.shape
        mask[r:r + h, c:c + w] = self.stamp
        return mask


def _shape_stamp(shape: str) -> np.ndarray:
    h, w = SHAPE_SIZES[shape]
    if shape in ("square", "rectangle"):
        return np.ones((h, w), dtype=np.uint8)
    if shape == "circle":
        radius = (h - 1) / 2
        yy, xx = np.mgrid[0:h, 0:w]
        return (((yy - radius) ** 2 + (xx - radius) ** 2) <= radius ** 2).astype(np.uint8)
    if shape == "triangle":
        stamp = np.zeros((h, w), dtype=np.uint8)
        cx = (w - 1) / 2
        for i in range(h):
            half = (i / (h - 1)) * (w - 1) / 2
            lo = int(np.ceil(cx - half))
            hi = int(np.floor(cx + half))
            stamp[i, lo:hi + 1] = 1
        return stamp
    raise GenerationError(f"unknown shape {shape!r}")


def _anchor_grid(limit_r: int, limit_c: int, aligned: bool) -> list[tuple[int, int]]:
    step = 4 if aligned else 1  # 4-grid keeps rectilinear shapes on feature cells
    return [(r, c) for r in range(0, limit_r + 1, step)
            for c in range(0, limit_c + 1, step)]


def _candidate_trajectories(motion: str, shape: str, shape_hw: tuple[int, int],
                            cfg: GeneratorConfig) -> list[list[list[tuple[int, int]]]]:
    """Feasible position sequences as ordered preference groups: the placer
    exhausts one group before falling back to the next (translate motions
    prefer the fastest velocity, which keeps aligned shapes on the 4-grid)."""
    T = cfg.frames_per_video
    h, w = shape_hw
    free_r, free_c = cfg.height - h, cfg.width - w
    if free_r < 0 or free_c < 0:
        raise GenerationError(
            f"canvas {cfg.height}x{cfg.width} too small to place a {h}x{w} shape")
    aligned = shape in ("square", "rectangle")

    if motion == "still":
        return [[[(r, c)] * T for r, c in _anchor_grid(free_r, free_c, aligned)]]

    if motion in TRANSLATE_DIRS:
        dr, dc = TRANSLATE_DIRS[motion]
        free = free_r if dr else free_c
        v_max = min(cfg.speed, free // (T - 1)) if T > 1 else cfg.speed
        if v_max < 1:
            raise GenerationError(
                f"canvas too small for motion {motion!r}: a {h}x{w} shape cannot "
                f"travel for {T} frames")
        groups = []
        for v in range(v_max, 0, -1):
            travel = v * (T - 1)
            lim_r = free_r - (travel if dr else 0)
            lim_c = free_c - (travel if dc else 0)
            starts = [(r + (travel if dr < 0 else 0), c + (travel if dc < 0 else 0))
                      for r, c in _anchor_grid(lim_r, lim_c, aligned)]
            groups.append([[(r0 + dr * v * t, c0 + dc * v * t) for t in range(T)]
                           for r0, c0 in starts])
        return groups

    if motion == "circle":
        rad = cfg.orbit_radius
        if free_r < 2 * rad or free_c < 2 * rad:
            raise GenerationError(
                f"canvas too small for a circular path of radius {rad}")
        angles = 2 * np.pi * np.arange(T) / T
        offsets = [(int(np.rint(rad * np.sin(a))), int(np.rint(rad * np.cos(a))))
                   for a in angles]
        anchors = [(r + rad, c + rad)
                   for r, c in _anchor_grid(free_r - 2 * rad, free_c - 2 * rad, False)]
        return [[[(ar + orr, ac + oc) for orr, oc in offsets] for ar, ac in anchors]]

    raise GenerationError(f"unknown motion {motion!r}")


def _occupied(obj: _SceneObject, H: int, W: int) -> np.ndarray:
    occ = np.zeros((H, W), dtype=bool)
    for t in range(len(obj.positions)):
        occ |= obj.mask_at(t, H, W).astype(bool)
    return occ


def _motion_phrase(motion: str, plural: bool) -> str:
    if motion == "still":
        return "that stay still" if plural else "staying still"
    if motion == "circle":
        return "moving in circles" if plural else "moving in a circle"
    return f"moving {motion}"


def _build_video(cfg: GeneratorConfig, rng: np.random.Generator,
                 force_share: bool) -> list[_SceneObject]:
    n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    if n_obj > len(COLORS):
        raise GenerationError(f"at most {len(COLORS)} objects per video (distinct colors)")

    # some motion combinations cannot coexist (e.g. two perpendicular
    # full-canvas sweeps), so re-draw the scene when placement fails
    last_error = None
    for _ in range(50):
        colors = list(rng.choice(sorted(COLORS), size=n_obj, replace=False))
        motions = [str(rng.choice(cfg.motions)) for _ in range(n_obj)]
        if force_share and n_obj >= 2:
            motions[1] = motions[0]
        shapes = [str(rng.choice(cfg.shapes)) for _ in range(n_obj)]
        try:
            return _place_scene(cfg, rng, n_obj, colors, motions, shapes)
        except GenerationError as exc:
            last_error = exc
    raise GenerationError(
        f"canvas too small to place {n_obj} non-overlapping shapes "
        f"(last attempt: {last_error})")


def _place_scene(cfg, rng, n_obj, colors, motions, shapes) -> list[_SceneObject]:
    objects: list[_SceneObject] = []
    taken = np.zeros((cfg.height, cfg.width), dtype=bool)
    for k in range(n_obj):
        stamp = _shape_stamp(shapes[k])
        groups = _candidate_trajectories(motions[k], shapes[k], stamp.shape, cfg)
        placed = None
        # trajectories of distinct objects must never overlap in any frame
        for group in groups:
            for ci in rng.permutation(len(group)):
                candidate = _SceneObject(k + 1, shapes[k], colors[k], motions[k],
                                         group[int(ci)], stamp)
                occ = _occupied(candidate, cfg.height, cfg.width)
                if not (occ & taken).any():
                    placed = candidate
                    taken |= occ
                    break
            if placed is not None:
                break
        if placed is None:
            raise GenerationError(
                f"no non-overlapping placement for object {k + 1} "
                f"({shapes[k]}, {motions[k]})")
        objects.append(placed)
    return objects


def _render_frame(objects: list[_SceneObject], t: int, H: int, W: int) -> np.ndarray:
    frame = np.empty((H, W, 3), dtype=np.float64)
    frame[:] = BACKGROUND
    for obj in objects:
        mask = obj.mask_at(t, H, W).astype(bool)
        frame[mask] = COLORS[obj.color]
    return frame


def generate_synthetic_dataset(cfg: GeneratorConfig, seed: int,
                               out_dir: str | Path) -> Path:
    """Generate videos, masks, and expressions under out_dir; returns manifest path."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    H, W, T = cfg.height, cfg.width, cfg.frames_per_video

    videos: dict[str, dict] = {}
    expressions: list[dict] = []
    expr_counter = 0

    def next_expr_id() -> str:
        nonlocal expr_counter
        eid = f"expr_{expr_counter:04d}"
        expr_counter += 1
        return eid

    for v in range(cfg.n_videos):
        video_id = f"video_{v:04d}"
        objects = _build_video(cfg, rng, force_share=cfg.force_shared_motion and v == 0)

        frame_paths = []
        for t in range(T):
            rel = f"frames/{video_id}/{t:05d}.png"
            write_frame_png(out_dir / rel, _render_frame(objects, t, H, W))
            frame_paths.append(rel)

        obj_entries: dict[str, dict] = {}
        for obj in objects:
            track = np.stack([obj.mask_at(t, H, W) for t in range(T)])
            if cfg.masks_as == "rle":
                obj_entries[str(obj.object_id)] = mask_to_rle_track(track)
            else:
                paths = []
                for t in range(T):
                    rel = f"masks/{video_id}/{obj.object_id}/{t:05d}.png"
                    write_mask_png(out_dir / rel, track[t])
                    paths.append(rel)
                obj_entries[str(obj.object_id)] = {"png_paths": paths}

        videos[video_id] = {
            "source_length": T,
            "frame_paths": frame_paths,
            "objects": obj_entries,
        }

        for obj in objects:
            expressions.append({
                "expression_id": next_expr_id(),
                "video_id": video_id,
                "expression": f"the {obj.color} {obj.shape} {_motion_phrase(obj.motion, False)}",
                "target_object_ids": [obj.object_id],
            })
        by_motion: dict[str, list[_SceneObject]] = {}
        for obj in objects:
            by_motion.setdefault(obj.motion, []).append(obj)
        for motion, group in sorted(by_motion.items()):
            if len(group) < 2:
                continue
            shapes = {o.shape for o in group}
            noun = f"{shapes.pop()}s" if len(shapes) == 1 else "objects"
            expressions.append({
                "expression_id": next_expr_id(),
                "video_id": video_id,
                "expression": f"the {noun} {_motion_phrase(motion, True)}",
                "target_object_ids": sorted(o.object_id for o in group),
            })

    return save_manifest(
        {"split": cfg.split, "videos": videos, "expressions": expressions}, out_dir)


def expression_vocabulary() -> list[str]:
    """Closed token vocabulary of every template the generator can emit."""
    tokens = {"the", "a", "that", "stay", "staying", "still", "moving", "in", "circles",
              "objects"}
    tokens.update(COLORS)
    for s in SHAPE_SIZES:
        tokens.update((s, s + "s"))
    tokens.update(TRANSLATE_DIRS)
    tokens.add("circle")
    return sorted(tokens)
