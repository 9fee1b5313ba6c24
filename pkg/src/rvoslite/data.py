"""Dataset manifests, mask/frame file IO, and clip loading.

On-disk layout: one ``manifest.json`` per dataset with top-level keys
``videos``, ``expressions``, ``split``. Frames are PNG files; per-object
mask tracks are stored either as per-frame PNG files (0/255) or as inline
RLE strings. All paths inside the manifest are relative to its directory.

Schema::

    {
      "split": "train",
      "videos": {
        "<video_id>": {
          "source_length": 12,
          "frame_paths": ["frames/<video_id>/00000.png", ...],
          "objects": {
            "<object_id>": {"rle": ["...", ...], "height": 32, "width": 32}
                        or {"png_paths": ["masks/...png", ...]}
          }
        }
      },
      "expressions": [
        {"expression_id": "e0000", "video_id": "...",
         "expression": "the red square moving left",
         "target_object_ids": [1]}
      ]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .rle import RleError, decode_mask, encode_mask

SPLITS = ("train", "valid", "test")


class ManifestError(ValueError):
    """Base class for manifest problems."""


class ManifestLoadError(ManifestError):
    """Missing or unreadable manifest/asset file."""


class ManifestSchemaError(ManifestError):
    """Manifest JSON violates the documented schema."""


class ReferentialIntegrityError(ManifestError):
    """Expression or object reference does not resolve."""


@dataclass
class VideoClip:
    """T sampled frames of one video, pixel values in [0, 1]."""

    frames: np.ndarray  # T×H×W×3 float64
    frame_indices: list[int]  # positions in the source video, strictly increasing
    video_id: str

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"frames must be T×H×W×3, got {self.frames.shape}")
        if self.frames.shape[0] != len(self.frame_indices):
            raise ValueError("frame_indices length must match T")
        if self.frames.size and (self.frames.min() < 0 or self.frames.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass
class MaskTrack:
    """Binary mask track of one object over source frames."""

    masks: np.ndarray  # T_total×H×W uint8 in {0, 1}
    object_id: int

    def __post_init__(self):
        self.masks = np.asarray(self.masks)
        if self.masks.ndim != 3:
            raise ValueError(f"masks must be T×H×W, got {self.masks.shape}")
        if not np.isin(self.masks, (0, 1)).all():
            raise ValueError("mask values must be exactly 0 or 1")
        self.masks = self.masks.astype(np.uint8)


@dataclass
class ExpressionSample:
    video_id: str
    expression: str
    target_object_ids: list[int]
    expression_id: str


@dataclass
class VideoEntry:
    source_length: int
    frame_paths: list[str]
    objects: dict[int, dict]  # object_id -> mask-track reference (raw manifest entry)


@dataclass
class DatasetManifest:
    videos: dict[str, VideoEntry]
    expressions: list[ExpressionSample]
    split: str
    root: Path = field(default_factory=Path)
    _frame_cache: dict = field(default_factory=dict, repr=False, compare=False)
    _track_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def load_frames(self, video_id: str, frame_indices: list[int]) -> VideoClip:
        """Read the requested source frames into a VideoClip (cached)."""
        entry = self.videos[video_id]
        frames = []
        for idx in frame_indices:
            if not 0 <= idx < entry.source_length:
                raise IndexError(f"frame index {idx} out of range for video {video_id}")
            key = (video_id, idx)
            if key not in self._frame_cache:
                self._frame_cache[key] = read_frame_png(self.root / entry.frame_paths[idx])
            frames.append(self._frame_cache[key])
        return VideoClip(np.stack(frames), list(frame_indices), video_id)

    def load_mask_track(self, video_id: str, object_id: int) -> MaskTrack:
        """Read the full mask track of one object (cached)."""
        key = (video_id, object_id)
        if key not in self._track_cache:
            entry = self.videos[video_id]
            ref = entry.objects[object_id]
            if "rle" in ref:
                shape = (ref["height"], ref["width"])
                masks = np.stack([decode_mask(r, shape) for r in ref["rle"]])
            else:
                masks = np.stack([read_mask_png(self.root / p) for p in ref["png_paths"]])
            self._track_cache[key] = masks
        return MaskTrack(self._track_cache[key].copy(), object_id)

    def expression_target_masks(self, sample: ExpressionSample,
                                frame_indices: list[int]) -> np.ndarray:
        """Per-object gt masks of one expression at the given frames: K×T×H×W."""
        tracks = [self.load_mask_track(sample.video_id, oid).masks[frame_indices]
                  for oid in sample.target_object_ids]
        return np.stack(tracks)


def read_frame_png(path: Path) -> np.ndarray:
    """Load an RGB frame PNG as H×W×3 float64 in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise ManifestLoadError(f"frame file missing: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_frame_png(path: Path, frame: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.round(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def read_mask_png(path: Path) -> np.ndarray:
    """Load a 0/255 mask PNG as H×W uint8 in {0, 1}."""
    path = Path(path)
    if not path.exists():
        raise ManifestLoadError(f"mask file missing: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return (arr > 127).astype(np.uint8)


def write_mask_png(path: Path, mask: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path)


def _require(cond: bool, exc: type[ManifestError], msg: str):
    if not cond:
        raise exc(msg)


def load_manifest(path: str | Path, validate_files: bool = True) -> DatasetManifest:
    """Load and fully validate a manifest.json.

    Raises ManifestLoadError for missing files, ManifestSchemaError for schema
    violations, ReferentialIntegrityError for dangling references.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise ManifestLoadError(f"manifest file missing: {path}")
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ManifestSchemaError(f"manifest is not valid JSON: {exc}") from exc
    root = path.parent

    for key in ("videos", "expressions", "split"):
        _require(key in raw, ManifestSchemaError, f"manifest missing top-level key '{key}'")
    _require(raw["split"] in SPLITS, ManifestSchemaError,
             f"split must be one of {SPLITS}, got {raw['split']!r}")
    _require(isinstance(raw["videos"], dict), ManifestSchemaError, "'videos' must be a map")
    _require(isinstance(raw["expressions"], list), ManifestSchemaError,
             "'expressions' must be a list")

    videos: dict[str, VideoEntry] = {}
    checked_files: set[Path] = set()
    for vid, v in raw["videos"].items():
        for key in ("source_length", "frame_paths", "objects"):
            _require(key in v, ManifestSchemaError, f"video '{vid}' missing key '{key}'")
        n = v["source_length"]
        _require(isinstance(n, int) and n >= 1, ManifestSchemaError,
                 f"video '{vid}': source_length must be a positive integer")
        _require(len(v["frame_paths"]) == n, ManifestSchemaError,
                 f"video '{vid}': {len(v['frame_paths'])} frame_paths for source_length {n}")
        objects: dict[int, dict] = {}
        for oid_str, ref in v["objects"].items():
            try:
                oid = int(oid_str)
            except ValueError as exc:
                raise ManifestSchemaError(
                    f"video '{vid}': object id {oid_str!r} is not an integer") from exc
            if "rle" in ref:
                for key in ("height", "width"):
                    _require(key in ref, ManifestSchemaError,
                             f"video '{vid}' object {oid}: RLE track missing '{key}'")
                _require(len(ref["rle"]) == n, ManifestSchemaError,
                         f"video '{vid}' object {oid}: {len(ref['rle'])} RLE frames "
                         f"for source_length {n}")
                if validate_files:
                    shape = (ref["height"], ref["width"])
                    for t, r in enumerate(ref["rle"]):
                        try:
                            decode_mask(r, shape)
                        except RleError as exc:
                            raise ManifestSchemaError(
                                f"video '{vid}' object {oid} frame {t}: {exc}") from exc
            elif "png_paths" in ref:
                _require(len(ref["png_paths"]) == n, ManifestSchemaError,
                         f"video '{vid}' object {oid}: {len(ref['png_paths'])} mask files "
                         f"for source_length {n}")
                if validate_files:
                    for p in ref["png_paths"]:
                        fp = root / p
                        if fp not in checked_files:
                            read_mask_png(fp)
                            checked_files.add(fp)
            else:
                raise ManifestSchemaError(
                    f"video '{vid}' object {oid}: mask track needs 'rle' or 'png_paths'")
            objects[oid] = ref
        if validate_files:
            for p in v["frame_paths"]:
                fp = root / p
                if fp not in checked_files:
                    read_frame_png(fp)
                    checked_files.add(fp)
        videos[vid] = VideoEntry(n, list(v["frame_paths"]), objects)

    expressions: list[ExpressionSample] = []
    for i, e in enumerate(raw["expressions"]):
        for key in ("expression_id", "video_id", "expression", "target_object_ids"):
            _require(key in e, ManifestSchemaError, f"expression #{i} missing key '{key}'")
        _require(e["video_id"] in videos, ReferentialIntegrityError,
                 f"expression '{e['expression_id']}' references unknown video "
                 f"'{e['video_id']}'")
        targets = [int(t) for t in e["target_object_ids"]]
        _require(len(targets) >= 1, ManifestSchemaError,
                 f"expression '{e['expression_id']}' has no target objects")
        for t in targets:
            _require(t in videos[e["video_id"]].objects, ReferentialIntegrityError,
                     f"expression '{e['expression_id']}' references unknown object id {t} "
                     f"of video '{e['video_id']}'")
        expressions.append(ExpressionSample(
            e["video_id"], e["expression"], targets, e["expression_id"]))

    return DatasetManifest(videos, expressions, raw["split"], root)


def save_manifest(manifest_dict: dict, out_dir: str | Path) -> Path:
    """Write a raw manifest dict as <out_dir>/manifest.json (sorted keys, stable bytes)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest_dict, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def mask_to_rle_track(masks: np.ndarray) -> dict:
    """Inline RLE mask-track reference for a T×H×W binary array."""
    masks = np.asarray(masks)
    return {
        "rle": [encode_mask(m) for m in masks],
        "height": int(masks.shape[1]),
        "width": int(masks.shape[2]),
    }
