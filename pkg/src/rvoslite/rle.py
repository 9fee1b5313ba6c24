"""Run-length codec for binary masks.

Format: row-major scan, space-separated run counts alternating
zero-run / one-run, always starting with a zero-run (possibly 0).
Example: a 2x2 mask with the second row set encodes as "2 2".
"""

from __future__ import annotations

import numpy as np


class RleError(ValueError):
    """Malformed RLE string or non-binary mask."""


def encode_mask(mask: np.ndarray) -> str:
    """Encode a 2D binary mask as an RLE string. Lossless: decode(encode(m)) == m."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise RleError(f"expected a 2D mask, got shape {mask.shape}")
    flat = mask.reshape(-1)
    if not np.isin(flat, (0, 1)).all():
        raise RleError("mask values must be exactly 0 or 1")
    flat = flat.astype(np.uint8)

    counts = []
    if flat.size == 0:
        return ""
    # boundaries between runs
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    if flat[0] == 1:
        counts.append(0)  # leading zero-run of length 0
    for s, e in zip(starts, ends):
        counts.append(int(e - s))
    return " ".join(str(c) for c in counts)


def decode_mask(encoded: str, shape: tuple[int, int]) -> np.ndarray:
    """Decode an RLE string into an H×W uint8 mask of the given shape."""
    h, w = int(shape[0]), int(shape[1])
    if h < 0 or w < 0:
        raise RleError(f"invalid shape {shape}")
    text = encoded.strip()
    if text:
        try:
            counts = [int(tok) for tok in text.split()]
        except ValueError as exc:
            raise RleError(f"non-integer run count in {encoded!r}") from exc
    else:
        counts = []
    if any(c < 0 for c in counts):
        raise RleError("negative run count")
    total = sum(counts)
    if total != h * w:
        raise RleError(f"run counts sum to {total}, expected {h * w} for shape ({h}, {w})")

    flat = np.zeros(h * w, dtype=np.uint8)
    pos = 0
    value = 0
    for c in counts:
        if value:
            flat[pos:pos + c] = 1
        pos += c
        value = 1 - value
    return flat.reshape(h, w)
