"""Checkpoint IO: a flat key->array npz archive.

Keys are the model's state-dict names (namespaces backbone.*, text.*, proj.*,
mta.*, dec.*, mti.*, head.*, q0, block.*) plus reserved `_meta.*` entries
recording model dimensions and the text vocabulary.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .backbone import ModelDims
from .model import RvosModel


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: RvosModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    d = model.dims
    arrays["_meta.dims"] = np.array(
        [d.channels, d.heads, d.num_queries, d.dec_layers, d.block_self_layers,
         d.ffn_mult], dtype=np.int64)
    arrays["_meta.level_channels"] = np.array(d.level_channels, dtype=np.int64)
    arrays["_meta.vocab"] = np.array(model.text.vocab)
    np.savez(path, **arrays)
    return path


def load_checkpoint(path: str | Path) -> RvosModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint file missing: {path}")
    data = np.load(path, allow_pickle=False)
    if "_meta.dims" not in data:
        raise CheckpointError(f"not a model checkpoint (no _meta.dims): {path}")
    c, heads, n, dec_layers, self_layers, ffn_mult = (int(x) for x in data["_meta.dims"])
    dims = ModelDims(channels=c, heads=heads, num_queries=n,
                     level_channels=tuple(int(x) for x in data["_meta.level_channels"]),
                     dec_layers=dec_layers, block_self_layers=self_layers,
                     ffn_mult=ffn_mult)
    model = RvosModel(dims, vocab=[str(w) for w in data["_meta.vocab"]])
    state = {k: torch.as_tensor(data[k]) for k in data.files
             if not k.startswith("_meta.")}
    model.load_state_dict(state)
    return model
