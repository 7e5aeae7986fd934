"""Checkpoint container: one ``.npz`` holding matrices plus a JSON header."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import FIELDS, ModelParams
from .ratt import MaskSet, TaskEmbeddings
from .vocab import Vocabulary

FORMAT = "rattlab-checkpoint/1"


def save_checkpoint(
    path,
    params: ModelParams,
    vocab: Vocabulary,
    rng_state: dict,
    embeddings: TaskEmbeddings | None = None,
    masks: dict[int, MaskSet] | None = None,
    meta: dict | None = None,
) -> Path:
    arrays = {f"param/{k}": v for k, v in params.items()}
    if embeddings is not None:
        arrays["ratt/A_x"] = embeddings.A_x
        arrays["ratt/A_h"] = embeddings.A_h
    mask_meta = {}
    for t, m in (masks or {}).items():
        arrays[f"mask/{t}/a_x"] = m.a_x
        arrays[f"mask/{t}/a_h"] = m.a_h
        arrays[f"mask/{t}/a_s"] = m.a_s
        mask_meta[str(t)] = m.s
    dims = params.dims
    header = {
        "format": FORMAT,
        "dims": {"d_feat": dims.d_feat, "d_emb": dims.d_emb, "d_hidden": dims.d_hidden, "vocab_size": dims.vocab_size},
        "vocab": vocab.to_json(),
        "rng": rng_state,
        "mask_scales": mask_meta,
        "meta": meta or {},
    }
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> dict:
    with np.load(Path(path)) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        params = ModelParams({k: z[f"param/{k}"] for k in FIELDS})
        emb = None
        if "ratt/A_x" in z.files:
            emb = TaskEmbeddings(z["ratt/A_x"], z["ratt/A_h"])
        masks = {}
        for t, s in header["mask_scales"].items():
            masks[int(t)] = MaskSet(
                z[f"mask/{t}/a_x"], z[f"mask/{t}/a_h"], z[f"mask/{t}/a_s"], int(t), float(s)
            )
    return {
        "params": params,
        "vocab": Vocabulary.from_json(header["vocab"]),
        "rng": header["rng"],
        "embeddings": emb,
        "masks": masks,
        "meta": header["meta"],
        "dims": header["dims"],
    }
