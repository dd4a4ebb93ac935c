"""Writer for the cafd tensor-file layout and bundle manifest.

Deliberately independent of the cafd package: this side of the boundary
only follows the documented byte layout (magic ``CAFD``, version 1, dtype
code, ndim, reserved zero, little-endian u64 dims, row-major payload).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.int64): 2}


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise ValueError(f"unsupported dtype {arr.dtype}; exports are float32/int64 only")
    if not 1 <= arr.ndim <= 4 or any(d < 1 for d in arr.shape):
        raise ValueError(f"unsupported shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sBBBB", b"CAFD", 1, code, arr.ndim, 0))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))


def write_manifest(
    out_dir: str | Path,
    tensor_files: dict[str, str],
    n_train: int,
    n_test: int,
    num_classes: int,
    latent_dim: int,
    clip_dim: int,
    concept_names_file: str = "concepts.txt",
) -> Path:
    """Emit the manifest; callers write it last so partial exports are
    detectable by its absence."""
    manifest = {
        "n_train": n_train,
        "n_test": n_test,
        "num_classes": num_classes,
        "latent_dim": latent_dim,
        "clip_dim": clip_dim,
        "tensors": dict(sorted(tensor_files.items())),
        "concept_names": concept_names_file,
    }
    path = Path(out_dir) / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
