"""Binary tensor files, dataset manifests, and validated bundle loading.

File layout (little-endian): 4 magic bytes ``CAFD``, version byte, dtype
code byte (1 = float32, 2 = int64), ndim byte (1..4), one reserved zero
byte, then ndim unsigned 64-bit dims, then the row-major payload.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CAFD"
VERSION = 1
HEADER_FMT = "<4sBBBB"
HEADER_SIZE = struct.calcsize(HEADER_FMT)  # 8 bytes before the dims

PROB_SUM_TOL = 1e-4
MAX_NDIM = 4

_DTYPE_TO_CODE = {np.dtype(np.float32): 1, np.dtype(np.int64): 2}
_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<i8")}


class TensorFormatError(Exception):
    """A tensor file violates the binary layout."""


class BadMagic(TensorFormatError):
    pass


class VersionMismatch(TensorFormatError):
    pass


class UnsupportedDtype(TensorFormatError):
    pass


class DimensionOverflow(TensorFormatError):
    """ndim outside 1..4, a zero dim, or an implausibly large element count."""


class Truncated(TensorFormatError):
    pass


class BundleError(Exception):
    """A dataset bundle violates a manifest or cross-tensor invariant."""


class MissingTensor(BundleError):
    pass


class ShapeMismatch(BundleError):
    pass


class InvalidProbability(BundleError):
    pass


class PredMismatch(BundleError):
    pass


class InvalidLabel(BundleError):
    pass


def write_tensor(path: str | Path, tensor: np.ndarray) -> None:
    """Write ``tensor`` (float32 or int64, 1..4 dims, no zero dims) to ``path``."""
    arr = np.ascontiguousarray(tensor)
    code = _DTYPE_TO_CODE.get(arr.dtype)
    if code is None:
        raise UnsupportedDtype(f"dtype {arr.dtype} not supported (float32/int64 only)")
    if not 1 <= arr.ndim <= MAX_NDIM:
        raise DimensionOverflow(f"ndim {arr.ndim} outside 1..{MAX_NDIM}")
    if any(d < 1 for d in arr.shape):
        raise DimensionOverflow(f"zero-sized dimension in shape {arr.shape}")
    header = struct.pack(HEADER_FMT, MAGIC, VERSION, code, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    # '<' in the stored dtype guarantees a little-endian payload on any host.
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(payload)


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor file written by :func:`write_tensor`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise Truncated(f"{path}: file shorter than fixed header")
    magic, version, code, ndim, reserved = struct.unpack_from(HEADER_FMT, raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} != {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version} != {VERSION}")
    if code not in _CODE_TO_DTYPE:
        raise UnsupportedDtype(f"{path}: unknown dtype code {code}")
    if not 1 <= ndim <= MAX_NDIM:
        raise DimensionOverflow(f"{path}: ndim {ndim} outside 1..{MAX_NDIM}")
    if reserved != 0:
        raise TensorFormatError(f"{path}: reserved byte {reserved} != 0")
    dims_end = HEADER_SIZE + 8 * ndim
    if len(raw) < dims_end:
        raise Truncated(f"{path}: file ends inside the dims block")
    shape = struct.unpack_from(f"<{ndim}Q", raw, HEADER_SIZE)
    if any(d < 1 for d in shape):
        raise DimensionOverflow(f"{path}: zero-sized dimension in {shape}")
    count = math.prod(shape)
    if count > 2**62:
        raise DimensionOverflow(f"{path}: element count {count} implausible")
    dtype = _CODE_TO_DTYPE[code]
    expected = dims_end + count * dtype.itemsize
    if len(raw) < expected:
        raise Truncated(f"{path}: payload short by {expected - len(raw)} bytes")
    if len(raw) > expected:
        raise TensorFormatError(f"{path}: {len(raw) - expected} trailing bytes")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=dims_end)
    return arr.reshape(shape).astype(dtype.newbyteorder("="), copy=True)


REQUIRED_TENSORS = (
    "probs_train",
    "probs_test",
    "latent_train",
    "latent_test",
    "labels_train",
    "labels_test",
    "pred_train",
    "pred_test",
    "concept_text",
)
# logits are stored redundantly with pred so probability-only baselines can
# run without them; argmax consistency is enforced whenever both exist.
OPTIONAL_TENSORS = ("logits_train", "logits_test", "clip_img_train")


@dataclass(frozen=True)
class DatasetBundle:
    """Immutable, validated collection of per-subject tensors."""

    n_train: int
    n_test: int
    num_classes: int
    latent_dim: int
    clip_dim: int
    probs_train: np.ndarray
    probs_test: np.ndarray
    latent_train: np.ndarray
    latent_test: np.ndarray
    labels_train: np.ndarray
    labels_test: np.ndarray
    pred_train: np.ndarray
    pred_test: np.ndarray
    concept_text: np.ndarray
    concept_names: tuple[str, ...]
    logits_train: np.ndarray | None = None
    logits_test: np.ndarray | None = None
    clip_img_train: np.ndarray | None = None

    def split(self, name: str) -> dict[str, np.ndarray | None]:
        """Return the per-split tensors for ``name`` in {'train', 'test'}."""
        if name not in ("train", "test"):
            raise ValueError(f"unknown split {name!r}")
        return {
            "probs": getattr(self, f"probs_{name}"),
            "logits": getattr(self, f"logits_{name}"),
            "latent": getattr(self, f"latent_{name}"),
            "labels": getattr(self, f"labels_{name}"),
            "pred": getattr(self, f"pred_{name}"),
        }


def _check_shape(name: str, arr: np.ndarray, shape: tuple[int, ...], dtype: np.dtype) -> None:
    if arr.dtype != dtype:
        raise ShapeMismatch(f"{name}: dtype {arr.dtype} != {dtype}")
    if arr.shape != shape:
        raise ShapeMismatch(f"{name}: shape {arr.shape} != {shape}")


def _check_probs(name: str, probs: np.ndarray) -> None:
    if np.any(probs < 0):
        raise InvalidProbability(f"{name}: negative entries")
    sums = probs.astype(np.float64).sum(axis=1)
    bad = np.abs(sums - 1.0) > PROB_SUM_TOL
    if np.any(bad):
        i = int(np.argmax(bad))
        raise InvalidProbability(f"{name}: row {i} sums to {sums[i]:.6f}")


def _check_classes(name: str, arr: np.ndarray, num_classes: int) -> None:
    if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
        raise InvalidLabel(f"{name}: values outside [0, {num_classes})")


def _check_pred(name: str, pred: np.ndarray, logits: np.ndarray) -> None:
    # np.argmax returns the lowest index on ties, matching the stored contract.
    expect = np.argmax(logits, axis=1)
    bad = pred != expect
    if np.any(bad):
        i = int(np.argmax(bad))
        raise PredMismatch(f"{name}: row {i} pred {pred[i]} != argmax {expect[i]}")


def load_bundle(manifest_path: str | Path) -> DatasetBundle:
    """Load and fully validate the bundle described by a JSON manifest.

    Any violated invariant raises a :class:`BundleError` subclass; a bundle
    is returned only when every cross-tensor check passes.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("n_train", "n_test", "num_classes", "latent_dim", "clip_dim", "tensors", "concept_names"):
        if key not in manifest:
            raise BundleError(f"manifest missing key {key!r}")
    root = manifest_path.parent
    paths = manifest["tensors"]

    def read(name: str, required: bool) -> np.ndarray | None:
        rel = paths.get(name)
        if rel is None:
            if required:
                raise MissingTensor(f"manifest lists no tensor {name!r}")
            return None
        p = root / rel
        if not p.exists():
            raise MissingTensor(f"{name}: {p} does not exist")
        return read_tensor(p)

    tensors = {name: read(name, True) for name in REQUIRED_TENSORS}
    tensors.update({name: read(name, False) for name in OPTIONAL_TENSORS})

    n_train = int(manifest["n_train"])
    n_test = int(manifest["n_test"])
    c = int(manifest["num_classes"])
    d = int(manifest["latent_dim"])
    e = int(manifest["clip_dim"])

    f32, i64 = np.dtype(np.float32), np.dtype(np.int64)
    per_split = {
        "probs": ((n_train, c), (n_test, c), f32),
        "latent": ((n_train, d), (n_test, d), f32),
        "labels": ((n_train,), (n_test,), i64),
        "pred": ((n_train,), (n_test,), i64),
        "logits": ((n_train, c), (n_test, c), f32),
    }
    for base, (tr_shape, te_shape, dtype) in per_split.items():
        for split, shape in (("train", tr_shape), ("test", te_shape)):
            arr = tensors.get(f"{base}_{split}")
            if arr is not None:
                _check_shape(f"{base}_{split}", arr, shape, dtype)
    concept_text = tensors["concept_text"]
    if concept_text.ndim != 2 or concept_text.shape[1] != e:
        raise ShapeMismatch(f"concept_text: shape {concept_text.shape} incompatible with clip_dim {e}")
    _check_shape("concept_text", concept_text, concept_text.shape, f32)
    if tensors["clip_img_train"] is not None:
        _check_shape("clip_img_train", tensors["clip_img_train"], (n_train, e), f32)

    names_path = root / manifest["concept_names"]
    if not names_path.exists():
        raise MissingTensor(f"concept_names: {names_path} does not exist")
    names = tuple(names_path.read_text(encoding="utf-8").splitlines())
    if len(names) != concept_text.shape[0]:
        raise ShapeMismatch(
            f"concept_names: {len(names)} names for {concept_text.shape[0]} concept embeddings"
        )

    for split in ("train", "test"):
        _check_probs(f"probs_{split}", tensors[f"probs_{split}"])
        _check_classes(f"labels_{split}", tensors[f"labels_{split}"], c)
        _check_classes(f"pred_{split}", tensors[f"pred_{split}"], c)
        logits = tensors[f"logits_{split}"]
        if logits is not None:
            _check_pred(f"pred_{split}", tensors[f"pred_{split}"], logits)

    for arr in tensors.values():
        if arr is not None:
            arr.setflags(write=False)

    return DatasetBundle(
        n_train=n_train,
        n_test=n_test,
        num_classes=c,
        latent_dim=d,
        clip_dim=e,
        concept_names=names,
        **tensors,
    )


def write_bundle(
    out_dir: str | Path,
    tensors: dict[str, np.ndarray],
    concept_names: list[str] | tuple[str, ...],
    n_train: int,
    n_test: int,
    num_classes: int,
    latent_dim: int,
    clip_dim: int,
) -> Path:
    """Write tensors plus concept names and a manifest; returns manifest path.

    The manifest is emitted last so a partial write is detectable.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tensor_map = {}
    for name in sorted(tensors):
        rel = f"{name}.bin"
        write_tensor(out_dir / rel, tensors[name])
        tensor_map[name] = rel
    (out_dir / "concepts.txt").write_text("\n".join(concept_names) + "\n" if concept_names else "", encoding="utf-8")
    manifest = {
        "n_train": n_train,
        "n_test": n_test,
        "num_classes": num_classes,
        "latent_dim": latent_dim,
        "clip_dim": clip_dim,
        "tensors": tensor_map,
        "concept_names": "concepts.txt",
    }
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path
