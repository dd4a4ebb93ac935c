"""Shared-embedding encoders.

``stub:<dim>`` is a deterministic random-projection encoder for offline
smoke runs and tests. ``transformers:<model-id>`` uses a locally cached
CLIP checkpoint when the transformers stack is available. Both produce
L2-normalized rows.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def _seeded_rng(*parts: str) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(parts).encode()).digest()
    return np.random.default_rng(np.frombuffer(digest, dtype=np.uint64))


def _normalize(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return (mat / np.where(norms > 0, norms, 1.0)).astype(np.float32)


class StubEncoder:
    """Deterministic projection encoder; no network, no weights."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("encoder dim must be >= 1")
        self.dim = dim
        self._projection: np.ndarray | None = None

    def _proj_for(self, n_pixels: int) -> np.ndarray:
        if self._projection is None or self._projection.shape[0] != n_pixels:
            rng = _seeded_rng("stub-image-proj", str(self.dim), str(n_pixels))
            self._projection = rng.standard_normal((n_pixels, self.dim)) / np.sqrt(n_pixels)
        return self._projection

    def encode_images(self, batch: torch.Tensor) -> np.ndarray:
        flat = batch.reshape(batch.shape[0], -1).cpu().numpy().astype(np.float64)
        return _normalize(flat @ self._proj_for(flat.shape[1]))

    def encode_texts(self, phrases: list[str]) -> np.ndarray:
        rows = [_seeded_rng("stub-text", str(self.dim), p).standard_normal(self.dim) for p in phrases]
        return _normalize(np.stack(rows))


class TransformersClipEncoder:
    """CLIP via the transformers library; requires cached weights."""

    def __init__(self, model_id: str):
        try:
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as err:
            raise RuntimeError("transformers is not installed; use a stub:<dim> encoder") from err
        self.model = CLIPModel.from_pretrained(model_id)
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.model.eval()
        self.dim = self.model.config.projection_dim

    def encode_images(self, batch: torch.Tensor) -> np.ndarray:
        # undo the [-1, 1] dataset scaling; the processor renormalizes
        images = [(img.permute(1, 2, 0).numpy() * 0.5 + 0.5) for img in batch]
        inputs = self.processor(images=images, return_tensors="pt")
        with torch.no_grad():
            feats = self.model.get_image_features(**inputs)
        return _normalize(feats.cpu().numpy())

    def encode_texts(self, phrases: list[str]) -> np.ndarray:
        inputs = self.processor(text=phrases, return_tensors="pt", padding=True)
        with torch.no_grad():
            feats = self.model.get_text_features(**inputs)
        return _normalize(feats.cpu().numpy())


def build_encoder(identifier: str):
    kind, _, arg = identifier.partition(":")
    if kind == "stub":
        return StubEncoder(int(arg or "64"))
    if kind == "transformers":
        if not arg:
            raise ValueError("transformers encoder needs a model id, e.g. transformers:openai/clip-vit-base-patch32")
        return TransformersClipEncoder(arg)
    raise ValueError(f"unknown encoder {identifier!r}; expected stub:<dim> or transformers:<model-id>")
