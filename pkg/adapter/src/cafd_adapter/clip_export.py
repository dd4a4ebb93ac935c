"""Export shared-space image embeddings (training split) and concept-text
embeddings for every knowledge-base phrase."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .datasets import ImageFolderDataset
from .encoders import build_encoder
from .spec import ExportSpec
from .tensor_writer import write_tensor


def export_clip(spec: ExportSpec) -> tuple[dict[str, str], int]:
    """Write clip_img_train, concept_text, and the concept-name list.

    Returns (tensor name -> file, embedding dimension).
    """
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    encoder = build_encoder(spec.clip_encoder)
    dataset = ImageFolderDataset(spec.train_dir, spec.image_size)

    parts = [encoder.encode_images(batch) for batch, _ in dataset.batches(spec.batch_size)]
    clip_img = np.concatenate(parts).astype(np.float32)

    phrases = spec.concepts()
    prompts = [spec.prompt_template.format(p) for p in phrases]
    concept_text = encoder.encode_texts(prompts).astype(np.float32)

    write_tensor(out / "clip_img_train.bin", clip_img)
    write_tensor(out / "concept_text.bin", concept_text)
    (out / "concepts.txt").write_text("\n".join(phrases) + "\n", encoding="utf-8")
    files = {"clip_img_train": "clip_img_train.bin", "concept_text": "concept_text.bin"}
    return files, clip_img.shape[1]
