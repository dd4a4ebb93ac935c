"""Folder-per-class image datasets, loaded as normalized tensors."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image


class ImageFolderDataset:
    """Images under <root>/<class_name>/*.png|jpg; labels follow the
    alphabetical class order of the training split."""

    EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")

    def __init__(self, root: str | Path, image_size: int, class_names: list[str] | None = None):
        root = Path(root)
        if not root.is_dir():
            raise FileNotFoundError(f"dataset directory {root} does not exist")
        if class_names is None:
            class_names = sorted(p.name for p in root.iterdir() if p.is_dir())
        if not class_names:
            raise ValueError(f"{root}: no class subdirectories")
        self.class_names = class_names
        self.image_size = image_size
        self.samples: list[tuple[Path, int]] = []
        for label, name in enumerate(class_names):
            cdir = root / name
            if not cdir.is_dir():
                raise ValueError(f"{root}: split lacks class directory {name!r}")
            for p in sorted(cdir.iterdir()):
                if p.suffix.lower() in self.EXTENSIONS:
                    self.samples.append((p, label))
        if not self.samples:
            raise ValueError(f"{root}: no images found")

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.samples], dtype=np.int64)

    def batches(self, batch_size: int):
        """Yield (float tensor [b, 3, s, s] in [-1, 1], labels [b])."""
        for start in range(0, len(self.samples), batch_size):
            chunk = self.samples[start : start + batch_size]
            imgs = []
            for path, _ in chunk:
                with Image.open(path) as img:
                    img = img.convert("RGB").resize((self.image_size, self.image_size), Image.BILINEAR)
                    imgs.append(np.asarray(img, dtype=np.float32) / 255.0)
            batch = torch.from_numpy(np.stack(imgs)).permute(0, 3, 1, 2)
            labels = torch.tensor([label for _, label in chunk], dtype=torch.int64)
            yield (batch - 0.5) / 0.5, labels
