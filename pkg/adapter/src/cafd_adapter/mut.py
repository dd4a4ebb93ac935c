"""Run the model under test and export logits, probabilities, penultimate
embeddings, predictions, and labels for both splits."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torchvision.models

from .datasets import ImageFolderDataset
from .spec import ExportSpec
from .tensor_writer import write_tensor

_RESNETS = {
    "resnet18": torchvision.models.resnet18,
    "resnet34": torchvision.models.resnet34,
    "resnet50": torchvision.models.resnet50,
    "resnet101": torchvision.models.resnet101,
    "resnet152": torchvision.models.resnet152,
}


def build_model(name: str, num_classes: int, weights_path: str | None, device: str) -> torch.nn.Module:
    if name not in _RESNETS:
        raise ValueError(f"unknown model {name!r}; expected one of {sorted(_RESNETS)}")
    torch.manual_seed(0)  # fixed init when no weights are supplied
    model = _RESNETS[name](weights=None, num_classes=num_classes)
    if weights_path:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.to(device)
    model.eval()
    return model


def _forward_split(model, dataset: ImageFolderDataset, spec: ExportSpec):
    """Penultimate features via the classifier head split off the backbone."""
    head = model.fc
    trunk = torch.nn.Sequential(*(list(model.children())[:-1]))
    logits_parts, latent_parts = [], []
    with torch.no_grad():
        for batch, _ in dataset.batches(spec.batch_size):
            feats = torch.flatten(trunk(batch.to(spec.device)), 1)
            logits_parts.append(head(feats).cpu().numpy())
            latent_parts.append(feats.cpu().numpy())
    logits = np.concatenate(logits_parts).astype(np.float32)
    latent = np.concatenate(latent_parts).astype(np.float32)
    probs = torch.softmax(torch.from_numpy(logits).double(), dim=1).numpy().astype(np.float32)
    pred = np.argmax(logits, axis=1).astype(np.int64)
    return logits, probs, latent, pred


def export_mut(spec: ExportSpec) -> dict[str, str]:
    """Write the model-side tensors for both splits; returns name -> file."""
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds = ImageFolderDataset(spec.train_dir, spec.image_size)
    test_ds = ImageFolderDataset(spec.test_dir, spec.image_size, class_names=train_ds.class_names)
    num_classes = spec.num_classes or len(train_ds.class_names)
    if num_classes < len(train_ds.class_names):
        raise ValueError(f"num_classes {num_classes} < {len(train_ds.class_names)} class directories")
    model = build_model(spec.model, num_classes, spec.weights_path, spec.device)

    files: dict[str, str] = {}
    for split, dataset in (("train", train_ds), ("test", test_ds)):
        logits, probs, latent, pred = _forward_split(model, dataset, spec)
        arrays = {
            f"logits_{split}": logits,
            f"probs_{split}": probs,
            f"latent_{split}": latent,
            f"pred_{split}": pred,
            f"labels_{split}": dataset.labels(),
        }
        for name, arr in arrays.items():
            rel = f"{name}.bin"
            write_tensor(out / rel, arr)
            files[name] = rel
    return files
