"""Export job description."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

DEFAULT_PROMPT = "a photo of a {}"


@dataclass
class ExportSpec:
    model: str  # e.g. "resnet18"; weights random unless weights_path given
    train_dir: str
    test_dir: str
    concept_list: str  # one concept phrase per line
    out_dir: str
    clip_encoder: str = "stub:64"  # "stub:<dim>" or "transformers:<model-id>"
    prompt_template: str = DEFAULT_PROMPT
    weights_path: str | None = None
    num_classes: int | None = None  # inferred from the train split if None
    image_size: int = 32
    batch_size: int = 64
    device: str = "cpu"

    def __post_init__(self):
        if "{}" not in self.prompt_template:
            raise ValueError("prompt_template needs a {} placeholder")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def from_json(cls, path: str | Path) -> "ExportSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def concepts(self) -> list[str]:
        lines = [ln.strip() for ln in Path(self.concept_list).read_text(encoding="utf-8").splitlines()]
        phrases = [ln for ln in lines if ln]
        if not phrases:
            raise ValueError(f"{self.concept_list}: empty concept list")
        return phrases
