import numpy as np
import pytest
from PIL import Image

from cafd_adapter.spec import ExportSpec


def _write_images(root, class_names, per_class, seed, size=24):
    rng = np.random.default_rng(seed)
    for name in class_names:
        cdir = root / name
        cdir.mkdir(parents=True)
        for i in range(per_class):
            arr = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
            Image.fromarray(arr).save(cdir / f"img_{i:03d}.png")


@pytest.fixture(scope="module")
def smoke_spec(tmp_path_factory):
    """10-image train split, 6-image test split, 5 concepts."""
    root = tmp_path_factory.mktemp("export")
    classes = ["bird", "cat"]
    _write_images(root / "train", classes, per_class=5, seed=0)
    _write_images(root / "test", classes, per_class=3, seed=1)
    concepts = root / "concepts.txt"
    concepts.write_text("beak\nwhiskers\nfeathers\nfur\ntail\n", encoding="utf-8")
    return ExportSpec(
        model="resnet18",
        train_dir=str(root / "train"),
        test_dir=str(root / "test"),
        concept_list=str(concepts),
        out_dir=str(root / "out"),
        clip_encoder="stub:32",
        image_size=32,
        batch_size=4,
    )
