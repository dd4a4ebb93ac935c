"""``cafd-export --spec spec.json``: run both export passes, then emit the
manifest last so interrupted exports never look complete."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .clip_export import export_clip
from .datasets import ImageFolderDataset
from .mut import export_mut
from .spec import ExportSpec
from .tensor_writer import write_manifest


def run_export(spec: ExportSpec) -> Path:
    files = export_mut(spec)
    clip_files, clip_dim = export_clip(spec)
    files.update(clip_files)

    train_ds = ImageFolderDataset(spec.train_dir, spec.image_size)
    test_ds = ImageFolderDataset(spec.test_dir, spec.image_size, class_names=train_ds.class_names)
    latent_dim = _read_latent_dim(Path(spec.out_dir) / "latent_train.bin")
    return write_manifest(
        spec.out_dir,
        files,
        n_train=len(train_ds),
        n_test=len(test_ds),
        num_classes=spec.num_classes or len(train_ds.class_names),
        latent_dim=latent_dim,
        clip_dim=clip_dim,
    )


def _read_latent_dim(path: Path) -> int:
    import struct

    with open(path, "rb") as fh:
        header = fh.read(8)
        ndim = header[6]
        dims = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
    return int(dims[1])


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="cafd-export", description=__doc__)
    parser.add_argument("--spec", required=True, help="export spec JSON")
    args = parser.parse_args(argv)
    try:
        spec = ExportSpec.from_json(args.spec)
        manifest = run_export(spec)
    except (ValueError, OSError, RuntimeError) as err:
        print(f"cafd-export: error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
