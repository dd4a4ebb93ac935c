import pytest

from _bundles import make_bundle_arrays, write_arrays


@pytest.fixture
def tiny_bundle(tmp_path):
    """A small valid bundle on disk; returns (manifest_path, arrays, dims)."""
    dims = dict(n_train=40, n_test=20, c=4, d=6, e=8, n_concepts=12)
    arrays = make_bundle_arrays(**dims, seed=0)
    manifest = write_arrays(tmp_path, arrays, **dims)
    return manifest, arrays, dims
