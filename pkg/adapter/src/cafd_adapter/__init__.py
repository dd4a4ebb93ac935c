"""Tensor-export adapter: runs a classifier and a shared-embedding encoder
over image datasets and emits the cafd bundle layout."""

__version__ = "0.1.0"
