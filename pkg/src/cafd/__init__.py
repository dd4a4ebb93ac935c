"""Concept-aware test-input prioritization for deep classifiers."""

__version__ = "0.1.0"
