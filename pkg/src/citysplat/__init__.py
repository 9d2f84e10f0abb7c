"""Hierarchical city-model semantics for frozen Gaussian scenes."""

__version__ = "0.1.0"

# Bumped whenever an on-disk artifact layout changes; stages refuse mismatches.
ARTIFACT_VERSION = 1
