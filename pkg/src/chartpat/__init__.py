"""Rule-based chart pattern labeling and from-scratch sequence/image classifiers."""

__version__ = "0.1.0"
