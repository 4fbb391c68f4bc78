"""Gradient-based sampling for class-imbalanced semi-supervised learning.

Class reweighting from a per-class gradient matrix, weight-derived pseudo-label
thresholds, and confidence-aware image resampling, plus a small synthetic
teacher/student harness and a COCO split builder.
"""

__version__ = "0.1.0"
