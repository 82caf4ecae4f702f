"""Anatomy-aware mesh modeling and classification of organ masses.

Builds a fixed 156-vertex anatomical mesh, deforms it onto segmentation
masks, pools per-vertex features from probability maps and classifies
masses with a small graph residual network. Includes a synthetic data
generator and an evaluation harness.
"""

__version__ = "0.1.0"
