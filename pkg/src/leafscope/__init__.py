"""Leaf-based tree classification: segmentation, hand-crafted features, feature fusion and a linear SVM."""

__version__ = "0.1.0"
