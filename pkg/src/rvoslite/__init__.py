"""Desk-scale referring video object segmentation.

Instance-mask query initialization, global frame sampling, and point-prompt
mask refinement on top of a miniature multimodal transformer, with a
synthetic moving-shapes dataset, region/contour metrics, and an ablation
harness.
"""

__version__ = "0.1.0"
