"""Multimodal multi-task meme classification.

Double-tower and single-flow fusion models, staged k-fold training with
external negatives, weighted ensembling and label-hierarchy post-processing.
"""

__version__ = "0.1.0"
