"""Toolkit for fusing frozen multi-source feature embeddings.

Trains a self-attention fusion head and single-source linear probes on
pre-extracted feature vectors and evaluates them with a balanced 5-fold
cross-validation harness (AUC / Cohen's kappa, attention summaries,
parameter counts).
"""

__version__ = "0.1.0"
