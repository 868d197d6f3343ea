"""Imbalanced semi-supervised intrusion detection: RI-1DCNN backbone, hybrid
contrastive / weighted cross-entropy loss, uncertainty-gated self-training."""

__version__ = "0.1.0"
