"""Long-tailed Gaussian-mixture benchmark data.

Class means sit on the vertices of a scaled simplex (``separation * e_i``),
class sizes decay geometrically from head to tail, and a seeded random
rotation mixes the informative axes with nuisance ones so no single input
column identifies a class.
"""

from __future__ import annotations

import numpy as np

from sfids.data import Dataset


def long_tail_counts(n_samples: int, num_classes: int, imbalance_ratio: float) -> np.ndarray:
    """Geometric class sizes with head/tail = imbalance_ratio, summing to n_samples."""
    if num_classes < 2:
        raise ValueError("need at least two classes")
    decay = imbalance_ratio ** (-np.arange(num_classes) / (num_classes - 1))
    raw = decay / decay.sum() * n_samples
    counts = np.floor(raw).astype(np.int64)
    # largest remainder keeps the total exact
    short = n_samples - counts.sum()
    counts[np.argsort(-(raw - counts), kind="stable")[:short]] += 1
    return counts


def make_long_tail(
    n_samples: int = 10_000,
    num_classes: int = 8,
    imbalance_ratio: float = 50.0,
    dim: int = 16,
    separation: float = 3.0,
    noise: float = 1.0,
    rotate: bool = True,
    seed: int = 0,
) -> Dataset:
    if dim < num_classes:
        raise ValueError("dim must be >= num_classes to place classes on simplex vertices")
    rng = np.random.default_rng(seed)
    counts = long_tail_counts(n_samples, num_classes, imbalance_ratio)
    labels = np.repeat(np.arange(num_classes), counts)
    means = np.zeros((num_classes, dim))
    means[:, :num_classes] = separation * np.eye(num_classes)
    x = means[labels] + noise * rng.standard_normal((n_samples, dim))
    if rotate:
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        x = x @ (q * np.sign(np.diag(r)))
    order = rng.permutation(n_samples)
    names = tuple(f"class_{i}" for i in range(num_classes))
    return Dataset(x[order], labels[order], names)
