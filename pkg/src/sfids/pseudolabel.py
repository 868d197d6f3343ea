"""Pseudo-label scoring, uncertainty gating, imbalance capping and
Borderline-SMOTE rebalancing for one self-training round."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.neighbors import NearestNeighbors

from sfids.data import ORIGINAL, PSEUDO, SYNTHETIC, Dataset
from sfids.model import MCPrediction


@dataclass
class FilterConfig:
    kappa: float = 0.05  # max uncertainty (std of the predicted class)
    tau: float = 0.90  # min mean probability of the predicted class
    T: int = 10
    max_imbalance_ratio: float = 20.0
    smote_k: int = 5
    smote_m: int = 10

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.max_imbalance_ratio < 1:
            raise ValueError("max_imbalance_ratio must be >= 1")
        if self.smote_k < 1 or self.smote_m < 1:
            raise ValueError("smote_k and smote_m must be >= 1")


@dataclass
class PseudoLabels:
    """Column-wise pseudo-label records; row i describes one unlabeled sample."""

    sample_index: np.ndarray
    predicted: np.ndarray
    confidence: np.ndarray
    uncertainty: np.ndarray
    kept: np.ndarray

    def __len__(self) -> int:
        return len(self.sample_index)

    def select(self, mask_or_idx) -> "PseudoLabels":
        return PseudoLabels(*(a[mask_or_idx] for a in (
            self.sample_index, self.predicted, self.confidence, self.uncertainty, self.kept)))

    def counts(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.predicted[self.kept], minlength=num_classes)

    @classmethod
    def empty(cls) -> "PseudoLabels":
        z = np.zeros(0)
        return cls(z.astype(np.int64), z.astype(np.int64), z, z, z.astype(bool))


def score(mc: MCPrediction, config: FilterConfig, sample_index=None) -> PseudoLabels:
    """Argmax class, its mean probability and std, and the keep verdict
    ``std <= kappa and prob >= tau`` (both inclusive)."""
    probs = mc.mean_probs
    n = probs.shape[0]
    pred = probs.argmax(axis=1)  # first maximum on ties
    rows = np.arange(n)
    conf = probs[rows, pred]
    unc = mc.std[rows, pred]
    kept = (unc <= config.kappa) & (conf >= config.tau)
    idx = np.arange(n) if sample_index is None else np.asarray(sample_index, dtype=np.int64)
    return PseudoLabels(idx, pred, conf, unc, kept)


def _present_ratio(counts: np.ndarray) -> float:
    nz = counts[counts > 0]
    return 1.0 if nz.size < 2 else nz.max() / nz.min()


def _shaped_targets(counts: np.ndarray, labeled_counts: np.ndarray, max_ratio: float) -> np.ndarray:
    # labeled-set proportions, anchored so the most frequent labeled class
    # gets floor(max_ratio * smallest) and nobody falls below the smallest
    present = counts > 0
    smallest = counts[present].min()
    ceiling = math.floor(max_ratio * smallest)
    share = np.asarray(labeled_counts, dtype=np.float64)
    top = share[present].max()
    if top <= 0:
        share = np.ones_like(share)
        top = 1.0
    desired = np.maximum(np.ceil(share / top * ceiling - 1e-9), smallest)
    return np.where(present, desired, 0).astype(np.int64)


def cap_imbalance(
    pseudo: PseudoLabels, labeled_counts, max_ratio: float, seed: int = 0
) -> PseudoLabels:
    """Downsample kept pseudo-labels so that largest/smallest class count is at
    most ``max_ratio``, shaping classes toward the labeled-set proportions.

    Inputs already within the ratio are returned unchanged (kept rows only).
    """
    if max_ratio < 1:
        raise ValueError("max_ratio must be >= 1")
    kept = pseudo.select(pseudo.kept)
    labeled_counts = np.asarray(labeled_counts)
    m = len(labeled_counts)
    counts = np.bincount(kept.predicted, minlength=m)
    if len(kept) == 0 or _present_ratio(counts) <= max_ratio:
        return kept
    targets = np.minimum(counts, _shaped_targets(counts, labeled_counts, max_ratio))
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(m):
        idx = np.flatnonzero(kept.predicted == c)
        if idx.size:
            chosen.append(np.sort(rng.choice(idx, size=targets[c], replace=False)))
    return kept.select(np.sort(np.concatenate(chosen)))


def synthesis_targets(counts, labeled_counts, max_ratio: float) -> np.ndarray:
    """How many synthetic samples each class needs to approach its
    labeled-proportional share; at most doubles a class, never touches absent
    classes."""
    counts = np.asarray(counts)
    if np.count_nonzero(counts) < 2:
        return np.zeros_like(counts)
    desired = _shaped_targets(counts, labeled_counts, max_ratio)
    desired = np.minimum(desired, counts.max())
    return np.clip(desired - counts, 0, counts)


@dataclass
class SyntheticSamples:
    features: np.ndarray  # (S, d)
    classes: np.ndarray
    parent_a: np.ndarray  # row indices into the SMOTE input matrix
    parent_b: np.ndarray
    gap: np.ndarray

    def __len__(self) -> int:
        return len(self.classes)

    @classmethod
    def empty(cls, dim: int) -> "SyntheticSamples":
        i = np.zeros(0, dtype=np.int64)
        return cls(np.zeros((0, dim)), i, i, i, np.zeros(0))


def danger_set(samples, classes, target_class: int, m: int, knn: NearestNeighbors | None = None):
    """Split a class into (danger, safe, noise) row indices by the number of
    other-class points among each sample's m nearest neighbours."""
    samples = np.asarray(samples, dtype=np.float64)
    classes = np.asarray(classes)
    members = np.flatnonzero(classes == target_class)
    m_eff = min(m, len(samples) - 1)
    if members.size == 0 or m_eff < 1:
        return members[:0], members, members[:0]
    if knn is None:
        knn = NearestNeighbors().fit(samples)
    nbr = knn.kneighbors(samples[members], n_neighbors=m_eff + 1, return_distance=False)
    # drop the query point itself; duplicates may push it off column 0
    other = np.empty(members.size, dtype=np.int64)
    for row, (i, nb) in enumerate(zip(members, nbr)):
        nb = nb[nb != i][:m_eff]
        other[row] = np.count_nonzero(classes[nb] != target_class)
    noise = other == m_eff
    danger = (other * 2 >= m_eff) & ~noise
    return members[danger], members[~danger & ~noise], members[noise]


def borderline_smote(
    samples, classes, n_generate, config: FilterConfig, seed: int = 0
) -> tuple[SyntheticSamples, list[str]]:
    """Borderline-SMOTE1.

    For each class ``c`` with ``n_generate[c] > 0``, synthesize points on the
    segment between a danger sample and one of its ``smote_k`` nearest
    same-class neighbours. Returns the samples and a list of warnings for
    classes that could not be oversampled.
    """
    samples = np.asarray(samples, dtype=np.float64)
    classes = np.asarray(classes, dtype=np.int64)
    n_generate = np.asarray(n_generate, dtype=np.int64)
    rng = np.random.default_rng(seed)
    warnings: list[str] = []
    out_f, out_c, out_a, out_b, out_g = [], [], [], [], []
    todo = [c for c in range(len(n_generate)) if n_generate[c] > 0]
    if not todo:
        return SyntheticSamples.empty(samples.shape[1]), warnings
    knn = NearestNeighbors().fit(samples)
    for c in todo:
        members = np.flatnonzero(classes == c)
        if members.size < 2:
            warnings.append(f"class {c}: {members.size} sample(s), skipped")
            continue
        danger, _, _ = danger_set(samples, classes, c, config.smote_m, knn)
        if danger.size == 0:
            warnings.append(f"class {c}: no borderline samples, nothing generated")
            continue
        k_eff = min(config.smote_k, members.size - 1)
        own = NearestNeighbors().fit(samples[members])
        nbr = own.kneighbors(samples[danger], n_neighbors=k_eff + 1, return_distance=False)
        count = int(n_generate[c])
        pick = rng.integers(danger.size, size=count)
        col = rng.integers(k_eff, size=count)
        gap = rng.random(count)
        a = danger[pick]
        b = np.empty(count, dtype=np.int64)
        for j in range(count):
            row = nbr[pick[j]]
            row = members[row]
            row = row[row != a[j]][:k_eff]
            b[j] = row[col[j] % row.size]
        out_f.append(samples[a] + gap[:, None] * (samples[b] - samples[a]))
        out_c.append(np.full(count, c))
        out_a.append(a)
        out_b.append(b)
        out_g.append(gap)
    if not out_c:
        return SyntheticSamples.empty(samples.shape[1]), warnings
    return SyntheticSamples(
        np.concatenate(out_f), np.concatenate(out_c), np.concatenate(out_a),
        np.concatenate(out_b), np.concatenate(out_g),
    ), warnings


def assemble_round_dataset(
    labeled: Dataset,
    unlabeled: Dataset,
    pseudo: PseudoLabels,
    synthetic: SyntheticSamples | None = None,
) -> Dataset:
    """Labeled rows, then pseudo-labeled rows, then synthetic rows, with a
    provenance code per row (ORIGINAL / PSEUDO / SYNTHETIC)."""
    idx = np.asarray(pseudo.sample_index, dtype=np.int64)
    if np.unique(idx).size != idx.size:
        raise ValueError("duplicate sample index in pseudo-labels")
    if idx.size and (idx.min() < 0 or idx.max() >= len(unlabeled)):
        raise IndexError("pseudo-label sample index outside the unlabeled set")
    m = labeled.num_classes
    if pseudo.predicted.size and (pseudo.predicted.min() < 0 or pseudo.predicted.max() >= m):
        raise ValueError("pseudo-label class absent from the labeled class list")
    syn = synthetic if synthetic is not None else SyntheticSamples.empty(labeled.dim)
    if len(syn) and (syn.classes.min() < 0 or syn.classes.max() >= m):
        raise ValueError("synthetic class absent from the labeled class list")
    feats = np.vstack([labeled.features, unlabeled.features[idx], syn.features.reshape(-1, labeled.dim)])
    labels = np.concatenate([labeled.labels, pseudo.predicted, syn.classes])
    prov = np.concatenate([
        np.full(len(labeled), ORIGINAL), np.full(idx.size, PSEUDO), np.full(len(syn), SYNTHETIC)
    ])
    source = np.concatenate([np.arange(len(labeled)), idx, np.full(len(syn), -1)])
    return Dataset(feats, labels, labeled.class_names, provenance=prov, source_index=source)


def write_audit(path, pseudo: PseudoLabels, hidden_labels=None) -> None:
    """CSV: sample_index, predicted, confidence, uncertainty, kept, hidden_true_label."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "predicted", "confidence", "uncertainty", "kept", "hidden_true_label"])
        for i in range(len(pseudo)):
            s = int(pseudo.sample_index[i])
            true = "" if hidden_labels is None else int(hidden_labels[s])
            w.writerow([s, int(pseudo.predicted[i]), f"{pseudo.confidence[i]:.6f}",
                        f"{pseudo.uncertainty[i]:.6f}", int(pseudo.kept[i]), true])
