"""Hybrid objective: supervised contrastive loss on the embedding plus a
class- and error-weighted cross-entropy on the classifier, mixed by a
decaying weight beta. Every term returns its value and exact gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

PROB_FLOOR = 1e-12


@dataclass
class LossConfig:
    temperature: float = 0.05
    reset_alpha: float = 0.95
    smoothing_n: float = 1.0
    beta_start: float = 0.9
    beta_min: float = 0.05
    normal_classes: tuple[int, ...] = (0,)
    attack_classes: tuple[int, ...] | None = None  # None: every class not in normal_classes
    reset_mode: str = "boundary"  # "boundary" | "literal"
    use_scl: bool = True
    use_class_weights: bool = True

    def __post_init__(self):
        self.normal_classes = tuple(int(c) for c in self.normal_classes)
        if self.attack_classes is not None:
            self.attack_classes = tuple(int(c) for c in self.attack_classes)
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.reset_alpha <= 1:
            raise ValueError("reset_alpha must lie in (0, 1]")
        if self.smoothing_n <= 0:
            raise ValueError("smoothing_n must be positive")
        if not (0 <= self.beta_min <= 1 and 0 <= self.beta_start <= 1):
            raise ValueError("beta_start and beta_min must lie in [0, 1]")
        if self.reset_mode not in ("boundary", "literal"):
            raise ValueError("reset_mode must be 'boundary' or 'literal'")

    def partition(self, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
        """Boolean masks (is_normal, is_attack) over class indices."""
        normal = np.zeros(num_classes, dtype=bool)
        normal[list(self.normal_classes)] = True
        if self.attack_classes is None:
            attack = ~normal
        else:
            attack = np.zeros(num_classes, dtype=bool)
            attack[list(self.attack_classes)] = True
        if np.any(normal & attack) or not np.all(normal | attack):
            raise ValueError("normal and attack classes must partition all classes")
        return normal, attack


def class_weights(class_counts, n: float = 1.0) -> np.ndarray:
    """Smooth imbalance weights log(N_min + n) / log(N_i + n)."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("class_counts must be a non-empty vector")
    if np.any(counts < 1):
        raise ValueError("every class count must be >= 1")
    if np.any(counts + n <= 1):
        raise ValueError("N_i + n must exceed 1 for the logarithm to be positive")
    return np.log(counts.min() + n) / np.log(counts + n)


def supervised_contrastive(z, labels, temperature: float) -> tuple[float, np.ndarray]:
    """Sum over anchors of the mean negative log-likelihood of each positive.

    The denominator runs over every k != i. Anchors without a positive
    contribute zero.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        raise ValueError("supervised contrastive loss needs at least two samples")
    norms = np.linalg.norm(z, axis=1)
    if np.any(np.abs(norms - 1) > 1e-4):
        raise ValueError("rows of z must be l2-normalized")
    sim = z @ z.T / temperature
    off = ~np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & off
    npos = pos.sum(axis=1)
    has = npos > 0
    if not has.any():
        return 0.0, np.zeros_like(z)
    masked = np.where(off, sim, -np.inf)
    lse = logsumexp(masked, axis=1)
    pos_mean = np.where(has, (sim * pos).sum(axis=1) / np.maximum(npos, 1), 0.0)
    per_anchor = np.where(has, lse - pos_mean, 0.0)
    # dL/dsim: softmax over k != i minus the positive indicator / |P(i)|
    soft = np.exp(masked - lse[:, None])
    gsim = (soft - pos / np.maximum(npos, 1)[:, None]) * has[:, None]
    grad = (gsim + gsim.T) @ z / temperature
    return float(per_anchor.sum()), grad


def reset_weights(pred, true, config: LossConfig, num_classes: int) -> np.ndarray:
    """Per-sample reset weights w_p.

    ``boundary`` mode: alpha when the prediction crosses the normal/attack
    boundary, 1 otherwise. ``literal`` mode: alpha for any error, 0 when
    correct.
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    wrong = pred != true
    alpha = config.reset_alpha
    if config.reset_mode == "literal":
        return np.where(wrong, alpha, 0.0)
    normal, _ = config.partition(num_classes)
    crossed = wrong & (normal[pred] != normal[true])
    return np.where(crossed, alpha, 1.0)


def weighted_ce(probs, true, w, w_p) -> tuple[float, np.ndarray]:
    """Mean over the batch of -w_y * log(w_p * p_y); gradient w.r.t. the logits.

    The product inside the log is floored at ``PROB_FLOOR``; floored samples
    have zero gradient.
    """
    probs = np.asarray(probs, dtype=np.float64)
    true = np.asarray(true)
    k = probs.shape[0]
    rows = np.arange(k)
    wy = np.asarray(w, dtype=np.float64)[true]
    inner = np.asarray(w_p, dtype=np.float64) * probs[rows, true]
    live = inner > PROB_FLOOR
    value = -(wy * np.log(np.maximum(inner, PROB_FLOOR))).sum() / k
    grad = probs.copy()
    grad[rows, true] -= 1.0
    grad *= (wy * live / k)[:, None]
    return float(value), grad


def beta_schedule(epoch: int, total_epochs: int, config: LossConfig) -> float:
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return max(config.beta_min, config.beta_start / (1 + epoch))


@dataclass
class LossBreakdown:
    l_scl: float
    l_wce: float
    l_hy: float
    beta_used: float
    grad_z: np.ndarray = field(repr=False)
    grad_logits: np.ndarray = field(repr=False)


def hybrid(
    z,
    probs,
    labels,
    class_counts,
    epoch: int,
    total_epochs: int,
    config: LossConfig,
    scl_mask=None,
) -> LossBreakdown:
    """(1 - beta) * weighted CE + beta * supervised contrastive.

    ``scl_mask`` optionally restricts which rows take part in the contrastive
    term; the CE term always uses every row.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    m = probs.shape[1]
    beta = beta_schedule(epoch, total_epochs, config) if config.use_scl else 0.0

    if config.use_class_weights:
        w = class_weights(np.maximum(np.asarray(class_counts), 1), config.smoothing_n)
        w_p = reset_weights(probs.argmax(axis=1), labels, config, m)
    else:
        w, w_p = np.ones(m), np.ones(len(labels))
    l_wce, g_logits = weighted_ce(probs, labels, w, w_p)

    z = np.asarray(z, dtype=np.float64)
    g_z = np.zeros_like(z)
    l_scl = 0.0
    if config.use_scl:
        rows = np.arange(len(labels)) if scl_mask is None else np.flatnonzero(scl_mask)
        if rows.size >= 2:
            l_scl, g_sub = supervised_contrastive(z[rows], labels[rows], config.temperature)
            g_z[rows] = g_sub
    return LossBreakdown(
        l_scl=l_scl,
        l_wce=l_wce,
        l_hy=(1 - beta) * l_wce + beta * l_scl,
        beta_used=beta,
        grad_z=beta * g_z,
        grad_logits=(1 - beta) * g_logits,
    )
