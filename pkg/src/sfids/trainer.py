"""Supervised warm-up and the self-training loop."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from sfids import model as M
from sfids.data import ORIGINAL, UNLABELED, Dataset
from sfids.loss import LossConfig, hybrid
from sfids.metrics import MetricsReport, evaluate
from sfids.pseudolabel import (
    FilterConfig,
    PseudoLabels,
    assemble_round_dataset,
    borderline_smote,
    cap_imbalance,
    score,
    synthesis_targets,
    write_audit,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100  # warm-up
    round_epochs: int = 50
    rounds: int = 3
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    pseudo_in_scl: bool = True
    val_fraction: float = 0.0  # >0: select the best epoch by held-out macro-F1
    loss: LossConfig = field(default_factory=LossConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    model: M.ModelConfig | None = None  # None: defaults sized from the data

    def __post_init__(self):
        if self.epochs < 1 or self.round_epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.model is not None:
            d["model"] = self.model.to_dict()
        d["loss"]["normal_classes"] = list(self.loss.normal_classes)
        if self.loss.attack_classes is not None:
            d["loss"]["attack_classes"] = list(self.loss.attack_classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        loss = LossConfig(**d.pop("loss", {}))
        filt = FilterConfig(**d.pop("filter", {}))
        mdl = d.pop("model", None)
        return cls(loss=loss, filter=filt, model=M.ModelConfig.from_dict(mdl) if mdl else None, **d)


def model_config_for(cfg: TrainConfig, ds: Dataset) -> M.ModelConfig:
    if cfg.model is None:
        return M.ModelConfig(input_dim=ds.dim, num_classes=ds.num_classes, seed=cfg.seed)
    if cfg.model.input_dim != ds.dim or cfg.model.num_classes != ds.num_classes:
        raise ValueError(
            f"model expects d={cfg.model.input_dim}, M={cfg.model.num_classes}; "
            f"data has d={ds.dim}, M={ds.num_classes}"
        )
    return cfg.model


def stratified_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle so every class is spread evenly over the epoch, then cut into
    near-equal batches. Each batch of >= 2 rows shares a class between at
    least two rows whenever some class has >= 2 samples."""
    n = len(labels)
    slot = np.empty(n)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        slot[idx] = (np.arange(idx.size) + rng.random(idx.size)) / idx.size
    order = np.argsort(slot, kind="stable")
    batches = np.array_split(order, max(1, -(-n // batch_size)))
    counts = np.bincount(labels)
    for b in batches:
        if b.size < 2 or np.unique(labels[b]).size < b.size:
            continue
        # no positive pair: swap the last row for a partner of some batch member
        for i in b[:-1]:
            c = labels[i]
            if counts[c] >= 2:
                partners = np.flatnonzero(labels == c)
                b[-1] = partners[partners != i][rng.integers(counts[c] - 1)]
                break
    return batches


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    warnings: list[str] = field(default_factory=list)


def _copy(params: M.ModelParams) -> M.ModelParams:
    return {k: a.copy() for k, a in params.items()}


def _holdout(ds: Dataset, fraction: float, rng: np.random.Generator):
    val = []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        n = int(round(fraction * idx.size))
        if idx.size - n >= 1 and n >= 1:
            val.append(rng.choice(idx, n, replace=False))
    val_idx = np.sort(np.concatenate(val)) if val else np.zeros(0, dtype=np.int64)
    keep = np.setdiff1d(np.arange(len(ds)), val_idx)
    return ds.subset(keep), ds.subset(val_idx)


def train_supervised(
    labeled: Dataset,
    config: TrainConfig,
    params: M.ModelParams | None = None,
    epochs: int | None = None,
    stage: int = 0,
) -> tuple[M.ModelParams, TrainLog]:
    """Mini-batch Adam on the hybrid loss.

    Starts from ``params`` (copied) or a fresh init, always with a fresh
    optimizer. Returns the parameters of the epoch with the lowest mean
    training loss (or best held-out macro-F1 when ``val_fraction > 0``).
    """
    if len(labeled) == 0:
        raise ValueError("no labeled samples")
    if np.any(labeled.labels == UNLABELED):
        raise ValueError("training set contains unlabeled rows")
    mcfg = model_config_for(config, labeled)
    epochs = config.epochs if epochs is None else epochs
    tlog = TrainLog()
    rng_split = np.random.default_rng([config.seed, stage, 0xA1])
    val = None
    if config.val_fraction > 0:
        labeled, val = _holdout(labeled, config.val_fraction, rng_split)
        if len(val) == 0:
            val = None
    batch_size = config.batch_size
    if batch_size > len(labeled):
        tlog.warnings.append(f"batch_size {batch_size} > {len(labeled)} samples; reduced")
        log.warning(tlog.warnings[-1])
        batch_size = len(labeled)

    params = M.init(mcfg) if params is None else _copy(params)
    state = M.adam_init(params)
    counts = labeled.class_counts
    x_all, y_all = labeled.features, labeled.labels
    scl_rows = None
    if not config.pseudo_in_scl and labeled.provenance is not None:
        scl_rows = labeled.provenance == ORIGINAL

    best, best_score = _copy(params), np.inf
    for epoch in range(epochs):
        rng = np.random.default_rng([config.seed, stage, epoch])
        sums = np.zeros(3)
        seen = 0
        for b in stratified_batches(y_all, batch_size, rng):
            out = M.forward(params, mcfg, x_all[b], mode="train", dropout_seed=rng, keep_cache=True)
            lb = hybrid(out.z, out.probs, y_all[b], counts, epoch, epochs, config.loss,
                        scl_mask=None if scl_rows is None else scl_rows[b])
            grads = M.backward(params, mcfg, out, lb.grad_z, lb.grad_logits)
            M.sgd_step(params, grads, state, config.learning_rate)
            sums += np.array([lb.l_scl, lb.l_wce, lb.l_hy]) * b.size
            seen += b.size
        l_scl, l_wce, l_hy = sums / seen
        row = {"stage": stage, "epoch": epoch, "l_scl": l_scl, "l_wce": l_wce, "l_hy": l_hy,
               "beta": lb.beta_used}
        if val is not None:
            pred = M.predict(params, mcfg, val.features).argmax(axis=1)
            row["val_macro_f1"] = evaluate(pred, val.labels, mcfg.num_classes).macro_f1
            crit = -row["val_macro_f1"]
        else:
            crit = l_hy
        tlog.epochs.append(row)
        if crit < best_score:
            best_score, best = crit, _copy(params)
            tlog.best_epoch = epoch
    return best, tlog


@dataclass
class RoundReport:
    round: int
    generated: int
    kept: int
    after_cap: int
    synthetic: int
    train_size: int
    losses: list[dict] = field(default_factory=list)
    metrics: dict | None = None
    pseudo_accuracy: float | None = None  # purity vs hidden labels, diagnostics only
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_checkpoint(params: M.ModelParams, mcfg: M.ModelConfig, test: Dataset) -> MetricsReport:
    if not test.is_labeled:
        raise ValueError("test set must be labeled")
    if test.num_classes != mcfg.num_classes:
        raise ValueError(
            f"test set has {test.num_classes} classes, model has {mcfg.num_classes}"
        )
    pred = M.predict(params, mcfg, test.features).argmax(axis=1)
    return evaluate(pred, test.labels, mcfg.num_classes)


def pseudo_label_round(
    params: M.ModelParams,
    mcfg: M.ModelConfig,
    labeled: Dataset,
    unlabeled: Dataset,
    config: TrainConfig,
    round_index: int,
) -> tuple[Dataset, PseudoLabels, PseudoLabels, int, list[str]]:
    """Predict, filter, cap and oversample; returns the round's training set,
    all scored pseudo-labels, the capped kept subset, the synthetic count and
    warnings."""
    fc = config.filter
    seed = config.seed * 1009 + round_index
    mc = M.mc_predict(params, mcfg, unlabeled.features, fc.T, seed=seed)
    scored = score(mc, fc)
    capped = cap_imbalance(scored, labeled.class_counts, fc.max_imbalance_ratio, seed=seed)
    warnings: list[str] = []
    if len(capped) == 0:
        warnings.append(f"round {round_index}: no pseudo-labels kept; retraining on labeled data only")
        log.warning(warnings[-1])
        return assemble_round_dataset(labeled, unlabeled, capped), scored, capped, 0, warnings
    pool_x = np.vstack([labeled.features, unlabeled.features[capped.sample_index]])
    pool_y = np.concatenate([labeled.labels, capped.predicted])
    n_gen = synthesis_targets(np.bincount(capped.predicted, minlength=labeled.num_classes),
                              labeled.class_counts, fc.max_imbalance_ratio)
    syn, w = borderline_smote(pool_x, pool_y, n_gen, fc, seed=seed)
    warnings += w
    return assemble_round_dataset(labeled, unlabeled, capped, syn), scored, capped, len(syn), warnings


def _write_curves(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "epoch", "l_scl", "l_wce", "l_hy", "beta"])
        for r in rows:
            w.writerow([r["stage"], r["epoch"], f"{r['l_scl']:.6g}", f"{r['l_wce']:.6g}",
                        f"{r['l_hy']:.6g}", f"{r['beta']:.6g}"])


def self_train(
    labeled: Dataset,
    unlabeled: Dataset,
    config: TrainConfig,
    eval_set: Dataset | None = None,
    run_dir: str | Path | None = None,
    warmup: tuple[M.ModelParams, TrainLog] | None = None,
) -> tuple[M.ModelParams, list[RoundReport]]:
    """Warm-up on labeled data, then ``config.rounds`` rounds of pseudo-label
    generation, filtering, rebalancing and warm-started retraining.

    ``eval_set`` only feeds the per-round metric snapshots. ``warmup`` lets a
    caller reuse an already computed ``train_supervised`` result.
    """
    mcfg = model_config_for(config, labeled)
    run = Path(run_dir) if run_dir is not None else None
    if run is not None:
        run.mkdir(parents=True, exist_ok=True)
        (run / "config.json").write_text(json.dumps(
            {"train": replace(config, model=mcfg).to_dict()}, indent=2))
    params, wlog = warmup if warmup is not None else train_supervised(labeled, config, stage=0)
    curves = list(wlog.epochs)
    if run is not None:
        M.save_checkpoint(run / "checkpoints" / "round_0.bin", mcfg, params)
    reports: list[RoundReport] = []
    rounds = config.rounds if len(unlabeled) else 0
    for k in range(1, rounds + 1):
        train_ds, scored, capped, n_syn, warns = pseudo_label_round(
            params, mcfg, labeled, unlabeled, config, k)
        params, tlog = train_supervised(train_ds, config, params=params,
                                        epochs=config.round_epochs, stage=k)
        curves += tlog.epochs
        rep = RoundReport(
            round=k, generated=len(scored), kept=int(scored.kept.sum()), after_cap=len(capped),
            synthetic=n_syn, train_size=len(train_ds), losses=tlog.epochs,
            warnings=warns + tlog.warnings,
        )
        if unlabeled.hidden_labels is not None and len(capped):
            rep.pseudo_accuracy = float(np.mean(
                unlabeled.hidden_labels[capped.sample_index] == capped.predicted))
        if eval_set is not None:
            rep.metrics = evaluate_checkpoint(params, mcfg, eval_set).to_dict()
        reports.append(rep)
        log.info("round %d: kept %d/%d, capped %d, synthetic %d", k, rep.kept, rep.generated,
                 rep.after_cap, n_syn)
        if run is not None:
            M.save_checkpoint(run / "checkpoints" / f"round_{k}.bin", mcfg, params)
            (run / "reports").mkdir(exist_ok=True)
            (run / "reports" / f"round_{k}.json").write_text(json.dumps(rep.to_dict(), indent=2))
            write_audit(run / "audit" / f"pseudo_round_{k}.csv", scored, unlabeled.hidden_labels)
    if run is not None:
        _write_curves(run / "curves" / "loss.csv", curves)
    return params, reports
