"""Desk-scale synthetic benchmark shared by the acceptance suite, the CLI
``synthetic`` data source and the scripts in ``scripts/``.

The defaults were chosen so a 5-seed sweep finishes in a few minutes on one
CPU core: a narrowed backbone, full-batch warm-up for 1000 epochs and short
retraining rounds.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from sfids import data
from sfids.metrics import MetricsReport
from sfids.model import ModelConfig
from sfids.synthetic import make_long_tail
from sfids.trainer import TrainConfig, evaluate_checkpoint, self_train, train_supervised

# (label, use_scl, use_class_weights); the first row is the plain-CE baseline
ABLATION_GRID = (
    ("CE", False, False),
    ("SCL", True, False),
    ("WCE", False, True),
    ("SCL+WCE", True, True),
)


@dataclass
class BenchmarkConfig:
    n_samples: int = 10_000
    num_classes: int = 8
    imbalance_ratio: float = 50.0
    dim: int = 16
    separation: float = 4.0
    noise: float = 1.0
    test_fraction: float = 0.2
    label_fraction: float = 0.01

    def to_dict(self) -> dict:
        return asdict(self)

    def dataset(self, seed: int) -> data.Dataset:
        return make_long_tail(self.n_samples, self.num_classes, self.imbalance_ratio, self.dim,
                              self.separation, self.noise, seed=seed)

    def splits(self, seed: int) -> tuple[data.Dataset, data.Dataset, data.Dataset]:
        return data.split(self.dataset(seed), self.test_fraction, self.label_fraction, seed)


def small_model(input_dim: int, num_classes: int, seed: int = 0) -> ModelConfig:
    """Same topology as the default backbone at a quarter of the width."""
    return ModelConfig(input_dim=input_dim, num_classes=num_classes, expand_dim=64, channels=8,
                       length=8, conv_channels=(16, 16, 16, 16, 32), repr_dim=32, proj_dim=16,
                       seed=seed)


def train_config(bench: BenchmarkConfig, seed: int, **overrides) -> TrainConfig:
    base = dict(epochs=1000, round_epochs=20, rounds=3, batch_size=128, seed=seed,
                model=small_model(bench.dim, bench.num_classes, seed))
    base.update(overrides)
    return TrainConfig(**base)


def ablation_configs(config: TrainConfig) -> list[tuple[str, TrainConfig]]:
    return [
        (label, replace(config, loss=replace(config.loss, use_scl=scl, use_class_weights=wts)))
        for label, scl, wts in ABLATION_GRID
    ]


def run_ablation_seed(seed: int, bench: BenchmarkConfig | None = None,
                      **overrides) -> dict[str, MetricsReport]:
    """Supervised-only training of every ablation arm on one seed's split."""
    bench = bench or BenchmarkConfig()
    labeled, _, test = bench.splits(seed)
    out = {}
    for label, cfg in ablation_configs(train_config(bench, seed, **overrides)):
        params, _ = train_supervised(labeled, cfg)
        out[label] = evaluate_checkpoint(params, cfg.model, test)
    return out


def run_selftrain_seed(
    seed: int,
    bench: BenchmarkConfig | None = None,
    fractions=(0.0, 0.5, 1.0),
    **overrides,
) -> dict:
    """Macro-F1 on the test split after the shared warm-up and after
    self-training with each unlabeled fraction (0.0 is the warm-up itself)."""
    bench = bench or BenchmarkConfig()
    labeled, unlabeled, test = bench.splits(seed)
    cfg = train_config(bench, seed, **overrides)
    warm = train_supervised(labeled, cfg)
    result = {"seed": seed, "warmup": evaluate_checkpoint(warm[0], cfg.model, test).macro_f1,
              "fractions": {}, "rounds": {}}
    for frac in fractions:
        pool = data.subsample_unlabeled(unlabeled, frac, seed)
        params, reports = self_train(labeled, pool, cfg, warmup=warm)
        result["fractions"][frac] = evaluate_checkpoint(params, cfg.model, test).macro_f1
        result["rounds"][frac] = [r.to_dict() | {"losses": None} for r in reports]
    return result

