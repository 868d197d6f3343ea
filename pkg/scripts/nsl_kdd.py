"""Supervised baseline vs self-training on NSL-KDD (KDDTrain+ and KDDTest+
pooled, then split 80/20 with 1% of the training rows labeled).

    python3 scripts/nsl_kdd.py /path/to/nsl-kdd --label-fraction 0.01

Uses the full-width default backbone; expect hours on a CPU.
"""

import argparse
from pathlib import Path

import numpy as np

from sfids import data
from sfids import trainer as T


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("directory", type=Path)
    ap.add_argument("--label-fraction", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--run-dir", type=Path)
    args = ap.parse_args()

    schema = data.load_schema("nsl_kdd_plus")
    records = []
    for name in ("KDDTrain+.txt", "KDDTest+.txt"):
        records += data.load_csv(args.directory / name, schema, header=False)
    labels = data.encode_labels(records, schema)
    stub = data.Dataset(np.zeros((len(records), 1)), labels, schema.classes)
    lab_s, unl_s, test_s = data.split(stub, 0.2, args.label_fraction, seed=args.seed)
    train_idx = np.sort(np.concatenate([lab_s.source_index, unl_s.source_index]))
    full = data.transform(records, data.fit_preprocess([records[i] for i in train_idx], schema), schema)
    lab, test = full.subset(lab_s.source_index), full.subset(test_s.source_index)
    unl_idx = unl_s.source_index
    unl = data.Dataset(full.features[unl_idx], np.full(unl_idx.size, data.UNLABELED), full.class_names,
                       hidden_labels=full.labels[unl_idx])
    print(f"labeled {len(lab)}  unlabeled {len(unl)}  test {len(test)}  dim {full.dim}")

    cfg = T.TrainConfig(seed=args.seed)
    mcfg = T.model_config_for(cfg, lab)
    warm = T.train_supervised(lab, cfg)
    sup = T.evaluate_checkpoint(warm[0], mcfg, test)
    print(f"supervised   macro-F1 {100 * sup.macro_f1:.2f}  acc {100 * sup.accuracy:.2f}")
    params, reports = T.self_train(lab, unl, cfg, eval_set=test, run_dir=args.run_dir, warmup=warm)
    for r in reports:
        print(f"round {r.round}  kept {r.kept}  after cap {r.after_cap}  synthetic {r.synthetic}  "
              f"macro-F1 {100 * r.metrics['macro_f1']:.2f}")
    final = T.evaluate_checkpoint(params, mcfg, test)
    print(f"self-trained macro-F1 {100 * final.macro_f1:.2f}  ({100 * (final.macro_f1 - sup.macro_f1):+.2f})")


if __name__ == "__main__":
    main()
