"""Command-line front end: prepare, train, selftrain, evaluate, ablate, sweep.

A run is described by a JSON config (see ``DEFAULTS``); command-line flags
override it. Every run directory receives the fully resolved config.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from sfids import benchmark, data
from sfids import model as M
from sfids.metrics import MetricsReport, render_table
from sfids.trainer import TrainConfig, evaluate_checkpoint, self_train, train_supervised

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUTPUT_ROOT_ENV = "SFIDS_OUTPUT_ROOT"
SPLIT_FILES = ("train_labeled", "train_unlabeled", "test")

log = logging.getLogger("sfids")


class ConfigError(Exception):
    pass


DEFAULTS: dict = {
    "name": "run",
    "data": {
        "source": "synthetic",  # "synthetic" | "csv"
        "paths": [],
        "schema": "nsl_kdd",
        "header": None,  # None: sniff
        "synthetic": benchmark.BenchmarkConfig().to_dict(),
    },
    "prepared_dir": None,
    "split": {"test_fraction": 0.2, "label_fraction": 0.01, "seed": 0},
    "unlabeled_fraction": 1.0,
    "preset": "default",  # "benchmark": narrow model and full-batch schedule for the synthetic set
    "train": {},
    "output_dir": None,
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _preset_train(preset: str, cfg: dict) -> dict:
    if preset == "default":
        return TrainConfig().to_dict()
    if preset == "benchmark":
        bench = benchmark.BenchmarkConfig(**cfg["data"]["synthetic"])
        t = benchmark.train_config(bench, seed=0).to_dict()
        t["model"] = None if cfg["data"]["source"] != "synthetic" else t["model"]
        return t
    raise ConfigError(f"unknown preset {preset!r}")


def resolve_config(path: str | None, overrides: dict) -> dict:
    """Defaults <- JSON file <- flag overrides, then validation."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            cfg = _merge(cfg, json.loads(Path(path).read_text()))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
    cfg = _merge(cfg, overrides)
    user_train = cfg["train"]
    cfg["train"] = _merge(_preset_train(cfg["preset"], cfg), user_train)
    # the training seed follows the split seed unless set explicitly; the
    # model init seed always follows the training seed
    if "seed" not in user_train:
        cfg["train"]["seed"] = cfg["split"]["seed"]
    if cfg["train"].get("model"):
        cfg["train"]["model"]["seed"] = cfg["train"]["seed"]
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        TrainConfig.from_dict(cfg["train"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"train: {e}") from None
    sp = cfg["split"]
    if not 0 < sp["test_fraction"] < 1:
        raise ConfigError("split.test_fraction must lie in (0, 1)")
    if not 0 < sp["label_fraction"] <= 1:
        raise ConfigError("split.label_fraction must lie in (0, 1]: no labeled data otherwise")
    if not 0 <= cfg["unlabeled_fraction"] <= 1:
        raise ConfigError("unlabeled_fraction must lie in [0, 1]")
    src = cfg["data"]["source"]
    if cfg["prepared_dir"]:
        for name in SPLIT_FILES:
            if not (Path(cfg["prepared_dir"]) / f"{name}.npz").exists():
                raise ConfigError(f"prepared split missing: {cfg['prepared_dir']}/{name}.npz")
    elif src == "csv":
        if not cfg["data"]["paths"]:
            raise ConfigError("data.paths is empty")
        for p in cfg["data"]["paths"]:
            if not Path(p).exists():
                raise ConfigError(f"data file not found: {p}")
    elif src == "synthetic":
        try:
            benchmark.BenchmarkConfig(**cfg["data"]["synthetic"])
        except TypeError as e:
            raise ConfigError(f"data.synthetic: {e}") from None
    else:
        raise ConfigError(f"unknown data.source {src!r}")


def output_dir(cfg: dict, command: str) -> Path:
    if cfg["output_dir"]:
        return Path(cfg["output_dir"])
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{command}-{cfg['name']}-seed{cfg['train']['seed']}"


# ------------------------------------------------------------------- data
def build_splits(cfg: dict):
    """(labeled, unlabeled, test, manifest, standardizer dict or None, schema hash)."""
    sp, dc = cfg["split"], cfg["data"]
    if dc["source"] == "synthetic":
        bench = benchmark.BenchmarkConfig(**dc["synthetic"])
        full = bench.dataset(sp["seed"])
        lab, unl, test = data.split(full, sp["test_fraction"], sp["label_fraction"], sp["seed"])
        std, schema_hash = None, "synthetic"
    else:
        try:
            schema = data.load_schema(dc["schema"])
        except FileNotFoundError:
            raise ConfigError(f"schema not found: {dc['schema']}") from None
        records = []
        for p in dc["paths"]:
            records += data.load_csv(p, schema, header=dc["header"])
        labels = data.encode_labels(records, schema)
        stub = data.Dataset(np.zeros((len(records), 1)), labels, schema.classes)
        lab_s, unl_s, test_s = data.split(stub, sp["test_fraction"], sp["label_fraction"], sp["seed"])
        train_idx = np.sort(np.concatenate([lab_s.source_index, unl_s.source_index]))
        # vocabularies and moments come from the training rows only
        st = data.fit_preprocess([records[i] for i in train_idx], schema)
        full = data.transform(records, st, schema)
        lab = _take(full, lab_s, hide=False)
        unl = _take(full, unl_s, hide=True)
        test = _take(full, test_s, hide=False)
        std, schema_hash = st.to_dict(), schema.digest()
    manifest = {
        "source": dc["source"],
        "seed": sp["seed"],
        "test_fraction": sp["test_fraction"],
        "label_fraction": sp["label_fraction"],
        "schema_hash": schema_hash,
        "classes": list(lab.class_names),
        "dim": lab.dim,
        "counts": split_counts(lab, unl, test),
    }
    return lab, unl, test, manifest, std, schema_hash


def _take(full: data.Dataset, stub: data.Dataset, hide: bool) -> data.Dataset:
    idx = stub.source_index
    labels = full.labels[idx]
    return data.Dataset(full.features[idx], np.full(idx.size, data.UNLABELED) if hide else labels,
                        full.class_names, hidden_labels=labels if hide else None, source_index=idx)


def split_counts(lab, unl, test) -> dict:
    m = lab.num_classes
    unl_counts = (np.bincount(unl.hidden_labels, minlength=m) if unl.hidden_labels is not None
                  else np.zeros(m, dtype=np.int64))
    counts = {
        "train_labeled": lab.class_counts.tolist(),
        "train_unlabeled": unl_counts.tolist(),
        "test": test.class_counts.tolist(),
    }
    counts["total"] = [sum(v) for v in zip(*counts.values())]
    return counts


def load_splits(cfg: dict):
    if cfg["prepared_dir"]:
        d = Path(cfg["prepared_dir"])
        parts = [data.load_dataset(d / f"{n}.npz")[0] for n in SPLIT_FILES]
        return (*parts, json.loads((d / "manifest.json").read_text()))
    lab, unl, test, manifest, _, _ = build_splits(cfg)
    return lab, unl, test, manifest


def _train_config(cfg: dict, labeled: data.Dataset) -> TrainConfig:
    tc = TrainConfig.from_dict(cfg["train"])
    if tc.model is None:
        tc = replace(tc, model=M.ModelConfig(input_dim=labeled.dim, num_classes=labeled.num_classes,
                                             seed=tc.seed))
    return tc


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2))


# --------------------------------------------------------------- commands
def cmd_prepare(cfg: dict, out: Path) -> dict:
    lab, unl, test, manifest, std, schema_hash = build_splits(cfg)
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in zip(SPLIT_FILES, (lab, unl, test)):
        data.save_dataset(out / f"{name}.npz", ds, schema_hash)
    _write_json(out / "manifest.json", manifest)
    if std is not None:
        _write_json(out / "standardizer.json", std)
    _write_json(out / "config.json", cfg)
    lines = [f"{'class':>16} {'labeled':>8} {'unlabeled':>10} {'test':>8} {'total':>8}"]
    c = manifest["counts"]
    for i, name in enumerate(manifest["classes"]):
        lines.append(f"{name:>16} {c['train_labeled'][i]:>8} {c['train_unlabeled'][i]:>10} "
                     f"{c['test'][i]:>8} {c['total'][i]:>8}")
    print("\n".join(lines))
    return manifest


def cmd_selftrain(cfg: dict, out: Path, fmt: str = "text", quiet: bool = False) -> MetricsReport:
    """Self-training run; ``rounds = 0`` or an empty pool gives the supervised result."""
    lab, unl, test, manifest = load_splits(cfg)
    tc = _train_config(cfg, lab)
    pool = data.subsample_unlabeled(unl, cfg["unlabeled_fraction"], tc.seed)
    resolved = copy.deepcopy(cfg)
    resolved["train"] = tc.to_dict()
    out.mkdir(parents=True, exist_ok=True)
    params, reports = self_train(lab, pool, tc, eval_set=test, run_dir=out)
    _write_json(out / "config.json", resolved | {"split_manifest": manifest})
    final = evaluate_checkpoint(params, tc.model, test)
    _write_json(out / "reports" / "final.json", {
        "class_names": list(lab.class_names),
        "unlabeled_used": len(pool),
        "rounds": [{k: v for k, v in r.to_dict().items() if k != "losses"} for r in reports],
        "metrics": final.to_dict(),
    })
    if not quiet:
        for r in reports:
            log.info("round %d: generated %d kept %d after cap %d synthetic %d", r.round,
                     r.generated, r.kept, r.after_cap, r.synthetic)
        print(render_table([(cfg["name"], final)], fmt), end="")
    return final


def cmd_evaluate(checkpoint: str, dataset: str, fmt: str = "text") -> MetricsReport:
    mcfg, params, _, _ = M.load_checkpoint(checkpoint)
    test, _ = data.load_dataset(dataset)
    rep = evaluate_checkpoint(params, mcfg, test)
    print(render_table([(Path(checkpoint).stem, rep)], fmt), end="")
    return rep


def render_ablation(rows: list[tuple[str, bool, bool, MetricsReport]], fmt: str = "text") -> str:
    """Configurations as columns, macro precision and macro-F1 as rows."""
    heads = [f"scl={'on' if s else 'off'},wce_weights={'on' if w else 'off'}" for _, s, w, _ in rows]
    metrics = [("Pre", [r.macro_precision for *_, r in rows]), ("F1", [r.macro_f1 for *_, r in rows])]
    if fmt == "json":
        return json.dumps({
            "toggles": [{"label": lab, "scl": s, "wce_weights": w} for lab, s, w, _ in rows],
            "metrics": {name: dict(zip(heads, [round(100 * v, 2) for v in vals]))
                        for name, vals in metrics},
        }, indent=2) + "\n"
    if fmt == "csv":
        lines = ["metric," + ",".join(heads)]
        lines += [name + "," + ",".join(f"{100 * v:.2f}" for v in vals) for name, vals in metrics]
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    w = max(len(h) for h in heads)
    lines = ["metric  " + "  ".join(h.rjust(w) for h in heads)]
    lines += [f"{name:<6}  " + "  ".join(f"{100 * v:.2f}".rjust(w) for v in vals) for name, vals in metrics]
    return "\n".join(lines) + "\n"


def cmd_ablate(cfg: dict, out: Path, fmt: str = "text") -> list:
    """Supervised-only runs of the 2x2 loss grid on one split and seed."""
    lab, _, test, manifest = load_splits(cfg)
    tc = _train_config(cfg, lab)
    rows = []
    for (label, scl, wts), (_, arm) in zip(benchmark.ABLATION_GRID, benchmark.ablation_configs(tc)):
        params, _ = train_supervised(lab, arm)
        rows.append((label, scl, wts, evaluate_checkpoint(params, arm.model, test)))
        log.info("%s: macro-F1 %.4f", label, rows[-1][3].macro_f1)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg | {"train": tc.to_dict(), "split_manifest": manifest})
    for f, ext in (("text", "txt"), ("csv", "csv"), ("json", "json")):
        (out / f"ablation.{ext}").write_text(render_ablation(rows, f))
    print(render_ablation(rows, fmt), end="")
    return rows


def _sweep_job(job: tuple[dict, str]) -> dict:
    cfg, out = job
    rep = cmd_selftrain(cfg, Path(out), quiet=True)
    return {"seed": cfg["train"]["seed"], "unlabeled_fraction": cfg["unlabeled_fraction"],
            "run_dir": out, "accuracy": rep.accuracy, "macro_f1": rep.macro_f1}


def cmd_sweep(cfg: dict, out: Path, seeds: list[int], fractions: list[float], workers: int) -> list[dict]:
    """Independent selftrain runs over seeds x unlabeled fractions, ``workers`` at a time."""
    jobs = []
    for s in seeds:
        for f in fractions:
            c = copy.deepcopy(cfg)
            c["split"]["seed"] = s
            c["train"]["seed"] = s
            if c["train"].get("model"):
                c["train"]["model"]["seed"] = s
            c["unlabeled_fraction"] = f
            c["output_dir"] = None
            jobs.append((c, str(out / f"seed{s}-ul{f:g}")))
    if workers <= 1:
        results = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_job, jobs))
    _write_json(out / "sweep.json", results)
    print(f"{'seed':>4} {'UL':>5} {'Acc':>7} {'F1':>7}")
    for r in results:
        print(f"{r['seed']:>4} {r['unlabeled_fraction']:>5g} {100 * r['accuracy']:>7.2f} "
              f"{100 * r['macro_f1']:>7.2f}")
    for f in fractions:
        vals = [r["macro_f1"] for r in results if r["unlabeled_fraction"] == f]
        print(f"mean macro-F1 at UL={f:g}: {100 * np.mean(vals):.2f}")
    return results


# ------------------------------------------------------------------ parser
def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v]


def _ints(s: str) -> list[int]:
    out = []
    for part in s.split(","):
        if "-" in part:
            a, b = part.split("-")
            out += list(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfids", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp, train=True):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--out", help="run directory (default: $SFIDS_OUTPUT_ROOT/<command>-<name>-seed<seed>)")
        sp.add_argument("--name")
        sp.add_argument("--data", dest="prepared_dir", help="directory written by `sfids prepare`")
        sp.add_argument("--csv", nargs="+", help="raw CSV file(s); sets data.source=csv")
        sp.add_argument("--schema", help="schema JSON path or bundled name (nsl_kdd, nsl_kdd_plus, cicids2017)")
        sp.add_argument("--synthetic", action="store_true", help="use the built-in long-tail benchmark")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--test-fraction", type=float)
        sp.add_argument("--label-fraction", type=float)
        if train:
            sp.add_argument("--preset", choices=["default", "benchmark"])
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--round-epochs", type=int)
            sp.add_argument("--rounds", type=int)
            sp.add_argument("--batch-size", type=int)
            sp.add_argument("--lr", type=float)
            sp.add_argument("--unlabeled-fraction", type=float)
            sp.add_argument("--format", choices=["text", "csv", "json"], default="text")

    run_flags(sub.add_parser("prepare", help="split raw data into labeled/unlabeled/test containers"), train=False)
    run_flags(sub.add_parser("train", help="supervised warm-up only"))
    run_flags(sub.add_parser("selftrain", help="warm-up plus self-training rounds"))
    run_flags(sub.add_parser("ablate", help="2x2 grid over the contrastive term and class weights"))
    sw = sub.add_parser("sweep", help="selftrain over seeds x unlabeled fractions, concurrently")
    run_flags(sw)
    sw.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4], help="e.g. 0-4 or 0,3,7")
    sw.add_argument("--unlabeled-fractions", type=_floats, default=[0.0, 0.5, 1.0])
    sw.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ev = sub.add_parser("evaluate", help="score a checkpoint on a dataset container")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True, help=".npz container, e.g. <prepared>/test.npz")
    ev.add_argument("--format", choices=["text", "csv", "json"], default="text")
    return p


def overrides_from_args(args) -> dict:
    o: dict = {"split": {}, "train": {}, "data": {}}
    pick = lambda name: getattr(args, name, None)  # noqa: E731
    for flag, key in (("name", "name"), ("prepared_dir", "prepared_dir"), ("out", "output_dir"),
                      ("unlabeled_fraction", "unlabeled_fraction"), ("preset", "preset")):
        if pick(flag) is not None:
            o[key] = pick(flag)
    if pick("csv"):
        o["data"].update(source="csv", paths=pick("csv"))
    if pick("synthetic"):
        o["data"]["source"] = "synthetic"
    if pick("schema"):
        o["data"]["schema"] = pick("schema")
    if pick("seed") is not None:
        o["split"]["seed"] = o["train"]["seed"] = pick("seed")
    for flag, key in (("test_fraction", "test_fraction"), ("label_fraction", "label_fraction")):
        if pick(flag) is not None:
            o["split"][key] = pick(flag)
    for flag, key in (("epochs", "epochs"), ("round_epochs", "round_epochs"), ("rounds", "rounds"),
                      ("batch_size", "batch_size"), ("lr", "learning_rate")):
        if pick(flag) is not None:
            o["train"][key] = pick(flag)
    return o


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "evaluate":
            for p in (args.checkpoint, args.dataset):
                if not Path(p).exists():
                    raise ConfigError(f"file not found: {p}")
            cmd_evaluate(args.checkpoint, args.dataset, args.format)
            return EXIT_OK
        cfg = resolve_config(args.config, overrides_from_args(args))
        if args.command == "train":
            cfg["train"]["rounds"] = 0
        out = output_dir(cfg, args.command)
        if args.command == "prepare":
            cmd_prepare(cfg, out)
        elif args.command in ("train", "selftrain"):
            cmd_selftrain(cfg, out, args.format)
        elif args.command == "ablate":
            cmd_ablate(cfg, out, args.format)
        elif args.command == "sweep":
            cmd_sweep(cfg, out, args.seeds, args.unlabeled_fractions, max(1, args.workers))
        print(f"run directory: {out}", file=sys.stderr)
        return EXIT_OK
    except (ConfigError, data.SchemaError) as e:
        _report_error("config", e)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("traceback", exc_info=True)
        _report_error("runtime", e)
        return EXIT_RUNTIME


def _report_error(kind: str, e: Exception) -> None:
    print(json.dumps({"error": kind, "type": type(e).__name__, "message": str(e)}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
