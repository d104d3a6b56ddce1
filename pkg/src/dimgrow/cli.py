"""Command-line entry point wiring configs, data, search, retrain, and
reporting into reproducible runs.

Exit codes: 0 success, 2 usage/config/data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

from .datasets import SyntheticSpec, gen_synthetic, load_csv, split, write_csv
from .errors import ConfigError, DataError, DimGrowError, NumericError, check_keys
from .netmodel import BackboneConfig
from .searchctl import AllocationScheme, SearchConfig, uniform_allocation
from .trainer import RetrainConfig, emit_report, run_retrain, run_search

_DATA_KEYS = {"path", "synthetic", "label_column", "split"}
_BACKBONE_KEYS = {"d_bb", "hidden_sizes", "wide_enabled"}
_TOP_KEYS = {"data", "search", "backbone", "retrain", "output_dir", "seed"}


@dataclass
class RunConfig:
    data_path: str | None
    synthetic_path: str | None
    label_column: str
    split_fractions: tuple
    search: SearchConfig
    backbone: BackboneConfig
    retrain: RetrainConfig
    output_dir: str
    seed: int


def load_run_config(path, seed_override=None):
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    check_keys(raw, _TOP_KEYS, {"data", "output_dir"}, path)

    data = raw["data"]
    check_keys(data, _DATA_KEYS, set(), f"{path}: data")
    data_path = data.get("path")
    synthetic_path = data.get("synthetic")
    if (data_path is None) == (synthetic_path is None):
        raise ConfigError(f"{path}: data needs exactly one of 'path' or 'synthetic'")
    fractions = tuple(data.get("split", (0.8, 0.1, 0.1)))
    if len(fractions) != 3:
        raise ConfigError(f"{path}: data.split must have three fractions")

    seed = int(raw.get("seed", 0)) if seed_override is None else int(seed_override)

    search_dict = dict(raw.get("search", {}))
    if seed_override is not None or "seed" not in search_dict:
        search_dict["seed"] = seed
    search = SearchConfig.from_dict(search_dict)

    backbone_dict = dict(raw.get("backbone", {}))
    check_keys(backbone_dict, _BACKBONE_KEYS, set(), f"{path}: backbone")
    if "hidden_sizes" in backbone_dict:
        backbone_dict["hidden_sizes"] = tuple(backbone_dict["hidden_sizes"])
    backbone = BackboneConfig(**backbone_dict)

    retrain_dict = dict(raw.get("retrain", {}))
    if seed_override is not None or "seed" not in retrain_dict:
        retrain_dict["seed"] = seed
    retrain = RetrainConfig.from_dict(retrain_dict)

    return RunConfig(
        data_path=data_path,
        synthetic_path=synthetic_path,
        label_column=data.get("label_column", "label"),
        split_fractions=fractions,
        search=search,
        backbone=backbone,
        retrain=retrain,
        output_dir=raw["output_dir"],
        seed=seed,
    )


def _load_splits(cfg):
    if cfg.data_path is not None:
        ds = load_csv(cfg.data_path, cfg.label_column)
    else:
        ds = gen_synthetic(SyntheticSpec.from_json_file(cfg.synthetic_path))
    return split(ds, cfg.split_fractions, cfg.seed)


def cmd_synth(spec_path, out_path):
    spec = SyntheticSpec.from_json_file(spec_path)
    ds = gen_synthetic(spec)
    write_csv(ds, out_path)
    print(f"wrote {ds.n} rows x {ds.num_fields} fields to {out_path}")
    return 0


def cmd_search(config_path, seed_override=None):
    cfg = load_run_config(config_path, seed_override)
    train, val, _ = _load_splits(cfg)
    allocation, log = run_search(train, val, cfg.search, cfg.backbone)
    os.makedirs(cfg.output_dir, exist_ok=True)
    allocation.to_json(os.path.join(cfg.output_dir, "allocation.json"))
    emit_report(log, cfg.output_dir)
    dims = allocation.dims()
    total = sum(dims.values())
    print(f"search done: dims={dims} (total {total}), removed={allocation.removed}")
    print(f"outputs in {cfg.output_dir}")
    return 0


def cmd_retrain(config_path, allocation_path=None, uniform_dim=None, seed_override=None):
    cfg = load_run_config(config_path, seed_override)
    if (allocation_path is None) == (uniform_dim is None):
        raise ConfigError("retrain needs exactly one of --allocation or --uniform-dim")
    train, val, test = _load_splits(cfg)
    if uniform_dim is not None:
        allocation = uniform_allocation(train.schema, uniform_dim)
    else:
        allocation = AllocationScheme.from_json(allocation_path)
    model, log = run_retrain(train, val, test, allocation, cfg.backbone, cfg.retrain)
    emit_report(log, cfg.output_dir)
    final = log.last()
    print(
        f"retrain done: test auc={final['auc']:.6f} logloss={final['logloss']:.6f} "
        f"embedding params={model.embedding_params()} total params={model.param_count_total()}"
    )
    print(f"outputs in {cfg.output_dir}")
    return 0


def _read_jsonl(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def cmd_report(run_dir):
    """Summarize metrics files under run_dir: an AUC-vs-params table and,
    for search runs, the allocated-vs-used memory accounting."""
    paths = []
    for root, _, files in os.walk(run_dir):
        for name in sorted(files):
            if name.endswith("metrics.jsonl"):
                paths.append(os.path.join(root, name))
    paths.sort()
    if not paths:
        raise DataError(f"no metrics JSONL files under {run_dir}")

    rows = []
    for path in paths:
        records = _read_jsonl(path)
        if not records:
            continue
        final = max(records, key=lambda r: r["step"])
        rel = os.path.relpath(path, run_dir)
        stage = "search" if os.path.basename(path) == "metrics.jsonl" else \
            os.path.basename(path).rsplit("_metrics.jsonl", 1)[0]
        rows.append(
            {
                "run": rel,
                "stage": stage,
                "params_used": final["params_used"],
                "auc": final["auc"],
                "logloss": final["logloss"],
                "peak_alloc": max(r["params_alloc"] for r in records),
            }
        )
    rows.sort(key=lambda r: (r["params_used"], r["run"]))

    width = max([len(r["run"]) for r in rows] + [3])
    print(f"{'run':<{width}}  {'stage':<8} {'params_used':>11}  {'auc':>8}  {'logloss':>8}")
    for r in rows:
        print(
            f"{r['run']:<{width}}  {r['stage']:<8} {r['params_used']:>11}  "
            f"{r['auc']:>8.4f}  {r['logloss']:>8.4f}"
        )

    for r in rows:
        if r["stage"] != "search":
            continue
        alloc_path = os.path.join(run_dir, os.path.dirname(r["run"]), "allocation.json")
        if not os.path.exists(alloc_path):
            continue
        allocation = AllocationScheme.from_json(alloc_path)
        supernet = sum(f.vocab_size * 16 for f in allocation.fields)
        used = r["params_used"]
        ratio = r["peak_alloc"] / used if used else float("inf")
        print(
            f"memory proxy [{r['run']}]: peak_alloc={r['peak_alloc']} "
            f"final_used={used} ratio={ratio:.3f} supernet16={supernet}"
        )

    for root, _, files in os.walk(run_dir):
        for name in sorted(files):
            if name.endswith("gate_histogram.json"):
                path = os.path.join(root, name)
                with open(path, encoding="utf-8") as fh:
                    hist = json.load(fh)
                rel = os.path.relpath(path, run_dir)
                print(f"gate histogram [{rel}]: counts={hist['counts']} total={hist['total']}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dimgrow",
        description="Field-level embedding dimension search via shuffle gates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV from a spec")
    p.add_argument("--spec", required=True, help="synthetic spec JSON path")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("search", help="run the dimension search")
    p.add_argument("--config", required=True, help="run config JSON path")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("retrain", help="retrain a model from an allocation")
    p.add_argument("--config", required=True, help="run config JSON path")
    p.add_argument("--allocation", default=None, help="allocation JSON from a search")
    p.add_argument("--uniform-dim", type=int, default=None,
                   help="use a uniform allocation of this dimension (no-search baseline)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("report", help="summarize metrics from one or more runs")
    p.add_argument("--dir", required=True, help="directory holding run outputs")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args.spec, args.out)
        if args.command == "search":
            return cmd_search(args.config, args.seed)
        if args.command == "retrain":
            return cmd_retrain(args.config, args.allocation, args.uniform_dim, args.seed)
        if args.command == "report":
            return cmd_report(args.dir)
        raise ConfigError(f"unknown command {args.command!r}")
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DimGrowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
