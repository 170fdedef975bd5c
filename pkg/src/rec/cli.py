"""Command-line surface: `run <config>`, `report <dir>`, `checkpoint <save|load>`.

Config files are plain key=value lines (# comments). Every emitted number is
recomputable from the persisted JSONL records; see docs/formats.md for all
schemas.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .controller import SearchConfig
from .data import load_idx_dataset, synthetic_classes
from .distill import CompressConfig
from .lifelong import (METHOD_NAMES, gen_permuted_tasks, gen_rotated_tasks,
                       gen_split_tasks, method_config, run_sequence, subseed)
from .netcore import Arch, init_network
from .regularize import PenaltyConfig

_DEFAULTS: dict[str, str] = {
    "dataset": "synthetic",
    "task_kind": "permuted",
    "tasks": "5",
    "methods": "sn,ewc,mwc",
    "seeds": "0,1,2",
    "hidden": "40,40",
    "side": "8",
    "classes": "10",
    "train_samples": "2000",
    "test_samples": "1000",
    "data_seed": "0",
    "lambda_ewc": "40",
    "lambda_21": "3e-5",
    "lambda_1": "1e-5",
    "epsilon": "1e-8",
    "epochs": "8",
    "batch_size": "256",
    "lr": "0.03",
    "momentum": "0.0",
    "fisher_samples": "600",
    "search_budget": "6",
    "m_children": "3",
    "child_epochs": "2",
    "controller_lr": "0.05",
    "compress_epochs": "20",
    "compress_lr": "0.005",
    "reward_scope": "new-only",
    "out_dir": "results",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, key: str) -> str:
        return self.values[key]

    def get_int(self, key: str) -> int:
        return int(self.values[key])

    def get_float(self, key: str) -> float:
        return float(self.values[key])

    def get_list(self, key: str) -> list[str]:
        return [v.strip() for v in self.values[key].split(",") if v.strip()]


def parse_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    values = dict(_DEFAULTS)
    for ln, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{ln}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _DEFAULTS:
            raise ConfigError(f"{p}:{ln}: unknown config key {key!r}")
        values[key] = val
    cfg = RunConfig(values)
    for m in cfg.get_list("methods"):
        if m not in METHOD_NAMES:
            raise ConfigError(f"unknown method {m!r}; known: {', '.join(METHOD_NAMES)}")
    if cfg["task_kind"] not in ("permuted", "rotated", "split"):
        raise ConfigError(f"unknown task_kind {cfg['task_kind']!r}")
    return cfg


def _build_tasks(cfg: RunConfig):
    data_seed = cfg.get_int("data_seed")
    if cfg["dataset"] == "synthetic":
        train, test = synthetic_classes(cfg.get_int("train_samples"),
                                        cfg.get_int("test_samples"),
                                        cfg.get_int("side"), cfg.get_int("classes"),
                                        subseed(data_seed, "data"))
    else:
        parts = cfg["dataset"].split(";")
        tr_img, tr_lab = parts[0].split(",")
        train = load_idx_dataset(tr_img.strip(), tr_lab.strip())
        if len(parts) > 1:
            te_img, te_lab = parts[1].split(",")
            test = load_idx_dataset(te_img.strip(), te_lab.strip())
        else:
            train, test = train.subset(range(0, int(len(train) * 0.8))), \
                train.subset(range(int(len(train) * 0.8), len(train)))
    num_tasks = cfg.get_int("tasks")
    gen = {"permuted": gen_permuted_tasks, "rotated": gen_rotated_tasks,
           "split": gen_split_tasks}[cfg["task_kind"]]
    return gen(train, test, num_tasks, data_seed)


def _method_cfg(cfg: RunConfig, method: str):
    penalty = PenaltyConfig(cfg.get_float("lambda_ewc"), cfg.get_float("lambda_21"),
                            cfg.get_float("lambda_1"), cfg.get_float("epsilon"))
    search = SearchConfig(m_children=cfg.get_int("m_children"),
                          child_epochs=cfg.get_int("child_epochs"),
                          batch_size=cfg.get_int("batch_size"),
                          lr=cfg.get_float("lr"),
                          momentum=cfg.get_float("momentum"),
                          controller_lr=cfg.get_float("controller_lr"))
    return method_config(
        method, penalty,
        epochs=cfg.get_int("epochs"), batch_size=cfg.get_int("batch_size"),
        lr=cfg.get_float("lr"), momentum=cfg.get_float("momentum"),
        fisher_samples=cfg.get_int("fisher_samples"),
        search_budget=cfg.get_int("search_budget"), search=search,
        compress_cfg=CompressConfig(epochs=cfg.get_int("compress_epochs"),
                                    batch_size=cfg.get_int("batch_size"),
                                    lr=cfg.get_float("compress_lr"),
                                    momentum=0.0),
        reward_scope=cfg["reward_scope"],
    )


def _run_one(cfg: RunConfig, tasks, method: str, seed: int, out: Path) -> None:
    hidden = tuple(int(w) for w in cfg.get_list("hidden"))
    result = run_sequence(tasks, _method_cfg(cfg, method), seed, hidden)
    with open(out / f"results_{method}_s{seed}.jsonl", "w", encoding="utf-8") as fh:
        for rec in result.records:
            fh.write(json.dumps({"method": method, "seed": seed, **rec},
                                sort_keys=True) + "\n")
    if result.search_log:
        with open(out / f"search_{method}_s{seed}.jsonl", "w", encoding="utf-8") as fh:
            for rec in result.search_log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    save_checkpoint(out / f"final_{method}_s{seed}.recnet", result.final_net)


def cmd_run(config_path: str) -> int:
    try:
        cfg = parse_config(config_path)
    except (FileNotFoundError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        out = Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        tasks = _build_tasks(cfg)
        jobs = [(m, int(s)) for m in cfg.get_list("methods") for s in cfg.get_list("seeds")]
        workers = max(1, int(os.environ.get("REC_THREADS", "1")))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_run_one, cfg, tasks, m, s, out) for m, s in jobs]
                for f in futures:
                    f.result()
        else:
            for m, s in jobs:
                _run_one(cfg, tasks, m, s, out)
        _write_reports(out)
    except Exception as e:  # noqa: BLE001 - diagnostics then nonzero exit
        print(f"run failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


def _load_records(results_dir: Path) -> list[dict]:
    records = []
    for path in sorted(results_dir.glob("results_*.jsonl")):
        for line in path.read_text().splitlines():
            if line.strip():
                records.append(json.loads(line))
    if not records:
        raise ValueError(f"no results_*.jsonl records under {results_dir}")
    return records


def _write_reports(results_dir: Path) -> list[str]:
    """summary.csv (model-size / final-accuracy table) and series.csv
    (avg-per-task and task-1 forgetting curves); returns the printed table."""
    records = _load_records(results_dir)
    runs: dict[tuple[str, int], list[dict]] = {}
    for rec in records:
        runs.setdefault((rec["method"], rec["seed"]), []).append(rec)

    summary_lines = ["method,seed,params_task1,params_final,acc_final"]
    series_lines = ["method,seed,task,avg_per_task,task1_acc"]
    table = [f"{'method':<12} {'seed':>4} {'#W(1)':>8} {'#W(T)':>8} {'ACC(T)':>8}"]
    for (method, seed), recs in sorted(runs.items()):
        recs = sorted(recs, key=lambda r: r["task"])
        final = recs[-1]
        acc_final = sum(final["accuracies"]) / len(final["accuracies"])
        summary_lines.append(f"{method},{seed},{recs[0]['param_count']},"
                             f"{final['param_count']},{acc_final:.6f}")
        table.append(f"{method:<12} {seed:>4} {recs[0]['param_count']:>8} "
                     f"{final['param_count']:>8} {acc_final:>8.4f}")
        for rec in recs:
            avg = sum(rec["accuracies"]) / len(rec["accuracies"])
            series_lines.append(f"{method},{seed},{rec['task']},{avg:.6f},"
                                f"{rec['accuracies'][0]:.6f}")
    (results_dir / "summary.csv").write_text("\n".join(summary_lines) + "\n")
    (results_dir / "series.csv").write_text("\n".join(series_lines) + "\n")
    return table


def cmd_report(results_dir: str) -> int:
    try:
        table = _write_reports(Path(results_dir))
    except Exception as e:  # noqa: BLE001
        print(f"report failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print("\n".join(table))
    return 0


def cmd_checkpoint(mode: str, path: str, arch_spec: str | None, seed: int) -> int:
    try:
        if mode == "load":
            net, anchor, fisher = load_checkpoint(path)
            print(f"arch: {net.arch.input_dim}-"
                  f"{'-'.join(map(str, net.arch.hidden_widths))}-{net.arch.output_dim}")
            print(f"params: {net.param_count()}")
            print(f"anchor: {'yes' if anchor is not None else 'no'}")
            print(f"fisher: {'yes' if fisher is not None else 'no'}")
        else:
            if not arch_spec:
                print("error: checkpoint save requires --arch d,h1,...,K", file=sys.stderr)
                return 2
            dims = [int(x) for x in arch_spec.split(",")]
            net = init_network(Arch(dims[0], tuple(dims[1:-1]), dims[-1]), seed)
            save_checkpoint(path, net)
            print(f"saved fresh network ({net.param_count()} params) to {path}")
    except (CheckpointError, FileNotFoundError, ValueError) as e:
        print(f"checkpoint failed: {e}", file=sys.stderr)
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="rec", description="Lifelong-learning benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute the runs described by a config file")
    p_run.add_argument("config")
    p_rep = sub.add_parser("report", help="summarize a results directory")
    p_rep.add_argument("results_dir")
    p_ck = sub.add_parser("checkpoint", help="save or inspect a RECNET01 checkpoint")
    p_ck.add_argument("mode", choices=["save", "load"])
    p_ck.add_argument("path")
    p_ck.add_argument("--arch", default=None, help="dims for save, e.g. 64,40,40,10")
    p_ck.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config)
    if args.command == "report":
        return cmd_report(args.results_dir)
    return cmd_checkpoint(args.mode, args.path, args.arch, args.seed)


if __name__ == "__main__":
    sys.exit(main())
