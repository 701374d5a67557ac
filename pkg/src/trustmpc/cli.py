"""Command-line experiment driver.

``trustmpc run`` sweeps alpha over one or more drive cycles and writes
per-run logs, a metrics table (CSV and JSON) and an SVG of the trust traces.
``trustmpc train`` simulates the constant-acceleration baseline over the
alpha list, fits the GRU on the resulting trajectories and saves it.
``trustmpc evaluate`` is ``run`` with the GRU predictor.

Exit status: 0 success, 1 run or training failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, ExperimentConfig, load_config
from .control import HumanCost
from .cycles import CycleParseError, DriveCycle, load_cycle
from .io import atomic_write_text
from .plot import line_chart
from .predict import GruModel, TrainingDiverged, build_dataset, train_gru
from .sim import SimulationError, improvement, metrics, metrics_json, run

METRIC_COLUMNS = ("alpha", "final_trust", "avg_explicability", "rmse")


def _alpha_tag(a: float) -> str:
    return f"{a:g}".replace(".", "p")


def log_path(out: Path, cycle: str, predictor: str, alpha: float) -> Path:
    return out / f"{cycle}_{predictor}_alpha{_alpha_tag(alpha)}.csv"


def _one_run(job):
    cycle, predictor, alpha, cfg, model_path = job
    model = GruModel.load(model_path) if predictor == "gru" else None
    params = cfg.sim_params()
    human = HumanCost(weights=cfg.human_weights, tau_H=params.tau_H, d_s=params.d_s)
    log = run(cycle, predictor=predictor, alpha=alpha, params=params, seed=cfg.seed, model=model, human=human)
    return log


def _map_runs(jobs, workers: int):
    """Yield ``(job, log_or_exception)`` in job order."""
    if workers <= 1 or len(jobs) <= 1:
        for job in jobs:
            try:
                yield job, _one_run(job)
            except Exception as exc:  # reported per run, the sweep continues
                yield job, exc
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_one_run, job) for job in jobs]
        for job, fut in zip(jobs, futures):
            try:
                yield job, fut.result()
            except Exception as exc:
                yield job, exc


def metrics_table(rows: list[tuple[float, object]]) -> tuple[str, dict]:
    """CSV text and JSON-able dict for ``(alpha, RunMetrics)`` rows.

    The final CSV row holds the largest improvement over the alpha=0 run
    for each metric; it is omitted when alpha=0 was not simulated.
    """
    lines = [",".join(METRIC_COLUMNS)]
    for a, m in rows:
        lines.append(f"{a!r},{m.final_trust!r},{m.avg_explicability!r},{m.rmse_pred!r}")
    doc = {"runs": [{"alpha": a, **m.to_dict()} for a, m in rows]}
    base = next((m for a, m in rows if a == 0.0), None)
    others = [m for a, m in rows if a != 0.0]
    if base is not None and others:
        try:
            imps = [improvement(base, m) for m in others]
        except ZeroDivisionError:
            imps = []
        if imps:
            best = {k: max(i[k] for i in imps) for k in ("final_trust", "avg_explicability", "rmse")}
            lines.append(
                f"max_improvement_pct,{best['final_trust']!r},{best['avg_explicability']!r},{best['rmse']!r}"
            )
            doc["max_improvement_pct"] = best
    return "\n".join(lines) + "\n", doc


def _resolve_cycles(cfg: ExperimentConfig) -> list[DriveCycle]:
    try:
        return [load_cycle(c) for c in cfg.cycles]
    except (FileNotFoundError, CycleParseError) as exc:
        raise ConfigError(str(exc)) from None


def cmd_run(cfg: ExperimentConfig, workers: Optional[int] = None, err=sys.stderr) -> int:
    cfg.validate("run")
    cycles = _resolve_cycles(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model_path = str(cfg.model_path) if cfg.predictor == "gru" else None
    jobs = [(c, cfg.predictor, float(a), cfg, model_path) for c in cycles for a in cfg.alphas]
    workers = workers or min(len(jobs), os.cpu_count() or 1)

    params = cfg.sim_params()
    results: dict[str, list] = {c.name: [] for c in cycles}
    traces: dict[str, list] = {c.name: [] for c in cycles}
    failed = 0
    for (cycle, pred, alpha, _, _), log in _map_runs(jobs, workers):
        if isinstance(log, Exception):
            failed += 1
            print(f"error: {cycle.name} alpha={alpha:g}: {log}", file=err)
            continue
        atomic_write_text(log_path(out, cycle.name, pred, alpha), log.to_csv())
        results[cycle.name].append((alpha, metrics(log, params.with_cycle(cycle.speeds))))
        traces[cycle.name].append((f"alpha = {alpha:g}", log.t.tolist(), log.T.tolist()))

    for name, rows in results.items():
        if not rows:
            continue
        csv_text, doc = metrics_table(rows)
        doc.update(cycle=name, predictor=cfg.predictor, seed=cfg.seed)
        stem = f"metrics_{name}_{cfg.predictor}"
        atomic_write_text(out / f"{stem}.csv", csv_text)
        atomic_write_text(out / f"{stem}.json", metrics_json(doc))
        svg = line_chart(
            traces[name], title=f"Trust level, {name} ({cfg.predictor.upper()} predictor)",
            xlabel="time (s)", ylabel="trust T",
        )
        atomic_write_text(out / f"trust_{name}_{cfg.predictor}.svg", svg)
    return 1 if failed else 0


def cmd_train(cfg: ExperimentConfig, workers: Optional[int] = None, err=sys.stderr, out_stream=sys.stdout) -> int:
    cfg.validate("train")
    cycles = _resolve_cycles(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.sim_params()
    jobs = [(c, "ca", float(a), cfg, None) for c in cycles for a in cfg.alphas]
    workers = workers or min(len(jobs), os.cpu_count() or 1)
    logs = []
    for (cycle, _, alpha, _, _), log in _map_runs(jobs, workers):
        if isinstance(log, Exception):
            print(f"error: training data run {cycle.name} alpha={alpha:g}: {log}", file=err)
            return 1
        logs.append(log)
    data = build_dataset(logs, H=params.H, N=params.N, v_floor=params.v_floor)
    model = GruModel(hidden=cfg.hidden, N=params.N, seed=cfg.seed)
    try:
        model, history = train_gru(model, data, cfg.train_config())
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=err)
        return 1
    path = cfg.model_path
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    lines = ["epoch,train_mse,val_mse"] + [f"{e},{tr!r},{va!r}" for e, tr, va in history]
    atomic_write_text(out / "gru_loss.csv", "\n".join(lines) + "\n")
    if history:
        best = min(history, key=lambda r: r[2])
        print(
            f"trained on {len(data.X_train)} windows ({len(data.X_val)} validation); "
            f"best val MSE {best[2]:.6g} at epoch {best[0]}; model saved to {path}",
            file=out_stream,
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trustmpc", description="Trust-aware MPC car-following experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("run", "simulate an alpha sweep and write logs, metrics and plots"),
        ("evaluate", "same as run with the GRU predictor"),
        ("train", "fit the GRU predictor on simulated trajectories"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config", nargs="?", help="key = value config file")
        s.add_argument("--cycle", action="append", help="preset name (us06, nycc) or CSV path; repeatable")
        s.add_argument("--predictor", choices=("ca", "gru"))
        s.add_argument("--alpha", help="comma-separated weights, e.g. 0,0.5,1")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int)
        s.add_argument("--model", help="GRU model path (read by run, written by train)")
        s.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                       help="override a simulation parameter or train.* option; repeatable")
        s.add_argument("--workers", type=int, help="parallel runs (default: CPU count)")
        s.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.cycle:
        cfg.set("cycle", ",".join(args.cycle))
    if args.command == "evaluate":
        cfg.predictor = "gru"
    if args.predictor:
        cfg.set("predictor", args.predictor)
    if args.alpha is not None:
        cfg.set("alpha", args.alpha)
    for key in ("out", "seed", "model"):
        value = getattr(args, key)
        if value is not None:
            cfg.set(key, str(value))
    for item in args.param:
        if "=" not in item:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if not key.startswith(("param.", "train.")):
            key = "param." + key
        cfg.set(key, value)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.dump_config:
            cfg.validate("train" if args.command == "train" else "run")
            sys.stdout.write(cfg.to_text())
            return 0
        if args.command == "train":
            return cmd_train(cfg, args.workers)
        return cmd_run(cfg, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
