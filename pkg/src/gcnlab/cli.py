"""``gcnlab`` command-line entry point."""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .data import BundleError, atomic_write_text, load_bundle, load_karate
from .graph import OpKind, make_operator, spmm
from .models import Family, ModelSpec, Trick
from .spectral import deflate_dominant
from .training import Dataset, EpochRecord, TrainConfig, TrainingDiverged, train

EXIT_OK, EXIT_DIVERGED, EXIT_USAGE = 0, 1, 2
COMMANDS = ("train", "sweep-depth", "sweep-eta", "tricks", "karate-demo")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, csv_text(header, rows))


def epoch_header(num_layers: int) -> list[str]:
    return (
        ["epoch", "loss_l0", "loss_lreg", "acc_train", "acc_val", "acc_test"]
        + [f"smooth_feat_L{i}" for i in range(1, num_layers + 1)]
        + [f"smooth_node_L{i}" for i in range(1, num_layers + 1)]
        + ["ms"]
    )


def epoch_row(rec: EpochRecord, num_layers: int) -> list:
    nan = [math.nan] * num_layers
    return [
        rec.epoch, rec.loss_l0, rec.loss_lreg, rec.acc_train, rec.acc_val, rec.acc_test,
        *(rec.smooth_feat or nan), *(rec.smooth_node or nan), rec.ms,
    ]


def epochs_csv(records: list[EpochRecord], num_layers: int, log_every: int = 1) -> tuple[list[str], list]:
    last = len(records) - 1
    rows = [epoch_row(r, num_layers) for r in records if r.epoch % log_every == 0 or r.epoch == last]
    return epoch_header(num_layers), rows


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset.lower() == "karate":
        return load_karate()
    return load_bundle(cfg.dataset)


def model_spec(cfg: ExperimentConfig, ds: Dataset, **over) -> ModelSpec:
    fields = dict(
        depth=cfg.depth,
        in_dim=ds.num_features,
        hidden_dim=cfg.hidden,
        out_dim=ds.num_classes,
        family=Family(cfg.family),
        operator=OpKind(cfg.operator),
        eta_weight=cfg.eta_weight,
        trick=Trick(cfg.trick),
        pair_norm_scale=cfg.pair_norm_scale,
        skip=cfg.skip,
        seed=cfg.seed,
    )
    fields.update(over)
    if fields["family"] is Family.SGC:
        fields["skip"] = None
        fields["trick"] = Trick.NONE
    return ModelSpec(**fields)


def train_config(cfg: ExperimentConfig, **over) -> TrainConfig:
    fields = dict(
        epochs=cfg.epochs,
        lr=cfg.lr,
        optimizer=cfg.optimizer,
        weight_decay=cfg.weight_decay,
        gamma=cfg.gamma,
        dropout=cfg.dropout,
        eval_every=cfg.eval_every,
        seed=cfg.seed,
        smoothing=cfg.smoothing,
        smoothing_sample=cfg.smoothing_sample,
    )
    fields.update(over)
    return TrainConfig(**fields)


@dataclass
class RunOutcome:
    key: tuple
    records: list[EpochRecord]
    seconds: float
    diverged_at: Optional[int] = None


def _run(job) -> RunOutcome:
    key, ds, spec, tcfg = job
    t0 = time.perf_counter()
    try:
        res = train(ds, spec, tcfg)
    except TrainingDiverged as exc:
        return RunOutcome(key, [], time.perf_counter() - t0, exc.epoch)
    return RunOutcome(key, res.records, time.perf_counter() - t0)


def run_jobs(jobs: list, n_workers: int) -> list[RunOutcome]:
    """Train every job; results come back in submission order."""
    if n_workers <= 1 or len(jobs) <= 1:
        return [_run(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_run, jobs))


def _final(rec_list: list[EpochRecord], attr: str) -> float:
    return getattr(rec_list[-1], attr) if rec_list else math.nan


def _mean_std(xs) -> tuple[float, float]:
    xs = np.asarray([x for x in xs if not math.isnan(x)], dtype=float)
    if xs.size == 0:
        return math.nan, math.nan
    return float(xs.mean()), float(xs.std())


def _report_divergence(outcomes: list[RunOutcome]) -> int:
    bad = [o for o in outcomes if o.diverged_at is not None]
    for o in bad:
        print(f"run {o.key} diverged at epoch {o.diverged_at}", file=sys.stderr)
    return EXIT_DIVERGED if bad else EXIT_OK


def _write_run_logs(out: Path, outcomes: list[RunOutcome], num_layers_of, log_every: int):
    if log_every <= 0:
        return
    for o in outcomes:
        if o.diverged_at is not None:
            continue
        *group, seed = o.key
        header, rows = epochs_csv(o.records, num_layers_of(o), log_every)
        write_csv(out / "runs" / "_".join(map(str, group)) / f"epochs_seed{seed}.csv", header, rows)


def summary_rows(records: list[EpochRecord]) -> list[list]:
    final = records[-1]
    with_val = [r for r in records if not math.isnan(r.acc_val)]
    best = max(with_val, key=lambda r: r.acc_val) if with_val else final
    cols = ("epoch", "loss_l0", "loss_lreg", "acc_train", "acc_val", "acc_test")
    return [["final", *(getattr(final, c) for c in cols)], ["best_val", *(getattr(best, c) for c in cols)]]


SUMMARY_HEADER = ["which", "epoch", "loss_l0", "loss_lreg", "acc_train", "acc_val", "acc_test"]


def cmd_train(cfg: ExperimentConfig, out: Path) -> int:
    ds = load_dataset(cfg)
    spec = model_spec(cfg, ds)
    tcfg = train_config(cfg)
    try:
        res = train(ds, spec, tcfg)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    header, rows = epochs_csv(res.records, spec.depth, max(cfg.log_every, 1))
    texts = {"epochs.csv": csv_text(header, rows)}
    if res.records:
        texts["summary.csv"] = csv_text(SUMMARY_HEADER, summary_rows(res.records))
    out.mkdir(parents=True, exist_ok=True)
    for name, text in texts.items():
        atomic_write_text(out / name, text)
    return EXIT_OK


def _family_setup(cfg: ExperimentConfig, ds: Dataset, family: str, depth: int, seed: int):
    if family == "dnn":
        return model_spec(cfg, ds, family=Family.MLP, depth=depth, seed=seed), train_config(cfg, seed=seed, gamma=cfg.dnn_gamma)
    return model_spec(cfg, ds, family=Family(family), depth=depth, seed=seed), train_config(cfg, seed=seed)


def cmd_sweep_depth(cfg: ExperimentConfig, out: Path) -> int:
    ds = load_dataset(cfg)
    jobs = []
    for family in cfg.families:
        for depth in cfg.depths:
            for k in range(cfg.seeds):
                spec, tcfg = _family_setup(cfg, ds, family, depth, cfg.seed + k)
                jobs.append(((family, f"d{depth}", cfg.seed + k), ds, spec, tcfg))
    outcomes = run_jobs(jobs, cfg.jobs)
    rows = []
    for family in cfg.families:
        for depth in cfg.depths:
            group = [o for o in outcomes if o.key[:2] == (family, f"d{depth}")]
            tr = _mean_std(_final(o.records, "acc_train") for o in group)
            te = _mean_std(_final(o.records, "acc_test") for o in group)
            diverged = sum(o.diverged_at is not None for o in group)
            rows.append([family, depth, len(group), diverged, *tr, *te])
    header = ["family", "depth", "seeds", "diverged", "train_acc_mean", "train_acc_std", "test_acc_mean", "test_acc_std"]
    write_csv(out / "depth_sweep.csv", header, rows)
    _write_run_logs(out, outcomes, lambda o: int(o.key[1][1:]), cfg.log_every)
    return _report_divergence(outcomes)


def cmd_sweep_eta(cfg: ExperimentConfig, out: Path) -> int:
    ds = load_dataset(cfg)
    jobs = []
    for depth in cfg.eta_depths:
        for w in cfg.eta_weights:
            for k in range(cfg.seeds):
                spec = model_spec(cfg, ds, family=Family.GCN, operator=OpKind.ETA, eta_weight=w, depth=depth, seed=cfg.seed + k)
                jobs.append(((f"d{depth}", f"w{fmt(w)}", cfg.seed + k), ds, spec, train_config(cfg, seed=cfg.seed + k)))
    outcomes = run_jobs(jobs, cfg.jobs)
    header = ["layers", "split", "stat"] + [f"w={fmt(w)}" for w in cfg.eta_weights]
    rows = []
    for depth in cfg.eta_depths:
        for split, attr in (("train", "acc_train"), ("test", "acc_test")):
            stats = []
            for w in cfg.eta_weights:
                group = [o for o in outcomes if o.key[:2] == (f"d{depth}", f"w{fmt(w)}")]
                stats.append(_mean_std(_final(o.records, attr) for o in group))
            rows.append([depth, split, "mean", *(s[0] for s in stats)])
            rows.append([depth, split, "std", *(s[1] for s in stats)])
    write_csv(out / "eta_sweep.csv", header, rows)
    _write_run_logs(out, outcomes, lambda o: int(o.key[0][1:]), cfg.log_every)
    return _report_divergence(outcomes)


def first_epoch_reaching(records: list[EpochRecord], attr: str, level: float) -> float:
    for r in records:
        if getattr(r, attr) >= level:
            return r.epoch
    return math.nan


def _last_mean(records: list[EpochRecord], attr: str, k: int = 50) -> float:
    vals = [getattr(r, attr) for r in records[-k:]]
    vals = [v for v in vals if not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


def cmd_tricks(cfg: ExperimentConfig, out: Path) -> int:
    ds = load_dataset(cfg)
    jobs = []
    for trick in cfg.tricks:
        for k in range(cfg.seeds):
            spec = model_spec(cfg, ds, trick=Trick(trick), seed=cfg.seed + k)
            jobs.append(((trick, cfg.seed + k), ds, spec, train_config(cfg, seed=cfg.seed + k)))
    outcomes = run_jobs(jobs, cfg.jobs)
    for o in outcomes:
        if o.diverged_at is None:
            header, rows = epochs_csv(o.records, cfg.depth, max(cfg.log_every, 1))
            write_csv(out / o.key[0] / f"epochs_seed{o.key[1]}.csv", header, rows)
    header = [
        "trick", "seeds", "diverged", "last50_train_mean", "last50_test_mean", "last50_test_std",
        "first_epoch_train_ge_0.95", "seconds_mean",
    ]
    rows = []
    for trick in cfg.tricks:
        group = [o for o in outcomes if o.key[0] == trick]
        ok = [o for o in group if o.diverged_at is None]
        test = _mean_std(_last_mean(o.records, "acc_test") for o in ok)
        rows.append([
            trick, len(group), len(group) - len(ok),
            _mean_std(_last_mean(o.records, "acc_train") for o in ok)[0], *test,
            _mean_std(first_epoch_reaching(o.records, "acc_train", 0.95) for o in ok)[0],
            _mean_std(o.seconds for o in group)[0],
        ])
    write_csv(out / "tricks_summary.csv", header, rows)
    return _report_divergence(outcomes)


def smoothing_trajectory(ds: Dataset, steps: int, mean_sub: bool, seed: int) -> np.ndarray:
    """Random 2-d features after ``steps`` random-walk propagations, scaled per column by max |.|."""
    op = make_operator(ds.graph, OpKind.RW_RENORM)
    X = np.random.default_rng(seed).standard_normal((ds.n, 2))
    for _ in range(steps):
        X = spmm(op, X)
        if mean_sub:
            X = deflate_dominant(X, op)
    peak = np.abs(X).max(axis=0)
    return X / np.where(peak > 0, peak, 1.0)


def cmd_karate_demo(cfg: ExperimentConfig, out: Path) -> int:
    ds = load_dataset(cfg)
    texts = {}
    for k in cfg.smoothing_steps:
        for mode in ("plain", "meansub"):
            Y = smoothing_trajectory(ds, k, mode == "meansub", cfg.seed)
            rows = [[i, Y[i, 0], Y[i, 1], ds.labels[i]] for i in range(ds.n)]
            texts[f"karate_smoothing_k{k}_{mode}.csv"] = csv_text(["node", "x", "y", "label"], rows)
    code = EXIT_OK
    for k in range(cfg.seeds):
        seed = cfg.seed + k
        spec = model_spec(cfg, ds, seed=seed)
        try:
            res = train(ds, spec, train_config(cfg, seed=seed))
        except TrainingDiverged as exc:
            print(f"error: seed {seed}: {exc}", file=sys.stderr)
            code = EXIT_DIVERGED
            continue
        sub = "" if cfg.seeds == 1 else f"seed{seed}/"
        header, rows = epochs_csv(res.records, spec.depth, max(cfg.log_every, 1))
        texts[sub + "epochs.csv"] = csv_text(header, rows)
        if res.records:
            texts[sub + "summary.csv"] = csv_text(SUMMARY_HEADER, summary_rows(res.records))
    for name, text in texts.items():
        (out / name).parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / name, text)
    return code


HANDLERS = {
    "train": cmd_train,
    "sweep-depth": cmd_sweep_depth,
    "sweep-eta": cmd_sweep_eta,
    "tricks": cmd_tricks,
    "karate-demo": cmd_karate_demo,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcnlab", description="Train GCN variants and log smoothing diagnostics.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--out", help="output directory (overrides the config's out)")
    p.add_argument("--jobs", type=int, help="concurrent training runs in sweeps")
    p.add_argument("--seeds", type=int, help="runs per setting; seeds are seed, seed+1, ...")
    p.add_argument("--log-every", type=int, dest="log_every", help="write every Nth epoch row")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"out": args.out, "jobs": args.jobs, "seeds": args.seeds, "log_every": args.log_every}
    try:
        cfg = load_config(args.config, args.command, overrides)
        return HANDLERS[args.command](cfg, Path(cfg.out))
    except (ConfigError, BundleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
