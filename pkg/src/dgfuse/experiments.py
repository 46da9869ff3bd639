"""Experiment orchestration: leave-one-domain-out rotations over seeds,
hyperparameter sweeps on validation data, and distance-kind substitution
studies. Every aggregate table is recomputable from the per-run files it
sits next to, and a re-run with the same spec reproduces the same numbers."""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import hashlib
import shutil
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import importers, metrics, training, windowfile
from .data import DGTask, fit_normalizer, infer_num_classes, normalize_values
from .model import ModelConfig, predict, save_params
from .synthetic import SynthShiftSpec, generate_synthetic
from .training import TrainConfig, TrainLog, train

DATASETS = ("dsads", "uschad", "pamap2", "synthetic")
ABLATIONS = ("full", "cls_only", "cls_dir", "cls_dsr")

# defaults for F1/F2/kernels etc. come from ModelConfig; only overrides are listed
_MODEL_OVERRIDE_KEYS = (
    "conv1_filters", "conv1_kernel", "conv2_filters", "conv2_kernel",
    "pool_width", "branch_dim", "domain_hidden",
)


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: str
    out_dir: str
    data_path: str | None = None          # canonical window file or raw dataset root
    synth: SynthShiftSpec | None = None
    target: int | None = None             # None = full leave-one-out rotation
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    ablation: str = "full"
    model_overrides: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    val_fraction: float = 0.2
    workers: int = 1
    force: bool = False

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"dataset must be one of {DATASETS}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.dataset == "synthetic":
            if self.synth is None:
                raise ValueError("synthetic experiments need a SynthShiftSpec")
        elif self.data_path is None:
            raise ValueError(f"{self.dataset} experiments need a data path")
        bad = set(self.model_overrides) - set(_MODEL_OVERRIDE_KEYS)
        if bad:
            raise ValueError(f"unknown model overrides: {sorted(bad)}")

    def digest(self) -> str:
        """Content address of everything that affects the numbers (output
        location, worker count, and force flag excluded)."""
        payload = dataclasses.asdict(self)
        for key in ("out_dir", "workers", "force"):
            payload.pop(key)
        text = "\n".join(f"{k}={_canon(v)}" for k, v in sorted(payload.items()))
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def effective_train(self) -> TrainConfig:
        lam, beta = self.train.lam, self.train.beta
        if self.ablation == "cls_only":
            lam, beta = 0.0, 0.0
        elif self.ablation == "cls_dir":
            lam = 0.0
        elif self.ablation == "cls_dsr":
            beta = 0.0
        return replace(self.train, lam=lam, beta=beta)


def _canon(value) -> str:
    if isinstance(value, dict):
        return "{" + ",".join(f"{k}:{_canon(v)}" for k, v in sorted(value.items())) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_canon(v) for v in value) + "]"
    return repr(value)


def load_domains(spec: ExperimentSpec):
    """All domains of the spec's dataset plus the class count."""
    if spec.dataset == "synthetic":
        from .synthetic import domain_windows

        domains = [domain_windows(spec.synth, k) for k in range(spec.synth.num_domains)]
        return domains, spec.synth.num_classes
    path = Path(spec.data_path)
    if path.is_file():
        return windowfile.read_window_file(path)
    importer = {
        "dsads": importers.import_dsads,
        "uschad": importers.import_uschad,
        "pamap2": importers.import_pamap2,
    }[spec.dataset]
    domains = importer(path)
    return domains, infer_num_classes(domains)


def build_task(domains, num_classes: int, target: int, val_fraction: float) -> DGTask:
    ids = [d.domain_id for d in domains]
    if target not in ids:
        raise ValueError(f"target domain {target} not among domains {ids}")
    return DGTask(
        train_domains=[d for d in domains if d.domain_id != target],
        test_domain=next(d for d in domains if d.domain_id == target),
        num_classes=num_classes,
        val_fraction=val_fraction,
    )


def model_config_for(task: DGTask, overrides: dict) -> ModelConfig:
    sample = task.train_domains[0]
    return ModelConfig(
        in_channels=sample.num_channels,
        timesteps=sample.num_timesteps,
        num_domains=task.num_train_domains,
        num_classes=task.num_classes,
        **overrides,
    )


def run_single(spec: ExperimentSpec, target: int, seed: int, run_dir: Path) -> dict:
    """Train one (target, seed) cell and write its artifacts into run_dir.
    Returns the summary row for the aggregator."""
    domains, num_classes = load_domains(spec)
    task = build_task(domains, num_classes, target, spec.val_fraction)
    model_cfg = model_config_for(task, spec.model_overrides)
    tcfg = replace(spec.effective_train(), seed=seed)

    params, log = train(task, model_cfg, tcfg)
    stats = task.normalization_stats or fit_normalizer(task.train_domains)

    run_dir.mkdir(parents=True, exist_ok=True)
    report = metrics.evaluate(params, model_cfg, task.test_domain, stats)
    report.save(run_dir)
    log.save(run_dir / "trainlog.jsonl")
    save_params(run_dir / "params.dgm", model_cfg, params)

    _, _, weights = predict(params, model_cfg, normalize_values(task.test_domain.values, stats))
    mean_w = weights.mean(axis=0)
    with open(run_dir / "fusion_weights.csv", "w", newline="") as fh:
        wcsv = csv.writer(fh)
        wcsv.writerow(["branch", "train_domain_id", "mean_weight"])
        for k, ds in enumerate(task.train_domains):
            wcsv.writerow([k, ds.domain_id, repr(float(mean_w[k]))])

    best = log.records[log.best_epoch - 1] if log.records else None
    return {
        "target": target,
        "seed": seed,
        "weighted_f1": report.weighted_f1,
        "accuracy": report.accuracy,
        "auc": report.auc,
        "best_epoch": log.best_epoch,
        "best_val_f1": best.val_weighted_f1 if best else float("nan"),
        "stop_reason": log.stop_reason,
        "mean_weights": [float(v) for v in mean_w],
        "train_domain_ids": [d.domain_id for d in task.train_domains],
    }


def _run_cell(args):
    spec, target, seed, run_dir = args
    try:
        return run_single(spec, target, seed, Path(run_dir)), None
    except Exception:
        return {"target": target, "seed": seed}, traceback.format_exc()


def prepare_out_dir(spec: ExperimentSpec, label: str = "run") -> Path:
    out = Path(spec.out_dir) / f"{label}-{spec.dataset}-{spec.ablation}-{spec.digest()}"
    if out.exists():
        if not spec.force:
            raise RuntimeError(
                f"result directory {out} already exists; pass force=True (--force) to overwrite"
            )
        shutil.rmtree(out)
    out.mkdir(parents=True)
    return out


def run_experiment(spec: ExperimentSpec) -> Path:
    """Full rotation: for each target domain and seed, build the task, train,
    and evaluate on the held-out domain; then aggregate.

    Emits per-run artifacts under runs/, an aggregate.csv keyed by target
    with a trailing average row, and mean fusion weights per target. Failed
    runs are recorded and their cells marked, never silently averaged.
    """
    out = prepare_out_dir(spec)
    (out / "spec.txt").write_text(
        "\n".join(f"{k}={_canon(v)}" for k, v in sorted(dataclasses.asdict(spec).items())) + "\n"
    )
    domains, _ = load_domains(spec)
    targets = [d.domain_id for d in domains] if spec.target is None else [spec.target]

    cells = [
        (spec, t, s, str(out / "runs" / f"t{t}_s{s}"))
        for t in targets for s in spec.seeds
    ]
    results = []
    if spec.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]

    failures = [(row, tb) for row, tb in results if tb is not None]
    if failures:
        with open(out / "failures.txt", "w") as fh:
            for row, tb in failures:
                fh.write(f"--- target {row['target']} seed {row['seed']} ---\n{tb}\n")
    rows = [row for row, tb in results if tb is None]
    write_aggregate(out, targets, spec.seeds, rows)
    write_weight_summary(out, targets, rows)
    return out


def write_aggregate(out: Path, targets, seeds, rows) -> Path:
    """aggregate.csv: one row per target with mean/std weighted F1 over
    seeds, then a final average row over targets. Missing cells are NA."""
    by_target = {t: [r for r in rows if r["target"] == t] for t in targets}
    table = []
    for t in targets:
        got = sorted(by_target[t], key=lambda r: r["seed"])
        f1s = [r["weighted_f1"] for r in got]
        if len(got) == len(seeds):
            table.append([str(t), len(got), repr(float(np.mean(f1s))), repr(float(np.std(f1s)))])
        else:
            table.append([str(t), len(got), "NA", "NA"])
    complete = [row for row in table if row[2] != "NA"]
    if len(complete) == len(targets):
        overall = repr(float(np.mean([float(row[2]) for row in table])))
    else:
        overall = "NA"
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target", "runs", "mean_weighted_f1", "std_weighted_f1"])
        w.writerows(table)
        w.writerow(["average", sum(int(r[1]) for r in table), overall, ""])
    return out / "aggregate.csv"


def write_weight_summary(out: Path, targets, rows) -> Path:
    """Mean gate weight given to each training-domain branch, per target."""
    path = out / "fusion_weights.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target", "branch", "train_domain_id", "mean_weight"])
        for t in targets:
            got = [r for r in rows if r["target"] == t and "mean_weights" in r]
            if not got:
                continue
            stack = np.array([r["mean_weights"] for r in got])
            ids = got[0]["train_domain_ids"]
            for k, dom in enumerate(ids):
                w.writerow([t, k, dom, repr(float(stack[:, k].mean()))])
    return path


def rebuild_aggregate(result_dir) -> Path:
    """Recompute aggregate.csv from the per-run eval reports on disk."""
    result_dir = Path(result_dir)
    rows = []
    for run in sorted((result_dir / "runs").glob("t*_s*")):
        t, s = run.name[1:].split("_s")
        report = metrics.load_eval_report(run)
        rows.append({"target": int(t), "seed": int(s), "weighted_f1": report.weighted_f1})
    targets = sorted({r["target"] for r in rows})
    seeds = sorted({r["seed"] for r in rows})
    return write_aggregate(result_dir, targets, seeds, rows)


def read_aggregate(path) -> dict:
    """Parse aggregate.csv into {target-or-'average': mean weighted F1}."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            value = row["mean_weighted_f1"]
            out[row["target"]] = float(value) if value not in ("", "NA") else None
    return out


def run_sweep(spec: ExperimentSpec, lambdas, betas) -> Path:
    """Grid search over (lam, beta) scored on validation data only.

    Each grid point trains the full rotation and its cell is the mean
    best-epoch validation weighted F1. The winner (ties: first in grid
    order) is then evaluated once on the held-out test domains.
    """
    lambdas = [float(v) for v in lambdas]
    betas = [float(v) for v in betas]
    if not lambdas or not betas:
        raise ValueError("empty sweep grid")
    out = prepare_out_dir(spec, label="sweep")
    domains, num_classes = load_domains(spec)
    targets = [d.domain_id for d in domains] if spec.target is None else [spec.target]

    grid_rows = []
    best = None
    for lam in lambdas:
        for beta in betas:
            scores = []
            for t in targets:
                task = build_task(domains, num_classes, t, spec.val_fraction)
                model_cfg = model_config_for(task, spec.model_overrides)
                for seed in spec.seeds:
                    tcfg = replace(spec.train, lam=lam, beta=beta, seed=seed)
                    _, log = train(task, model_cfg, tcfg)
                    scores.append(log.records[log.best_epoch - 1].val_weighted_f1)
            mean_val = float(np.mean(scores))
            grid_rows.append((lam, beta, mean_val))
            if best is None or mean_val > best[2]:
                best = (lam, beta, mean_val)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "beta", "mean_val_weighted_f1"])
        for lam, beta, v in grid_rows:
            w.writerow([lam, beta, repr(v)])
        w.writerow(["best", f"{best[0]},{best[1]}", repr(best[2])])

    final = replace(
        spec,
        out_dir=str(out),
        train=replace(spec.train, lam=best[0], beta=best[1]),
        force=True,
    )
    run_experiment(final)
    return out


def run_distance_substitution(spec: ExperimentSpec) -> Path:
    """Train the full pipeline once per distance kind (and once as the plain
    baseline) and tabulate the average weighted F1 side by side."""
    out = prepare_out_dir(spec, label="subst")
    rows = []
    for kind in ("mmd", "coral", "adversarial"):
        sub = replace(
            spec, out_dir=str(out), force=True,
            train=replace(spec.train, distance=kind, method="fusion"),
        )
        res = run_experiment(sub)
        res = res.rename(out / f"kind={kind}")
        agg = read_aggregate(res / "aggregate.csv")
        rows.append((kind, agg["average"]))
    erm = replace(spec, out_dir=str(out), force=True, train=replace(spec.train, method="erm"))
    res = run_experiment(erm)
    res = res.rename(out / "kind=erm")
    agg = read_aggregate(res / "aggregate.csv")
    rows.append(("erm", agg["average"]))
    with open(out / "substitution.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["distance", "mean_weighted_f1"])
        for kind, value in rows:
            w.writerow([kind, repr(value) if value is not None else "NA"])
    return out
