"""Command-line front end.

Subcommands: import (raw dataset -> canonical window file), train, eval,
sweep, substitute, report. Every option can also come from a plain-text
config file (INI sections [experiment], [model], [train], [synth]); a flag
given on the command line wins over the file. Exit code is 0 only if every
run succeeded.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from . import experiments, importers, metrics, windowfile
from .data import fit_normalizer, infer_num_classes
from .distances import KernelSpec, MEDIAN_HEURISTIC
from .model import load_params
from .synthetic import SynthShiftSpec
from .training import TrainConfig


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI config file; command-line flags override it")
    p.add_argument("--dataset", choices=experiments.DATASETS)
    p.add_argument("--data-root", dest="data_root", help="raw dataset root directory")
    p.add_argument("--data", help="canonical window file (written by 'import')")
    p.add_argument("--target", help="held-out domain id, or 'all' for the full rotation")
    p.add_argument("--seeds", type=int, help="number of seeds (default 5)")
    p.add_argument("--seed-base", dest="seed_base", type=int, help="first seed (default 0)")
    p.add_argument("--lambda", dest="lam", type=float, help="weight on the domain-classifier loss")
    p.add_argument("--beta", type=float, help="weight on the alignment loss")
    p.add_argument("--distance", choices=("mmd", "coral", "adversarial"))
    p.add_argument("--ablation", choices=experiments.ABLATIONS)
    p.add_argument("--method", choices=("fusion", "erm"))
    p.add_argument("--monitor", choices=("val_f1", "val_loss"))
    p.add_argument("--fusion-teacher", dest="fusion_teacher", action="store_true", default=None,
                   help="gate with one-hot true-domain weights during training")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--force", action="store_true", default=None,
                   help="overwrite an existing result directory")
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--bandwidth", type=float, action="append",
                   help="fixed kernel bandwidth (repeatable); default: median heuristic")
    p.add_argument("--window-len", dest="window_len", type=int)
    p.add_argument("--stride", type=int)


def _read_config(path):
    cp = configparser.ConfigParser()
    if path:
        if not Path(path).exists():
            raise SystemExit(f"config file not found: {path}")
        cp.read(path)
    return cp


def _get(args, cp, section, key, cast, default):
    cli = getattr(args, key, None)
    if cli is not None:
        return cli
    if cp.has_option(section, key):
        raw = cp.get(section, key)
        if cast is bool:
            return cp.getboolean(section, key)
        return cast(raw)
    return default


def _build_spec(args) -> experiments.ExperimentSpec:
    cp = _read_config(args.config)
    dataset = _get(args, cp, "experiment", "dataset", str, None)
    if dataset is None:
        raise SystemExit("--dataset is required (flag or config)")
    out = _get(args, cp, "experiment", "out", str, "results")
    data_path = getattr(args, "data", None) or _get(args, cp, "experiment", "data_root", str, None)

    target_raw = _get(args, cp, "experiment", "target", str, "all")
    target = None if str(target_raw).lower() == "all" else int(target_raw)
    n_seeds = _get(args, cp, "experiment", "seeds", int, 5)
    seed_base = _get(args, cp, "experiment", "seed_base", int, 0)

    bandwidths = args.bandwidth
    if bandwidths is None and cp.has_option("train", "bandwidths"):
        bandwidths = [float(v) for v in cp.get("train", "bandwidths").split(",")]
    kernel = KernelSpec(bandwidths=tuple(bandwidths)) if bandwidths else KernelSpec(bandwidths=MEDIAN_HEURISTIC)

    train_kwargs = {}
    for key, cast in (("lam", float), ("beta", float), ("learning_rate", float),
                      ("momentum", float), ("batch_size", int), ("max_epochs", int),
                      ("patience", int), ("distance", str), ("method", str),
                      ("monitor", str), ("fusion_teacher", bool), ("disc_hidden", int)):
        value = _get(args, cp, "train", key, cast, None)
        if value is not None:
            train_kwargs[key] = value
    tcfg = TrainConfig(kernel=kernel, **train_kwargs)

    overrides = {}
    for key in ("conv1_filters", "conv1_kernel", "conv2_filters", "conv2_kernel",
                "pool_width", "branch_dim", "domain_hidden"):
        value = _get(args, cp, "model", key, int, None)
        if value is not None:
            overrides[key] = value

    synth = None
    if dataset == "synthetic":
        synth = SynthShiftSpec(
            num_domains=_get(args, cp, "synth", "num_domains", int, 4),
            num_classes=_get(args, cp, "synth", "num_classes", int, 5),
            channels=_get(args, cp, "synth", "channels", int, 3),
            timesteps=_get(args, cp, "synth", "timesteps", int, 32),
            amplitude=_parse_list(cp, "synth", "amplitude", 1.0),
            phase=_parse_list(cp, "synth", "phase", 0.0),
            noise=_parse_list(cp, "synth", "noise", 0.1),
            drift=_parse_list(cp, "synth", "drift", 0.0),
            seed=_get(args, cp, "synth", "seed", int, 0),
            windows_per_class=_get(args, cp, "synth", "windows_per_class", int, 64),
        )

    return experiments.ExperimentSpec(
        dataset=dataset,
        out_dir=out,
        data_path=data_path,
        synth=synth,
        target=target,
        seeds=tuple(range(seed_base, seed_base + n_seeds)),
        ablation=_get(args, cp, "experiment", "ablation", str, "full"),
        model_overrides=overrides,
        train=tcfg,
        val_fraction=_get(args, cp, "experiment", "val_fraction", float, 0.2),
        workers=_get(args, cp, "experiment", "workers", int, 1),
        force=bool(_get(args, cp, "experiment", "force", bool, False)),
    )


def _parse_list(cp, section, key, default):
    if cp.has_option(section, key):
        parts = [float(v) for v in cp.get(section, key).split(",")]
        return tuple(parts) if len(parts) > 1 else parts[0]
    return default


def cmd_import(args) -> int:
    if args.dataset == "synthetic":
        raise SystemExit("'import' works on raw datasets; synthetic tasks are generated on the fly")
    root = args.data_root
    if root is None:
        raise SystemExit("--data-root is required for import")
    window_len = args.window_len or importers.DEFAULT_WINDOW_LEN
    stride = args.stride or importers.DEFAULT_STRIDE
    if args.dataset == "dsads":
        domains = importers.import_dsads(root)
        window_len = domains[0].num_timesteps
        stride = window_len
    elif args.dataset == "uschad":
        domains = importers.import_uschad(root, window_len, stride)
    elif args.dataset == "pamap2":
        domains = importers.import_pamap2(root, window_len, stride)
    else:
        raise SystemExit(f"unknown dataset {args.dataset!r}")
    num_classes = infer_num_classes(domains)
    out = Path(args.out or f"{args.dataset}.dgw")
    stats = fit_normalizer(domains)
    meta = {
        "dataset": args.dataset,
        "num_domains": len(domains),
        "num_classes": num_classes,
        "window_len": window_len,
        "stride": stride,
        "channel_mean": ",".join(repr(v) for v in stats.mean),
        "channel_std": ",".join(repr(v) for v in stats.std),
    }
    for d in domains:
        meta[f"domain.{d.domain_id}"] = f"{d.name} ({len(d)} windows)"
    windowfile.write_window_file(out, domains, num_classes, meta)
    print(f"wrote {sum(len(d) for d in domains)} windows, {len(domains)} domains -> {out}")
    return 0


def cmd_train(args) -> int:
    spec = _build_spec(args)
    out = experiments.run_experiment(spec)
    print(f"results in {out}")
    agg = experiments.read_aggregate(out / "aggregate.csv")
    for key, value in agg.items():
        print(f"  target {key}: weighted F1 {value if value is not None else 'FAILED'}")
    return 0 if (out / "failures.txt").exists() is False else 1


def cmd_eval(args) -> int:
    if not args.params:
        raise SystemExit("--params is required")
    cfg, params = load_params(args.params)
    spec = _build_spec(args)
    domains, num_classes = experiments.load_domains(spec)
    target = spec.target
    if target is None:
        raise SystemExit("--target must name one domain for eval")
    task = experiments.build_task(domains, num_classes, target, spec.val_fraction)
    stats = fit_normalizer(task.train_domains)
    report = metrics.evaluate(params, cfg, task.test_domain, stats)
    out = Path(args.out or "eval-out")
    report.save(out)
    print(f"weighted F1 {report.weighted_f1:.4f}, accuracy {report.accuracy:.4f}, auc {report.auc:.4f}")
    print(f"report in {out}")
    return 0


def cmd_sweep(args) -> int:
    spec = _build_spec(args)
    lambdas = [float(v) for v in args.lambda_grid.split(",")]
    betas = [float(v) for v in args.beta_grid.split(",")]
    out = experiments.run_sweep(spec, lambdas, betas)
    print(f"sweep results in {out}")
    return 0


def cmd_substitute(args) -> int:
    spec = _build_spec(args)
    out = experiments.run_distance_substitution(spec)
    print((out / "substitution.csv").read_text())
    return 0


def cmd_report(args) -> int:
    path = experiments.rebuild_aggregate(args.result_dir)
    print(path.read_text())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dgfuse",
        description="Domain-generalized activity recognition experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("import", help="ingest a raw dataset into a canonical window file")
    _add_common(p)
    p.set_defaults(fn=cmd_import)

    p = sub.add_parser("train", help="leave-one-domain-out training + test evaluation")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate saved parameters on a held-out domain")
    _add_common(p)
    p.add_argument("--params", help="parameter file written by 'train'")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="grid-search lambda/beta on validation data")
    _add_common(p)
    p.add_argument("--lambda-grid", default="0.005,0.01,0.1,1,5,10")
    p.add_argument("--beta-grid", default="0.05,0.1,0.5,1,5,10")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("substitute", help="compare mmd/coral/adversarial alignment losses")
    _add_common(p)
    p.set_defaults(fn=cmd_substitute)

    p = sub.add_parser("report", help="rebuild aggregate tables from per-run files")
    p.add_argument("result_dir")
    p.set_defaults(fn=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
