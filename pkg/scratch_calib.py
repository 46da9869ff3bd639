"""Scratch calibration for the synthetic ordering benchmark (not shipped)."""
import sys
import time
import numpy as np
from dataclasses import replace
from dgfuse.synthetic import SynthShiftSpec, generate_synthetic
from dgfuse.model import ModelConfig
from dgfuse.training import TrainConfig, train
from dgfuse.metrics import evaluate
from dgfuse.data import fit_normalizer


def run(base, mcfg_kw, tcfg_kw, method, lam, beta, target, seed):
    spec = replace(base, test_domain=target)
    task = generate_synthetic(spec)
    mcfg = ModelConfig(in_channels=base.channels, timesteps=base.timesteps,
                       num_domains=base.num_domains - 1, num_classes=base.num_classes,
                       **mcfg_kw)
    tcfg = TrainConfig(method=method, lam=lam, beta=beta, seed=seed, **tcfg_kw)
    params, log = train(task, mcfg, tcfg)
    stats = fit_normalizer(task.train_domains)
    rep = evaluate(params, mcfg, task.test_domain, stats)
    best_val = max(r.val_weighted_f1 for r in log.records)
    return rep.weighted_f1, best_val, len(log.records)


def bench(name, base, mcfg_kw, tcfg_kw, seeds=3, variants=None):
    variants = variants or [("erm", "erm", 0, 0), ("full", "fusion", 1.0, 1.0)]
    t0 = time.monotonic()
    print(f"== {name}")
    means = {}
    for label, method, lam, beta in variants:
        scores, vals = [], []
        for target in range(base.num_domains):
            for seed in range(seeds):
                f1, v, ne = run(base, mcfg_kw, tcfg_kw, method, lam, beta, target, seed)
                scores.append(f1)
                vals.append(v)
        means[label] = np.mean(scores)
        print(f"  {label:8s} test {np.mean(scores):.4f} (sd {np.std(scores):.3f})  val {np.mean(vals):.3f}")
    if "full" in means and "erm" in means:
        print(f"  margin full-erm: {100*(means['full']-means['erm']):+.2f} pts   [{time.monotonic()-t0:.0f}s]")
    return means


MCFG = dict(conv1_filters=4, conv1_kernel=5, conv2_filters=8, conv2_kernel=5,
            pool_width=2, branch_dim=32, domain_hidden=32)
TCFG = dict(learning_rate=0.01, momentum=0.9, batch_size=48, max_epochs=60, patience=20)

if __name__ == "__main__":
    which = sys.argv[1:] or ["a", "b", "c"]
    if "a" in which:
        # phase-dominant shift, heavy noise, confusable classes
        base = SynthShiftSpec(num_domains=4, num_classes=5, channels=3, timesteps=32,
                              amplitude=(0.9, 1.0, 1.1, 1.0), phase=(0.0, 0.8, 1.6, 2.4),
                              noise=(0.5, 0.5, 0.5, 0.5), drift=(0.0, 0.0, 0.0, 0.0),
                              seed=0, windows_per_class=30, phase_jitter=0.4)
        bench("A phase-dominant", base, MCFG, TCFG)
    if "b" in which:
        # amplitude+drift dominant
        base = SynthShiftSpec(num_domains=4, num_classes=5, channels=3, timesteps=32,
                              amplitude=(0.5, 1.0, 1.5, 2.0), phase=(0.0, 0.4, 0.8, 1.2),
                              noise=(0.4, 0.4, 0.4, 0.4), drift=(-0.6, -0.2, 0.2, 0.6),
                              seed=0, windows_per_class=30, phase_jitter=0.3)
        bench("B amp+drift", base, MCFG, TCFG)
    if "c" in which:
        # mixed strong shift, noisier, fewer windows
        base = SynthShiftSpec(num_domains=4, num_classes=5, channels=3, timesteps=32,
                              amplitude=(0.7, 1.0, 1.4, 1.9), phase=(0.0, 0.7, 1.4, 2.1),
                              noise=(0.6, 0.6, 0.6, 0.6), drift=(-0.4, 0.0, 0.4, 0.8),
                              seed=0, windows_per_class=24, phase_jitter=0.5)
        bench("C mixed strong", base, MCFG, TCFG)
