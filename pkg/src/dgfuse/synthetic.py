"""Synthetic multi-domain sensor streams with controllable covariate shift.

Each class is a mixture of two harmonics at a class-specific base frequency;
each domain distorts the waveform with its own amplitude scale, phase offset,
additive Gaussian noise, and constant drift. Useful both as a fast benchmark
and as a test oracle: setting identical shift parameters for every domain
yields one shared distribution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DGTask, DomainDataset


def _per_domain(value, num_domains: int, name: str) -> tuple[float, ...]:
    if np.isscalar(value):
        return tuple(float(value) for _ in range(num_domains))
    out = tuple(float(v) for v in value)
    if len(out) != num_domains:
        raise ValueError(f"{name} needs one value per domain ({num_domains}), got {len(out)}")
    return out


@dataclass(frozen=True)
class SynthShiftSpec:
    """Generator settings; amplitude/phase/noise/drift may be scalars
    (broadcast to all domains) or one value per domain."""

    num_domains: int
    num_classes: int
    channels: int
    timesteps: int
    amplitude: tuple[float, ...] = 1.0
    phase: tuple[float, ...] = 0.0
    noise: tuple[float, ...] = 0.1
    drift: tuple[float, ...] = 0.0
    seed: int = 0
    windows_per_class: int = 64
    val_fraction: float = 0.2
    test_domain: int = -1
    phase_jitter: float = 0.02  # fractional-window time jitter per window

    def __post_init__(self):
        if self.num_domains < 2:
            raise ValueError(f"need at least 2 domains, got {self.num_domains}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.channels < 1 or self.timesteps < 4:
            raise ValueError("degenerate window shape")
        if self.windows_per_class < 2:
            raise ValueError("need at least 2 windows per class")
        for name in ("amplitude", "phase", "noise", "drift"):
            object.__setattr__(self, name, _per_domain(getattr(self, name), self.num_domains, name))
        if any(s < 0 for s in self.noise):
            raise ValueError("noise sigma must be non-negative")


def domain_windows(spec: SynthShiftSpec, k: int) -> DomainDataset:
    """Generate all windows of domain ``k``.

    Each domain draws from its own seed stream, so the data of domain k does
    not depend on which domain is later designated as the test domain.
    """
    if not 0 <= k < spec.num_domains:
        raise ValueError(f"domain index {k} out of range")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, k]))
    t = np.arange(spec.timesteps) / spec.timesteps
    ch_phase = 2.0 * np.pi * np.arange(spec.channels) / spec.channels
    n = spec.windows_per_class
    blocks = []
    for c in range(spec.num_classes):
        freq = c + 2  # whole cycles per window, distinct per class
        # phase offset and jitter act as time delays, so one domain parameter
        # displaces each class's waveform by a class-frequency-dependent angle
        jitter = rng.uniform(-spec.phase_jitter, spec.phase_jitter, size=(n, 1, 1))
        theta = (
            2.0 * np.pi * freq * (t[None, None, :] + spec.phase[k] + jitter)
            + ch_phase[None, :, None]
        )
        base = np.sin(theta) + 0.5 * np.sin(2.0 * theta + 0.7)
        x = spec.drift[k] + spec.amplitude[k] * base
        if spec.noise[k] > 0:
            x = x + rng.normal(0.0, spec.noise[k], size=x.shape)
        blocks.append(x)
    values = np.concatenate(blocks, axis=0)
    activities = np.repeat(np.arange(spec.num_classes), n)
    return DomainDataset(values, activities, domain_id=k, name=f"synth{k}")


def generate_synthetic(spec: SynthShiftSpec) -> DGTask:
    """Build a leave-one-domain-out task from the spec.

    The domain at ``spec.test_domain`` (negative indices count from the end)
    is held out; the rest become training domains. Deterministic given the
    seed: regenerating yields byte-identical arrays.
    """
    if spec.num_domains < 3:
        raise ValueError(
            f"{spec.num_domains} domains cannot form a task: one is held out and at least "
            "2 training domains are required"
        )
    test_idx = spec.test_domain % spec.num_domains
    domains = [domain_windows(spec, k) for k in range(spec.num_domains)]
    train = [d for d in domains if d.domain_id != test_idx]
    return DGTask(
        train_domains=train,
        test_domain=domains[test_idx],
        num_classes=spec.num_classes,
        val_fraction=spec.val_fraction,
    )
