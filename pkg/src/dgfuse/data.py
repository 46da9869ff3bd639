"""Canonical windowed sensor data: window/domain containers, slicing a
continuous stream into labeled windows, channel normalization, and the
stratified train/validation split used by every task."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# Domain label for windows whose domain is not known (held-out test data on
# the wire). Matches the u16 sentinel of the window file format.
UNKNOWN_DOMAIN = 0xFFFF


class IngestionError(ValueError):
    """Raw dataset files are missing, inconsistent, or malformed."""


class FormatError(ValueError):
    """A binary container is corrupt or does not match the expected layout."""


@dataclass(frozen=True, eq=False)
class SensorWindow:
    """One fixed-length multi-channel window plus activity and domain labels.

    ``values`` has shape (channels, timesteps), float64, all entries finite.
    """

    values: np.ndarray
    activity: int
    domain: int = UNKNOWN_DOMAIN

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"window values must be (channels, timesteps), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("window contains non-finite values")
        object.__setattr__(self, "values", v)


@dataclass(eq=False)
class DomainDataset:
    """All windows from one domain, stacked for fast array math.

    ``values`` has shape (num_windows, channels, timesteps); ``activities``
    holds the per-window class index. Every window belongs to ``domain_id``.
    """

    values: np.ndarray
    activities: np.ndarray
    domain_id: int
    name: str = ""

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.activities = np.asarray(self.activities, dtype=np.int64)
        if self.values.ndim != 3:
            raise ValueError(f"expected (windows, channels, timesteps), got shape {self.values.shape}")
        if len(self.values) == 0:
            raise ValueError(f"domain {self.name or self.domain_id!r} has no windows")
        if len(self.activities) != len(self.values):
            raise ValueError("window count and label count differ")
        if not np.all(np.isfinite(self.values)):
            raise IngestionError(f"non-finite values in domain {self.name or self.domain_id!r}")
        if np.any(self.activities < 0):
            raise ValueError("negative activity label")
        if not self.name:
            self.name = f"domain{self.domain_id}"

    def __len__(self):
        return len(self.values)

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]

    @property
    def num_timesteps(self) -> int:
        return self.values.shape[2]

    def windows(self):
        """Iterate over the windows as SensorWindow views."""
        for v, a in zip(self.values, self.activities):
            yield SensorWindow(v, int(a), self.domain_id)

    def subset(self, indices) -> "DomainDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return DomainDataset(self.values[idx], self.activities[idx], self.domain_id, self.name)

    @classmethod
    def from_windows(cls, windows, domain_id: int, name: str = "") -> "DomainDataset":
        ws = list(windows)
        if not ws:
            raise ValueError(f"domain {name or domain_id!r} has no windows")
        values = np.stack([w.values for w in ws])
        activities = np.array([w.activity for w in ws], dtype=np.int64)
        return cls(values, activities, domain_id, name)


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean and standard deviation fitted on training data."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("stats must be matching per-channel vectors")
        if np.any(self.std <= 0):
            raise ValueError("std must be positive")


@dataclass(eq=False)
class DGTask:
    """A leave-one-domain-out task: K training domains plus one held-out
    test domain that is never touched before final evaluation."""

    train_domains: list[DomainDataset]
    test_domain: DomainDataset
    num_classes: int
    val_fraction: float = 0.2
    normalization_stats: NormStats | None = None

    def __post_init__(self):
        if len(self.train_domains) < 2:
            raise ValueError("a task needs at least 2 training domains")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in (0,1), got {self.val_fraction}")
        train_ids = [d.domain_id for d in self.train_domains]
        if len(set(train_ids)) != len(train_ids):
            raise ValueError("duplicate training domain ids")
        if self.test_domain.domain_id in train_ids:
            raise ValueError(f"test domain id {self.test_domain.domain_id} also appears in training domains")
        shapes = {(d.num_channels, d.num_timesteps) for d in self.train_domains}
        shapes.add((self.test_domain.num_channels, self.test_domain.num_timesteps))
        if len(shapes) != 1:
            raise ValueError(f"domains disagree on window shape: {sorted(shapes)}")
        seen = np.unique(np.concatenate([d.activities for d in self.train_domains]))
        if seen.max() >= self.num_classes or self.test_domain.activities.max() >= self.num_classes:
            raise ValueError("activity label out of range")
        missing = sorted(set(range(self.num_classes)) - set(seen.tolist()))
        if missing:
            raise ValueError(f"classes {missing} absent from training domains")

    @property
    def num_train_domains(self) -> int:
        return len(self.train_domains)


def window_stream(signal, labels, window_len: int, stride: int, purity: float = 0.95):
    """Cut a continuous (channels, L) signal into fixed-length windows.

    Windows start at offsets 0, stride, 2*stride, ... and are kept only if at
    least ``purity`` of their timesteps share one activity label, which then
    becomes the window label. Returns a list of SensorWindow with domain left
    unknown (the caller assigns domains).
    """
    signal = np.asarray(signal, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if signal.ndim != 2:
        raise ValueError(f"signal must be (channels, length), got shape {signal.shape}")
    length = signal.shape[1]
    if labels.shape != (length,):
        raise ValueError("labels must carry one activity per timestep")
    if window_len < 1 or stride < 1:
        raise ValueError("window_len and stride must be >= 1")
    if length < window_len:
        raise ValueError(f"stream of length {length} is shorter than the window ({window_len})")
    out = []
    min_count = purity * window_len - 1e-9
    for start in range(0, length - window_len + 1, stride):
        lab = labels[start:start + window_len]
        counts = np.bincount(lab)
        major = int(counts.argmax())
        if counts[major] >= min_count:
            out.append(SensorWindow(signal[:, start:start + window_len], major))
    return out


def infer_num_classes(domains) -> int:
    """Smallest class count covering every label seen across the domains."""
    return int(max(ds.activities.max() for ds in domains)) + 1


def fit_normalizer(train_domains) -> NormStats:
    """Per-channel mean/std pooled over all training windows and timesteps.

    The standard deviation is floored at 1e-8 so constant channels stay
    finite after scaling. Test-domain data must never enter here.
    """
    train_domains = list(train_domains)
    if not train_domains:
        raise ValueError("cannot fit a normalizer on an empty training set")
    channels = train_domains[0].num_channels
    total = 0
    acc = np.zeros(channels)
    acc_sq = np.zeros(channels)
    for ds in train_domains:
        if ds.num_channels != channels:
            raise ValueError("training domains disagree on channel count")
        v = ds.values
        total += v.shape[0] * v.shape[2]
        acc += v.sum(axis=(0, 2))
        acc_sq += np.square(v).sum(axis=(0, 2))
    mean = acc / total
    var = np.maximum(acc_sq / total - mean**2, 0.0)
    std = np.maximum(np.sqrt(var), 1e-8)
    return NormStats(mean, std)


def normalize_values(values, stats: NormStats):
    """Standardize an array whose second-to-last axis is the channel axis."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-2] != stats.mean.shape[0]:
        raise ValueError(f"channel count {values.shape[-2]} does not match stats ({stats.mean.shape[0]})")
    return (values - stats.mean[..., :, None]) / stats.std[..., :, None]


def denormalize_values(values, stats: NormStats):
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-2] != stats.mean.shape[0]:
        raise ValueError(f"channel count {values.shape[-2]} does not match stats ({stats.mean.shape[0]})")
    return values * stats.std[..., :, None] + stats.mean[..., :, None]


def normalize(window: SensorWindow, stats: NormStats) -> SensorWindow:
    """Standardize one window per channel; labels are untouched."""
    return replace(window, values=normalize_values(window.values, stats))


def denormalize(window: SensorWindow, stats: NormStats) -> SensorWindow:
    return replace(window, values=denormalize_values(window.values, stats))


def normalize_dataset(ds: DomainDataset, stats: NormStats) -> DomainDataset:
    return DomainDataset(normalize_values(ds.values, stats), ds.activities, ds.domain_id, ds.name)


def split_train_val(domains, fraction: float = 0.2, seed: int = 0):
    """Stratified split of each domain into train/validation parts.

    Stratification is per (domain, class): each class cell keeps at least one
    window on both sides, so the split errors out on cells with fewer than
    two windows. Deterministic given the seed; validation windows keep their
    domain labels.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0,1), got {fraction}")
    rng = np.random.default_rng(seed)
    train_out, val_out = [], []
    for ds in domains:
        train_idx, val_idx = [], []
        for cls in np.unique(ds.activities):
            idx = np.flatnonzero(ds.activities == cls)
            if idx.size < 2:
                raise ValueError(
                    f"cannot split domain {ds.name!r}: class {int(cls)} has only {idx.size} window(s)"
                )
            idx = rng.permutation(idx)
            n_val = int(round(fraction * idx.size))
            n_val = min(max(n_val, 1), idx.size - 1)
            val_idx.extend(idx[:n_val].tolist())
            train_idx.extend(idx[n_val:].tolist())
        train_out.append(ds.subset(sorted(train_idx)))
        val_out.append(ds.subset(sorted(val_idx)))
    return train_out, val_out
