"""Importers for three public wearable-sensor activity datasets.

Each importer walks the published directory layout, groups subjects into
domains, and returns one DomainDataset per group with raw (unnormalized)
windows. Channel normalization happens later, on training domains only.
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

import numpy as np
import scipy.io

from .data import DomainDataset, IngestionError, SensorWindow, window_stream

log = logging.getLogger(__name__)

DEFAULT_WINDOW_LEN = 128
DEFAULT_STRIDE = 64

# PAMAP2 activity ids -> contiguous class indices, protocol activities only.
PAMAP2_ACTIVITIES = {1: 0, 2: 1, 3: 2, 4: 3, 12: 4, 13: 5, 16: 6, 17: 7}
PAMAP2_ACTIVITY_NAMES = (
    "lying", "sitting", "standing", "walking",
    "ascending stairs", "descending stairs", "vacuum cleaning", "ironing",
)
# Columns of one 17-wide IMU block worth keeping: two 3-axis accelerometers,
# gyroscope, magnetometer. Temperature (0) and orientation (13-16) dropped.
_IMU_KEEP = tuple(range(1, 13))
_PAMAP2_IMU_OFFSETS = (3, 20, 37)
_PAMAP2_COLUMNS = 54


def _numbered_dirs(root: Path, pattern: str, what: str):
    found = []
    for p in root.iterdir():
        m = re.fullmatch(pattern, p.name)
        if m and p.is_dir():
            found.append((int(m.group(1)), p))
    if not found:
        raise IngestionError(f"no {what} directories under {root}")
    return sorted(found)


def _load_delimited(path: Path, delimiter):
    try:
        data = np.loadtxt(path, delimiter=delimiter, ndmin=2)
    except OSError as exc:
        raise IngestionError(f"missing file: {path}") from exc
    except ValueError as exc:
        raise IngestionError(f"malformed row in {path}: {exc}") from exc
    if data.size == 0:
        raise IngestionError(f"empty file: {path}")
    return data


def import_dsads(root_path) -> list[DomainDataset]:
    """Daily-and-sports dataset: per-activity, per-subject 5-second segment
    files, one segment per window (45 channels x 125 timesteps on the real
    data). Subjects are grouped pairwise in id order into domains."""
    root = Path(root_path)
    if not root.is_dir():
        raise IngestionError(f"dataset root not found: {root}")
    activities = _numbered_dirs(root, r"a(\d+)", "activity")
    subject_ids = None
    shape = None
    per_subject: dict[int, list[SensorWindow]] = {}
    for act_num, act_dir in activities:
        subjects = _numbered_dirs(act_dir, r"p(\d+)", "subject")
        ids = [sid for sid, _ in subjects]
        if subject_ids is None:
            subject_ids = ids
            per_subject = {sid: [] for sid in ids}
        elif ids != subject_ids:
            missing = sorted(set(subject_ids) ^ set(ids))
            raise IngestionError(f"subject set differs under {act_dir} (mismatch: p{missing})")
        for sid, subj_dir in subjects:
            segments = sorted(subj_dir.glob("s*.txt"))
            if not segments:
                raise IngestionError(f"no segment files under {subj_dir}")
            for seg in segments:
                data = _load_delimited(seg, delimiter=",")
                if shape is None:
                    shape = data.shape
                elif data.shape != shape:
                    raise IngestionError(f"{seg}: segment shape {data.shape} differs from {shape}")
                if not np.all(np.isfinite(data)):
                    raise IngestionError(f"{seg}: non-finite sensor values")
                # rows are timesteps, columns channels
                per_subject[sid].append(SensorWindow(data.T, act_num - 1))
    return _group_subjects(per_subject, group_size=2, prefix="p")


def import_uschad(root_path, window_len: int = DEFAULT_WINDOW_LEN, stride: int = DEFAULT_STRIDE) -> list[DomainDataset]:
    """USC-HAD: per-subject .mat trial files (6 channels, ~100 Hz), one
    continuous signal per (activity, trial), cut into fixed windows.
    Subjects are grouped in threes, the leftover pair forming the last
    domain (14 subjects -> groups of 3,3,3,3,2)."""
    root = Path(root_path)
    if not root.is_dir():
        raise IngestionError(f"dataset root not found: {root}")
    subjects = _numbered_dirs(root, r"Subject(\d+)", "subject")
    per_subject: dict[int, list[SensorWindow]] = {sid: [] for sid, _ in subjects}
    for sid, subj_dir in subjects:
        trials = []
        for p in subj_dir.glob("*.mat"):
            m = re.fullmatch(r"a(\d+)t(\d+)\.mat", p.name)
            if m:
                trials.append((int(m.group(1)), int(m.group(2)), p))
        if not trials:
            raise IngestionError(f"no trial files under {subj_dir}")
        for act_num, _trial, path in sorted(trials):
            try:
                mat = scipy.io.loadmat(path)
            except Exception as exc:
                raise IngestionError(f"cannot read {path}: {exc}") from exc
            if "sensor_readings" not in mat:
                raise IngestionError(f"{path}: no 'sensor_readings' array")
            readings = np.asarray(mat["sensor_readings"], dtype=np.float64)
            if readings.ndim != 2:
                raise IngestionError(f"{path}: expected a 2-D reading array, got shape {readings.shape}")
            if not np.all(np.isfinite(readings)):
                raise IngestionError(f"{path}: non-finite sensor values")
            signal = readings.T  # file stores timesteps x channels
            labels = np.full(signal.shape[1], act_num - 1, dtype=np.int64)
            if signal.shape[1] < window_len:
                log.info("skipping %s: %d samples < window length %d", path, signal.shape[1], window_len)
                continue
            per_subject[sid].extend(window_stream(signal, labels, window_len, stride))
    return _group_subjects(per_subject, group_size=3, prefix="Subject")


def import_pamap2(root_path, window_len: int = DEFAULT_WINDOW_LEN, stride: int = DEFAULT_STRIDE) -> list[DomainDataset]:
    """PAMAP2 protocol sessions: per-subject .dat files at 100 Hz with three
    17-column IMU blocks. Keeps the accelerometer/gyroscope/magnetometer
    channels (36 total), repairs sensor dropouts by linear interpolation
    along time, keeps eight everyday activities, and windows the remaining
    stream. Subjects (first eight in id order) are grouped pairwise."""
    root = Path(root_path)
    if (root / "Protocol").is_dir():
        root = root / "Protocol"
    if not root.is_dir():
        raise IngestionError(f"dataset root not found: {root}")
    files = []
    for p in root.iterdir():
        m = re.fullmatch(r"subject(\d+)\.dat", p.name)
        if m:
            files.append((int(m.group(1)), p))
    if not files:
        raise IngestionError(f"no subject .dat files under {root}")
    files = sorted(files)[:8]
    keep_cols = [off + c for off in _PAMAP2_IMU_OFFSETS for c in _IMU_KEEP]
    per_subject: dict[int, list[SensorWindow]] = {}
    for sid, path in files:
        data = _load_delimited(path, delimiter=None)
        if data.shape[1] != _PAMAP2_COLUMNS:
            raise IngestionError(f"{path}: expected {_PAMAP2_COLUMNS} columns, found {data.shape[1]}")
        raw_labels = data[:, 1].astype(np.int64)
        signal = data[:, keep_cols].T.copy()
        _interpolate_dropouts(signal, f"subject{sid}")
        keep = np.isin(raw_labels, list(PAMAP2_ACTIVITIES))
        dropped = int((~keep).sum())
        if dropped:
            log.info("subject%d: excluded %d rows with out-of-scope activity ids", sid, dropped)
        labels = np.array([PAMAP2_ACTIVITIES[a] for a in raw_labels[keep]], dtype=np.int64)
        signal = signal[:, keep]
        if signal.shape[1] < window_len:
            log.info("subject%d: stream too short to window", sid)
            per_subject[sid] = []
            continue
        per_subject[sid] = window_stream(signal, labels, window_len, stride)
    return _group_subjects(per_subject, group_size=2, prefix="subject")


def _interpolate_dropouts(signal, subject: str):
    """Repair NaN runs channel by channel with linear interpolation; values
    beyond the first/last valid sample extend the edge. In place."""
    idx = np.arange(signal.shape[1])
    for ch in range(signal.shape[0]):
        row = signal[ch]
        bad = ~np.isfinite(row)
        if not bad.any():
            continue
        if bad.all():
            raise IngestionError(f"{subject}: channel {ch} has no valid samples")
        row[bad] = np.interp(idx[bad], idx[~bad], row[~bad])


def _group_subjects(per_subject: dict, group_size: int, prefix: str) -> list[DomainDataset]:
    """Chunk subjects (in id order) into domains of ``group_size``; a short
    final chunk becomes the last domain."""
    sids = sorted(per_subject)
    domains = []
    for dom, start in enumerate(range(0, len(sids), group_size)):
        chunk = sids[start:start + group_size]
        windows = [w for sid in chunk for w in per_subject[sid]]
        name = "+".join(f"{prefix}{sid}" for sid in chunk)
        if not windows:
            raise IngestionError(f"domain {name!r} ended up with no windows")
        domains.append(DomainDataset.from_windows(windows, domain_id=dom, name=name))
    return domains
