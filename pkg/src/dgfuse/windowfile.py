"""Binary container for canonical window sets (the interchange format
between dataset importers and the trainer), plus its plain-text sidecar.

Layout, all little-endian:
    header:  magic "DGW1" | version u32 | channels u32 | timesteps u32 |
             num_windows u64 | num_classes u32 | num_domains u32
    record:  activity u16 | domain u16 (0xFFFF = unknown) |
             values float64, channel-major
The sidecar is ``<file>.meta`` with one ``key=value`` pair per line.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data import UNKNOWN_DOMAIN, DomainDataset, FormatError

MAGIC = b"DGW1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQII")


def _record_dtype(channels: int, timesteps: int) -> np.dtype:
    return np.dtype(
        [("activity", "<u2"), ("domain", "<u2"), ("values", "<f8", (channels, timesteps))]
    )


def write_window_file(path, domains, num_classes: int, meta: dict | None = None) -> Path:
    """Write the given DomainDatasets into one container file.

    ``num_domains`` in the header is 1 + the largest real domain id; windows
    with UNKNOWN_DOMAIN are allowed and skipped in that count. Returns the
    path written. When ``meta`` is given, a sidecar is written next to it.
    """
    path = Path(path)
    domains = list(domains)
    if not domains:
        raise ValueError("nothing to write")
    channels = domains[0].num_channels
    timesteps = domains[0].num_timesteps
    total = sum(len(d) for d in domains)
    real_ids = [d.domain_id for d in domains if d.domain_id != UNKNOWN_DOMAIN]
    num_domains = (max(real_ids) + 1) if real_ids else 0
    for d in domains:
        if (d.num_channels, d.num_timesteps) != (channels, timesteps):
            raise ValueError("domains disagree on window shape")
        if d.activities.max() >= num_classes:
            raise ValueError(f"activity label out of range in domain {d.name!r}")
    rec = _record_dtype(channels, timesteps)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, channels, timesteps, total, num_classes, num_domains))
        for d in domains:
            block = np.empty(len(d), dtype=rec)
            block["activity"] = d.activities.astype(np.uint16)
            block["domain"] = np.uint16(d.domain_id)
            block["values"] = d.values
            fh.write(block.tobytes())
    if meta is not None:
        write_sidecar(sidecar_path(path), meta)
    return path


def read_window_file(path):
    """Read a container back into per-domain datasets.

    Returns ``(domains, num_classes)`` with domains ordered by ascending id;
    windows tagged UNKNOWN_DOMAIN come last as their own dataset.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: too short for a window file header")
    magic, version, channels, timesteps, total, num_classes, num_domains = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    rec = _record_dtype(channels, timesteps)
    expect = _HEADER.size + total * rec.itemsize
    if len(raw) != expect:
        raise FormatError(f"{path}: expected {expect} bytes, found {len(raw)} (truncated or corrupt)")
    block = np.frombuffer(raw, dtype=rec, count=total, offset=_HEADER.size)
    activities = block["activity"].astype(np.int64)
    domains_col = block["domain"].astype(np.int64)
    values = block["values"].astype(np.float64)
    if np.any(activities >= num_classes):
        raise FormatError(f"{path}: activity label out of range")
    known = domains_col != UNKNOWN_DOMAIN
    if num_domains and np.any(domains_col[known] >= num_domains):
        raise FormatError(f"{path}: domain label out of range")
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite sensor values")
    out = []
    for dom in sorted(np.unique(domains_col[known]).tolist()):
        idx = np.flatnonzero(domains_col == dom)
        out.append(DomainDataset(values[idx], activities[idx], int(dom)))
    if np.any(~known):
        idx = np.flatnonzero(~known)
        out.append(DomainDataset(values[idx], activities[idx], UNKNOWN_DOMAIN, name="unknown"))
    return out, int(num_classes)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def write_sidecar(path, meta: dict) -> Path:
    path = Path(path)
    lines = [f"{k}={v}" for k, v in meta.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_sidecar(path) -> dict:
    """Parse a key=value sidecar; missing file yields an empty dict."""
    path = Path(path)
    if not path.exists():
        return {}
    meta = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta
