"""Series ingestion, channel splitting, windowing and per-window normalization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import EmptySeries, MalformedFile, SeriesTooShort, ConfigError

STD_FLOOR = 1e-8
ROLES = ("normal", "abnormal", "test")


@dataclass(frozen=True)
class TimeSeries:
    name: str
    values: np.ndarray  # (T, C)
    labels: Optional[np.ndarray] = None  # (T,) in {0, 1}
    domain_tag: str = ""
    sample_interval: Optional[str] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels).astype(np.int64)
            if labels.shape != (values.shape[0],):
                raise MalformedFile(f"{self.name}: labels length {labels.shape} != T={values.shape[0]}")
            if not np.isin(labels, (0, 1)).all():
                raise MalformedFile(f"{self.name}: labels must be 0/1")
            object.__setattr__(self, "labels", labels)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def C(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ChannelView:
    parent: str
    channel_index: int
    values: np.ndarray  # (T,)
    labels: Optional[np.ndarray] = None


@dataclass(frozen=True)
class WindowBatch:
    """A stack of fixed-length windows.

    ``origin`` holds one ``(series, channel, start, n_real)`` tuple per window;
    ``n_real < W`` marks a padded trailing window.
    """

    windows: np.ndarray  # (N, W)
    labels: Optional[np.ndarray] = None  # (N, W)
    origin: list = field(default_factory=list)
    means: Optional[np.ndarray] = None  # (N,)
    stds: Optional[np.ndarray] = None  # (N,)

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def normalized(self) -> bool:
        return self.means is not None


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    role: str
    domain_tag: str = ""
    format: str = "csv"


@dataclass(frozen=True)
class DatasetManifest:
    entries: list
    seed: int = 0

    def by_role(self, role: str) -> list:
        return [e for e in self.entries if e.role == role]


def _interpolate_missing(col: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(col)
    if not bad.any():
        return col
    good = np.flatnonzero(~bad)
    if good.size == 0:
        raise MalformedFile("channel has no finite values")
    out = col.copy()
    # np.interp holds edge values constant outside the known range
    out[bad] = np.interp(np.flatnonzero(bad), good, col[good])
    return out


def load(path, format: str = "csv", domain_tag: str = "") -> TimeSeries:
    """Read a CSV with header ``c0..c{C-1}[,label]``; empty cells are interpolated."""
    if format != "csv":
        raise MalformedFile(f"unsupported format {format!r}")
    path = Path(path)
    if not path.is_file():
        raise MalformedFile(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptySeries(f"{path}: empty file") from None
        has_label = bool(header) and header[-1] == "label"
        channel_cols = header[:-1] if has_label else header
        if not channel_cols or channel_cols != [f"c{i}" for i in range(len(channel_cols))]:
            raise MalformedFile(f"{path}: header must be c0..c{{C-1}}[,label], got {header}")
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedFile(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) if v.strip() else np.nan for v in row[: len(channel_cols)]])
                if has_label:
                    labels.append(int(float(row[-1])))
            except ValueError as exc:
                raise MalformedFile(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise EmptySeries(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64)
    values[~np.isfinite(values)] = np.nan
    try:
        values = np.column_stack([_interpolate_missing(values[:, c]) for c in range(values.shape[1])])
    except MalformedFile as exc:
        raise MalformedFile(f"{path}: {exc}") from None
    return TimeSeries(
        name=path.stem,
        values=values,
        labels=np.asarray(labels) if has_label else None,
        domain_tag=domain_tag,
    )


def save_csv(path, values: np.ndarray, labels: Optional[np.ndarray] = None) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = [f"c{i}" for i in range(values.shape[1])]
        if labels is not None:
            header.append("label")
        writer.writerow(header)
        for t in range(values.shape[0]):
            row = [repr(float(v)) for v in values[t]]
            if labels is not None:
                row.append(str(int(labels[t])))
            writer.writerow(row)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from None
    unknown = set(raw) - {"entries", "seed"}
    if unknown:
        raise ConfigError(f"manifest: unknown keys {sorted(unknown)}")
    entries = []
    for item in raw.get("entries", []):
        extra = set(item) - {"path", "role", "domain_tag", "format"}
        if extra:
            raise ConfigError(f"manifest entry: unknown keys {sorted(extra)}")
        entry = ManifestEntry(**item)
        if entry.role not in ROLES:
            raise ConfigError(f"manifest entry {entry.path}: role must be one of {ROLES}")
        resolved = Path(entry.path)
        if not resolved.is_absolute():
            resolved = path.parent / resolved
        if not resolved.is_file():
            raise ConfigError(f"manifest entry {entry.path}: file not found")
        entries.append(replace(entry, path=str(resolved)))
    return DatasetManifest(entries=entries, seed=int(raw.get("seed", 0)))


def write_manifest(path, manifest: DatasetManifest) -> None:
    base = Path(path).parent
    entries = []
    for e in manifest.entries:
        p = Path(e.path)
        try:
            p = p.relative_to(base)
        except ValueError:
            pass
        entries.append({"path": str(p), "role": e.role, "domain_tag": e.domain_tag, "format": e.format})
    Path(path).write_text(json.dumps({"entries": entries, "seed": manifest.seed}, indent=2) + "\n")


def split_channels(ts: TimeSeries) -> list[ChannelView]:
    # point labels are shared by every channel
    return [ChannelView(ts.name, c, ts.values[:, c].copy(), ts.labels) for c in range(ts.C)]


def make_windows(cv: ChannelView, W: int, stride: int = 1, mode: str = "train") -> WindowBatch:
    """Cut a channel into length-``W`` windows.

    Test mode forces ``stride = W`` so windows tile the series. A trailing
    remainder is padded by repeating the final value.
    """
    values = np.asarray(cv.values, dtype=np.float64)
    T = values.shape[0]
    if W > T:
        raise SeriesTooShort(f"{cv.parent}[{cv.channel_index}]: T={T} < W={W}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if mode == "test":
        stride = W
    elif mode != "train":
        raise ValueError(f"unknown mode {mode!r}")

    starts = list(range(0, T - W + 1, stride))
    tail = starts[-1] + W < T
    if tail:
        starts.append(starts[-1] + stride)

    windows = np.empty((len(starts), W))
    labels = None if cv.labels is None else np.zeros((len(starts), W), dtype=np.int64)
    origin = []
    for i, s in enumerate(starts):
        n_real = min(W, T - s)
        windows[i, :n_real] = values[s : s + n_real]
        windows[i, n_real:] = values[s + n_real - 1]
        if labels is not None:
            labels[i, :n_real] = cv.labels[s : s + n_real]
            labels[i, n_real:] = cv.labels[s + n_real - 1]
        origin.append((cv.parent, cv.channel_index, s, n_real))
    return WindowBatch(windows=windows, labels=labels, origin=origin)


def normalize(batch: WindowBatch) -> WindowBatch:
    x = batch.windows
    means = x.mean(axis=1)
    stds = np.maximum(x.std(axis=1), STD_FLOOR)
    return replace(batch, windows=(x - means[:, None]) / stds[:, None], means=means, stds=stds)


def denormalize(x: np.ndarray, means: np.ndarray, stds: np.ndarray) -> np.ndarray:
    return x * stds[:, None] + means[:, None]


def concat_batches(batches: Sequence[WindowBatch]) -> WindowBatch:
    batches = list(batches)
    if not batches:
        raise ValueError("nothing to concatenate")
    have_labels = all(b.labels is not None for b in batches)
    have_stats = all(b.normalized for b in batches)
    return WindowBatch(
        windows=np.concatenate([b.windows for b in batches]),
        labels=np.concatenate([b.labels for b in batches]) if have_labels else None,
        origin=[o for b in batches for o in b.origin],
        means=np.concatenate([b.means for b in batches]) if have_stats else None,
        stds=np.concatenate([b.stds for b in batches]) if have_stats else None,
    )


def take(batch: WindowBatch, idx: np.ndarray) -> WindowBatch:
    return WindowBatch(
        windows=batch.windows[idx],
        labels=None if batch.labels is None else batch.labels[idx],
        origin=[batch.origin[i] for i in idx],
        means=None if batch.means is None else batch.means[idx],
        stds=None if batch.stds is None else batch.stds[idx],
    )


def windows_for_series(series: Sequence[TimeSeries], W: int, stride: int, mode: str = "train") -> WindowBatch:
    """Channel-split, window and normalize every series into one batch."""
    parts = [
        normalize(make_windows(cv, W, stride, mode))
        for ts in series
        for cv in split_channels(ts)
    ]
    return concat_batches(parts)


def iterate_batches(batch: WindowBatch, batch_size: int, rng: np.random.Generator) -> Iterator[WindowBatch]:
    """Yield shuffled minibatches; order is fixed by ``rng``."""
    order = rng.permutation(len(batch))
    for lo in range(0, len(order), batch_size):
        yield take(batch, order[lo : lo + batch_size])
