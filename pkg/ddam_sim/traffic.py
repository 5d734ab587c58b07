"""Access-point traffic records: CSV ingestion, key/value construction and a periodic substitute.

Records sit on a 10-minute grid. One time step is one hour: the value is the six
log-transformed samples of that hour, and the key concatenates an access-point embedding
with an hour-of-day embedding.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from ddam_sim.am_core import KVStream
from ddam_sim.errors import ConfigurationError, DataError, TrafficGapError, TrafficParseError

logger = logging.getLogger(__name__)

COLUMNS = ["ap_id", "timestamp", "volume"]
GRID = pd.Timedelta(minutes=10)
SAMPLES_PER_HOUR = 6
SAMPLES_PER_DAY = 24 * SAMPLES_PER_HOUR


@dataclass(frozen=True)
class TrafficRecord:
    ap_id: str
    timestamp: pd.Timestamp
    volume: float


@dataclass(frozen=True)
class EmbeddingConfig:
    d_ap: int = 24
    d_time: int = 10

    def __post_init__(self):
        if self.d_ap < 1 or self.d_time < 1:
            raise ConfigurationError("embedding dimensions must be positive")

    @property
    def d_k(self) -> int:
        return self.d_ap + self.d_time


def sinusoidal_embedding(position: float, dim: int) -> np.ndarray:
    """Index i uses frequency 10000^(-2 floor(i/2) / dim): cos on even i, sin on odd i."""
    i = np.arange(dim)
    angle = position * np.power(10000.0, -2.0 * (i // 2) / dim)
    return np.where(i % 2 == 0, np.cos(angle), np.sin(angle))


def ap_embedding(index: int, dim: int) -> np.ndarray:
    """One-hot of the AP index (dropped beyond ``dim``) plus its sinusoidal embedding."""
    out = sinusoidal_embedding(index, dim)
    if index < dim:
        out[index] += 1.0
    return out


def time_embedding(hour: int, dim: int) -> np.ndarray:
    return sinusoidal_embedding(hour % 24, dim)


def _parse_rows(frame: pd.DataFrame, path: Path) -> list[TrafficRecord]:
    records = []
    for offset, row in enumerate(frame.itertuples(index=False)):
        line = offset + 2
        try:
            ap_id = str(row.ap_id).strip()
            if not ap_id or ap_id == "nan":
                raise ValueError("empty ap_id")
            ts = pd.Timestamp(row.timestamp)
            if pd.isna(ts):
                raise ValueError("empty timestamp")
            volume = float(row.volume)
        except (TypeError, ValueError) as e:
            raise TrafficParseError(f"{path}: malformed row ({e})", line=line) from e
        if not np.isfinite(volume) or volume < 0:
            raise TrafficParseError(f"{path}: volume must be finite and nonnegative", line=line)
        if ts.floor(GRID) != ts:
            raise TrafficParseError(f"{path}: timestamp {ts} is off the 10-minute grid", line=line)
        records.append(TrafficRecord(ap_id, ts, volume))
    return records


def check_grid(records: Sequence[TrafficRecord]) -> None:
    """Every AP must have a sample at every grid point between the first and last timestamp."""
    if not records:
        raise DataError("no traffic records")
    start = min(r.timestamp for r in records)
    stop = max(r.timestamp for r in records)
    grid = pd.date_range(start, stop, freq=GRID)
    seen: dict[str, set[pd.Timestamp]] = {}
    for r in records:
        seen.setdefault(r.ap_id, set()).add(r.timestamp)
    missing = []
    for ap_id in sorted(seen):
        missing.extend((ap_id, ts) for ts in grid if ts not in seen[ap_id])
    if missing:
        preview = ", ".join(f"{ap}@{ts}" for ap, ts in missing[:5])
        raise TrafficGapError(f"{len(missing)} grid samples missing: {preview}", missing=missing)


def load_traffic(path: str | Path) -> list[TrafficRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"traffic file not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(frame.columns) != COLUMNS:
        raise TrafficParseError(f"{path}: expected header {','.join(COLUMNS)}", line=1)
    records = _parse_rows(frame, path)
    check_grid(records)
    logger.info("loaded %s traffic records from %s", len(records), path)
    return records


def write_traffic_csv(records: Iterable[TrafficRecord], path: str | Path) -> Path:
    records = list(records)
    frame = pd.DataFrame(
        {
            "ap_id": [r.ap_id for r in records],
            "timestamp": [r.timestamp.isoformat() for r in records],
            "volume": [r.volume for r in records],
        },
        columns=COLUMNS,
    )
    path = Path(path)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info("wrote %s traffic records to %s", len(frame), path)
    return path


def build_kv(
    records: Sequence[TrafficRecord],
    embed: EmbeddingConfig = EmbeddingConfig(),
    ap_ids: Sequence[str] | None = None,
) -> KVStream:
    """One key/value pair per AP and complete hour.

    ``ap_ids`` fixes the agent order (and selects a subset); the default is sorted order.
    """
    check_grid(records)
    frame = pd.DataFrame(
        {
            "ap_id": [r.ap_id for r in records],
            "timestamp": [r.timestamp for r in records],
            "volume": [r.volume for r in records],
        }
    )
    order = list(ap_ids) if ap_ids is not None else sorted(frame["ap_id"].unique())
    unknown = set(order) - set(frame["ap_id"])
    if unknown:
        raise DataError(f"no traffic for access points {sorted(unknown)}")
    frame["hour"] = frame["timestamp"].dt.floor("h")
    counts = frame.groupby("hour")["ap_id"].count()
    n_ap = frame["ap_id"].nunique()
    # edge hours without all six samples are dropped
    hours = counts.index[counts == n_ap * SAMPLES_PER_HOUR]
    if len(hours) == 0:
        raise DataError("no complete hour of traffic")
    frame = frame[frame["hour"].isin(hours)].sort_values(["ap_id", "timestamp"], kind="stable")

    T = len(hours)
    values = np.empty((len(order), T, SAMPLES_PER_HOUR))
    by_ap = {ap: g["volume"].to_numpy(dtype=np.float64) for ap, g in frame.groupby("ap_id")}
    for n, ap in enumerate(order):
        values[n] = np.log1p(by_ap[ap].reshape(T, SAMPLES_PER_HOUR))
    time_keys = np.stack([time_embedding(h.hour, embed.d_time) for h in hours])
    keys = np.empty((len(order), T, embed.d_k))
    for n in range(len(order)):
        keys[n, :, : embed.d_ap] = ap_embedding(n, embed.d_ap)
        keys[n, :, embed.d_ap :] = time_keys
    metadata = {"ap_ids": list(order), "start": hours[0].isoformat(), "hours": T}
    return KVStream(keys, values, metadata)


def gen_periodic_traffic(
    n_aps: int,
    days: int,
    seed: int = 0,
    noise: float = 0.25,
    weekly: float = 0.15,
    start: str = "2019-01-07",
) -> list[TrafficRecord]:
    """Diurnal traffic per AP with weekly modulation and lognormal noise on the 10-minute grid.

    With ``noise = 0`` the series repeats exactly every week, and every day when
    ``weekly = 0`` as well.
    """
    if days < 1:
        raise ConfigurationError(f"days must be at least 1, got {days}")
    if n_aps < 1:
        raise ConfigurationError(f"n_aps must be at least 1, got {n_aps}")
    if noise < 0 or not 0 <= weekly < 1:
        raise ConfigurationError("noise must be nonnegative and weekly in [0, 1)")
    rng = np.random.default_rng(seed)
    base = rng.uniform(50.0, 500.0, n_aps)
    amplitude = rng.uniform(0.4, 0.9, n_aps)
    phase = rng.uniform(0.0, 24.0, n_aps)
    steps = days * SAMPLES_PER_DAY
    stamps = pd.date_range(start, periods=steps, freq=GRID)
    step = np.arange(steps)
    hour = (step % SAMPLES_PER_DAY) / SAMPLES_PER_HOUR
    day = step // SAMPLES_PER_DAY
    week = 1.0 + weekly * np.sin(2 * np.pi * (day % 7) / 7)
    records = []
    for n in range(n_aps):
        diurnal = 1.0 + amplitude[n] * np.sin(2 * np.pi * (hour - phase[n]) / 24)
        jitter = rng.lognormal(0.0, noise, steps) if noise > 0 else np.ones(steps)
        volume = base[n] * diurnal * week * jitter
        ap_id = f"ap{n:02d}"
        records.extend(TrafficRecord(ap_id, ts, float(v)) for ts, v in zip(stamps, volume))
    return records
