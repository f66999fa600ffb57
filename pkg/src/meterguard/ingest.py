"""Half-hourly smart-meter series: CSV loading, synthesis, fraud injection.

CSV schema is ``meter_id,timestamp,kwh`` with ISO-8601 UTC timestamps on
half-hour boundaries. Labels are not part of the CSV; a corpus directory
pairs ``readings.csv`` with ``manifest.json`` whose attack roster says
which meters were tampered with and how.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, GapDetected, InvalidAlpha, MalformedRow, NonMonotonicTimestamps

INTERVAL = timedelta(minutes=30)
INTERVALS_PER_DAY = 48
OFF_PEAK = range(0, 14)  # 00:00-07:00
HEADER = ["meter_id", "timestamp", "kwh"]
DEFAULT_START = datetime(2010, 1, 4, tzinfo=timezone.utc)  # a Monday

NORMAL = "normal"
MALICIOUS = "malicious"

SCALE = "scale"
ZERO_INTERVAL = "zero_interval"
NIGHT_SHIFT = "night_shift"
ATTACK_KINDS = (SCALE, ZERO_INTERVAL, NIGHT_SHIFT)


@dataclass(frozen=True)
class AttackSpec:
    """A fraud pattern applied to intervals ``[first, first + count)``.

    ``scale`` multiplies readings by ``alpha``; ``zero_interval`` zeroes the
    intra-day slots ``[start, start + length)`` every day; ``night_shift``
    moves ``fraction`` of each day's peak consumption into slots 0-13.
    ``count=None`` runs to the end of the series.
    """

    kind: str
    alpha: float | None = None
    start: int | None = None
    length: int | None = None
    fraction: float | None = None
    first: int = 0
    count: int | None = None

    def validate(self) -> None:
        if self.kind == SCALE:
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise InvalidAlpha(f"scale attack needs 0 < alpha < 1, got {self.alpha}")
        elif self.kind == ZERO_INTERVAL:
            if self.start is None or self.length is None or self.length < 1 \
                    or not 0 <= self.start < self.start + self.length <= INTERVALS_PER_DAY:
                raise ConfigError(f"zero_interval needs 0 <= start < start+length <= 48, got {self}")
        elif self.kind == NIGHT_SHIFT:
            if self.fraction is None or not 0.0 < self.fraction < 1.0:
                raise ConfigError(f"night_shift needs 0 < fraction < 1, got {self.fraction}")
        else:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if self.first < 0 or (self.count is not None and self.count < 0):
            raise ConfigError("attack range must be non-negative")

    def span(self, n: int) -> range:
        stop = n if self.count is None else min(n, self.first + self.count)
        return range(min(self.first, n), stop)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> AttackSpec:
        known = {"kind", "alpha", "start", "length", "fraction", "first", "count"}
        extra = set(d) - known - {"meter_id"}
        if extra:
            raise ConfigError(f"unknown attack fields {sorted(extra)}")
        spec = cls(**{k: v for k, v in d.items() if k in known})
        spec.validate()
        return spec


@dataclass
class MeterSeries:
    meter_id: str
    start: datetime
    readings: np.ndarray
    label: str = NORMAL
    attack: AttackSpec | None = None

    def __post_init__(self):
        self.readings = np.asarray(self.readings, dtype=np.float64)

    def __len__(self):
        return len(self.readings)

    @property
    def malicious(self) -> bool:
        return self.label == MALICIOUS

    def timestamp(self, i: int) -> datetime:
        return self.start + i * INTERVAL

    def slot(self, i: int) -> int:
        """Half-hour index within the day (0 = 00:00-00:30)."""
        return (self.start.hour * 2 + self.start.minute // 30 + i) % INTERVALS_PER_DAY

    def window(self, start: datetime, n: int) -> np.ndarray:
        offset = (start - self.start) / INTERVAL
        if offset != int(offset) or offset < 0 or int(offset) + n > len(self):
            raise DataError(f"meter {self.meter_id} does not cover {n} intervals from {start.isoformat()}")
        return self.readings[int(offset):int(offset) + n]


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError("timestamp has no UTC offset")
    ts = ts.astimezone(timezone.utc)
    if ts.minute % 30 or ts.second or ts.microsecond:
        raise ValueError("timestamp is not on a half-hour boundary")
    return ts


def load_csv(path) -> list[MeterSeries]:
    rows: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MalformedRow(1, "missing header")
        if [h.strip() for h in header] != HEADER:
            raise MalformedRow(1, f"expected header {','.join(HEADER)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedRow(line, f"expected 3 fields, got {len(row)}")
            meter_id = row[0].strip()
            if not meter_id:
                raise MalformedRow(line, "empty meter_id")
            try:
                ts = parse_timestamp(row[1])
            except ValueError as exc:
                raise MalformedRow(line, f"bad timestamp {row[1]!r}: {exc}") from None
            try:
                kwh = float(row[2])
            except ValueError:
                raise MalformedRow(line, f"bad kwh {row[2]!r}") from None
            if not math.isfinite(kwh) or kwh < 0:
                raise MalformedRow(line, f"kwh must be finite and non-negative, got {row[2]!r}")
            rows.setdefault(meter_id, []).append((ts, kwh))
    out = []
    for meter_id in sorted(rows):
        entries = rows[meter_id]
        for (prev, _), (ts, _) in zip(entries, entries[1:]):
            if ts <= prev:
                raise NonMonotonicTimestamps(f"meter {meter_id}: {format_timestamp(ts)} after {format_timestamp(prev)}")
            if ts != prev + INTERVAL:
                raise GapDetected(meter_id, format_timestamp(prev + INTERVAL))
        out.append(MeterSeries(meter_id, entries[0][0], [kwh for _, kwh in entries]))
    return out


def write_csv(series: list[MeterSeries], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for s in series:
            for i, kwh in enumerate(s.readings):
                w.writerow([s.meter_id, format_timestamp(s.timestamp(i)), repr(float(kwh))])


def _peak(hours: np.ndarray, centre: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((hours - centre) / width) ** 2)


def synthesize_meter(meter_id: str, days: int, rng: np.random.Generator,
                     start: datetime = DEFAULT_START) -> MeterSeries:
    n = days * INTERVALS_PER_DAY
    household = rng.uniform(0.85, 1.15)
    base = rng.uniform(0.12, 0.16)
    morning_amp, morning_at = rng.uniform(0.25, 0.35), rng.uniform(7.0, 8.0)
    evening_amp, evening_at = rng.uniform(0.45, 0.60), rng.uniform(18.5, 20.0)
    idx = np.arange(n)
    hours = ((start.hour * 2 + start.minute // 30 + idx) % INTERVALS_PER_DAY) / 2.0 + 0.25
    day_of_week = (start.weekday() + (start.hour * 2 + start.minute // 30 + idx) // INTERVALS_PER_DAY) % 7
    weekly = np.where(day_of_week >= 5, 1.1, 1.0)
    # circular distance so evening peaks wrap past midnight smoothly
    profile = (base + morning_amp * _peak(hours, morning_at, 1.0)
               + evening_amp * (_peak(hours, evening_at, 1.5) + _peak(hours + 24, evening_at, 1.5)))
    sigma = 0.25
    noise = rng.lognormal(-sigma**2 / 2, sigma, size=n)
    readings = np.round(household * profile * weekly * noise, 3)
    return MeterSeries(meter_id, start, readings)


def synthesize(n_meters: int, days: int, seed: int, start: datetime = DEFAULT_START) -> list[MeterSeries]:
    """Deterministic synthetic corpus; each meter draws from its own derived seed."""
    if n_meters < 0 or days < 0:
        raise ConfigError("n_meters and days must be non-negative")
    return [synthesize_meter(f"M{i:04d}", days, np.random.default_rng([seed, i]), start)
            for i in range(n_meters)]


def inject_fraud(series: MeterSeries, spec: AttackSpec) -> MeterSeries:
    spec.validate()
    r = series.readings.copy()
    span = spec.span(len(r))
    if spec.kind == SCALE:
        r[span.start:span.stop] *= spec.alpha
    elif spec.kind == ZERO_INTERVAL:
        for i in span:
            if spec.start <= series.slot(i) < spec.start + spec.length:
                r[i] = 0.0
    else:
        days: dict[int, list[int]] = {}
        origin = series.start.hour * 2 + series.start.minute // 30
        for i in span:
            days.setdefault((origin + i) // INTERVALS_PER_DAY, []).append(i)
        for members in days.values():
            off = [i for i in members if series.slot(i) in OFF_PEAK]
            peak = [i for i in members if series.slot(i) not in OFF_PEAK]
            if not off or not peak:
                continue
            moved = spec.fraction * r[peak].sum()
            r[peak] *= 1.0 - spec.fraction
            r[off] += moved / len(off)
    return MeterSeries(series.meter_id, series.start, r, MALICIOUS, spec)


# -- corpora ----------------------------------------------------------------

def sample_attack(rng: np.random.Generator) -> AttackSpec:
    kind = ATTACK_KINDS[int(rng.integers(len(ATTACK_KINDS)))]
    if kind == SCALE:
        return AttackSpec(SCALE, alpha=round(float(rng.uniform(0.2, 0.6)), 3))
    if kind == ZERO_INTERVAL:
        length = int(rng.integers(6, 13))
        start = int(rng.integers(14, INTERVALS_PER_DAY - length + 1))
        return AttackSpec(ZERO_INTERVAL, start=start, length=length)
    return AttackSpec(NIGHT_SHIFT, fraction=round(float(rng.uniform(0.3, 0.6)), 3))


def build_manifest(n_meters: int, days: int, fraud_fraction: float, seed: int,
                   start: datetime = DEFAULT_START, kinds=ATTACK_KINDS) -> dict:
    if not 0.0 <= fraud_fraction <= 1.0:
        raise ConfigError("fraud_fraction must lie in [0, 1]")
    rng = np.random.default_rng([seed, 0xA77AC4])
    n_bad = math.ceil(round(fraud_fraction * n_meters, 9))
    chosen = sorted(int(i) for i in rng.choice(n_meters, size=n_bad, replace=False)) if n_bad else []
    roster = []
    for i in chosen:
        spec = sample_attack(rng)
        while spec.kind not in kinds:
            spec = sample_attack(rng)
        roster.append({"meter_id": f"M{i:04d}", **spec.to_dict()})
    return {"version": 1, "n_meters": n_meters, "days": days, "seed": seed,
            "start": format_timestamp(start), "fraud_fraction": fraud_fraction, "attacks": roster}


def replay_manifest(manifest: dict) -> list[MeterSeries]:
    """Regenerate the exact corpus a manifest describes."""
    try:
        start = parse_timestamp(manifest["start"])
        series = synthesize(int(manifest["n_meters"]), int(manifest["days"]), int(manifest["seed"]), start)
        roster = manifest.get("attacks", [])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad manifest: {exc}") from exc
    by_id = {s.meter_id: k for k, s in enumerate(series)}
    for entry in roster:
        if entry.get("meter_id") not in by_id:
            raise ConfigError(f"attack roster names unknown meter {entry.get('meter_id')!r}")
        k = by_id[entry["meter_id"]]
        series[k] = inject_fraud(series[k], AttackSpec.from_dict(entry))
    return series


def apply_labels(series: list[MeterSeries], manifest: dict) -> list[MeterSeries]:
    roster = {e["meter_id"]: AttackSpec.from_dict(e) for e in manifest.get("attacks", [])}
    return [replace(s, label=MALICIOUS, attack=roster[s.meter_id]) if s.meter_id in roster else s
            for s in series]


def save_corpus(directory, series: list[MeterSeries], manifest: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_csv(series, directory / "readings.csv")
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_corpus(directory) -> list[MeterSeries]:
    directory = Path(directory)
    series = load_csv(directory / "readings.csv")
    manifest_path = directory / "manifest.json"
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{manifest_path}: {exc}") from exc
        series = apply_labels(series, manifest)
    return series


def windows(series: list[MeterSeries], window_len: int = INTERVALS_PER_DAY):
    """Non-overlapping windows per meter.

    A window is labelled malicious when its meter is and the window overlaps
    the attack range. Returns (X[N, window_len], y[N], meter index[N]).
    """
    xs, ys, owners = [], [], []
    for k, s in enumerate(series):
        n_win = len(s) // window_len
        if n_win == 0:
            continue
        xs.append(s.readings[:n_win * window_len].reshape(n_win, window_len))
        labels = np.zeros(n_win, dtype=np.int64)
        if s.malicious:
            span = s.attack.span(len(s)) if s.attack else range(len(s))
            for w in range(n_win):
                lo, hi = w * window_len, (w + 1) * window_len
                labels[w] = int(lo < span.stop and span.start < hi)
        ys.append(labels)
        owners.append(np.full(n_win, k))
    if not xs:
        return np.zeros((0, window_len)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(owners)
