"""Bills over secret-shared readings.

Static time-of-use bills are linear in the readings, so each party
computes its share of the total locally. Dynamic bills price each
interval by the (still shared) neighbourhood load,
``price_t = base_t + k * load_t``, which makes the bill bilinear and costs
one Beaver triple per (client, interval).

Fixed-point bookkeeping: readings and public prices are encoded at
``scale``. Static totals carry ``scale**2``; dynamic prices carry
``scale**2`` and dynamic totals ``scale**3``. Totals are rescaled once,
at decode time, rounding half away from zero. The plaintext oracles here
follow exactly the same integer steps.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .field import FixedPointCodec, round_half_away
from .ingest import DEFAULT_START, INTERVALS_PER_DAY, format_timestamp, parse_timestamp
from .mpc import AuthShare, Party, beaver_mul, sum_shares

STATIC = "static"
DYNAMIC = "dynamic"
MODES = (STATIC, DYNAMIC)


@dataclass(frozen=True)
class Tariff:
    mode: str
    interval_prices: tuple = ()
    base_prices: tuple = ()
    k: float = 0.0
    capacity: float | None = None  # kWh; informational, not part of the price formula

    def __post_init__(self):
        object.__setattr__(self, "interval_prices", tuple(float(p) for p in self.interval_prices))
        object.__setattr__(self, "base_prices", tuple(float(p) for p in self.base_prices))
        if self.mode not in MODES:
            raise ConfigError(f"tariff mode must be one of {MODES}, got {self.mode!r}")
        prices = self.prices
        if not prices:
            raise ConfigError("tariff has no prices")
        if any(not np.isfinite(p) or p < 0 for p in prices) or self.k < 0:
            raise ConfigError("tariff prices must be finite and non-negative")

    @property
    def prices(self) -> tuple:
        return self.interval_prices if self.mode == STATIC else self.base_prices

    def for_period(self, n_intervals: int) -> Tariff:
        """Match the period length, tiling a 48-slot daily profile if needed."""
        n = len(self.prices)
        if n == n_intervals:
            return self
        if n == INTERVALS_PER_DAY and n_intervals % INTERVALS_PER_DAY == 0:
            tiled = self.prices * (n_intervals // INTERVALS_PER_DAY)
            if self.mode == STATIC:
                return Tariff(STATIC, interval_prices=tiled)
            return Tariff(DYNAMIC, base_prices=tiled, k=self.k, capacity=self.capacity)
        raise ConfigError(f"tariff has {n} prices but the period has {n_intervals} intervals")

    def to_dict(self) -> dict:
        if self.mode == STATIC:
            return {"mode": STATIC, "interval_prices": list(self.interval_prices)}
        d = {"mode": DYNAMIC, "base_prices": list(self.base_prices), "k": self.k}
        if self.capacity is not None:
            d["capacity"] = self.capacity
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Tariff:
        mode = d.get("mode")
        try:
            if mode == STATIC:
                return cls(STATIC, interval_prices=d["interval_prices"])
            if mode == DYNAMIC:
                return cls(DYNAMIC, base_prices=d["base_prices"], k=float(d.get("k", 0.0)),
                           capacity=d.get("capacity"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad tariff document: {exc}") from exc
        raise ConfigError(f"tariff mode must be one of {MODES}, got {mode!r}")

    @classmethod
    def load(cls, path) -> Tariff:
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read tariff {path}: {exc}") from exc


def default_tariff(mode: str = STATIC, n_intervals: int = INTERVALS_PER_DAY) -> Tariff:
    """Two-rate daily profile: 0.12/kWh off-peak (00:00-07:00), 0.24/kWh otherwise.

    The profile repeats slot by slot for any period length.
    """
    daily = [0.12 if t % INTERVALS_PER_DAY < 14 else 0.24 for t in range(n_intervals)]
    if mode == STATIC:
        return Tariff(STATIC, interval_prices=daily)
    return Tariff(DYNAMIC, base_prices=daily, k=0.002, capacity=150.0)


@dataclass(frozen=True)
class BillingPeriod:
    start: datetime = DEFAULT_START
    n_intervals: int = 31 * INTERVALS_PER_DAY
    period_id: str | None = None

    def __post_init__(self):
        if self.n_intervals <= 0:
            raise ConfigError("a billing period needs at least one interval")
        if self.period_id is None:
            object.__setattr__(self, "period_id", format_timestamp(self.start)[:10])

    @classmethod
    def parse(cls, start: str, n_intervals: int) -> BillingPeriod:
        return cls(parse_timestamp(start), n_intervals)


@dataclass(frozen=True)
class BillStatement:
    client_id: str
    period_id: str
    total: Decimal  # rounded to the codec resolution
    exact_total: Fraction  # un-rounded value of the fixed-point total
    mac_check: str = "pass"
    disclosed_to: tuple = field(default=("client", "supplier"))


def triples_required(n_clients: int, n_intervals: int, mode: str) -> int:
    if mode not in MODES:
        raise ConfigError(f"unknown billing mode {mode!r}")
    return 0 if mode == STATIC else n_clients * n_intervals


def total_power(mode: str) -> int:
    """Power of ``scale`` carried by a raw bill total."""
    return 2 if mode == STATIC else 3


def encode_tariff(tariff: Tariff, codec: FixedPointCodec):
    """Public tariff as field integers: (prices at scale, k at scale or None)."""
    prices = np.array([codec.scaled_int(p) % codec.modulus for p in tariff.prices], dtype=object)
    k = codec.scaled_int(tariff.k) % codec.modulus if tariff.mode == DYNAMIC else None
    return prices, k


def make_statement(client_id: str, period_id: str, raw_total: int, mode: str,
                   codec: FixedPointCodec) -> BillStatement:
    power = total_power(mode)
    units = codec.decode_rounded(raw_total, power)
    return BillStatement(client_id, period_id, units_to_decimal(units, codec.scale),
                         codec.decode(raw_total, power))


def units_to_decimal(units: int, scale: int) -> Decimal:
    digits = len(str(scale)) - 1
    if scale == 10**digits:
        return Decimal(units).scaleb(-digits)
    return Decimal(units) / Decimal(scale)


# -- plaintext oracles -------------------------------------------------------

def oracle_raw_totals(readings: np.ndarray, tariff: Tariff, codec: FixedPointCodec) -> list[int]:
    """Signed integer totals (scale**2 static, scale**3 dynamic), no field arithmetic."""
    readings = np.atleast_2d(np.asarray(readings, dtype=float))
    enc = [[codec.scaled_int(x) for x in row] for row in readings]
    prices = [codec.scaled_int(p) for p in tariff.prices]
    if len(prices) != readings.shape[1]:
        raise ConfigError("tariff length does not match readings")
    if tariff.mode == STATIC:
        return [sum(p * r for p, r in zip(prices, row)) for row in enc]
    k = codec.scaled_int(tariff.k)
    loads = [sum(col) for col in zip(*enc)] if enc else []
    unit = [codec.scale * b + k * a for b, a in zip(prices, loads)]
    return [sum(u * r for u, r in zip(unit, row)) for row in enc]


def oracle_totals(readings, tariff: Tariff, codec: FixedPointCodec = FixedPointCodec()) -> list[int]:
    """Totals in codec units (e.g. thousandths of currency), rounded half away."""
    div = codec.scale ** (total_power(tariff.mode) - 1)
    return [round_half_away(t, div) for t in oracle_raw_totals(readings, tariff, codec)]


# -- party-side computation ---------------------------------------------------

def aggregate_shares(p: Party, readings: AuthShare) -> AuthShare:
    """[load_t] = sum over clients of [r_ct]; readings shaped (clients, intervals)."""
    return sum_shares(readings, p.field, axis=0)


def static_bill_shares(p: Party, readings: AuthShare, prices) -> AuthShare:
    """Per-client [sum_t price_t * r_ct]: purely local, zero triples."""
    return sum_shares(p.scale(readings, prices), p.field, axis=-1)


def dynamic_bill_shares(p: Party, ctx, readings: AuthShare, base_prices, k: int, scale: int):
    """Per-client [sum_t (scale*base_t + k*load_t) * r_ct]. Generator."""
    f = p.field
    m, n = readings.shape
    load = aggregate_shares(p, readings)
    unit = p.shift(p.scale(load, k), np.asarray(base_prices, dtype=object) * scale % f.modulus)
    unit_per_client = AuthShare(np.broadcast_to(unit.value, (m, n)), np.broadcast_to(unit.mac, (m, n)), p.index)
    triple = p.triples.take(shape=(m, n))
    cost = yield from beaver_mul(p, ctx, unit_per_client, readings, triple)
    return sum_shares(cost, f, axis=-1)


def write_bill_report(statements: list[BillStatement], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["client_id", "period_id", "total", "mac_check"])
        for s in statements:
            w.writerow([s.client_id, s.period_id, format(s.total, "f"), s.mac_check])
