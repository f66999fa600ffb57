"""One billing period end to end: dealer, clients, computation parties, supplier.

Topology: the dealer talks to everyone during the offline phase; clients
talk only to computation parties; parties are fully connected; the
supplier only receives opened outputs.

Client input: the dealer gives each client a mask seed (deriving masks
r_t) and, per party, a tag seed shared with that party. For every
interval the client sends each party the pair (x_t - r_t, tag_t) where
tag_t = kappa_t * (x_t - r_t) + lambda_t is a one-time MAC under keys
only that party and the client know. The pair is 16 bytes, the size of
one authenticated share. Parties turn it into [x_t] = [r_t] + (x_t - r_t).

Bill output: parties open [total - s] where s is an output mask known
only to the client and the supplier, run the batched MAC check, and then
deliver the masked total. Every party sends its copy; recipients require
all copies to agree.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from ..billing import (DYNAMIC, STATIC, BillingPeriod, BillStatement, Tariff, aggregate_shares,
                       dynamic_bill_shares, encode_tariff, make_statement, static_bill_shares,
                       triples_required)
from ..errors import ConfigError, ProtocolError
from ..field import MERSENNE61, WORD, Field, FixedPointCodec
from ..ingest import AttackSpec, MeterSeries, inject_fraud
from ..mpc import AuthShare, Dealer, MacKeyShare, Party, TriplePool, check_macs, open_values
from .network import (DEALER, OFFLINE, ONLINE, SUPPLIER, Alert, Endpoint, Network, NetStats, Role,
                      TamperShare, client, party)

KIND_PARTY_DEAL = 1
KIND_CLIENT_KEYS = 2
KIND_OUTPUT_MASKS = 3
KIND_BEAVER_OPEN = 10
KIND_LOAD_OPEN = 14
KIND_OUTPUT_OPEN = 15
KIND_INPUT = 20
KIND_RESULT = 30
KIND_LOADS = 31
KIND_ABORT = 39

SEED_BYTES = 16


@dataclass(frozen=True)
class InjectFraud:
    meter_id: str
    attack: AttackSpec


def parse_adversary(actions: list) -> list:
    """Adversary script (JSON array) -> TamperShare / InjectFraud records."""
    if not isinstance(actions, list):
        raise ConfigError("adversary script must be a JSON array")
    out = []
    for a in actions:
        try:
            kind = a["action"]
            if kind == "tamper_share":
                out.append(TamperShare(Endpoint.parse(a["target"]), int(a["message_index"]),
                                       int(a["delta"]), int(a.get("element", 0))))
            elif kind == "inject_fraud":
                out.append(InjectFraud(a["meter_id"], AttackSpec.from_dict(a["attack"])))
            else:
                raise ConfigError(f"unknown adversary action {kind!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad adversary action {a!r}: {exc}") from exc
    return out


def load_adversary(path) -> list:
    try:
        return parse_adversary(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read adversary script {path}: {exc}") from exc


def adversary_to_json(actions: list) -> list:
    out = []
    for a in actions:
        if isinstance(a, TamperShare):
            out.append({"action": "tamper_share", "target": str(a.target), "message_index": a.message_index,
                        "delta": a.delta, "element": a.element})
        else:
            out.append({"action": "inject_fraud", "meter_id": a.meter_id, "attack": a.attack.to_dict()})
    return out


@dataclass
class PeriodConfig:
    n_clients: int
    n_parties: int
    n_intervals: int
    mode: str
    modulus: int
    scale: int
    monitor_load: bool

    @property
    def triples(self) -> int:
        return triples_required(self.n_clients, self.n_intervals, self.mode)


@dataclass
class PeriodResult:
    statements: list[BillStatement]
    stats: NetStats
    alerts: list[Alert]
    aborted: bool
    loads: list[Fraction] | None
    transcript_digest: str
    corpus: list[MeterSeries]
    network: Network = field(repr=False)
    triples_used: int = 0  # Beaver triples consumed by party 0


# -- dealer -------------------------------------------------------------------

def _tag_keys(f: Field, seed: bytes, n: int):
    return f.expand(seed, "tag-key", n, nonzero=True), f.expand(seed, "tag-pad", n)


def _pairs(*arrays) -> np.ndarray:
    return np.stack([np.asarray(a, dtype=object) for a in arrays], axis=-1).ravel()


def dealer_program(cfg: PeriodConfig, seed: int):
    def program(ctx):
        f = Field(cfg.modulus)
        rng = np.random.default_rng([seed, 0xDEA1])
        dealer = Dealer(cfg.n_parties, f, rng)
        m, n, T = cfg.n_clients, cfg.n_parties, cfg.n_intervals
        mask_seeds = [rng.bytes(SEED_BYTES) for _ in range(m)]
        tag_seeds = [[rng.bytes(SEED_BYTES) for _ in range(n)] for _ in range(m)]
        masks = np.empty((m, T), dtype=object)
        out_masks = f.zeros(m)
        for c in range(m):
            masks[c] = f.expand(mask_seeds[c], "input-mask", T)
            out_masks[c] = f.expand(mask_seeds[c], "output-mask", 1)[0]
        mask_shares = dealer.authenticate(masks)
        out_shares = dealer.authenticate(out_masks)
        pools = dealer.triples(cfg.triples)

        for c in range(m):
            ctx.send(client(c), KIND_CLIENT_KEYS, mask_seeds[c] + b"".join(tag_seeds[c]), field_words=False)
        ctx.send(SUPPLIER, KIND_OUTPUT_MASKS, f.pack(out_masks))
        for i in range(n):
            pool = pools[i]
            words = [np.array([dealer.key_shares[i].alpha_share], dtype=object),
                     _pairs(mask_shares[i].value, mask_shares[i].mac),
                     _pairs(out_shares[i].value, out_shares[i].mac),
                     _pairs(pool.a.value, pool.a.mac, pool.b.value, pool.b.mac, pool.c.value, pool.c.mac)]
            body = f.pack(np.concatenate(words)) + b"".join(tag_seeds[c][i] for c in range(m))
            ctx.send(party(i), KIND_PARTY_DEAL, body, field_words=False)
        return None
        yield  # noqa: unreachable; marks this function as a generator

    return program


# -- clients ------------------------------------------------------------------

def client_program(cfg: PeriodConfig, index: int, series: MeterSeries, window: np.ndarray, period_id: str):
    codec = FixedPointCodec(cfg.scale, cfg.modulus)

    def program(ctx):
        f = Field(cfg.modulus)
        msg = yield from ctx.expect(DEALER, KIND_CLIENT_KEYS)
        mask_seed = msg.body[:SEED_BYTES]
        tag_seeds = [msg.body[SEED_BYTES * (i + 1):SEED_BYTES * (i + 2)] for i in range(cfg.n_parties)]
        ctx.phase = ONLINE
        r = f.expand(mask_seed, "input-mask", cfg.n_intervals)
        s = int(f.expand(mask_seed, "output-mask", 1)[0])
        x = codec.encode_array(window)
        eps = (x - r) % f.modulus
        for i in range(cfg.n_parties):
            kappa, lam = _tag_keys(f, tag_seeds[i], cfg.n_intervals)
            tags = (kappa * eps + lam) % f.modulus
            ctx.send(party(i), KIND_INPUT, f.pack(_pairs(eps, tags)))
        copies = []
        for i in range(cfg.n_parties):
            msg = yield from ctx.expect(party(i), KIND_RESULT, KIND_ABORT)
            copies.append(msg)
        if any(c.kind == KIND_ABORT for c in copies):
            ctx.alert("computation party reported an aborted period")
            return None
        try:
            values = {int(f.unpack(c.body)[0]) for c in copies if len(c.body) == WORD}
        except ProtocolError:
            values = set()
        if len(values) != 1 or any(len(c.body) != WORD for c in copies):
            ctx.alert("computation parties delivered inconsistent bill totals")
            return None
        raw = (values.pop() + s) % f.modulus
        return make_statement(series.meter_id, period_id, raw, cfg.mode, codec)

    return program


# -- computation parties -----------------------------------------------------

def _parse_deal(cfg: PeriodConfig, f: Field, index: int, body: bytes):
    m, T, q = cfg.n_clients, cfg.n_intervals, cfg.triples
    n_words = 1 + 2 * m * T + 2 * m + 6 * q
    words = f.unpack(body[:WORD * n_words])
    key = MacKeyShare(int(words[0]), index)
    at = 1
    mk = words[at:at + 2 * m * T].reshape(m, T, 2)
    at += 2 * m * T
    mask = AuthShare(mk[..., 0], mk[..., 1], index)
    om = words[at:at + 2 * m].reshape(m, 2)
    at += 2 * m
    out_mask = AuthShare(om[:, 0], om[:, 1], index)
    tr = words[at:at + 6 * q].reshape(q, 6)
    pool = TriplePool(AuthShare(tr[:, 0], tr[:, 1], index), AuthShare(tr[:, 2], tr[:, 3], index),
                      AuthShare(tr[:, 4], tr[:, 5], index))
    raw = body[WORD * n_words:]
    tag_seeds = [raw[SEED_BYTES * c:SEED_BYTES * (c + 1)] for c in range(m)]
    return key, mask, out_mask, pool, tag_seeds


def party_program(cfg: PeriodConfig, index: int, tariff: Tariff, nonce_seed: bytes):
    codec = FixedPointCodec(cfg.scale, cfg.modulus)

    def program(ctx):
        f = Field(cfg.modulus)
        msg = yield from ctx.expect(DEALER, KIND_PARTY_DEAL)
        key, mask, out_mask, pool, tag_seeds = _parse_deal(cfg, f, index, msg.body)
        p = Party(index, cfg.n_parties, f, key, pool, nonce_seed)
        ctx.phase = ONLINE
        m, T = cfg.n_clients, cfg.n_intervals
        if m == 0:
            return 0
        aborted = False
        eps = np.empty((m, T), dtype=object)
        for c in range(m):
            msg = yield from ctx.expect(client(c), KIND_INPUT)
            try:
                pairs = f.unpack(msg.body).reshape(T, 2)
            except (ProtocolError, ValueError):
                pairs = f.zeros((T, 2))
                aborted = True
            kappa, lam = _tag_keys(f, tag_seeds[c], T)
            eps[c] = pairs[:, 0]
            if not np.all((kappa * pairs[:, 0] + lam) % f.modulus == pairs[:, 1]):
                aborted = True
        if aborted:
            ctx.alert("client upload failed its input tag check")
        readings = p.shift(mask, eps)

        prices, k = encode_tariff(tariff, codec)
        if cfg.mode == STATIC:
            totals = static_bill_shares(p, readings, prices)
        else:
            totals = yield from dynamic_bill_shares(p, ctx, readings, prices, k, cfg.scale)
        loads = None
        if cfg.monitor_load:
            (loads,) = yield from open_values(p, ctx, [aggregate_shares(p, readings)], "aggregate", KIND_LOAD_OPEN)
        (masked,) = yield from open_values(p, ctx, [p.sub(totals, out_mask)], "masked-total", KIND_OUTPUT_OPEN)
        ok = yield from check_macs(p, ctx)
        if not ok:
            ctx.alert("MAC check failed")
        if aborted or not ok:
            for c in range(m):
                ctx.send(client(c), KIND_ABORT, b"")
            ctx.send(SUPPLIER, KIND_ABORT, b"")
            return p.triples.used
        for c in range(m):
            ctx.send(client(c), KIND_RESULT, f.pack([masked[c]]))
        ctx.send(SUPPLIER, KIND_RESULT, f.pack(masked))
        if loads is not None:
            ctx.send(SUPPLIER, KIND_LOADS, f.pack(loads))
        return p.triples.used

    return program


# -- supplier -----------------------------------------------------------------

def supplier_program(cfg: PeriodConfig, meter_ids: list[str], period_id: str):
    codec = FixedPointCodec(cfg.scale, cfg.modulus)

    def program(ctx):
        f = Field(cfg.modulus)
        msg = yield from ctx.expect(DEALER, KIND_OUTPUT_MASKS)
        out_masks = f.unpack(msg.body)
        ctx.phase = ONLINE
        if cfg.n_clients == 0:
            return [], None
        results, loads, aborted = [], [], False
        for i in range(cfg.n_parties):
            msg = yield from ctx.expect(party(i), KIND_RESULT, KIND_ABORT)
            if msg.kind == KIND_ABORT:
                aborted = True
                continue
            results.append(msg.body)
            if cfg.monitor_load:
                msg = yield from ctx.expect(party(i), KIND_LOADS)
                loads.append(msg.body)
        if aborted:
            ctx.alert("computation party reported an aborted period")
            return None, None
        if len(set(results)) != 1 or (loads and len(set(loads)) != 1):
            ctx.alert("computation parties delivered inconsistent outputs")
            return None, None
        try:
            masked = f.unpack(results[0])
            opened_loads = f.unpack(loads[0]) if loads else None
        except ProtocolError:
            ctx.alert("malformed output frame")
            return None, None
        statements = [make_statement(meter_ids[c], period_id, (int(masked[c]) + int(out_masks[c])) % f.modulus,
                                     cfg.mode, codec) for c in range(cfg.n_clients)]
        decoded_loads = [codec.decode(v) for v in opened_loads] if opened_loads is not None else None
        return statements, decoded_loads

    return program


# -- driver -------------------------------------------------------------------

def run_billing_period(n_clients: int, n_parties: int, tariff: Tariff, period: BillingPeriod,
                       corpus: list[MeterSeries], adversary=(), seed: int = 0, *,
                       modulus: int = MERSENNE61, scale: int = 1000, monitor_load: bool = False,
                       threaded: bool = False, timing: bool = True, detector=None,
                       detector_threshold: float = 0.5) -> PeriodResult:
    """Bill the first ``n_clients`` meters of ``corpus`` over ``period``.

    ``adversary`` holds TamperShare and InjectFraud actions. Any tamper
    alert aborts the whole period: no statements are returned. A trained
    detector, when given, flags suspicious clients with "fraud" alerts that
    do not affect billing.
    """
    if n_clients < 0 or n_parties < 2:
        raise ConfigError("need n_clients >= 0 and at least two computation parties")
    if n_clients > len(corpus):
        raise ConfigError(f"corpus has {len(corpus)} meters, {n_clients} clients requested")
    tariff = tariff.for_period(period.n_intervals)
    tampers = [a for a in adversary if isinstance(a, TamperShare)]
    for t in tampers:
        if t.delta % modulus == 0 or t.delta % (1 << 64) == 0:
            raise ConfigError("tamper delta must be nonzero in the field")
    corpus = list(corpus)
    by_id = {s.meter_id: k for k, s in enumerate(corpus)}
    for a in adversary:
        if isinstance(a, InjectFraud):
            if a.meter_id not in by_id:
                raise ConfigError(f"inject_fraud names unknown meter {a.meter_id!r}")
            corpus[by_id[a.meter_id]] = inject_fraud(corpus[by_id[a.meter_id]], a.attack)

    cfg = PeriodConfig(n_clients, n_parties, period.n_intervals, tariff.mode, modulus, scale, monitor_load)
    clients = corpus[:n_clients]
    windows = [s.window(period.start, period.n_intervals) for s in clients]
    nonce_seed = hashlib.sha256(b"party-nonce" + seed.to_bytes(8, "little", signed=True)).digest()

    net = Network(tampers=tampers, modulus=modulus, timing=timing)
    net.add(DEALER, dealer_program(cfg, seed))
    for c, (s, w) in enumerate(zip(clients, windows)):
        net.add(client(c), client_program(cfg, c, s, w, period.period_id))
    for i in range(n_parties):
        net.add(party(i), party_program(cfg, i, tariff, nonce_seed))
    net.add(SUPPLIER, supplier_program(cfg, [s.meter_id for s in clients], period.period_id))
    results = net.run(threaded=threaded)

    if len(net.fired) != len(tampers):
        raise ConfigError("a tamper action targets a message that was never sent")
    statements, loads = results[SUPPLIER]
    client_views = [results[client(c)] for c in range(n_clients)]
    if statements is not None and client_views != statements:
        net.alerts.append(Alert(SUPPLIER, ONLINE, "tamper", "client and supplier views of the bills differ"))
    if detector is not None and clients:
        from ..detector.model import flag_series
        for s, prob in zip(clients, flag_series(detector, clients, detector_threshold)):
            if prob is not None:
                net.alerts.append(Alert(SUPPLIER, ONLINE, "fraud",
                                        f"meter {s.meter_id} flagged malicious (p={prob:.3f})"))
    alerts = sorted(net.alerts, key=lambda a: (a.endpoint.sort_key, a.phase, a.kind, a.reason))
    aborted = any(a.kind == "tamper" for a in alerts)
    return PeriodResult([] if aborted else statements, net.stats, alerts, aborted,
                        None if aborted else loads, net.transcript_digest(), corpus, net,
                        results[party(0)])


def write_alerts(alerts: list[Alert], path) -> None:
    import csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["endpoint", "phase", "kind", "reason"])
        for a in alerts:
            w.writerow([str(a.endpoint), a.phase, a.kind, a.reason])
