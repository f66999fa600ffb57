import csv
from fractions import Fraction

import numpy as np
import pytest

from meterguard.billing import BillingPeriod, Tariff, default_tariff, oracle_totals
from meterguard.errors import ConfigError, Deadlock, ProtocolError
from meterguard.field import FixedPointCodec
from meterguard.ingest import AttackSpec, DEFAULT_START, synthesize
from meterguard.simnet import (DEALER, SUPPLIER, Endpoint, InjectFraud, Network, TamperShare, client, load_adversary,
                               party, predict_bytes, run_billing_period, write_alerts)
from meterguard.simnet.network import HEADER_BYTES
from meterguard.simnet.period import adversary_to_json, parse_adversary


def units(statements):
    return [int(s.total.scaleb(3)) for s in statements]


@pytest.fixture(scope="module")
def corpus():
    return synthesize(6, 2, seed=5)


def test_endpoint_parse_round_trip():
    for ep in (DEALER, SUPPLIER, party(2), client(11)):
        assert Endpoint.parse(str(ep)) == ep
    with pytest.raises(ValueError):
        Endpoint.parse("router:1")


def test_header_is_eight_bytes():
    assert HEADER_BYTES == 8


def ping_pong(net):
    a, b = party(0), party(1)

    def pa(ctx):
        ctx.send(b, 1, (7).to_bytes(8, "little"))
        ctx.send(b, 1, (8).to_bytes(8, "little"))
        msg = yield from ctx.expect(b, 2)
        return int.from_bytes(msg.body, "little")

    def pb(ctx):
        first = yield from ctx.expect(a, 1)
        second = yield from ctx.expect(a, 1)
        ctx.send(a, 2, (int.from_bytes(first.body, "little") * 10
                        + int.from_bytes(second.body, "little")).to_bytes(8, "little"))
        return None

    net.add(a, pa)
    net.add(b, pb)
    return a


@pytest.mark.parametrize("threaded", [False, True])
def test_fifo_delivery(threaded):
    net = Network(timing=False)
    a = ping_pong(net)
    assert net.run(threaded=threaded)[a] == 78
    assert net.stats.total_sent == net.stats.total_received == 3 * 16


def test_deadlock_detected():
    net = Network()

    def waits_for(other):
        def program(ctx):
            yield from ctx.expect(other, 1)
        return program

    net.add(party(0), waits_for(party(1)))
    net.add(party(1), waits_for(party(0)))
    with pytest.raises(Deadlock):
        net.run()


def test_unexpected_kind_is_protocol_error():
    net = Network()

    def sender(ctx):
        ctx.send(party(1), 5, b"\x00" * 8)
        return None
        yield

    def receiver(ctx):
        yield from ctx.expect(party(0), 6)

    net.add(party(0), sender)
    net.add(party(1), receiver)
    with pytest.raises(ProtocolError):
        net.run()


def test_body_must_be_whole_words():
    net = Network()

    def bad(ctx):
        ctx.send(party(1), 1, b"abc")
        yield

    net.add(party(0), bad)
    net.add(party(1), lambda ctx: iter(()))
    with pytest.raises(ProtocolError):
        net.run()


def test_tamper_validation():
    with pytest.raises(ConfigError):
        Network(tampers=[TamperShare(DEALER, 0, 1)])
    with pytest.raises(ConfigError):
        Network(tampers=[TamperShare(party(0), 0, 1), TamperShare(party(0), 0, 2)])


def test_adversary_json_round_trip(tmp_path):
    actions = [{"action": "tamper_share", "target": "party:1", "message_index": 2, "delta": 9, "element": 3},
               {"action": "inject_fraud", "meter_id": "M0001", "attack": {"kind": "scale", "alpha": 0.5}}]
    parsed = parse_adversary(actions)
    assert parsed[0] == TamperShare(party(1), 2, 9, 3)
    assert isinstance(parsed[1], InjectFraud)
    again = parse_adversary(adversary_to_json(parsed))
    assert again == parsed
    with pytest.raises(ConfigError):
        parse_adversary([{"action": "explode"}])
    (tmp_path / "a.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_adversary(tmp_path / "a.json")


# -- billing periods ----------------------------------------------------------------

@pytest.mark.parametrize("mode", ["static", "dynamic"])
def test_period_matches_oracle(corpus, mode):
    tariff = default_tariff(mode)
    period = BillingPeriod(DEFAULT_START, 96)
    res = run_billing_period(6, 3, tariff, period, corpus, timing=False)
    assert not res.aborted and res.alerts == []
    readings = np.array([s.readings[:96] for s in corpus])
    assert units(res.statements) == oracle_totals(readings, tariff.for_period(96))
    assert [s.client_id for s in res.statements] == [s.meter_id for s in corpus]
    assert all(s.mac_check == "pass" for s in res.statements)


def test_monitor_load_opens_aggregate_only(corpus):
    res = run_billing_period(6, 3, default_tariff("static"), BillingPeriod(DEFAULT_START, 48), corpus,
                             monitor_load=True, timing=False)
    codec = FixedPointCodec()
    expected = [Fraction(sum(codec.scaled_int(s.readings[t]) for s in corpus), 1000) for t in range(48)]
    assert res.loads == expected


@pytest.mark.parametrize("mode", ["static", "dynamic"])
def test_threaded_transcript_matches_sequential(corpus, mode):
    kw = dict(timing=False, monitor_load=True)
    a = run_billing_period(4, 3, default_tariff(mode), BillingPeriod(DEFAULT_START, 48), corpus, seed=3, **kw)
    b = run_billing_period(4, 3, default_tariff(mode), BillingPeriod(DEFAULT_START, 48), corpus, seed=3,
                           threaded=True, **kw)
    assert a.transcript_digest == b.transcript_digest
    assert a.statements == b.statements
    assert a.stats.byte_table() == b.stats.byte_table()


@pytest.mark.parametrize("target", [party(0), party(2), client(1)])
def test_tamper_aborts_period(corpus, target, tmp_path):
    res = run_billing_period(3, 3, default_tariff("dynamic"), BillingPeriod(DEFAULT_START, 48), corpus,
                             adversary=[TamperShare(target, 0, 12345)], timing=False)
    assert res.aborted and res.statements == [] and res.loads is None
    assert any(a.kind == "tamper" for a in res.alerts)
    write_alerts(res.alerts, tmp_path / "alerts.csv")
    rows = list(csv.reader(open(tmp_path / "alerts.csv")))
    assert rows[0] == ["endpoint", "phase", "kind", "reason"] and len(rows) > 1


def test_tamper_that_never_fires_is_config_error(corpus):
    with pytest.raises(ConfigError):
        run_billing_period(2, 3, default_tariff("static"), BillingPeriod(DEFAULT_START, 48), corpus,
                           adversary=[TamperShare(party(0), 999, 1)])


def test_zero_delta_rejected(corpus):
    with pytest.raises(ConfigError):
        run_billing_period(2, 3, default_tariff("static"), BillingPeriod(DEFAULT_START, 48), corpus,
                           adversary=[TamperShare(party(0), 0, 0)])


def test_inject_fraud_changes_labels_and_bill(corpus):
    clean = run_billing_period(2, 3, default_tariff("static"), BillingPeriod(DEFAULT_START, 48), corpus,
                               timing=False)
    attack = AttackSpec("scale", alpha=0.5)
    res = run_billing_period(2, 3, default_tariff("static"), BillingPeriod(DEFAULT_START, 48), corpus,
                             adversary=[InjectFraud("M0001", attack)], timing=False)
    assert res.corpus[1].malicious and res.corpus[1].attack == attack
    assert not corpus[1].malicious
    assert res.statements[0].total == clean.statements[0].total
    assert res.statements[1].total < clean.statements[1].total


def test_no_clients(corpus):
    res = run_billing_period(0, 3, default_tariff("static"), BillingPeriod(DEFAULT_START, 48), corpus)
    assert res.statements == [] and not res.aborted


def test_too_few_parties(corpus):
    with pytest.raises(ConfigError):
        run_billing_period(1, 1, default_tariff("static"), BillingPeriod(DEFAULT_START, 48), corpus)


def test_stats_consistent_and_csv(corpus, tmp_path):
    res = run_billing_period(3, 2, default_tariff("dynamic"), BillingPeriod(DEFAULT_START, 48), corpus,
                             timing=True)
    st = res.stats
    assert st.total_sent == st.total_received == sum(m.size for m in res.network.messages)
    assert st.cpu_micros() >= 0
    st.write_csv(tmp_path / "n.csv", timing=False)
    rows = list(csv.reader(open(tmp_path / "n.csv")))
    assert rows[0] == ["endpoint", "role", "phase", "bytes_sent", "bytes_received", "rounds", "cpu_micros"]
    assert all(r[-1] == "0" for r in rows[1:])


# -- cost model ------------------------------------------------------------------------

def test_client_upload_48_intervals_3_parties():
    pred = predict_bytes(1, 48, 3, "static")
    assert pred.client_upload == 48 * 3 * 16 + 3 * HEADER_BYTES == 2304 + 24


def test_client_cost_independent_of_mode():
    s, d = predict_bytes(5, 96, 4, "static"), predict_bytes(5, 96, 4, "dynamic")
    assert (s.client_upload, s.client_download) == (d.client_upload, d.client_download)
    assert d.sent(party(0)) > s.sent(party(0))


def test_upload_scales_linearly_in_intervals():
    ups = [predict_bytes(1, t, 3, "static").client_upload for t in (48, 96, 192)]
    assert ups[1] - ups[0] == 48 * 48 and ups[2] - ups[1] == 96 * 48


@pytest.mark.parametrize("m,t,n,mode,load", [(0, 48, 3, "static", False), (1, 5, 2, "dynamic", True),
                                              (4, 48, 4, "dynamic", False), (3, 7, 3, "static", True)])
def test_prediction_matches_measurement(m, t, n, mode, load):
    corpus = synthesize(max(m, 1), 1, seed=1)
    tariff = Tariff(mode, interval_prices=[0.1] * t) if mode == "static" else \
        Tariff(mode, base_prices=[0.1] * t, k=0.01)
    res = run_billing_period(m, n, tariff, BillingPeriod(DEFAULT_START, t), corpus, monitor_load=load,
                             timing=False)
    pred = predict_bytes(m, t, n, mode, load)
    assert res.stats.byte_table() == pred.byte_table()
    assert res.triples_used == (m * t if mode == "dynamic" else 0)
