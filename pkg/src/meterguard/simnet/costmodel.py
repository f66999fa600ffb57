"""Closed-form traffic model for one billing period.

Every frame carries an 8-byte header (kind u16, version u16, word count
u32); bodies are whole 8-byte words. Per-frame body sizes:

=========================  ==========================  =====================
frame                      route                       body bytes
=========================  ==========================  =====================
client keys                dealer -> each client       16 + 16 * parties
output masks               dealer -> supplier          8 * clients
party deal                 dealer -> each party        8 + clients * (16 * T + 16 + 16)
                                                       + 48 * triples
input                      client -> each party        16 * T
beaver open (dynamic)      party -> each other party   16 * clients * T
load open (monitoring)     party -> each other party   8 * T
output open                party -> each other party   8 * clients
mac commit / reveal        party -> each other party   32 / 24
result                     party -> each client        8
result, loads              party -> supplier           8 * clients, 8 * T
=========================  ==========================  =====================

With no clients only the offline frames are sent. The constant in the
client upload is therefore one header per party:
``upload = T * parties * 16 + 8 * parties``.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from ..billing import triples_required
from .network import DEALER, HEADER_BYTES, MAC_CHECK, OFFLINE, ONLINE, SUPPLIER, Endpoint, client, party

AUTH_SHARE_BYTES = 16
SEED_BYTES = 16
COMMIT_BYTES = 32
REVEAL_BYTES = 24


@dataclass
class CostPrediction:
    table: dict  # (Endpoint, phase) -> [sent, received]
    messages: dict  # Endpoint -> non-offline frames sent
    n_clients: int
    n_parties: int

    def sent(self, endpoint: Endpoint, phase: str | None = None) -> int:
        return sum(v[0] for (ep, ph), v in self.table.items() if ep == endpoint and (phase is None or ph == phase))

    def received(self, endpoint: Endpoint, phase: str | None = None) -> int:
        return sum(v[1] for (ep, ph), v in self.table.items() if ep == endpoint and (phase is None or ph == phase))

    @property
    def client_upload(self) -> int:
        """Bytes one client sends (0 when there are no clients)."""
        return self.sent(client(0)) if self.n_clients else 0

    @property
    def client_download(self) -> int:
        return self.received(client(0)) if self.n_clients else 0

    def byte_table(self) -> dict:
        return {k: tuple(v) for k, v in self.table.items() if v[0] or v[1]}

    @property
    def total(self) -> int:
        return sum(v[0] for v in self.table.values())


def predict_bytes(n_clients: int, n_intervals: int, n_parties: int, mode: str,
                  monitor_load: bool = False) -> CostPrediction:
    m, T, n = n_clients, n_intervals, n_parties
    q = triples_required(m, T, mode)
    table = defaultdict(lambda: [0, 0])
    messages = defaultdict(int)

    def frame(src, dst, phase, body):
        size = HEADER_BYTES + body
        table[(src, phase)][0] += size
        table[(dst, phase)][1] += size
        if phase != OFFLINE:
            messages[src] += 1

    for c in range(m):
        frame(DEALER, client(c), OFFLINE, SEED_BYTES + SEED_BYTES * n)
    frame(DEALER, SUPPLIER, OFFLINE, 8 * m)
    for i in range(n):
        frame(DEALER, party(i), OFFLINE, 8 + m * (AUTH_SHARE_BYTES * T + AUTH_SHARE_BYTES + SEED_BYTES) + 48 * q)
    if m:
        for c in range(m):
            for i in range(n):
                frame(client(c), party(i), ONLINE, AUTH_SHARE_BYTES * T)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                if q:
                    frame(party(i), party(j), ONLINE, 2 * 8 * q)
                if monitor_load:
                    frame(party(i), party(j), ONLINE, 8 * T)
                frame(party(i), party(j), ONLINE, 8 * m)
                frame(party(i), party(j), MAC_CHECK, COMMIT_BYTES)
                frame(party(i), party(j), MAC_CHECK, REVEAL_BYTES)
            for c in range(m):
                frame(party(i), client(c), ONLINE, 8)
            frame(party(i), SUPPLIER, ONLINE, 8 * m)
            if monitor_load:
                frame(party(i), SUPPLIER, ONLINE, 8 * T)
    return CostPrediction(dict(table), dict(messages), m, n)
